#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sbacore/clock.hpp"
#include "sbacore/model.hpp"

namespace sbacore {

enum class Channel : std::uint8_t { SctpSim, PfcpSim, Sbi };

enum class MsgType : std::uint8_t {
    UeRequest,
    UeResponse,
    SbiRequest,
    SbiResponse,
    PfcpAction,
    PfcpAck,
    DownlinkNotify,
    DownlinkAck,
    Paging,
    Nack,
    Keepalive,
    Discover,
    DiscoverResponse,
};

enum class Status : std::uint8_t { Ok, IllegalTransition, ProcedureLost, StateLost, NoSession, Unavailable };

std::string_view to_string(Channel c);
Channel channel_from_string(std::string_view name);
std::string_view to_string(MsgType t);
std::string_view to_string(Status s);

struct UeRef {
    std::string supi;
    std::uint32_t ngap_id = 0;
    std::optional<std::uint32_t> ip_index;

    friend bool operator==(const UeRef&, const UeRef&) = default;
};

// Field order here is the wire order.
struct ControlMessage {
    std::uint64_t msg_id = 0;
    Channel channel = Channel::Sbi;
    MsgType type = MsgType::SbiRequest;
    EventKind event;
    UeRef ue;
    std::uint64_t seq = 0;
    std::uint32_t step = 0;
    std::uint64_t prior_seq = 0;
    InstanceId sender;
    NfKind receiver = NfKind::Amf;
    InstanceId origin;
    Status status = Status::Ok;
    std::uint64_t aux = 0;
    std::string payload;
    std::uint32_t attempt = 1;
    Micros sent_at{0};

    friend bool operator==(const ControlMessage&, const ControlMessage&) = default;
};

namespace wire {

std::string encode(const ControlMessage& msg);
ControlMessage decode(std::string_view bytes);
// 4-byte big-endian length followed by the destination id and the record.
std::string frame(const InstanceId& to, const ControlMessage& msg);

class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace wire

class DuplicateEndpoint : public std::runtime_error {
public:
    explicit DuplicateEndpoint(const InstanceId& id) : std::runtime_error("duplicate endpoint " + id.str()) {}
};

class Endpoint {
public:
    explicit Endpoint(InstanceId id) : id_(id) {}

    InstanceId id() const { return id_; }
    NfKind kind() const { return id_.kind; }

    std::size_t depth() const;
    // Time at which the head message becomes visible, if any.
    std::optional<Micros> head_ready_at() const;
    std::optional<ControlMessage> pop_ready(Micros now);
    std::vector<ControlMessage> clear();

    void set_on_enqueue(std::function<void()> fn) { on_enqueue_ = std::move(fn); }
    void push(ControlMessage msg, Micros available_at);

private:
    struct Envelope {
        Micros available_at;
        ControlMessage msg;
    };
    InstanceId id_;
    mutable std::mutex mu_;
    std::deque<Envelope> mailbox_;
    std::function<void()> on_enqueue_;
};

enum class SendStatus : std::uint8_t { Enqueued, DeliveryFailed };

struct SendResult {
    SendStatus status = SendStatus::Enqueued;
    Micros enqueued_at{0};

    bool ok() const { return status == SendStatus::Enqueued; }
};

struct DropRule {
    std::optional<Channel> channel;
    std::optional<NfKind> receiver_kind;
    std::optional<InstanceId> receiver;
    std::uint32_t remaining = 0;  // 0 = unlimited
    Micros until = Micros::max();
};

class FabricObserver {
public:
    virtual ~FabricObserver() = default;
    virtual void on_sent(const ControlMessage&, const InstanceId&) {}
    virtual void on_dropped(const ControlMessage& msg, const InstanceId& to, std::string_view reason) = 0;
};

struct ChannelLatency {
    Micros sctp{50};
    Micros pfcp{50};
    Micros sbi{50};

    Micros of(Channel c) const {
        switch (c) {
            case Channel::SctpSim: return sctp;
            case Channel::PfcpSim: return pfcp;
            case Channel::Sbi: return sbi;
        }
        return sbi;
    }
};

class Fabric {
public:
    Fabric(Executor& exec, ChannelLatency latency) : exec_(exec), latency_(latency) {}
    virtual ~Fabric() = default;

    void register_endpoint(std::shared_ptr<Endpoint> ep);
    // Drops the mailbox; later sends fail.
    void deregister_endpoint(const InstanceId& id);
    bool is_registered(const InstanceId& id) const;

    SendResult send(ControlMessage msg, const InstanceId& to);

    void add_drop_rule(DropRule rule);
    void set_observer(FabricObserver* obs) { observer_ = obs; }
    std::uint64_t sent_count() const { return sent_; }

protected:
    virtual void transmit(const ControlMessage& msg, const InstanceId& to, Micros available_at) = 0;
    void deliver(const ControlMessage& msg, const InstanceId& to, Micros available_at);

    Executor& exec_;

private:
    bool should_drop(const ControlMessage& msg, const InstanceId& to);

    ChannelLatency latency_;
    mutable std::mutex mu_;
    std::map<InstanceId, std::shared_ptr<Endpoint>> endpoints_;
    std::vector<DropRule> drop_rules_;
    FabricObserver* observer_ = nullptr;
    std::uint64_t sent_ = 0;
};

class InProcessFabric : public Fabric {
public:
    InProcessFabric(Executor& exec, ChannelLatency latency = {}) : Fabric(exec, latency) {}

protected:
    void transmit(const ControlMessage& msg, const InstanceId& to, Micros available_at) override;
};

// Every message crosses one TCP connection over 127.0.0.1 as a wire frame.
class LoopbackFabric : public Fabric {
public:
    LoopbackFabric(Executor& exec, ChannelLatency latency = {});
    ~LoopbackFabric() override;

    std::uint16_t port() const { return port_; }

protected:
    void transmit(const ControlMessage& msg, const InstanceId& to, Micros available_at) override;

private:
    void reader_loop();

    int listen_fd_ = -1;
    int client_fd_ = -1;
    int server_fd_ = -1;
    std::uint16_t port_ = 0;
    std::mutex write_mu_;
    std::atomic<bool> stopping_{false};
    std::thread reader_;
};

}  // namespace sbacore
