#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sbacore/drsm.hpp"
#include "sbacore/runtime.hpp"
#include "sbacore/statestore.hpp"
#include "sbacore/transport.hpp"
#include "sbacore/uelb.hpp"

namespace sbacore {

// Static description of a service: its kind, pattern and per-event handling cost.
struct ServiceSpec {
    NfKind kind = NfKind::Amf;
    Pattern pattern = Pattern::P2LongRunning;
    Micros base_cost = ms(1);

    // base_cost x weight, split evenly across the kind's handlings of that event.
    Micros hop_cost(EventType type) const;
};

ServiceSpec service_spec(NfKind kind, Micros base_cost = ms(1));

// A service instance: one mailbox consumed sequentially, each message holding the
// instance busy for its processing cost before its outputs leave.
class Instance {
public:
    Instance(Core& core, InstanceId id);
    virtual ~Instance();
    Instance(const Instance&) = delete;
    Instance& operator=(const Instance&) = delete;

    const InstanceId& id() const { return id_; }
    NfKind kind() const { return id_.kind; }
    const std::string& name() const { return name_; }
    const ServiceSpec& spec() const { return spec_; }
    std::shared_ptr<Endpoint> endpoint() const { return ep_; }

    bool alive() const { return alive_; }
    bool ready() const { return ready_; }
    bool draining() const { return draining_; }
    bool busy() const { return busy_; }

    // Busy fraction over [now - window, now].
    double utilization(Micros window) const;
    std::uint32_t queue_depth() const { return static_cast<std::uint32_t>(ep_->depth()); }
    std::uint64_t handled() const { return handled_; }

    virtual std::uint32_t served_ues() const { return 0; }
    virtual std::size_t ue_context_entries() const { return 0; }
    virtual SoftStateCache* cache() { return nullptr; }
    // No in-flight procedures (used to finish a graceful drain).
    virtual bool quiescent() const { return !busy_ && ep_->depth() == 0; }

    // DRSM registration, block claims (P2), NRF registration, then ready. Throws PoolExhausted.
    void bring_up();
    void crash();
    void begin_drain();
    // Final fence and shutdown. Returns false while the store refuses the fence.
    bool finish_drain();
    void silence_keepalives(Micros until) { silenced_until_ = until; }
    Micros silenced_until() const { return silenced_until_; }

protected:
    virtual void handle(const ControlMessage& msg) = 0;
    virtual void on_ready() {}
    virtual void on_crash() {}
    virtual void on_unroutable(const ControlMessage& msg, NfKind kind);
    virtual void on_delivery_failed(const ControlMessage& msg, const InstanceId& to);
    // Store ops issued so far; the delta over one handling is charged at store latency.
    virtual std::uint64_t store_ops() const { return 0; }
    // Prefixes of the DRSM store this instance keeps a routing view of.
    virtual std::vector<std::string> view_prefixes() const;

    void charge(Micros cost) { cost_ += cost; }
    void charge_hop(EventType type) { cost_ += spec_.hop_cost(type); }
    ControlMessage make(MsgType type, Channel channel, NfKind receiver);
    ControlMessage reply_to(const ControlMessage& req, MsgType type);
    // Queued until the current handling completes.
    void emit(ControlMessage msg, const InstanceId& to);
    // Routes through the UELB; on NoLiveInstance calls on_unroutable.
    bool emit_routed(ControlMessage msg, NfKind kind, const std::string& supi,
                     const std::set<InstanceId>& avoid = {});
    // Immediate send outside the processing loop (timers).
    SendResult send_now(ControlMessage msg, const InstanceId& to);
    void log(std::string_view action, const ControlMessage* msg = nullptr, std::string_view detail = {});
    void log_ue(std::string_view action, std::string_view supi, std::uint64_t seq, std::string_view detail = {});
    Micros now() const;
    // Runs fn after delay while this instance is alive.
    void after(Micros delay, std::function<void()> fn);

    Core& core_;
    RoutingView view_;
    std::unique_ptr<UeLoadBalancer> lb_;
    std::vector<ResourceBlock> blocks_;

private:
    struct Outgoing {
        ControlMessage msg;
        InstanceId to;
        std::optional<NfKind> routed_kind;
        std::string supi;
        std::set<InstanceId> avoid;
    };

    void schedule_wake();
    void process();
    void complete();
    void dispatch(Outgoing out);
    void heartbeat();
    void keepalive();
    Load current_load() const;

    InstanceId id_;
    std::string name_;
    ServiceSpec spec_;
    std::shared_ptr<Endpoint> ep_;
    std::vector<Subscription> subs_;
    bool alive_ = true;
    bool ready_ = false;
    bool draining_ = false;
    bool busy_ = false;
    bool wake_pending_ = false;
    Micros wake_at_{0};
    TaskId wake_task_ = 0;
    Micros cost_{0};
    Micros busy_start_{0};
    std::vector<Outgoing> outbox_;
    std::deque<std::pair<Micros, Micros>> busy_log_;
    std::uint64_t handled_ = 0;
    Micros silenced_until_{0};
    std::shared_ptr<bool> token_ = std::make_shared<bool>(true);
};

// P1: terminates the SCTP and PFCP edge channels and forwards over SBI.
class Gateway : public Instance {
public:
    Gateway(Core& core, InstanceId id) : Instance(core, id) {}
    std::size_t held() const { return held_.size(); }

protected:
    void handle(const ControlMessage& msg) override;
    void on_unroutable(const ControlMessage& msg, NfKind kind) override;
    std::vector<std::string> view_prefixes() const override;

private:
    void ingest_sctp(const ControlMessage& msg);
    void ingest_pfcp(const ControlMessage& msg);
    void retry_held(std::uint64_t key);

    struct Held {
        ControlMessage msg;
        NfKind kind;
        std::uint32_t tries = 0;
    };
    std::map<std::uint64_t, Held> held_;
    std::uint64_t next_hold_ = 1;
    std::set<std::pair<std::uint64_t, std::uint32_t>> parked_;
};

// P2: owns UE contexts through a write-behind cache.
class Amf : public Instance {
public:
    Amf(Core& core, InstanceId id);
    std::uint32_t served_ues() const override { return static_cast<std::uint32_t>(served_.size()); }
    std::size_t ue_context_entries() const override { return cache_.size(); }
    SoftStateCache* cache() override { return &cache_; }
    bool quiescent() const override;

protected:
    void handle(const ControlMessage& msg) override;
    void on_crash() override;
    std::uint64_t store_ops() const override;
    void on_unroutable(const ControlMessage& msg, NfKind kind) override;

private:
    struct Proc {
        EventKind event;
        std::uint64_t seq = 0;
        std::uint32_t step = 1;
        std::uint32_t stage = 0;
        bool done = false;
        ControlMessage ue_msg;
        std::optional<ControlMessage> outstanding;
        std::optional<NfKind> outstanding_kind;
        std::uint32_t ngap = 0;
        std::optional<std::uint32_t> ip;
        std::optional<InstanceId> smf;
    };
    struct Downlink {
        std::uint64_t notify = 0;
        InstanceId smf;
    };

    void on_ue_request(const ControlMessage& m);
    void on_sbi_response(const ControlMessage& m);
    void on_downlink(const ControlMessage& m);
    void advance(Proc& p, UeContext& ctx, const ControlMessage* resp);
    void finish_step(Proc& p, UeContext& ctx);
    void commit(Proc& p, UeContext& ctx);
    void send_sbi(Proc& p, NfKind kind, const std::string& payload = {});
    void redrive(Proc& p);
    void respond(const ControlMessage& req, const UeContext& ctx, std::uint32_t ngap, std::optional<std::uint32_t> ip);
    void nack(const ControlMessage& req, Status status, std::uint64_t aux = 0);
    void page(const std::string& supi);
    std::uint32_t allocate_ngap();
    std::optional<UeContext> load(const std::string& supi, std::uint64_t seq);

    SoftStateCache cache_;
    std::unordered_map<std::string, Proc> procs_;
    std::unordered_map<std::string, std::vector<Downlink>> downlinks_;
    std::unordered_set<std::string> paging_;
    std::unordered_set<std::string> served_;
    std::size_t block_index_ = 0;
    std::uint32_t block_used_ = 0;
};

// P2: session management. Mirrors contexts read-through; the AMF holds the canonical copy.
class Smf : public Instance {
public:
    Smf(Core& core, InstanceId id);
    std::uint32_t served_ues() const override { return static_cast<std::uint32_t>(ip_of_.size()); }
    std::size_t ue_context_entries() const override { return cache_.size(); }
    SoftStateCache* cache() override { return &cache_; }

protected:
    void handle(const ControlMessage& msg) override;
    void on_crash() override;
    std::uint64_t store_ops() const override;
    void on_unroutable(const ControlMessage& msg, NfKind kind) override;

private:
    struct Step {
        std::uint64_t seq = 0;
        std::uint32_t step = 0;
        ControlMessage req;
        bool done = false;
        std::optional<ControlMessage> response;
        std::uint32_t ip = 0;
    };

    void on_request(const ControlMessage& m);
    void on_pfcp_ack(const ControlMessage& m);
    void on_downlink(const ControlMessage& m);
    void on_downlink_ack(const ControlMessage& m);
    void send_pfcp(const Step& s);
    std::uint32_t allocate_ip();

    SoftStateCache cache_;
    std::unordered_map<std::string, Step> steps_;
    std::unordered_map<std::string, std::uint32_t> ip_of_;
    std::unordered_map<std::uint64_t, InstanceId> downlink_origin_;
    std::size_t block_index_ = 0;
    std::uint32_t block_used_ = 0;
};

// P2: registry of live instances with keepalive-based circulation.
class Nrf : public Instance {
public:
    struct Entry {
        NfKind kind = NfKind::Amf;
        Micros last_keepalive{0};
        bool in_circulation = true;
    };

    Nrf(Core& core, InstanceId id) : Instance(core, id) {}

    void register_nf(const InstanceId& id);
    void deregister_nf(const InstanceId& id);
    // Instances of `kind` within the miss threshold. Logged as a discovery response.
    std::vector<InstanceId> discover(NfKind kind, std::string_view requester = "probe");
    bool registered(const InstanceId& id) const { return registry_.count(id) != 0; }
    const std::map<InstanceId, Entry>& registry() const { return registry_; }

protected:
    void handle(const ControlMessage& msg) override;
    void on_ready() override;
    std::vector<std::string> view_prefixes() const override { return {}; }

private:
    void tick();
    void persist(const InstanceId& id, const Entry& e);

    std::map<InstanceId, Entry> registry_;
    Subscription expiry_sub_;
};

// P3: stateless request handling. AUSF and PCF consult the UDM; UDM and UDR answer directly.
class Ephemeral : public Instance {
public:
    Ephemeral(Core& core, InstanceId id);

protected:
    void handle(const ControlMessage& msg) override;
    void on_unroutable(const ControlMessage& msg, NfKind kind) override;
    std::vector<std::string> view_prefixes() const override;

private:
    std::optional<NfKind> downstream_;
};

// User-plane stub: acknowledges PFCP actions and injects downlink data notifications.
class Upf : public Instance {
public:
    Upf(Core& core, InstanceId id) : Instance(core, id) {}

    // Returns the notification id. A UE without a session is logged and dropped.
    std::optional<std::uint64_t> notify(const std::string& supi, std::optional<std::uint32_t> ip);
    std::size_t outstanding() const { return pending_.size(); }

protected:
    void handle(const ControlMessage& msg) override;
    std::vector<std::string> view_prefixes() const override { return {}; }

private:
    struct Pending {
        ControlMessage msg;
        std::uint32_t attempts = 1;
    };
    void retry(std::uint64_t id);

    std::map<std::uint64_t, Pending> pending_;
};

}  // namespace sbacore
