#include "sbacore/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <system_error>

namespace sbacore {

std::string_view to_string(Channel c) {
    switch (c) {
        case Channel::SctpSim: return "sctp";
        case Channel::PfcpSim: return "pfcp";
        case Channel::Sbi: return "sbi";
    }
    return "sbi";
}

Channel channel_from_string(std::string_view name) {
    if (name == "sctp") return Channel::SctpSim;
    if (name == "pfcp") return Channel::PfcpSim;
    if (name == "sbi") return Channel::Sbi;
    throw std::invalid_argument("unknown channel: " + std::string(name));
}

std::string_view to_string(MsgType t) {
    switch (t) {
        case MsgType::UeRequest: return "ue_request";
        case MsgType::UeResponse: return "ue_response";
        case MsgType::SbiRequest: return "sbi_request";
        case MsgType::SbiResponse: return "sbi_response";
        case MsgType::PfcpAction: return "pfcp_action";
        case MsgType::PfcpAck: return "pfcp_ack";
        case MsgType::DownlinkNotify: return "downlink_notify";
        case MsgType::DownlinkAck: return "downlink_ack";
        case MsgType::Paging: return "paging";
        case MsgType::Nack: return "nack";
        case MsgType::Keepalive: return "keepalive";
        case MsgType::Discover: return "discover";
        case MsgType::DiscoverResponse: return "discover_response";
    }
    return "unknown";
}

std::string_view to_string(Status s) {
    switch (s) {
        case Status::Ok: return "ok";
        case Status::IllegalTransition: return "illegal_transition";
        case Status::ProcedureLost: return "procedure_lost";
        case Status::StateLost: return "state_lost";
        case Status::NoSession: return "no_session";
        case Status::Unavailable: return "unavailable";
    }
    return "ok";
}

namespace wire {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int shift = 24; shift >= 0; shift -= 8) u8(static_cast<std::uint8_t>(v >> shift));
    }
    void u64(std::uint64_t v) {
        for (int shift = 56; shift >= 0; shift -= 8) u8(static_cast<std::uint8_t>(v >> shift));
    }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.append(s);
    }
    void id(const InstanceId& i) {
        u8(static_cast<std::uint8_t>(i.kind));
        u32(i.ordinal);
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(in_[pos_++]);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v = (v << 8) | u8();
        return v;
    }
    std::string str() {
        auto n = u32();
        need(n);
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    InstanceId id() {
        InstanceId i;
        auto k = u8();
        if (k > static_cast<std::uint8_t>(NfKind::Ran)) throw DecodeError("bad nf kind");
        i.kind = static_cast<NfKind>(k);
        i.ordinal = u32();
        return i;
    }
    template <typename E>
    E enumeration(std::uint8_t max) {
        auto v = u8();
        if (v > max) throw DecodeError("enum out of range");
        return static_cast<E>(v);
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > in_.size()) throw DecodeError("truncated record");
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

void write_record(Writer& w, const ControlMessage& m) {
    w.u64(m.msg_id);
    w.u8(static_cast<std::uint8_t>(m.channel));
    w.u8(static_cast<std::uint8_t>(m.type));
    w.u8(static_cast<std::uint8_t>(m.event.type));
    w.u8(static_cast<std::uint8_t>(m.event.direction));
    w.str(m.ue.supi);
    w.u32(m.ue.ngap_id);
    w.u8(m.ue.ip_index ? 1 : 0);
    w.u32(m.ue.ip_index.value_or(0));
    w.u64(m.seq);
    w.u32(m.step);
    w.u64(m.prior_seq);
    w.id(m.sender);
    w.u8(static_cast<std::uint8_t>(m.receiver));
    w.id(m.origin);
    w.u8(static_cast<std::uint8_t>(m.status));
    w.u64(m.aux);
    w.str(m.payload);
    w.u32(m.attempt);
    w.u64(static_cast<std::uint64_t>(m.sent_at.count()));
}

ControlMessage read_record(Reader& r) {
    ControlMessage m;
    m.msg_id = r.u64();
    m.channel = r.enumeration<Channel>(static_cast<std::uint8_t>(Channel::Sbi));
    m.type = r.enumeration<MsgType>(static_cast<std::uint8_t>(MsgType::DiscoverResponse));
    m.event.type = r.enumeration<EventType>(static_cast<std::uint8_t>(EventType::ServiceRequest));
    m.event.direction = r.enumeration<Direction>(static_cast<std::uint8_t>(Direction::Downstream));
    m.ue.supi = r.str();
    m.ue.ngap_id = r.u32();
    bool has_ip = r.u8() != 0;
    auto ip = r.u32();
    if (has_ip) m.ue.ip_index = ip;
    m.seq = r.u64();
    m.step = r.u32();
    m.prior_seq = r.u64();
    m.sender = r.id();
    m.receiver = r.enumeration<NfKind>(static_cast<std::uint8_t>(NfKind::Ran));
    m.origin = r.id();
    m.status = r.enumeration<Status>(static_cast<std::uint8_t>(Status::Unavailable));
    m.aux = r.u64();
    m.payload = r.str();
    m.attempt = r.u32();
    m.sent_at = Micros(static_cast<std::int64_t>(r.u64()));
    return m;
}

}  // namespace

std::string encode(const ControlMessage& msg) {
    Writer w;
    write_record(w, msg);
    return w.take();
}

ControlMessage decode(std::string_view bytes) {
    Reader r(bytes);
    auto m = read_record(r);
    if (!r.done()) throw DecodeError("trailing bytes in record");
    return m;
}

std::string frame(const InstanceId& to, const ControlMessage& msg) {
    Writer body;
    body.id(to);
    write_record(body, msg);
    auto payload = body.take();
    Writer w;
    w.u32(static_cast<std::uint32_t>(payload.size()));
    auto out = w.take();
    out += payload;
    return out;
}

}  // namespace wire

std::size_t Endpoint::depth() const {
    std::lock_guard lock(mu_);
    return mailbox_.size();
}

std::optional<Micros> Endpoint::head_ready_at() const {
    std::lock_guard lock(mu_);
    if (mailbox_.empty()) return std::nullopt;
    return mailbox_.front().available_at;
}

std::optional<ControlMessage> Endpoint::pop_ready(Micros now) {
    std::lock_guard lock(mu_);
    if (mailbox_.empty() || mailbox_.front().available_at > now) return std::nullopt;
    auto msg = std::move(mailbox_.front().msg);
    mailbox_.pop_front();
    return msg;
}

std::vector<ControlMessage> Endpoint::clear() {
    std::lock_guard lock(mu_);
    std::vector<ControlMessage> out;
    out.reserve(mailbox_.size());
    for (auto& e : mailbox_) out.push_back(std::move(e.msg));
    mailbox_.clear();
    return out;
}

void Endpoint::push(ControlMessage msg, Micros available_at) {
    {
        std::lock_guard lock(mu_);
        if (!mailbox_.empty() && mailbox_.back().available_at > available_at) {
            available_at = mailbox_.back().available_at;
        }
        mailbox_.push_back(Envelope{available_at, std::move(msg)});
    }
    if (on_enqueue_) on_enqueue_();
}

void Fabric::register_endpoint(std::shared_ptr<Endpoint> ep) {
    std::lock_guard lock(mu_);
    auto [it, inserted] = endpoints_.emplace(ep->id(), ep);
    if (!inserted) throw DuplicateEndpoint(ep->id());
}

void Fabric::deregister_endpoint(const InstanceId& id) {
    std::shared_ptr<Endpoint> ep;
    {
        std::lock_guard lock(mu_);
        auto it = endpoints_.find(id);
        if (it == endpoints_.end()) return;
        ep = it->second;
        endpoints_.erase(it);
    }
    auto lost = ep->clear();
    if (observer_) {
        for (const auto& m : lost) observer_->on_dropped(m, id, "lost");
    }
}

bool Fabric::is_registered(const InstanceId& id) const {
    std::lock_guard lock(mu_);
    return endpoints_.count(id) != 0;
}

void Fabric::add_drop_rule(DropRule rule) {
    std::lock_guard lock(mu_);
    drop_rules_.push_back(rule);
}

bool Fabric::should_drop(const ControlMessage& msg, const InstanceId& to) {
    Micros now = exec_.now();
    for (auto it = drop_rules_.begin(); it != drop_rules_.end(); ++it) {
        auto& r = *it;
        if (now >= r.until) continue;
        if (r.channel && *r.channel != msg.channel) continue;
        if (r.receiver_kind && *r.receiver_kind != to.kind) continue;
        if (r.receiver && *r.receiver != to) continue;
        if (r.remaining > 0 && --r.remaining == 0) drop_rules_.erase(it);
        return true;
    }
    return false;
}

SendResult Fabric::send(ControlMessage msg, const InstanceId& to) {
    Micros now = exec_.now();
    msg.sent_at = now;
    bool drop = false;
    {
        std::lock_guard lock(mu_);
        if (endpoints_.count(to) == 0) {
            if (observer_) observer_->on_dropped(msg, to, "delivery_failed");
            return SendResult{SendStatus::DeliveryFailed, now};
        }
        ++sent_;
        drop = !drop_rules_.empty() && should_drop(msg, to);
    }
    if (observer_) observer_->on_sent(msg, to);
    if (drop) {
        if (observer_) observer_->on_dropped(msg, to, "fault_drop");
        return SendResult{SendStatus::Enqueued, now};
    }
    transmit(msg, to, now + latency_.of(msg.channel));
    return SendResult{SendStatus::Enqueued, now};
}

void Fabric::deliver(const ControlMessage& msg, const InstanceId& to, Micros available_at) {
    std::shared_ptr<Endpoint> ep;
    {
        std::lock_guard lock(mu_);
        auto it = endpoints_.find(to);
        if (it != endpoints_.end()) ep = it->second;
    }
    if (!ep) {
        if (observer_) observer_->on_dropped(msg, to, "lost");
        return;
    }
    ep->push(msg, available_at);
}

void InProcessFabric::transmit(const ControlMessage& msg, const InstanceId& to, Micros available_at) {
    deliver(msg, to, available_at);
}

namespace {

void write_all(int fd, const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
        auto n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw std::system_error(errno, std::generic_category(), "loopback send");
        }
        off += static_cast<std::size_t>(n);
    }
}

bool read_exact(int fd, char* buf, std::size_t len) {
    std::size_t off = 0;
    while (off < len) {
        auto n = ::recv(fd, buf + off, len - off, 0);
        if (n == 0) return false;
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        off += static_cast<std::size_t>(n);
    }
    return true;
}

}  // namespace

LoopbackFabric::LoopbackFabric(Executor& exec, ChannelLatency latency) : Fabric(exec, latency) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::system_error(errno, std::generic_category(), "socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 1) != 0) {
        ::close(listen_fd_);
        throw std::system_error(errno, std::generic_category(), "bind/listen");
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);

    client_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (::connect(client_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        throw std::system_error(errno, std::generic_category(), "connect");
    }
    server_fd_ = ::accept(listen_fd_, nullptr, nullptr);
    if (server_fd_ < 0) throw std::system_error(errno, std::generic_category(), "accept");
    int one = 1;
    ::setsockopt(client_fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    reader_ = std::thread([this] { reader_loop(); });
}

LoopbackFabric::~LoopbackFabric() {
    stopping_ = true;
    ::shutdown(client_fd_, SHUT_RDWR);
    ::shutdown(server_fd_, SHUT_RDWR);
    if (reader_.joinable()) reader_.join();
    ::close(client_fd_);
    ::close(server_fd_);
    ::close(listen_fd_);
}

void LoopbackFabric::transmit(const ControlMessage& msg, const InstanceId& to, Micros) {
    auto bytes = wire::frame(to, msg);
    std::lock_guard lock(write_mu_);
    write_all(client_fd_, bytes);
}

void LoopbackFabric::reader_loop() {
    std::string buf;
    while (!stopping_) {
        char head[4];
        if (!read_exact(server_fd_, head, 4)) return;
        std::uint32_t len = 0;
        for (char c : head) len = (len << 8) | static_cast<std::uint8_t>(c);
        buf.resize(len);
        if (!read_exact(server_fd_, buf.data(), len)) return;
        InstanceId to;
        to.kind = static_cast<NfKind>(static_cast<std::uint8_t>(buf[0]));
        to.ordinal = 0;
        for (int i = 1; i <= 4; ++i) to.ordinal = (to.ordinal << 8) | static_cast<std::uint8_t>(buf[i]);
        auto msg = wire::decode(std::string_view(buf).substr(5));
        exec_.post([this, to, msg = std::move(msg)] { deliver(msg, to, exec_.now()); });
    }
}

}  // namespace sbacore
