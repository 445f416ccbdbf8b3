#include "sbacore/model.hpp"

#include <algorithm>
#include <charconv>
#include <set>

namespace sbacore {

namespace {

constexpr std::array<std::string_view, 11> kKindNames = {"gw",  "amf", "smf",   "nrf", "ausf", "udm",
                                                         "pcf", "udr", "store", "upf", "ran"};

}  // namespace

std::string_view to_string(NfKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

NfKind nf_kind_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i) {
        if (kKindNames[i] == name) return static_cast<NfKind>(i);
    }
    if (name == "gateway") return NfKind::Gateway;
    throw std::invalid_argument("unknown nf kind: " + std::string(name));
}

Pattern pattern_of(NfKind kind) {
    switch (kind) {
        case NfKind::Gateway: return Pattern::P1Gateway;
        case NfKind::Amf:
        case NfKind::Smf:
        case NfKind::Nrf: return Pattern::P2LongRunning;
        case NfKind::Ausf:
        case NfKind::Udm:
        case NfKind::Pcf:
        case NfKind::Udr: return Pattern::P3Ephemeral;
        case NfKind::Store: return Pattern::P4Storage;
        case NfKind::Upf:
        case NfKind::Ran: return Pattern::Stub;
    }
    return Pattern::Stub;
}

std::string_view to_string(Pattern p) {
    switch (p) {
        case Pattern::P1Gateway: return "P1";
        case Pattern::P2LongRunning: return "P2";
        case Pattern::P3Ephemeral: return "P3";
        case Pattern::P4Storage: return "P4";
        case Pattern::Stub: return "stub";
    }
    return "stub";
}

std::string InstanceId::str() const {
    return std::string(to_string(kind)) + "-" + std::to_string(ordinal);
}

InstanceId InstanceId::parse(std::string_view text) {
    auto dash = text.rfind('-');
    if (dash == std::string_view::npos) throw std::invalid_argument("bad instance id: " + std::string(text));
    InstanceId id;
    id.kind = nf_kind_from_string(text.substr(0, dash));
    auto digits = text.substr(dash + 1);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id.ordinal);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || digits.empty()) {
        throw std::invalid_argument("bad instance id: " + std::string(text));
    }
    return id;
}

std::string_view to_string(EventType t) {
    switch (t) {
        case EventType::Registration: return "REG";
        case EventType::PduEstablish: return "PDU";
        case EventType::ServiceRequest: return "SR";
    }
    return "REG";
}

EventType event_type_from_string(std::string_view name) {
    if (name == "REG") return EventType::Registration;
    if (name == "PDU") return EventType::PduEstablish;
    if (name == "SR") return EventType::ServiceRequest;
    throw std::invalid_argument("unknown event kind: " + std::string(name));
}

std::string_view to_string(Direction d) { return d == Direction::Upstream ? "up" : "down"; }

std::string_view to_string(RegState s) { return s == RegState::Registered ? "Registered" : "Deregistered"; }

std::string_view to_string(SessionState s) {
    return s == SessionState::Established ? "Established" : "NoSession";
}

std::string_view to_string(ConnState s) { return s == ConnState::Connected ? "Connected" : "Idle"; }

bool UeContext::satisfies_invariants() const {
    if (session_state == SessionState::Established && reg_state != RegState::Registered) return false;
    if (conn_state == ConnState::Connected && session_state != SessionState::Established) return false;
    return true;
}

UeContext fresh_context(std::string supi) {
    UeContext ctx;
    ctx.id.supi = std::move(supi);
    return ctx;
}

bool protocol_equal(const UeContext& a, const UeContext& b) {
    return a.id.supi == b.id.supi && a.id.guti == b.id.guti && a.reg_state == b.reg_state &&
           a.session_state == b.session_state && a.conn_state == b.conn_state && a.version == b.version &&
           a.last_event_seq == b.last_event_seq;
}

IllegalTransition::IllegalTransition(EventKind event, const UeContext& from)
    : std::runtime_error(std::string("illegal transition: ") + std::string(to_string(event.type)) + " from " +
                         std::string(to_string(from.reg_state)) + "/" +
                         std::string(to_string(from.session_state)) + "/" +
                         std::string(to_string(from.conn_state))),
      event_(event) {}

std::uint64_t guti_for(std::string_view supi, std::uint64_t seq) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : supi) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    h ^= seq;
    h *= 1099511628211ULL;
    return h & 0xffffffffffULL;
}

bool is_legal(const UeContext& ctx, EventKind event) {
    if (!event.valid()) return false;
    switch (event.type) {
        case EventType::Registration: return true;
        case EventType::PduEstablish: return ctx.reg_state == RegState::Registered;
        case EventType::ServiceRequest: return ctx.session_state == SessionState::Established;
    }
    return false;
}

UeContext apply_event(const UeContext& ctx, EventKind event, std::uint64_t seq) {
    if (seq == 0) throw std::invalid_argument("apply_event: seq must be positive");
    if (seq <= ctx.last_event_seq) return ctx;
    if (!is_legal(ctx, event)) throw IllegalTransition(event, ctx);

    UeContext next = ctx;
    switch (event.type) {
        case EventType::Registration:
            next.reg_state = RegState::Registered;
            next.session_state = SessionState::NoSession;
            next.conn_state = ConnState::Idle;
            next.id.guti = guti_for(ctx.id.supi, seq);
            next.id.ip_index.reset();
            next.owner_smf.reset();
            break;
        case EventType::PduEstablish:
            next.session_state = SessionState::Established;
            next.conn_state = ConnState::Idle;
            break;
        case EventType::ServiceRequest:
            next.conn_state = ConnState::Connected;
            break;
    }
    next.version = ctx.version + 1;
    next.last_event_seq = seq;
    return next;
}

std::string_view to_string(TimerLevel level) {
    switch (level) {
        case TimerLevel::T3550Sr: return "T3550";
        case TimerLevel::T3580Pdu: return "T3580";
        case TimerLevel::T3510Reg: return "T3510";
    }
    return "T3550";
}

Escalation escalate(const TimerLadder& ladder, TimerLevel level, std::uint32_t retries_done) {
    const auto& setting = ladder.at(level);
    if (retries_done > setting.max_retries) {
        throw std::invalid_argument("escalate: retries_done exceeds max_retries");
    }
    if (retries_done < setting.max_retries) return level;
    switch (level) {
        case TimerLevel::T3550Sr: return TimerLevel::T3580Pdu;
        case TimerLevel::T3580Pdu: return TimerLevel::T3510Reg;
        case TimerLevel::T3510Reg: return Abort{};
    }
    return Abort{};
}

TimerLevel base_level(EventType type) {
    switch (type) {
        case EventType::Registration: return TimerLevel::T3510Reg;
        case EventType::PduEstablish: return TimerLevel::T3580Pdu;
        case EventType::ServiceRequest: return TimerLevel::T3550Sr;
    }
    return TimerLevel::T3510Reg;
}

std::vector<EventType> recovery_chain(TimerLevel level, EventType original) {
    static constexpr std::array<EventType, 3> order = {EventType::Registration, EventType::PduEstablish,
                                                       EventType::ServiceRequest};
    auto first = static_cast<std::size_t>(2 - static_cast<int>(level));
    auto last = static_cast<std::size_t>(original);
    std::vector<EventType> chain;
    for (std::size_t i = std::min(first, last); i <= last; ++i) chain.push_back(order[i]);
    return chain;
}

std::vector<Hop> FlowGraph::all_hops() const {
    std::vector<Hop> out;
    auto add = [&](const Hop& h) {
        if (std::find(out.begin(), out.end(), h) == out.end()) out.push_back(h);
    };
    for (const auto& h : downstream_prefix) add(h);
    for (const auto& m : messages) {
        for (const auto& h : m.hops) add(h);
    }
    return out;
}

double FlowGraph::weight(NfKind kind) const {
    for (const auto& [k, w] : weights) {
        if (k == kind) return w;
    }
    return 0.0;
}

namespace {

std::vector<std::pair<NfKind, double>> spread_weights(const std::vector<std::pair<NfKind, double>>& top,
                                                      const std::vector<NfKind>& path) {
    double used = 0.0;
    for (const auto& [k, w] : top) used += w;
    std::vector<NfKind> rest;
    for (NfKind k : path) {
        bool listed = std::any_of(top.begin(), top.end(), [&](const auto& p) { return p.first == k; });
        if (!listed && std::find(rest.begin(), rest.end(), k) == rest.end()) rest.push_back(k);
    }
    auto out = top;
    if (!rest.empty()) {
        double share = (1.0 - used) / static_cast<double>(rest.size());
        for (NfKind k : rest) out.emplace_back(k, share);
    }
    return out;
}

}  // namespace

FlowGraph flow_for(EventKind event) {
    FlowGraph g;
    g.event = event;
    switch (event.type) {
        case EventType::Registration:
            g.messages = {
                MessageFlow{{{NfKind::Amf, NfKind::Nrf}, {NfKind::Amf, NfKind::Ausf}, {NfKind::Ausf, NfKind::Udm}}},
                MessageFlow{{{NfKind::Amf, NfKind::Udm}}},
                MessageFlow{{{NfKind::Amf, NfKind::Pcf}, {NfKind::Pcf, NfKind::Udm}}},
            };
            g.weights = spread_weights({{NfKind::Amf, 0.4402}, {NfKind::Udm, 0.2546}},
                                       {NfKind::Nrf, NfKind::Ausf, NfKind::Pcf});
            break;
        case EventType::PduEstablish:
            g.messages = {MessageFlow{{{NfKind::Amf, NfKind::Smf}}}, MessageFlow{{{NfKind::Amf, NfKind::Smf}}}};
            g.pfcp_action = true;
            g.weights = spread_weights({{NfKind::Amf, 0.4455}, {NfKind::Smf, 0.3010}}, {NfKind::Upf});
            break;
        case EventType::ServiceRequest:
            g.messages = {MessageFlow{{{NfKind::Amf, NfKind::Smf}}}, MessageFlow{{{NfKind::Amf, NfKind::Smf}}}};
            g.pfcp_action = true;
            g.weights = spread_weights({{NfKind::Amf, 0.8002}, {NfKind::Smf, 0.1996}}, {NfKind::Upf});
            if (event.direction == Direction::Downstream) {
                g.downstream_prefix = {{NfKind::Gateway, NfKind::Smf}, {NfKind::Smf, NfKind::Amf}};
                g.paging = true;
            }
            break;
    }
    return g;
}

std::uint32_t handling_points(EventType type, NfKind kind) {
    switch (type) {
        case EventType::Registration:
            switch (kind) {
                case NfKind::Amf: return 7;
                case NfKind::Nrf: return 1;
                case NfKind::Ausf: return 2;
                case NfKind::Udm: return 3;
                case NfKind::Pcf: return 2;
                default: return 0;
            }
        case EventType::PduEstablish:
        case EventType::ServiceRequest:
            switch (kind) {
                case NfKind::Amf: return 4;
                case NfKind::Smf: return 4;
                case NfKind::Upf: return 2;
                default: return 0;
            }
    }
    return 0;
}

}  // namespace sbacore
