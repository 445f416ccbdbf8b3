#pragma once

#include <array>
#include <chrono>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace sbacore {

using Micros = std::chrono::microseconds;

inline constexpr Micros ms(std::int64_t v) { return Micros(v * 1000); }
inline constexpr Micros seconds(std::int64_t v) { return Micros(v * 1000000); }

// Network function kinds. Upf and Ran are the stub endpoints at the edge of the core.
enum class NfKind : std::uint8_t { Gateway, Amf, Smf, Nrf, Ausf, Udm, Pcf, Udr, Store, Upf, Ran };

inline constexpr std::array<NfKind, 11> kAllNfKinds = {
    NfKind::Gateway, NfKind::Amf, NfKind::Smf, NfKind::Nrf, NfKind::Ausf, NfKind::Udm,
    NfKind::Pcf,     NfKind::Udr, NfKind::Store, NfKind::Upf, NfKind::Ran};

std::string_view to_string(NfKind kind);
NfKind nf_kind_from_string(std::string_view name);

enum class Pattern : std::uint8_t { P1Gateway, P2LongRunning, P3Ephemeral, P4Storage, Stub };

Pattern pattern_of(NfKind kind);
std::string_view to_string(Pattern p);

struct InstanceId {
    NfKind kind = NfKind::Amf;
    std::uint32_t ordinal = 0;

    std::string str() const;
    static InstanceId parse(std::string_view text);

    friend auto operator<=>(const InstanceId&, const InstanceId&) = default;
    friend bool operator==(const InstanceId&, const InstanceId&) = default;
};

enum class EventType : std::uint8_t { Registration, PduEstablish, ServiceRequest };
enum class Direction : std::uint8_t { Upstream, Downstream };

std::string_view to_string(EventType t);
EventType event_type_from_string(std::string_view name);
std::string_view to_string(Direction d);

struct EventKind {
    EventType type = EventType::Registration;
    Direction direction = Direction::Upstream;

    static EventKind registration() { return {EventType::Registration, Direction::Upstream}; }
    static EventKind pdu() { return {EventType::PduEstablish, Direction::Upstream}; }
    static EventKind sr(Direction d = Direction::Upstream) { return {EventType::ServiceRequest, d}; }

    // Registration and PduEstablish only exist upstream.
    bool valid() const {
        return direction == Direction::Upstream || type == EventType::ServiceRequest;
    }

    friend bool operator==(const EventKind&, const EventKind&) = default;
};

enum class RegState : std::uint8_t { Deregistered, Registered };
enum class SessionState : std::uint8_t { NoSession, Established };
enum class ConnState : std::uint8_t { Idle, Connected };

std::string_view to_string(RegState s);
std::string_view to_string(SessionState s);
std::string_view to_string(ConnState s);

struct UeId {
    std::string supi;
    std::uint64_t guti = 0;
    std::uint32_t ngap_id = 0;
    std::optional<std::uint32_t> ip_index;

    friend bool operator==(const UeId&, const UeId&) = default;
};

struct UeContext {
    UeId id;
    RegState reg_state = RegState::Deregistered;
    SessionState session_state = SessionState::NoSession;
    ConnState conn_state = ConnState::Idle;
    std::optional<InstanceId> owner_amf;
    std::optional<InstanceId> owner_smf;
    std::uint64_t version = 0;
    std::uint64_t last_event_seq = 0;

    bool satisfies_invariants() const;

    friend bool operator==(const UeContext&, const UeContext&) = default;
};

UeContext fresh_context(std::string supi);

// Protocol state only: supi, guti, the three state enums, version and last_event_seq.
// Owners, ngap_id and ip_index depend on which instance served the UE.
bool protocol_equal(const UeContext& a, const UeContext& b);

class IllegalTransition : public std::runtime_error {
public:
    IllegalTransition(EventKind event, const UeContext& from);
    EventKind event() const { return event_; }

private:
    EventKind event_;
};

// Pure successor function of the per-UE state machine.
UeContext apply_event(const UeContext& ctx, EventKind event, std::uint64_t seq);

// Would apply_event accept this event from this state?
bool is_legal(const UeContext& ctx, EventKind event);

std::uint64_t guti_for(std::string_view supi, std::uint64_t seq);

enum class TimerLevel : std::uint8_t { T3550Sr = 0, T3580Pdu = 1, T3510Reg = 2 };

std::string_view to_string(TimerLevel level);

struct TimerSetting {
    Micros timeout{};
    std::uint32_t max_retries = 3;
};

struct TimerLadder {
    std::array<TimerSetting, 3> levels{TimerSetting{seconds(3), 3}, TimerSetting{seconds(6), 3},
                                       TimerSetting{seconds(10), 3}};

    const TimerSetting& at(TimerLevel level) const {
        return levels[static_cast<std::size_t>(level)];
    }
};

struct Abort {
    friend bool operator==(const Abort&, const Abort&) = default;
};

using Escalation = std::variant<TimerLevel, Abort>;

Escalation escalate(const TimerLadder& ladder, TimerLevel level, std::uint32_t retries_done);

// The ladder level guarding an event of this type.
TimerLevel base_level(EventType type);

// Events re-run when the ladder sits at `level` for an episode that started as `original`.
std::vector<EventType> recovery_chain(TimerLevel level, EventType original);

struct Hop {
    NfKind from;
    NfKind to;

    friend bool operator==(const Hop&, const Hop&) = default;
    friend auto operator<=>(const Hop&, const Hop&) = default;
};

struct MessageFlow {
    std::vector<Hop> hops;
};

struct FlowGraph {
    EventKind event;
    std::vector<Hop> downstream_prefix;
    bool paging = false;
    std::vector<MessageFlow> messages;
    bool pfcp_action = false;
    std::vector<std::pair<NfKind, double>> weights;

    std::vector<Hop> all_hops() const;
    double weight(NfKind kind) const;
};

FlowGraph flow_for(EventKind event);

// Number of message handlings a kind performs for one event; the kind's weight is split across them.
std::uint32_t handling_points(EventType type, NfKind kind);

}  // namespace sbacore
