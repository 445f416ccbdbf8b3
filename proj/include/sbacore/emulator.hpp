#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sbacore/logs.hpp"
#include "sbacore/runtime.hpp"

namespace sbacore {

// Per-kind inter-arrival samples in milliseconds.
struct IatTrace {
    std::map<EventType, std::vector<double>> iat_ms;

    static IatTrace parse(std::string_view jsonl);
    static IatTrace load(const std::string& path);
    std::string to_jsonl() const;
    bool empty() const;
};

// Heavy-tailed (Pareto) inter-arrival times, `per_kind` samples for each event kind.
IatTrace synthetic_trace(std::uint64_t seed, std::size_t per_kind);

enum class RepeatMode : std::uint8_t { None, Last, Cycle };

struct UeProfile {
    std::vector<EventType> events{EventType::Registration, EventType::PduEstablish, EventType::ServiceRequest};
    RepeatMode repeat = RepeatMode::Last;
    // Repeated events (Last) or extra cycles (Cycle); 0 means until the run stops.
    std::uint32_t repeat_count = 0;
    Micros gap = ms(10);

    // The event at position `index` of the expanded profile, if any.
    std::optional<EventType> at(std::uint64_t index) const;
};

struct WorkloadConfig {
    std::uint32_t n_ues = 1;
    // UEs started per second; 0 starts every UE at once.
    double ramp_per_s = 0.0;
    UeProfile profile;
    std::optional<IatTrace> trace;
    // Downlink notifications per UE per second.
    double downstream_per_s = 0.0;
    // Fire a downlink within one millisecond of each upstream service request.
    bool collide = false;
    std::uint64_t seed = 1;
};

struct CompletedEvent {
    std::uint64_t seq = 0;
    EventType event = EventType::Registration;

    friend bool operator==(const CompletedEvent&, const CompletedEvent&) = default;
};

std::uint32_t steps_of(EventType type);

class UeAgent;

// Drives emulated UEs against the core's gateway; each UE is an independent actor.
class Emulator {
public:
    Emulator(Core& core, WorkloadConfig cfg);
    ~Emulator();
    Emulator(const Emulator&) = delete;
    Emulator& operator=(const Emulator&) = delete;

    void start();
    // No new episodes start; running episodes finish.
    void stop();
    bool stopped() const { return stopped_; }
    bool idle() const;
    std::size_t active() const;

    std::uint32_t size() const { return static_cast<std::uint32_t>(agents_.size()); }
    UeAgent& agent(std::uint32_t ue);
    const UeAgent& agent(std::uint32_t ue) const;
    void inject_downstream(std::uint32_t ue);

    const WorkloadConfig& config() const { return cfg_; }
    Core& core() { return core_; }

private:
    Core& core_;
    WorkloadConfig cfg_;
    std::vector<std::unique_ptr<UeAgent>> agents_;
    bool stopped_ = false;
};

class UeAgent {
public:
    UeAgent(Emulator& emu, Core& core, std::uint32_t ue);
    ~UeAgent();

    std::uint32_t ue() const { return ue_; }
    const std::string& supi() const { return supi_; }
    const InstanceId& id() const { return id_; }
    bool in_episode() const { return episode_.has_value(); }
    bool started() const { return started_; }
    std::uint32_t aborts() const { return aborts_; }
    std::optional<std::uint32_t> ip_index() const { return ip_; }
    std::uint32_t ngap_id() const { return ngap_; }
    // Events the UE saw complete, in completion order.
    const std::vector<CompletedEvent>& completed() const { return completed_; }

    void start();
    void inject_downstream();

private:
    struct Exchange {
        EventKind event;
        std::uint64_t seq = 0;
        std::uint64_t prior = 0;
        std::uint32_t step = 1;
        std::uint64_t msg_id = 0;
        std::uint32_t attempt = 1;
        bool replay = false;
    };
    struct Episode {
        EventType original = EventType::ServiceRequest;
        Direction direction = Direction::Upstream;
        TimerLevel level = TimerLevel::T3550Sr;
        std::uint32_t retries_done = 0;
        std::uint32_t total_retries = 0;
        bool escalated = false;
        std::vector<EventType> chain;
        std::size_t chain_pos = 0;
        std::vector<CompletedEvent> replays;
        Micros t_start{0};
        std::uint64_t seq_first = 0;
        bool from_profile = true;
    };

    void on_message();
    void handle(const ControlMessage& m);
    void on_response(const ControlMessage& m);
    void on_nack(const ControlMessage& m);
    void on_paging();
    void next_event();
    void schedule_next(Micros delay);
    void begin_episode(EventType type, Direction dir, bool from_profile);
    void start_chain_event();
    void begin_exchange(EventKind ev, std::uint64_t seq, bool replay);
    void transmit();
    void arm_timer();
    void on_timeout();
    void escalate_now();
    void end_episode(Outcome outcome);
    void event_completed(const Exchange& x);
    std::uint64_t last_completed_before(std::uint64_t seq) const;
    Micros gap_before(EventType next);
    void schedule_downstream();
    void log(std::string_view action, const ControlMessage* msg = nullptr, std::string_view detail = {});
    void log_seq(std::string_view action, std::uint64_t seq, std::string_view detail = {});

    Emulator& emu_;
    Core& core_;
    std::uint32_t ue_;
    std::string supi_;
    InstanceId id_;
    std::string name_;
    std::shared_ptr<Endpoint> ep_;
    std::mt19937_64 rng_;
    std::shared_ptr<bool> token_ = std::make_shared<bool>(true);

    bool started_ = false;
    std::uint32_t ngap_ = 0;
    std::optional<std::uint32_t> ip_;
    std::vector<CompletedEvent> completed_;
    std::uint64_t last_completed_ = 0;
    std::uint64_t next_seq_ = 1;
    std::map<std::uint64_t, EventType> abandoned_;
    std::uint64_t cursor_ = 0;
    std::uint32_t aborts_ = 0;

    std::optional<Episode> episode_;
    std::optional<Exchange> exchange_;
    std::optional<TaskId> timer_;
    std::optional<TaskId> next_timer_;
    bool paging_pending_ = false;
    bool wake_pending_ = false;
};

}  // namespace sbacore
