#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sbacore/clock.hpp"
#include "sbacore/drsm.hpp"
#include "sbacore/logs.hpp"
#include "sbacore/statestore.hpp"
#include "sbacore/transport.hpp"

namespace sbacore {

struct AutoscalePolicy {
    std::uint32_t min_instances = 1;
    std::uint32_t max_instances = 5;
    double scale_up_threshold = 0.6;
    double scale_down_threshold = 0.2;
    Micros cooldown = seconds(5);
    Micros window = seconds(1);
};

enum class ScaleAction : std::uint8_t { None, Up, Down };

std::string_view to_string(ScaleAction a);

// Threshold autoscaler with a per-kind cooldown.
class Autoscaler {
public:
    ScaleAction decide(NfKind kind, const AutoscalePolicy& policy, double utilization, std::uint32_t count,
                       Micros now) const;
    void acted(NfKind kind, Micros now) { last_action_[kind] = now; }
    bool in_cooldown(NfKind kind, const AutoscalePolicy& policy, Micros now) const;

private:
    std::map<NfKind, Micros> last_action_;
};

enum class FaultType : std::uint8_t { Kill, PauseStore, Drop, SilenceKeepalive };

std::string_view to_string(FaultType t);

struct FaultAction {
    Micros at{0};
    FaultType type = FaultType::Kill;
    std::string target;
    Micros duration{0};
    std::optional<Channel> channel;
    std::optional<NfKind> receiver_kind;
    std::uint32_t count = 0;
};

struct FaultPlan {
    std::vector<FaultAction> actions;
};

struct CoreConfig {
    ClockMode clock = ClockMode::Virtual;
    // Carry every message over a local TCP connection (Wall mode only).
    bool loopback = false;
    std::uint64_t seed = 1;

    std::map<NfKind, std::uint32_t> instances{{NfKind::Amf, 1}, {NfKind::Smf, 1},  {NfKind::Nrf, 1},
                                               {NfKind::Ausf, 1}, {NfKind::Udm, 1}, {NfKind::Pcf, 1},
                                               {NfKind::Udr, 1}};
    std::map<NfKind, AutoscalePolicy> autoscale;
    bool respawn = true;

    CacheConfig cache;
    TimerLadder ladder;
    DrsmConfig drsm;
    Micros sweep_interval = ms(100);
    Micros feed_latency{200};
    ChannelLatency latency;

    Micros base_service = ms(1);
    Micros gateway_cost{5};
    Micros control_cost{5};
    Micros store_latency{100};
    Micros paging_delay = ms(2);
    Micros boot_delay = ms(500);
    Micros reconcile_interval = seconds(1);
    Micros metrics_interval = seconds(1);

    Micros keepalive_interval = ms(500);
    std::uint32_t miss_threshold = 3;

    Micros upf_retry = seconds(3);
    std::uint32_t upf_max_retries = 3;
    Micros gateway_retry = ms(200);
    std::uint32_t gateway_max_holds = 10;
    Micros drain_poll = ms(10);
    Micros drain_limit = seconds(2);

    LogFlags logs;
    bool store_attribution = true;
};

class Instance;
class Gateway;
class Nrf;
class Upf;

// Owns the substrate (clock, fabric, stores, DRSM) and the NF instances; runs the
// orchestrator reconcile loop, the autoscaler and the fault plan.
class Core : public FabricObserver {
public:
    Core(CoreConfig cfg, LogSink& logs);
    ~Core() override;
    Core(const Core&) = delete;
    Core& operator=(const Core&) = delete;

    const CoreConfig& config() const { return cfg_; }
    Scheduler& scheduler() { return sched_; }
    Executor& exec() { return sched_; }
    Micros now() const { return sched_.now(); }
    Fabric& fabric() { return *fabric_; }
    MemoryKvStore& drsm_store() { return *drsm_kv_; }
    MemoryKvStore& ue_kv() { return *ue_kv_; }
    UeStore& ue_store() { return *ue_store_; }
    Drsm& drsm() { return *drsm_; }
    LogSink& logs() { return logs_; }
    std::uint64_t next_msg_id() { return next_msg_id_++; }
    std::mt19937_64& rng() { return rng_; }

    // Spawns the fixed services and the configured initial instances, then starts the control loops.
    void start();
    InstanceId spawn_instance(NfKind kind, std::optional<Micros> boot_delay = std::nullopt);
    void kill_instance(const InstanceId& id);
    void remove_instance(const InstanceId& id);
    void inject(const FaultPlan& plan);

    Instance* find(const InstanceId& id);
    std::vector<Instance*> instances(NfKind kind, bool include_dead = false);
    std::vector<Instance*> all_instances();
    // Alive, not draining; includes booting instances.
    std::uint32_t active_count(NfKind kind);
    double utilization(NfKind kind);

    Gateway& gateway() { return *gateway_; }
    Nrf& nrf() { return *nrf_; }
    Upf& upf() { return *upf_; }
    InstanceId gateway_id() const;
    InstanceId nrf_id() const;
    InstanceId upf_id() const;

    // Flushes every live write-behind cache (end of run).
    void flush_all();
    void set_scale_observer(std::function<void(NfKind, ScaleAction)> fn) { scale_observer_ = std::move(fn); }

    void on_dropped(const ControlMessage& msg, const InstanceId& to, std::string_view reason) override;

private:
    Instance* create(NfKind kind, std::uint32_t ordinal);
    void bring_up(Instance* inst);
    void reconcile();
    void autoscale_tick();
    void sample_metrics();
    void fire(const FaultAction& a);
    void poll_drain(Instance* inst, Micros deadline);

    CoreConfig cfg_;
    LogSink& logs_;
    Scheduler sched_;
    std::unique_ptr<Fabric> fabric_;
    std::unique_ptr<MemoryKvStore> drsm_kv_;
    std::unique_ptr<MemoryKvStore> ue_kv_;
    std::unique_ptr<UeStore> ue_store_;
    std::unique_ptr<Drsm> drsm_;
    std::vector<std::unique_ptr<Instance>> instances_;
    std::map<NfKind, std::uint32_t> ordinals_;
    std::map<NfKind, std::uint32_t> desired_;
    Gateway* gateway_ = nullptr;
    Nrf* nrf_ = nullptr;
    Upf* upf_ = nullptr;
    Autoscaler autoscaler_;
    std::uint64_t next_msg_id_ = 1;
    std::mt19937_64 rng_;
    std::function<void(NfKind, ScaleAction)> scale_observer_;
    bool started_ = false;
};

}  // namespace sbacore
