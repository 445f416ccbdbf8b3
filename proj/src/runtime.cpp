#include "sbacore/runtime.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "sbacore/services.hpp"

namespace sbacore {

std::string_view to_string(ScaleAction a) {
    switch (a) {
        case ScaleAction::None: return "none";
        case ScaleAction::Up: return "up";
        case ScaleAction::Down: return "down";
    }
    return "none";
}

std::string_view to_string(FaultType t) {
    switch (t) {
        case FaultType::Kill: return "kill";
        case FaultType::PauseStore: return "pause_store";
        case FaultType::Drop: return "drop";
        case FaultType::SilenceKeepalive: return "silence_keepalive";
    }
    return "kill";
}

bool Autoscaler::in_cooldown(NfKind kind, const AutoscalePolicy& policy, Micros now) const {
    auto it = last_action_.find(kind);
    return it != last_action_.end() && now - it->second < policy.cooldown;
}

ScaleAction Autoscaler::decide(NfKind kind, const AutoscalePolicy& policy, double utilization, std::uint32_t count,
                               Micros now) const {
    if (in_cooldown(kind, policy, now)) return ScaleAction::None;
    if (utilization > policy.scale_up_threshold && count < policy.max_instances) return ScaleAction::Up;
    if (utilization < policy.scale_down_threshold && count > policy.min_instances) return ScaleAction::Down;
    return ScaleAction::None;
}

Core::Core(CoreConfig cfg, LogSink& logs) : cfg_(std::move(cfg)), logs_(logs), sched_(cfg_.clock), rng_(cfg_.seed) {
    if (cfg_.loopback) {
        fabric_ = std::make_unique<LoopbackFabric>(sched_, cfg_.latency);
    } else {
        fabric_ = std::make_unique<InProcessFabric>(sched_, cfg_.latency);
    }
    fabric_->set_observer(this);
    drsm_kv_ = std::make_unique<MemoryKvStore>(
        sched_, KvStoreOptions{cfg_.sweep_interval, cfg_.feed_latency, true, false, cfg_.logs.store});
    ue_kv_ = std::make_unique<MemoryKvStore>(
        sched_, KvStoreOptions{cfg_.sweep_interval, cfg_.feed_latency, false, false, cfg_.logs.ue_store});
    ue_store_ = std::make_unique<UeStore>(*ue_kv_, sched_);
    ue_store_->set_attribution(cfg_.store_attribution);
    drsm_ = std::make_unique<Drsm>(*drsm_kv_, sched_, cfg_.drsm);
}

Core::~Core() {
    for (auto& inst : instances_) {
        if (inst->alive()) inst->crash();
    }
    fabric_->set_observer(nullptr);
}

InstanceId Core::gateway_id() const { return gateway_->id(); }
InstanceId Core::nrf_id() const { return nrf_->id(); }
InstanceId Core::upf_id() const { return upf_->id(); }

Instance* Core::create(NfKind kind, std::uint32_t ordinal) {
    InstanceId id{kind, ordinal};
    std::unique_ptr<Instance> inst;
    switch (kind) {
        case NfKind::Gateway: inst = std::make_unique<Gateway>(*this, id); break;
        case NfKind::Amf: inst = std::make_unique<Amf>(*this, id); break;
        case NfKind::Smf: inst = std::make_unique<Smf>(*this, id); break;
        case NfKind::Nrf: inst = std::make_unique<Nrf>(*this, id); break;
        case NfKind::Ausf:
        case NfKind::Udm:
        case NfKind::Pcf:
        case NfKind::Udr: inst = std::make_unique<Ephemeral>(*this, id); break;
        case NfKind::Upf: inst = std::make_unique<Upf>(*this, id); break;
        default: throw std::invalid_argument("cannot spawn " + std::string(to_string(kind)));
    }
    instances_.push_back(std::move(inst));
    return instances_.back().get();
}

void Core::start() {
    if (started_) return;
    started_ = true;
    drsm_->attach_expiry_redistribution(*drsm_kv_);
    drsm_->set_redistribution_observer(
        [this](Pool pool, const std::vector<std::pair<ResourceBlock, std::optional<InstanceId>>>& moves) {
            for (const auto& [block, holder] : moves) {
                logs_.lifecycle(now(), holder ? holder->str() : "parked", "redistribute",
                                fmt::format("{}:{}+{}", to_string(pool), block.start, block.len));
            }
        });

    nrf_ = static_cast<Nrf*>(find(spawn_instance(NfKind::Nrf, Micros(0))));
    gateway_ = static_cast<Gateway*>(find(spawn_instance(NfKind::Gateway, Micros(0))));
    upf_ = static_cast<Upf*>(find(spawn_instance(NfKind::Upf, Micros(0))));
    desired_[NfKind::Nrf] = 1;
    desired_[NfKind::Gateway] = 1;
    desired_[NfKind::Upf] = 1;

    for (auto [kind, count] : cfg_.instances) {
        if (kind == NfKind::Nrf || kind == NfKind::Gateway || kind == NfKind::Upf) continue;
        std::uint32_t want = count;
        if (auto it = cfg_.autoscale.find(kind); it != cfg_.autoscale.end()) {
            want = std::clamp(want, it->second.min_instances, it->second.max_instances);
            desired_[kind] = it->second.min_instances;
        } else {
            desired_[kind] = count;
        }
        for (std::uint32_t i = 0; i < want; ++i) spawn_instance(kind, Micros(0));
    }

    sched_.schedule_after(cfg_.reconcile_interval, [this] { reconcile(); });
    if (!cfg_.autoscale.empty()) {
        sched_.schedule_after(seconds(1), [this] { autoscale_tick(); });
    }
    sched_.schedule_after(cfg_.metrics_interval, [this] { sample_metrics(); });
}

InstanceId Core::spawn_instance(NfKind kind, std::optional<Micros> boot_delay) {
    auto ordinal = ++ordinals_[kind];
    auto* inst = create(kind, ordinal);
    fabric_->register_endpoint(inst->endpoint());
    logs_.lifecycle(now(), inst->name(), "spawn");
    auto delay = boot_delay.value_or(cfg_.boot_delay);
    if (delay.count() == 0) {
        bring_up(inst);
    } else {
        sched_.schedule_after(delay, [this, inst] { bring_up(inst); });
    }
    return inst->id();
}

void Core::bring_up(Instance* inst) {
    if (!inst->alive()) return;
    try {
        inst->bring_up();
    } catch (const PoolExhausted& e) {
        logs_.lifecycle(now(), inst->name(), "spawn_aborted", e.what());
        inst->crash();
        fabric_->deregister_endpoint(inst->id());
        try {
            drsm_->deregister_instance(inst->id());
        } catch (const UnknownInstance&) {
        }
        if (inst->kind() != NfKind::Nrf && nrf_) nrf_->deregister_nf(inst->id());
    }
}

void Core::kill_instance(const InstanceId& id) {
    auto* inst = find(id);
    if (!inst || !inst->alive()) {
        logs_.lifecycle(now(), id.str(), "unknown_target", "kill");
        return;
    }
    inst->crash();
    fabric_->deregister_endpoint(id);
    logs_.lifecycle(now(), inst->name(), "kill");
}

void Core::remove_instance(const InstanceId& id) {
    auto* inst = find(id);
    if (!inst || !inst->alive() || inst->draining()) return;
    inst->begin_drain();
    poll_drain(inst, now() + cfg_.drain_limit);
}

void Core::poll_drain(Instance* inst, Micros deadline) {
    if (!inst->alive()) return;
    if ((inst->quiescent() || now() >= deadline) && inst->finish_drain()) {
        fabric_->deregister_endpoint(inst->id());
        return;
    }
    sched_.schedule_after(cfg_.drain_poll, [this, inst, deadline] { poll_drain(inst, deadline); });
}

Instance* Core::find(const InstanceId& id) {
    for (auto& inst : instances_) {
        if (inst->id() == id) return inst.get();
    }
    return nullptr;
}

std::vector<Instance*> Core::instances(NfKind kind, bool include_dead) {
    std::vector<Instance*> out;
    for (auto& inst : instances_) {
        if (inst->kind() == kind && (include_dead || inst->alive())) out.push_back(inst.get());
    }
    return out;
}

std::vector<Instance*> Core::all_instances() {
    std::vector<Instance*> out;
    for (auto& inst : instances_) out.push_back(inst.get());
    return out;
}

std::uint32_t Core::active_count(NfKind kind) {
    std::uint32_t n = 0;
    for (auto& inst : instances_) {
        if (inst->kind() == kind && inst->alive() && !inst->draining()) ++n;
    }
    return n;
}

double Core::utilization(NfKind kind) {
    Micros window = seconds(1);
    if (auto it = cfg_.autoscale.find(kind); it != cfg_.autoscale.end()) window = it->second.window;
    double sum = 0.0;
    int n = 0;
    for (auto& inst : instances_) {
        if (inst->kind() == kind && inst->alive() && inst->ready() && !inst->draining()) {
            sum += inst->utilization(window);
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / n;
}

void Core::reconcile() {
    if (cfg_.respawn) {
        for (auto [kind, want] : desired_) {
            if (kind == NfKind::Nrf || kind == NfKind::Gateway || kind == NfKind::Upf) continue;
            while (active_count(kind) < want) {
                auto id = spawn_instance(kind);
                logs_.lifecycle(now(), id.str(), "respawn");
            }
        }
    }
    sched_.schedule_after(cfg_.reconcile_interval, [this] { reconcile(); });
}

void Core::autoscale_tick() {
    for (const auto& [kind, policy] : cfg_.autoscale) {
        double util = utilization(kind);
        auto count = active_count(kind);
        auto action = autoscaler_.decide(kind, policy, util, count, now());
        if (action == ScaleAction::Up) {
            auto id = spawn_instance(kind);
            logs_.lifecycle(now(), id.str(), "scale_up", fmt::format("{:.3f}", util));
        } else if (action == ScaleAction::Down) {
            Instance* victim = nullptr;
            for (auto& inst : instances_) {
                if (inst->kind() == kind && inst->alive() && !inst->draining() && inst->ready()) {
                    if (!victim || victim->id() < inst->id()) victim = inst.get();
                }
            }
            if (!victim) continue;
            logs_.lifecycle(now(), victim->name(), "scale_down", fmt::format("{:.3f}", util));
            remove_instance(victim->id());
        } else {
            continue;
        }
        autoscaler_.acted(kind, now());
        if (scale_observer_) scale_observer_(kind, action);
    }
    sched_.schedule_after(seconds(1), [this] { autoscale_tick(); });
}

void Core::sample_metrics() {
    for (NfKind kind : {NfKind::Amf, NfKind::Smf, NfKind::Ausf, NfKind::Udm, NfKind::Pcf, NfKind::Udr}) {
        std::string k(to_string(kind));
        logs_.metric(MetricSample{now(), "instances", {{"kind", k}}, static_cast<double>(active_count(kind))});
        logs_.metric(MetricSample{now(), "utilization", {{"kind", k}}, utilization(kind)});
    }
    logs_.metric(MetricSample{now(), "store_reads", {}, static_cast<double>(ue_store_->reads())});
    logs_.metric(MetricSample{now(), "store_writes", {}, static_cast<double>(ue_store_->writes())});
    sched_.schedule_after(cfg_.metrics_interval, [this] { sample_metrics(); });
}

void Core::inject(const FaultPlan& plan) {
    auto actions = plan.actions;
    std::stable_sort(actions.begin(), actions.end(), [](const auto& a, const auto& b) { return a.at < b.at; });
    for (const auto& a : actions) {
        sched_.schedule_at(std::max(a.at, now()), [this, a] { fire(a); });
    }
}

void Core::fire(const FaultAction& a) {
    auto detail = fmt::format("{} {}", to_string(a.type), a.target);
    switch (a.type) {
        case FaultType::Kill: {
            InstanceId id;
            try {
                id = InstanceId::parse(a.target);
            } catch (const std::exception&) {
                logs_.lifecycle(now(), "fault", "unknown_target", detail);
                return;
            }
            logs_.lifecycle(now(), "fault", "fault", detail);
            kill_instance(id);
            return;
        }
        case FaultType::PauseStore: {
            logs_.lifecycle(now(), "fault", "fault", detail);
            ue_kv_->set_available(false);
            sched_.schedule_after(a.duration, [this] {
                ue_kv_->set_available(true);
                logs_.lifecycle(now(), "fault", "store_resumed");
            });
            return;
        }
        case FaultType::Drop: {
            DropRule rule;
            rule.channel = a.channel;
            rule.receiver_kind = a.receiver_kind;
            if (!a.target.empty()) {
                try {
                    rule.receiver = InstanceId::parse(a.target);
                } catch (const std::exception&) {
                    logs_.lifecycle(now(), "fault", "unknown_target", detail);
                    return;
                }
            }
            rule.remaining = a.count;
            rule.until = a.duration.count() > 0 ? now() + a.duration : Micros::max();
            logs_.lifecycle(now(), "fault", "fault", detail);
            fabric_->add_drop_rule(rule);
            return;
        }
        case FaultType::SilenceKeepalive: {
            Instance* inst = nullptr;
            try {
                inst = find(InstanceId::parse(a.target));
            } catch (const std::exception&) {
            }
            if (!inst || !inst->alive()) {
                logs_.lifecycle(now(), "fault", "unknown_target", detail);
                return;
            }
            logs_.lifecycle(now(), "fault", "fault", detail);
            inst->silence_keepalives(now() + a.duration);
            return;
        }
    }
}

void Core::flush_all() {
    for (auto& inst : instances_) {
        if (!inst->alive()) continue;
        if (auto* c = inst->cache()) {
            try {
                c->flush_fence();
            } catch (const StoreUnavailable&) {
            }
        }
    }
}

void Core::on_dropped(const ControlMessage& msg, const InstanceId& to, std::string_view reason) {
    logs_.event(now(), to.str(), "drop", &msg, reason);
}

}  // namespace sbacore
