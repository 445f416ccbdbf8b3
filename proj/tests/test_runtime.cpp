#include <gtest/gtest.h>

#include <random>

#include "sbacore/emulator.hpp"
#include "sbacore/services.hpp"

using namespace sbacore;

namespace {

bool has_lifecycle(const LogSink& sink, std::string_view needle) {
    for (const auto& l : sink.event_lines()) {
        if (l.find(needle) != std::string::npos) return true;
    }
    return false;
}

}  // namespace

TEST(AutoscalerTest, Examples) {
    Autoscaler a;
    AutoscalePolicy p;
    p.min_instances = 1;
    p.max_instances = 3;
    p.scale_up_threshold = 0.6;
    p.scale_down_threshold = 0.2;
    p.cooldown = seconds(5);
    EXPECT_EQ(a.decide(NfKind::Amf, p, 0.7, 1, seconds(10)), ScaleAction::Up);
    EXPECT_EQ(a.decide(NfKind::Amf, p, 0.7, 3, seconds(10)), ScaleAction::None);
    EXPECT_EQ(a.decide(NfKind::Amf, p, 0.1, 2, seconds(10)), ScaleAction::Down);
    EXPECT_EQ(a.decide(NfKind::Amf, p, 0.1, 1, seconds(10)), ScaleAction::None);
    EXPECT_EQ(a.decide(NfKind::Amf, p, 0.6, 1, seconds(10)), ScaleAction::None);
    EXPECT_EQ(a.decide(NfKind::Amf, p, 0.4, 2, seconds(10)), ScaleAction::None);
    a.acted(NfKind::Amf, seconds(10));
    EXPECT_EQ(a.decide(NfKind::Amf, p, 0.9, 1, seconds(14)), ScaleAction::None);
    EXPECT_EQ(a.decide(NfKind::Smf, p, 0.9, 1, seconds(14)), ScaleAction::Up);
    EXPECT_EQ(a.decide(NfKind::Amf, p, 0.9, 1, seconds(15)), ScaleAction::Up);
}

TEST(AutoscalerTest, CountStaysWithinBoundsAndRespectsCooldown) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> util(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        Autoscaler a;
        AutoscalePolicy p;
        p.min_instances = 1 + static_cast<std::uint32_t>(rng() % 3);
        p.max_instances = p.min_instances + static_cast<std::uint32_t>(rng() % 5);
        p.cooldown = seconds(1 + static_cast<std::int64_t>(rng() % 5));
        std::uint32_t count = p.min_instances;
        std::optional<Micros> last;
        for (int t = 1; t <= 300; ++t) {
            auto now = seconds(t);
            auto action = a.decide(NfKind::Amf, p, util(rng), count, now);
            if (action == ScaleAction::None) continue;
            if (last) ASSERT_GE(now - *last, p.cooldown);
            count += action == ScaleAction::Up ? 1 : -1;
            ASSERT_GE(count, p.min_instances);
            ASSERT_LE(count, p.max_instances);
            a.acted(NfKind::Amf, now);
            last = now;
        }
    }
}

TEST(FaultPlanTest, KillFiresAtScheduledTime) {
    LogSink sink;
    CoreConfig cfg;
    cfg.respawn = false;
    Core core(cfg, sink);
    core.start();
    FaultPlan plan;
    plan.actions.push_back(FaultAction{seconds(2), FaultType::Kill, "smf-1"});
    plan.actions.push_back(FaultAction{seconds(1), FaultType::Kill, "nonsense"});
    core.inject(plan);
    core.scheduler().run_until(ms(1999));
    EXPECT_TRUE(core.find(InstanceId{NfKind::Smf, 1})->alive());
    EXPECT_TRUE(has_lifecycle(sink, R"("action":"unknown_target","detail":"kill nonsense")"));
    core.scheduler().run_until(seconds(2));
    EXPECT_FALSE(core.find(InstanceId{NfKind::Smf, 1})->alive());
    EXPECT_TRUE(has_lifecycle(sink, R"("t":2000000,"instance":"smf-1","action":"kill")"));
}

TEST(FaultPlanTest, PauseStoreResumes) {
    LogSink sink;
    Core core(CoreConfig{}, sink);
    core.start();
    FaultPlan plan;
    plan.actions.push_back(FaultAction{seconds(1), FaultType::PauseStore, "", seconds(2)});
    core.inject(plan);
    core.scheduler().run_until(ms(1500));
    EXPECT_FALSE(core.ue_kv().available());
    core.scheduler().run_until(seconds(3));
    EXPECT_TRUE(core.ue_kv().available());
    EXPECT_TRUE(has_lifecycle(sink, "store_resumed"));
}

TEST(FaultPlanTest, DropRuleAffectsOnlyMatchingTraffic) {
    LogSink sink;
    Core core(CoreConfig{}, sink);
    core.start();
    FaultPlan plan;
    FaultAction drop{Micros(0), FaultType::Drop, "", seconds(100)};
    drop.channel = Channel::Sbi;
    drop.receiver_kind = NfKind::Smf;
    plan.actions.push_back(drop);
    core.inject(plan);
    WorkloadConfig w;
    w.n_ues = 1;
    w.profile.events = {EventType::Registration, EventType::PduEstablish};
    w.profile.repeat = RepeatMode::None;
    Emulator emu(core, w);
    emu.start();
    core.scheduler().run_until(seconds(5));
    // REG never touches the SMF; the PDU request to it is dropped.
    ASSERT_EQ(emu.agent(1).completed().size(), 1u);
    EXPECT_EQ(emu.agent(1).completed()[0].event, EventType::Registration);
    EXPECT_TRUE(has_lifecycle(sink, R"("detail":"fault_drop")"));
}

TEST(CoreDeterminism, SameSeedSameLogs) {
    auto run = [](std::uint64_t seed) {
        LogSink sink;
        CoreConfig cfg;
        cfg.seed = seed;
        cfg.instances[NfKind::Amf] = 2;
        cfg.instances[NfKind::Smf] = 2;
        Core core(cfg, sink);
        core.start();
        WorkloadConfig w;
        w.n_ues = 16;
        w.seed = seed;
        w.downstream_per_s = 1.0;
        Emulator emu(core, w);
        emu.start();
        core.scheduler().run_until(seconds(5));
        std::vector<std::string> out = sink.event_lines();
        out.insert(out.end(), sink.routing_lines().begin(), sink.routing_lines().end());
        for (const auto& r : sink.latency_records()) out.push_back(latency_line(r));
        return out;
    };
    auto a = run(3);
    auto b = run(3);
    EXPECT_GT(a.size(), 1000u);
    EXPECT_EQ(a, b);
}

TEST(MetricsTest, InstanceCountsSampledEverySecond) {
    LogSink sink;
    CoreConfig cfg;
    cfg.instances[NfKind::Amf] = 3;
    Core core(cfg, sink);
    core.start();
    core.scheduler().run_until(seconds(3));
    int samples = 0;
    for (const auto& m : sink.metrics()) {
        if (m.series != "instances" || m.labels.at(0).second != "amf") continue;
        ++samples;
        EXPECT_EQ(m.value, 3.0);
    }
    EXPECT_EQ(samples, 3);
}
