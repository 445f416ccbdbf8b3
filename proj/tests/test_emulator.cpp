#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "sbacore/emulator.hpp"
#include "sbacore/services.hpp"

using namespace sbacore;
using nlohmann::json;

namespace {

std::vector<json> events_with(const LogSink& sink, std::string_view action) {
    std::vector<json> out;
    for (const auto& l : sink.event_lines()) {
        auto j = json::parse(l);
        if (j.at("action") == action) out.push_back(j);
    }
    return out;
}

struct Rig {
    LogSink sink;
    Core core;
    std::unique_ptr<Emulator> emu;

    explicit Rig(WorkloadConfig w, CoreConfig cfg = {}) : core(cfg, sink) {
        core.start();
        emu = std::make_unique<Emulator>(core, std::move(w));
        emu->start();
    }
    void run(Micros until) { core.scheduler().run_until(until); }
};

WorkloadConfig profile(std::vector<EventType> events, std::uint32_t ues = 1) {
    WorkloadConfig w;
    w.n_ues = ues;
    w.profile.events = std::move(events);
    w.profile.repeat = RepeatMode::None;
    return w;
}

}  // namespace

TEST(UeProfileTest, ExpansionByRepeatMode) {
    using E = EventType;
    UeProfile p;
    p.events = {E::Registration, E::PduEstablish, E::ServiceRequest};
    p.repeat = RepeatMode::None;
    EXPECT_EQ(p.at(2), E::ServiceRequest);
    EXPECT_FALSE(p.at(3));
    p.repeat = RepeatMode::Last;
    p.repeat_count = 2;
    EXPECT_EQ(p.at(4), E::ServiceRequest);
    EXPECT_FALSE(p.at(5));
    p.repeat = RepeatMode::Cycle;
    p.repeat_count = 1;
    EXPECT_EQ(p.at(3), E::Registration);
    EXPECT_EQ(p.at(5), E::ServiceRequest);
    EXPECT_FALSE(p.at(6));
    p.repeat_count = 0;
    EXPECT_EQ(p.at(3001), E::PduEstablish);
}

TEST(IatTraceTest, ParseAndRoundTrip) {
    auto t = IatTrace::parse("{\"event\":\"SR\",\"iat_ms\":12.5}\n\n{\"event\":\"REG\",\"iat_ms\":3}\n");
    EXPECT_EQ(t.iat_ms[EventType::ServiceRequest], (std::vector<double>{12.5}));
    EXPECT_EQ(t.iat_ms[EventType::Registration], (std::vector<double>{3.0}));
    auto back = IatTrace::parse(t.to_jsonl());
    EXPECT_EQ(back.iat_ms, t.iat_ms);
}

TEST(IatTraceTest, RejectsNonPositive) {
    EXPECT_THROW(IatTrace::parse("{\"event\":\"SR\",\"iat_ms\":0}"), std::invalid_argument);
    EXPECT_THROW(IatTrace::parse("{\"event\":\"PDU\",\"iat_ms\":-4}"), std::invalid_argument);
    EXPECT_THROW(IatTrace::parse("{\"event\":\"XYZ\",\"iat_ms\":4}"), std::invalid_argument);
}

TEST(IatTraceTest, SyntheticIsPositiveAndSeeded) {
    auto a = synthetic_trace(5, 200);
    auto b = synthetic_trace(5, 200);
    EXPECT_EQ(a.iat_ms, b.iat_ms);
    for (const auto& [type, values] : a.iat_ms) {
        EXPECT_EQ(values.size(), 200u);
        for (double v : values) EXPECT_GT(v, 0.0);
    }
}

TEST(EmulatorTest, RampStartsUesAtFixedRate) {
    auto w = profile({EventType::Registration}, 4);
    w.ramp_per_s = 2.0;
    Rig rig(w);
    rig.run(seconds(5));
    auto starts = events_with(rig.sink, "ue_start");
    ASSERT_EQ(starts.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(starts[i].at("instance"), "ran-" + std::to_string(i + 1));
        EXPECT_EQ(starts[i].at("t").get<std::int64_t>(), static_cast<std::int64_t>(i) * 500000);
    }
}

TEST(EmulatorTest, ProfileRunsInOrderWithTraceGaps) {
    auto w = profile({EventType::Registration, EventType::PduEstablish, EventType::ServiceRequest});
    IatTrace trace;
    trace.iat_ms[EventType::PduEstablish] = {250.0};
    trace.iat_ms[EventType::ServiceRequest] = {40.0};
    w.trace = trace;
    Rig rig(w);
    rig.run(seconds(5));
    const auto& recs = rig.sink.latency_records();
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[0].event, EventType::Registration);
    EXPECT_EQ(recs[1].event, EventType::PduEstablish);
    EXPECT_EQ(recs[2].event, EventType::ServiceRequest);
    EXPECT_EQ(recs[1].t_start - recs[0].t_end, ms(250));
    EXPECT_EQ(recs[2].t_start - recs[1].t_end, ms(40));
    const auto& done = rig.emu->agent(1).completed();
    ASSERT_EQ(done.size(), 3u);
    for (std::size_t i = 1; i < done.size(); ++i) EXPECT_GT(done[i].seq, done[i - 1].seq);
}

TEST(EmulatorTest, DownlinkToIdleUePages) {
    Rig rig(profile({EventType::Registration, EventType::PduEstablish}));
    rig.run(seconds(1));
    rig.emu->inject_downstream(1);
    rig.run(seconds(2));
    const auto& recs = rig.sink.latency_records();
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[2].event, EventType::ServiceRequest);
    EXPECT_EQ(recs[2].direction, Direction::Downstream);
    EXPECT_EQ(recs[2].outcome, Outcome::Completed);
    EXPECT_EQ(events_with(rig.sink, "dl_ack").size(), 1u);
}

TEST(EmulatorTest, DownlinkToConnectedUeIsAckedWithoutPaging) {
    Rig rig(profile({EventType::Registration, EventType::PduEstablish, EventType::ServiceRequest}));
    rig.run(seconds(1));
    rig.emu->inject_downstream(1);
    rig.run(seconds(2));
    EXPECT_EQ(rig.sink.latency_records().size(), 3u);
    EXPECT_EQ(events_with(rig.sink, "dl_ack").size(), 1u);
    for (const auto& r : rig.sink.latency_records()) EXPECT_EQ(r.direction, Direction::Upstream);
}

TEST(EmulatorTest, DownlinkWithoutSessionIsDropped) {
    Rig rig(profile({EventType::Registration}));
    rig.run(seconds(1));
    rig.emu->inject_downstream(1);
    rig.run(seconds(2));
    EXPECT_EQ(rig.sink.latency_records().size(), 1u);
    EXPECT_EQ(events_with(rig.sink, "dl_nosession").size(), 1u);
}

TEST(EmulatorTest, LostServiceRequestResentAfterTimer) {
    Rig rig(profile({EventType::Registration, EventType::PduEstablish, EventType::ServiceRequest}));
    rig.core.scheduler().run_until(seconds(1), [&] { return rig.sink.latency_records().size() == 2; });
    ASSERT_EQ(rig.sink.latency_records().size(), 2u);
    // The next request towards an SMF is the SR's; lose it once.
    rig.core.fabric().add_drop_rule(DropRule{Channel::Sbi, NfKind::Smf, std::nullopt, 1});
    rig.run(seconds(10));
    const auto& recs = rig.sink.latency_records();
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[2].outcome, Outcome::Completed);
    EXPECT_EQ(recs[2].retries, 1u);
    EXPECT_GE(recs[2].latency_ms(), 3000.0);
    EXPECT_LT(recs[2].latency_ms(), 3100.0);
    EXPECT_EQ(events_with(rig.sink, "timeout").size(), 1u);
}
