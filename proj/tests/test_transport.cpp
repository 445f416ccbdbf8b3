#include <gtest/gtest.h>

#include <random>

#include "sbacore/clock.hpp"
#include "sbacore/transport.hpp"

using namespace sbacore;

namespace {

struct Recorder : FabricObserver {
    std::vector<std::pair<std::string, std::string>> drops;  // (to, reason)
    int sent = 0;
    void on_sent(const ControlMessage&, const InstanceId&) override { ++sent; }
    void on_dropped(const ControlMessage&, const InstanceId& to, std::string_view reason) override {
        drops.emplace_back(to.str(), std::string(reason));
    }
};

ControlMessage msg_with_seq(std::uint64_t seq, Channel c = Channel::Sbi) {
    ControlMessage m;
    m.msg_id = seq;
    m.seq = seq;
    m.channel = c;
    m.sender = InstanceId{NfKind::Amf, 1};
    m.receiver = NfKind::Smf;
    return m;
}

std::vector<std::uint64_t> drain(Endpoint& ep, Micros now) {
    std::vector<std::uint64_t> out;
    while (auto m = ep.pop_ready(now)) out.push_back(m->seq);
    return out;
}

}  // namespace

TEST(Fabric, SendToRegisteredEndpointEnqueues) {
    Scheduler sched;
    InProcessFabric fabric(sched);
    auto ep = std::make_shared<Endpoint>(InstanceId{NfKind::Smf, 1});
    fabric.register_endpoint(ep);
    auto r = fabric.send(msg_with_seq(1), ep->id());
    EXPECT_TRUE(r.ok());
    EXPECT_EQ(ep->depth(), 1u);
    // Visible only after the channel latency.
    EXPECT_FALSE(ep->pop_ready(Micros(0)).has_value());
    EXPECT_EQ(*ep->head_ready_at(), Micros(50));
    EXPECT_TRUE(ep->pop_ready(Micros(50)).has_value());
}

TEST(Fabric, SendAfterDeregisterFails) {
    Scheduler sched;
    InProcessFabric fabric(sched);
    Recorder rec;
    fabric.set_observer(&rec);
    auto ep = std::make_shared<Endpoint>(InstanceId{NfKind::Smf, 1});
    fabric.register_endpoint(ep);
    fabric.send(msg_with_seq(1), ep->id());
    fabric.deregister_endpoint(ep->id());
    EXPECT_EQ(ep->depth(), 0u);
    auto r = fabric.send(msg_with_seq(2), ep->id());
    EXPECT_EQ(r.status, SendStatus::DeliveryFailed);
    ASSERT_EQ(rec.drops.size(), 2u);
    EXPECT_EQ(rec.drops[0].second, "lost");
    EXPECT_EQ(rec.drops[1].second, "delivery_failed");
    EXPECT_FALSE(fabric.is_registered(ep->id()));
}

TEST(Fabric, DuplicateEndpointRejected) {
    Scheduler sched;
    InProcessFabric fabric(sched);
    fabric.register_endpoint(std::make_shared<Endpoint>(InstanceId{NfKind::Amf, 1}));
    EXPECT_THROW(fabric.register_endpoint(std::make_shared<Endpoint>(InstanceId{NfKind::Amf, 1})), DuplicateEndpoint);
}

TEST(Fabric, InProcessFifoPerPair) {
    Scheduler sched;
    InProcessFabric fabric(sched, ChannelLatency{Micros(10), Micros(20), Micros(50)});
    auto ep = std::make_shared<Endpoint>(InstanceId{NfKind::Smf, 1});
    fabric.register_endpoint(ep);
    std::mt19937 rng(3);
    const Channel chans[] = {Channel::SctpSim, Channel::PfcpSim, Channel::Sbi};
    for (std::uint64_t i = 1; i <= 1000; ++i) {
        // Mixed channel latencies must not reorder a pair's messages.
        fabric.send(msg_with_seq(i, chans[rng() % 3]), ep->id());
        if (i % 97 == 0) sched.run_until(sched.now() + Micros(7));
    }
    auto seqs = drain(*ep, Micros(1'000'000));
    ASSERT_EQ(seqs.size(), 1000u);
    for (std::size_t i = 0; i < seqs.size(); ++i) EXPECT_EQ(seqs[i], i + 1);
}

TEST(Fabric, LoopbackFifoPerPair) {
    Scheduler sched(ClockMode::Wall);
    LoopbackFabric fabric(sched);
    EXPECT_NE(fabric.port(), 0);
    auto ep = std::make_shared<Endpoint>(InstanceId{NfKind::Smf, 1});
    fabric.register_endpoint(ep);
    for (std::uint64_t i = 1; i <= 1000; ++i) {
        auto m = msg_with_seq(i);
        m.payload = std::string(i % 17, 'x');
        ASSERT_TRUE(fabric.send(m, ep->id()).ok());
    }
    sched.run_until(sched.now() + seconds(10), [&] { return ep->depth() == 1000; });
    auto seqs = drain(*ep, sched.now() + seconds(1));
    ASSERT_EQ(seqs.size(), 1000u);
    for (std::size_t i = 0; i < seqs.size(); ++i) EXPECT_EQ(seqs[i], i + 1);
}

TEST(Fabric, DropRuleCountAndWindow) {
    Scheduler sched;
    InProcessFabric fabric(sched);
    Recorder rec;
    fabric.set_observer(&rec);
    auto smf = std::make_shared<Endpoint>(InstanceId{NfKind::Smf, 1});
    auto amf = std::make_shared<Endpoint>(InstanceId{NfKind::Amf, 1});
    fabric.register_endpoint(smf);
    fabric.register_endpoint(amf);
    DropRule rule;
    rule.channel = Channel::Sbi;
    rule.receiver_kind = NfKind::Smf;
    rule.remaining = 2;
    fabric.add_drop_rule(rule);
    for (int i = 1; i <= 4; ++i) fabric.send(msg_with_seq(i), smf->id());
    fabric.send(msg_with_seq(9), amf->id());
    EXPECT_EQ(drain(*smf, seconds(1)), (std::vector<std::uint64_t>{3, 4}));
    EXPECT_EQ(amf->depth(), 1u);
    EXPECT_EQ(rec.drops.size(), 2u);

    DropRule timed;
    timed.receiver = smf->id();
    timed.until = Micros(100);
    fabric.add_drop_rule(timed);
    fabric.send(msg_with_seq(5), smf->id());
    sched.run_until(Micros(100));
    fabric.send(msg_with_seq(6), smf->id());
    EXPECT_EQ(drain(*smf, seconds(1)), (std::vector<std::uint64_t>{6}));
}

TEST(Wire, RoundTrip) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 500; ++i) {
        ControlMessage m;
        m.msg_id = rng();
        m.channel = static_cast<Channel>(rng() % 3);
        m.type = static_cast<MsgType>(rng() % 13);
        m.event = (rng() % 2) ? EventKind::sr(Direction::Downstream) : EventKind::pdu();
        m.ue.supi = "imsi-" + std::to_string(rng() % 100000);
        m.ue.ngap_id = static_cast<std::uint32_t>(rng());
        if (rng() % 2) m.ue.ip_index = static_cast<std::uint32_t>(rng());
        m.seq = rng();
        m.step = static_cast<std::uint32_t>(rng() % 4);
        m.prior_seq = rng();
        m.sender = InstanceId{NfKind::Amf, static_cast<std::uint32_t>(rng() % 9)};
        m.receiver = NfKind::Udm;
        m.origin = InstanceId{NfKind::Ran, static_cast<std::uint32_t>(rng())};
        m.status = static_cast<Status>(rng() % 6);
        m.aux = rng();
        m.payload = std::string(rng() % 40, static_cast<char>(rng() % 256));
        m.attempt = static_cast<std::uint32_t>(rng() % 4);
        m.sent_at = Micros(static_cast<std::int64_t>(rng() % 1'000'000'000));
        EXPECT_EQ(wire::decode(wire::encode(m)), m);
    }
}

TEST(Wire, FixedLayout) {
    ControlMessage m;
    m.msg_id = 0x0102030405060708ULL;
    m.ue.supi = "ab";
    m.payload = "z";
    auto bytes = wire::encode(m);
    // 8 id + 4 enums + (4+2) supi + 4 ngap + 1+4 ip + 8 seq + 4 step + 8 prior + 5 sender + 1 receiver
    // + 5 origin + 1 status + 8 aux + (4+1) payload + 4 attempt + 8 sent_at
    EXPECT_EQ(bytes.size(), 8u + 4 + 6 + 4 + 5 + 8 + 4 + 8 + 5 + 1 + 5 + 1 + 8 + 5 + 4 + 8);
    EXPECT_EQ(bytes.substr(0, 8), std::string("\x01\x02\x03\x04\x05\x06\x07\x08", 8));
    EXPECT_EQ(bytes.substr(12, 6), std::string("\0\0\0\x02" "ab", 6));

    auto framed = wire::frame(InstanceId{NfKind::Smf, 3}, m);
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len = (len << 8) | static_cast<std::uint8_t>(framed[i]);
    EXPECT_EQ(len, bytes.size() + 5);
    EXPECT_EQ(framed.substr(9), bytes);
}

TEST(Wire, RejectsMalformed) {
    auto bytes = wire::encode(msg_with_seq(5));
    EXPECT_THROW(wire::decode(bytes.substr(0, bytes.size() - 1)), wire::DecodeError);
    EXPECT_THROW(wire::decode(bytes + "x"), wire::DecodeError);
    auto bad = bytes;
    bad[8] = 9;  // channel
    EXPECT_THROW(wire::decode(bad), wire::DecodeError);
}

TEST(Names, ChannelRoundTrip) {
    for (auto c : {Channel::SctpSim, Channel::PfcpSim, Channel::Sbi}) EXPECT_EQ(channel_from_string(to_string(c)), c);
    EXPECT_THROW(channel_from_string("udp"), std::invalid_argument);
    EXPECT_EQ(to_string(MsgType::DiscoverResponse), "discover_response");
}

TEST(SchedulerTest, OrdersByTimeThenInsertion) {
    Scheduler sched;
    std::vector<int> order;
    sched.schedule_at(Micros(20), [&] { order.push_back(3); });
    sched.schedule_at(Micros(10), [&] { order.push_back(1); });
    sched.schedule_at(Micros(10), [&] { order.push_back(2); });
    auto id = sched.schedule_at(Micros(15), [&] { order.push_back(99); });
    sched.cancel(id);
    sched.run_until(Micros(100));
    EXPECT_EQ(order, (std::vector<int>{1, 2, 3}));
    EXPECT_EQ(sched.now(), Micros(100));
}
