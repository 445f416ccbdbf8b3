#include <gtest/gtest.h>

#include <random>

#include "sbacore/drsm.hpp"
#include "sbacore/harness.hpp"

using namespace sbacore;

namespace {

InstanceId amf(std::uint32_t n) { return InstanceId{NfKind::Amf, n}; }

InstanceRecord rec(InstanceId id) {
    InstanceRecord r;
    r.id = id;
    return r;
}

std::vector<std::string> store_lines(const MemoryKvStore& kv) {
    std::vector<std::string> out;
    for (const auto& op : kv.op_log()) out.push_back(store_op_line(op, "drsm"));
    return out;
}

// Forwards to a MemoryKvStore and runs a one-shot callback before the n-th operation.
class HookedStore : public KvStore {
public:
    explicit HookedStore(MemoryKvStore& inner) : inner_(inner) {}

    void inject_before(int n, std::function<void()> fn) {
        trigger_ = n;
        fn_ = std::move(fn);
    }
    int ops() const { return count_; }

    std::optional<KvRecord> get(const std::string& key) override {
        tick();
        return inner_.get(key);
    }
    std::optional<std::uint64_t> compare_and_set(const std::string& key, std::uint64_t expected,
                                                 const std::string& value, std::optional<Micros> ttl) override {
        tick();
        return inner_.compare_and_set(key, expected, value, ttl);
    }
    std::uint64_t put(const std::string& key, const std::string& value) override {
        tick();
        return inner_.put(key, value);
    }
    std::uint64_t put_with_ttl(const std::string& key, const std::string& value, Micros ttl) override {
        tick();
        return inner_.put_with_ttl(key, value, ttl);
    }
    bool erase(const std::string& key) override {
        tick();
        return inner_.erase(key);
    }
    std::vector<std::pair<std::string, KvRecord>> scan(const std::string& prefix) override {
        tick();
        return inner_.scan(prefix);
    }
    Subscription watch(const std::string& prefix, Watcher fn) override { return inner_.watch(prefix, std::move(fn)); }

private:
    void tick() {
        if (count_++ == trigger_ && fn_) {
            auto fn = std::move(fn_);
            fn_ = nullptr;
            fn();
        }
    }
    MemoryKvStore& inner_;
    int count_ = 0;
    int trigger_ = -1;
    std::function<void()> fn_;
};

}  // namespace

TEST(KvStoreTest, TtlExpiry) {
    Scheduler sched;
    MemoryKvStore kv(sched, KvStoreOptions{ms(100)});
    kv.put_with_ttl("k", "v", seconds(2));
    sched.run_until(ms(1900));
    EXPECT_TRUE(kv.get("k").has_value());
    sched.run_until(ms(2000));
    EXPECT_FALSE(kv.get("k").has_value());
    EXPECT_EQ(kv.op_log().back().op, "get");
    bool expired = false;
    for (const auto& op : kv.op_log()) expired |= op.op == "expire" && op.key == "k";
    EXPECT_TRUE(expired);
}

TEST(KvStoreTest, CompareAndSetVersions) {
    Scheduler sched;
    MemoryKvStore kv(sched);
    auto v1 = kv.compare_and_set("a", 0, "x");
    ASSERT_TRUE(v1);
    EXPECT_FALSE(kv.compare_and_set("a", 0, "y"));
    auto v2 = kv.compare_and_set("a", *v1, "y");
    ASSERT_TRUE(v2);
    EXPECT_GT(*v2, *v1);
    EXPECT_EQ(kv.get("a")->value, "y");
}

TEST(KvStoreTest, UnavailableThrows) {
    Scheduler sched;
    MemoryKvStore kv(sched);
    kv.set_available(false);
    EXPECT_THROW(kv.get("a"), StoreUnavailable);
    EXPECT_THROW(kv.put("a", "b"), StoreUnavailable);
}

TEST(DrsmTest, DuplicateInstanceRejected) {
    Scheduler sched;
    MemoryKvStore kv(sched);
    Drsm drsm(kv, sched);
    drsm.register_instance(rec(amf(1)));
    EXPECT_THROW(drsm.register_instance(rec(amf(1))), DuplicateInstance);
}

TEST(DrsmTest, FirstClaimStartsAtZero) {
    Scheduler sched;
    MemoryKvStore kv(sched);
    Drsm drsm(kv, sched);
    drsm.register_instance(rec(amf(1)));
    auto b = drsm.claim_block(Pool::NgapIds, 1024, amf(1));
    EXPECT_EQ(b.start, 0u);
    EXPECT_EQ(b.len, 1024u);
    EXPECT_EQ(b.holder, amf(1));
    auto c = drsm.claim_block(Pool::NgapIds, 1024, amf(1));
    EXPECT_EQ(c.start, 1024u);
}

TEST(DrsmTest, PoolExhausted) {
    Scheduler sched;
    MemoryKvStore kv(sched);
    DrsmConfig cfg;
    cfg.ngap_capacity = 2048;
    Drsm drsm(kv, sched, cfg);
    drsm.register_instance(rec(amf(1)));
    drsm.claim_block(Pool::NgapIds, 1024, amf(1));
    drsm.claim_block(Pool::NgapIds, 1024, amf(1));
    EXPECT_THROW(drsm.claim_block(Pool::NgapIds, 1024, amf(1)), PoolExhausted);
}

TEST(DrsmTest, ClaimRequiresLiveHolder) {
    Scheduler sched;
    MemoryKvStore kv(sched);
    Drsm drsm(kv, sched);
    EXPECT_THROW(drsm.claim_block(Pool::NgapIds, 8, amf(4)), UnknownInstance);
}

TEST(DrsmTest, ConflictingCommitLoses) {
    Scheduler sched;
    MemoryKvStore kv(sched);
    Drsm drsm(kv, sched);
    drsm.register_instance(rec(amf(1)));
    drsm.register_instance(rec(amf(2)));
    auto a = drsm.prepare_claim(Pool::NgapIds, 16, amf(1));
    auto b = drsm.prepare_claim(Pool::NgapIds, 16, amf(2));
    EXPECT_EQ(a.block.start, b.block.start);
    EXPECT_TRUE(drsm.commit_claim(b));
    EXPECT_FALSE(drsm.commit_claim(a));
    EXPECT_EQ(drsm.pool_table(Pool::NgapIds).blocks.size(), 1u);
}

TEST(DrsmTest, RandomInterleavingsStayDisjoint) {
    Scheduler sched;
    MemoryKvStore kv(sched);
    DrsmConfig cfg;
    cfg.ngap_capacity = 1u << 16;
    Drsm drsm(kv, sched, cfg);
    std::mt19937_64 rng(2024);
    for (std::uint32_t i = 1; i <= 4; ++i) drsm.register_instance(rec(amf(i)));

    // Oracle: the blocks of every successful commit, which must never overlap.
    std::vector<ResourceBlock> committed;
    std::size_t losers = 0;
    for (int round = 0; round < 1000; ++round) {
        std::vector<PreparedClaim> claims;
        auto n = 2 + rng() % 3;
        for (std::size_t k = 0; k < n; ++k) {
            std::uint32_t want = 1 + static_cast<std::uint32_t>(rng() % 32);
            try {
                claims.push_back(drsm.prepare_claim(Pool::NgapIds, want, amf(1 + rng() % 4)));
            } catch (const PoolExhausted&) {
            }
        }
        std::shuffle(claims.begin(), claims.end(), rng);
        for (const auto& c : claims) {
            if (drsm.commit_claim(c)) {
                for (const auto& other : committed) ASSERT_FALSE(other.overlaps(c.block));
                committed.push_back(c.block);
            } else {
                ++losers;
            }
        }
    }
    EXPECT_GT(losers, 0u);
    EXPECT_EQ(drsm.pool_table(Pool::NgapIds).blocks.size(), committed.size());
    auto r = checks::pool_disjoint(store_lines(kv));
    EXPECT_EQ(r.examined, committed.size());
    EXPECT_TRUE(r.ok()) << r.excerpt.front();
}

TEST(DrsmTest, ExpiredBlocksGoToSurvivor) {
    Scheduler sched;
    MemoryKvStore kv(sched, KvStoreOptions{ms(100)});
    Drsm drsm(kv, sched);
    drsm.attach_expiry_redistribution(kv);
    drsm.register_instance(rec(amf(1)));
    drsm.register_instance(rec(amf(2)));
    drsm.claim_block(Pool::NgapIds, 1024, amf(1));
    auto lost = drsm.claim_block(Pool::NgapIds, 1024, amf(2));
    for (int i = 1; i <= 6; ++i) {
        sched.run_until(ms(500 * i));
        drsm.publish_load(amf(1), Load{});
    }
    EXPECT_FALSE(drsm.lookup_instance(amf(2)));
    auto held = drsm.pool_table(Pool::NgapIds).held_by(amf(1));
    ASSERT_EQ(held.size(), 2u);
    EXPECT_EQ(held[1].start, lost.start);
    auto lines = store_lines(kv);
    EXPECT_TRUE(checks::pool_expiry(lines, seconds(2), ms(100)).ok());
    EXPECT_TRUE(checks::pool_disjoint(lines).ok());
}

TEST(DrsmTest, ParkedBlocksAdoptedOnRegistration) {
    Scheduler sched;
    MemoryKvStore kv(sched, KvStoreOptions{ms(100)});
    Drsm drsm(kv, sched);
    drsm.attach_expiry_redistribution(kv);
    drsm.register_instance(rec(amf(1)));
    drsm.claim_block(Pool::NgapIds, 1024, amf(1));
    sched.run_until(seconds(3));
    auto table = drsm.pool_table(Pool::NgapIds);
    ASSERT_EQ(table.parked().size(), 1u);
    drsm.register_instance(rec(amf(2)));
    table = drsm.pool_table(Pool::NgapIds);
    EXPECT_TRUE(table.parked().empty());
    EXPECT_EQ(table.held_by(amf(2)).size(), 1u);
}

TEST(DrsmTest, RedistributionBalancesSurvivors) {
    Scheduler sched;
    MemoryKvStore kv(sched, KvStoreOptions{ms(100)});
    Drsm drsm(kv, sched);
    drsm.attach_expiry_redistribution(kv);
    for (std::uint32_t i = 1; i <= 5; ++i) drsm.register_instance(rec(amf(i)));
    // amf-3..5 hold 1, 2 and 2 blocks; survivors amf-1 and amf-2 start empty.
    std::map<std::uint32_t, int> blocks{{3, 1}, {4, 2}, {5, 2}};
    for (auto [n, count] : blocks) {
        for (int k = 0; k < count; ++k) drsm.claim_block(Pool::NgapIds, 64, amf(n));
    }
    for (int i = 1; i <= 6; ++i) {
        sched.run_until(ms(500 * i));
        drsm.publish_load(amf(1), Load{});
        drsm.publish_load(amf(2), Load{});
    }
    auto table = drsm.pool_table(Pool::NgapIds);
    auto a = table.held_by(amf(1)).size();
    auto b = table.held_by(amf(2)).size();
    EXPECT_EQ(a + b, 5u);
    EXPECT_LE(std::max(a, b) - std::min(a, b), 1u);
    EXPECT_TRUE(table.parked().empty());
}

TEST(DrsmTest, FeedPreservesWriteOrder) {
    Scheduler sched;
    MemoryKvStore kv(sched);
    Drsm drsm(kv, sched);
    drsm.register_instance(rec(amf(1)));
    std::vector<std::uint32_t> seen;
    auto sub = drsm.subscribe(NfKind::Amf, [&](const ChangeEvent& ev) {
        if (ev.type == ChangeType::Put) seen.push_back(InstanceRecord::from_json(ev.value).load.ues);
    });
    for (std::uint32_t ues : {3u, 7u, 4u}) drsm.publish_load(amf(1), Load{ues, 0});
    sched.run_until(ms(10));
    EXPECT_EQ(seen, (std::vector<std::uint32_t>{3, 7, 4}));
    sub.cancel();
    drsm.publish_load(amf(1), Load{9, 0});
    sched.run_until(ms(20));
    EXPECT_EQ(seen.size(), 3u);
}

TEST(DrsmTest, OwnershipRaceHasSingleWinnerInEverySchedule) {
    // Inject amf-2's full claim before each store operation of amf-1's claim.
    for (int at = 0; at < 8; ++at) {
        Scheduler sched;
        MemoryKvStore kv(sched);
        HookedStore hooked(kv);
        Drsm direct(kv, sched);
        Drsm racing(hooked, sched);
        direct.register_instance(rec(amf(1)));
        direct.register_instance(rec(amf(2)));
        OwnershipEntry other;
        hooked.inject_before(hooked.ops() + at, [&] { other = direct.claim_ue_ownership("imsi-1", amf(2)); });
        auto mine = racing.claim_ue_ownership("imsi-1", amf(1));
        if (hooked.ops() <= at) other = direct.claim_ue_ownership("imsi-1", amf(2));
        auto stored = direct.ownership("imsi-1");
        ASSERT_TRUE(stored);
        EXPECT_EQ(mine.owner_amf, stored->owner_amf) << "schedule " << at;
        EXPECT_EQ(other.owner_amf, stored->owner_amf) << "schedule " << at;
    }
}

TEST(DrsmTest, OwnershipMovesAfterOwnerExpires) {
    Scheduler sched;
    MemoryKvStore kv(sched, KvStoreOptions{ms(100)});
    Drsm drsm(kv, sched);
    drsm.register_instance(rec(amf(1)));
    drsm.register_instance(rec(amf(3)), seconds(60));
    EXPECT_EQ(drsm.claim_ue_ownership("imsi-1", amf(1)).owner_amf, amf(1));
    EXPECT_EQ(drsm.claim_ue_ownership("imsi-1", amf(3)).owner_amf, amf(1));
    sched.run_until(seconds(3));
    EXPECT_EQ(drsm.claim_ue_ownership("imsi-1", amf(3)).owner_amf, amf(3));
    EXPECT_EQ(drsm.lookup_owner("imsi-1"), amf(3));
}

TEST(DrsmTest, SuspectOwnerReplaced) {
    Scheduler sched;
    MemoryKvStore kv(sched);
    Drsm drsm(kv, sched);
    drsm.register_instance(rec(amf(1)));
    drsm.register_instance(rec(amf(2)));
    drsm.claim_ue_ownership("imsi-1", amf(1));
    EXPECT_EQ(drsm.claim_ue_ownership("imsi-1", amf(2), {amf(1)}).owner_amf, amf(2));
}

TEST(PoolTableTest, JsonRoundTripAndLowestFit) {
    PoolTable t;
    t.pool = Pool::IpIndices;
    t.capacity = 100;
    t.blocks.push_back(ResourceBlock{Pool::IpIndices, 0, 10, amf(1)});
    t.blocks.push_back(ResourceBlock{Pool::IpIndices, 30, 10, std::nullopt});
    auto back = PoolTable::from_json(t.to_json());
    EXPECT_EQ(back.blocks, t.blocks);
    EXPECT_EQ(back.capacity, 100u);
    EXPECT_EQ(t.allocate(20, amf(2))->start, 10u);
    EXPECT_EQ(t.allocate(21, amf(2))->start, 40u);
    EXPECT_FALSE(t.allocate(61, amf(2)));
}
