// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero on any failure.

#include <fmt/format.h>

#include <chrono>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbacore/harness.hpp"

using namespace sbacore;
using nlohmann::json;

namespace {

struct Verdict {
    bool ok = true;
    std::vector<std::string> notes;

    void require(bool cond, const std::string& what) {
        notes.push_back(fmt::format("{}{}", cond ? "" : "NOT ", what));
        ok = ok && cond;
    }
};

Scenario scenario(const json& j) {
    auto s = Scenario::from_json(j);
    s.validate();
    return s;
}

json base_core(int amf, int smf) {
    return json{{"instances", {{"amf", amf}, {"smf", smf}, {"ausf", 1}, {"udm", 1}, {"pcf", 1}, {"udr", 1}}}};
}

void require_checks(Verdict& v, const Bundle& b, const std::string& label) {
    for (const auto& r : check_bundle(b)) {
        if (!r.ok()) v.require(false, fmt::format("{} {} clean ({} violations)", label, r.name, r.violations));
    }
}

std::vector<json> ue_events(const Bundle& b, const std::string& instance) {
    std::vector<json> out;
    const auto needle = fmt::format("\"instance\":\"{}\"", instance);
    for (const auto& line : b.events) {
        if (line.find(needle) != std::string::npos) out.push_back(json::parse(line));
    }
    return out;
}

std::size_t count_action(const Bundle& b, std::string_view action) {
    const auto needle = fmt::format("\"action\":\"{}\"", action);
    std::size_t n = 0;
    for (const auto& line : b.events) n += line.find(needle) != std::string::npos ? 1 : 0;
    return n;
}

// ---------------------------------------------------------------------------------------------

Verdict store_op_reduction() {
    Verdict v;
    auto run = [](bool cache) {
        json core = base_core(1, 1);
        core["cache"] = {{"enabled", cache}};
        core["logs"] = {{"routing", false}, {"events", false}};
        return run_scenario(scenario({{"name", cache ? "cache-on" : "cache-off"},
                                      {"seed", 7},
                                      {"duration_s", 60},
                                      {"drain_s", 60},
                                      {"core", core},
                                      {"workload",
                                       {{"ues", 256},
                                        {"profile", {"REG", "PDU", "SR"}},
                                        {"repeat", "cycle"},
                                        {"repeat_count", 2},
                                        {"gap_ms", 10}}}}));
    };
    // Warm events: every event after a UE's first of that kind.
    auto warm = [](const Bundle& b) {
        std::map<EventType, std::vector<std::uint32_t>> out;
        std::set<std::pair<std::uint32_t, EventType>> seen;
        for (const auto& r : b.latency) {
            if (r.outcome != Outcome::Completed || r.direction != Direction::Upstream) continue;
            if (!seen.emplace(r.ue, r.event).second) out[r.event].push_back(r.store_ops);
        }
        return out;
    };
    auto on = warm(run(true));
    auto off = warm(run(false));
    const std::map<EventType, std::uint32_t> floor{
        {EventType::Registration, 10}, {EventType::PduEstablish, 12}, {EventType::ServiceRequest, 12}};
    for (auto [type, min_ops] : floor) {
        auto key = std::string(to_string(type));
        const auto& a = on[type];
        const auto& b = off[type];
        v.require(a.size() >= 256 * 2 && b.size() >= 256 * 2, fmt::format("{} warm samples {}/{}", key, a.size(), b.size()));
        double mean = 0;
        for (auto x : a) mean += x;
        mean = a.empty() ? 0 : mean / static_cast<double>(a.size());
        std::uint32_t lowest = b.empty() ? 0 : *std::min_element(b.begin(), b.end());
        v.require(mean >= 1.0 && mean <= 1.1, fmt::format("{} cache-on mean {:.3f} in [1.0,1.1]", key, mean));
        v.require(lowest >= min_ops, fmt::format("{} cache-off min {} >= {}", key, lowest, min_ops));
    }
    return v;
}

Verdict stickiness() {
    Verdict v;
    auto b = run_scenario(scenario({{"name", "mixed"},
                                    {"seed", 21},
                                    {"duration_s", 30},
                                    {"drain_s", 60},
                                    {"core", base_core(4, 4)},
                                    {"workload",
                                     {{"ues", 128},
                                      {"profile", {"REG", "PDU", "SR"}},
                                      {"repeat", "cycle"},
                                      {"gap_ms", 200},
                                      {"downstream_per_s", 1.0}}}}));
    std::size_t up = 0, down = 0;
    for (const auto& r : b.latency) (r.direction == Direction::Downstream ? down : up) += 1;
    v.require(up + down >= 10000, fmt::format("{} events ({} upstream, {} downstream)", up + down, up, down));
    v.require(down > 0, "downstream events present");
    auto r = checks::stickiness(b);
    v.require(r.examined >= 10000 && r.ok(),
              fmt::format("routing groups by (supi, kind): {} decisions, {} violations", r.examined, r.violations));
    require_checks(v, b, "mixed");
    return v;
}

Verdict collision() {
    Verdict v;
    std::size_t fired = 0, acked = 0, ues = 0;
    for (std::uint64_t seed : {31, 32, 33, 34, 35}) {
        auto b = run_scenario(scenario({{"name", "collide"},
                                        {"seed", seed},
                                        {"duration_s", 4},
                                        {"drain_s", 60},
                                        {"core", base_core(4, 4)},
                                        {"workload",
                                         {{"ues", 64},
                                          {"profile", {"REG", "PDU", "SR"}},
                                          {"repeat", "last"},
                                          {"gap_ms", 100},
                                          {"collide", true}}}}));
        fired += count_action(b, "dl_notify");
        acked += count_action(b, "dl_ack");
        auto same = checks::collision_same_amf(b);
        auto owner = checks::single_owner(b);
        ues += same.examined;
        v.require(same.ok(), fmt::format("seed {} both legs on one AMF ({} UEs)", seed, same.examined));
        v.require(owner.ok() && owner.examined > 0,
                  fmt::format("seed {} one ownership entry per UE ({} writes)", seed, owner.examined));
        require_checks(v, b, fmt::format("seed {}", seed));
    }
    v.require(fired >= 1000, fmt::format("{} collisions fired", fired));
    v.require(acked == fired, fmt::format("{} downlinks acknowledged", acked));
    return v;
}

Verdict block_disjointness() {
    Verdict v;
    Scheduler sched;
    MemoryKvStore kv(sched, KvStoreOptions{ms(100), Micros(200), true, false, true});
    DrsmConfig cfg;
    cfg.ttl = seconds(2);
    Drsm drsm(kv, sched, cfg);
    drsm.attach_expiry_redistribution(kv);
    std::mt19937_64 rng(4242);
    std::map<NfKind, std::uint32_t> ordinal;
    std::vector<InstanceId> beating;
    std::map<InstanceId, Micros> last_beat;
    auto heartbeat = [&] {
        for (const auto& id : beating) {
            auto& last = last_beat[id];
            if (sched.now() - last < seconds(1)) continue;
            drsm.publish_load(id, Load{});
            last = sched.now();
        }
    };
    std::size_t ops = 0, spawns = 0, kills = 0, claims = 0, exhausted = 0;

    auto pick = [&]() -> InstanceId { return beating[rng() % beating.size()]; };
    auto spawn = [&] {
        NfKind kind = rng() % 2 ? NfKind::Amf : NfKind::Smf;
        InstanceRecord rec;
        rec.id = InstanceId{kind, ++ordinal[kind]};
        drsm.register_instance(rec);
        beating.push_back(rec.id);
        last_beat[rec.id] = sched.now();
        ++spawns;
    };
    auto claim = [&](const InstanceId& holder) {
        auto pool = *pool_for(holder.kind);
        try {
            drsm.claim_block(pool, 1 + static_cast<std::uint32_t>(rng() % 16), holder);
            ++claims;
        } catch (const PoolExhausted&) {
            ++exhausted;
        }
    };
    while (ops < 12000) {
        auto r = rng() % 100;
        if (beating.size() < 2 || (r < 25 && beating.size() < 16)) {
            spawn();
        } else if (r < 40) {
            // Crash: stop heartbeating; the lease lapses.
            auto i = rng() % beating.size();
            beating.erase(beating.begin() + static_cast<std::ptrdiff_t>(i));
            ++kills;
        } else if (r < 48) {
            auto i = rng() % beating.size();
            drsm.deregister_instance(beating[i]);
            beating.erase(beating.begin() + static_cast<std::ptrdiff_t>(i));
            ++kills;
        } else if (r < 56) {
            // Two claimers race through prepare/commit.
            auto a = pick(), b = pick();
            if (a.kind != b.kind) {
                claim(a);
            } else {
                try {
                    auto ca = drsm.prepare_claim(*pool_for(a.kind), 1 + rng() % 16, a);
                    auto cb = drsm.prepare_claim(*pool_for(b.kind), 1 + rng() % 16, b);
                    bool first_a = rng() % 2;
                    claims += drsm.commit_claim(first_a ? ca : cb) ? 1 : 0;
                    claims += drsm.commit_claim(first_a ? cb : ca) ? 1 : 0;
                } catch (const PoolExhausted&) {
                    ++exhausted;
                }
            }
        } else if (r < 75) {
            claim(pick());
        } else {
            sched.run_until(sched.now() + Micros(static_cast<std::int64_t>(10'000 + rng() % 390'000)));
            heartbeat();
            continue;
        }
        ++ops;
    }
    for (int i = 0; i < 10; ++i) {
        sched.run_until(sched.now() + ms(400));
        heartbeat();
    }
    std::vector<std::string> lines;
    for (const auto& op : kv.op_log()) lines.push_back(store_op_line(op, "drsm"));
    auto disjoint = checks::pool_disjoint(lines);
    auto expiry = checks::pool_expiry(lines, cfg.ttl, ms(100));
    v.require(ops >= 10000, fmt::format("{} operations ({} spawns, {} kills, {} claims, {} exhausted)", ops, spawns,
                                        kills, claims, exhausted));
    v.require(disjoint.ok() && disjoint.examined > 1000,
              fmt::format("no overlapping blocks across {} pool writes", disjoint.examined));
    v.require(expiry.ok() && expiry.examined > 50,
              fmt::format("{} expiries reassigned or parked within TTL + one sweep", expiry.examined));
    return v;
}

// Worst delay, over all UEs, from the kill to the UE's next completed PDU or SR.
double worst_recovery_s(const Bundle& b, Micros kill) {
    std::map<std::uint32_t, Micros> first;
    for (const auto& r : b.latency) {
        if (r.outcome != Outcome::Completed || r.t_end <= kill) continue;
        if (r.event == EventType::Registration) continue;
        auto [it, fresh] = first.emplace(r.ue, r.t_end);
        if (!fresh && r.t_end < it->second) it->second = r.t_end;
    }
    Micros worst{0};
    for (const auto& [ue, t] : first) worst = std::max(worst, t - kill);
    return static_cast<double>(worst.count()) / 1e6;
}

std::vector<Bundle> faulted;

Verdict failover() {
    Verdict v;
    for (int smfs : {1, 2}) {
        auto b = run_scenario(scenario({{"name", fmt::format("smf-kill-{}", smfs)},
                                        {"seed", 7},
                                        {"duration_s", 50},
                                        {"drain_s", 60},
                                        {"core", base_core(1, smfs)},
                                        {"workload",
                                         {{"ues", 64},
                                          {"profile", {"REG", "PDU", "SR"}},
                                          {"repeat", "last"},
                                          {"gap_ms", 10}}},
                                        {"faults", {{{"at_s", 40}, {"type", "kill"}, {"target", "smf-1"}}}}}));
        std::size_t aborts = 0;
        for (const auto& r : b.latency) aborts += r.outcome == Outcome::Aborted ? 1 : 0;
        double worst = worst_recovery_s(b, seconds(40));
        double bound = smfs == 1 ? 6.0 : 3.0;
        v.require(worst <= bound, fmt::format("{} SMF: recovery {:.3f}s <= {}s", smfs, worst, bound));
        v.require(aborts == 0, fmt::format("{} SMF: {} aborts", smfs, aborts));
        require_checks(v, b, fmt::format("{} SMF", smfs));
        faulted.push_back(std::move(b));
    }
    return v;
}

Verdict ladder() {
    Verdict v;
    auto b = run_scenario(scenario({{"name", "ladder"},
                                    {"seed", 3},
                                    {"duration_s", 2},
                                    {"drain_s", 120},
                                    {"core", base_core(1, 1)},
                                    {"workload",
                                     {{"ues", 1}, {"profile", {"REG", "PDU", "SR"}}, {"repeat", "last"}, {"gap_ms", 500}}},
                                    {"faults",
                                     {{{"at_ms", 1500},
                                       {"type", "drop"},
                                       {"channel", "sbi"},
                                       {"receiver_kind", "smf"}}}}}));
    // Expected from the ladder: max_retries timeouts per level, an escalation between levels, then abort.
    const TimerLadder& lad = b.scenario.core.ladder;
    const char* names[] = {"T3550", "T3580", "T3510"};
    std::vector<std::string> expected;
    std::vector<Micros> spacing;
    for (std::size_t i = 0; i < lad.levels.size(); ++i) {
        for (std::uint32_t k = 0; k < lad.levels[i].max_retries; ++k) {
            expected.push_back(fmt::format("timeout {}", names[i]));
            spacing.push_back(lad.levels[i].timeout);
        }
        expected.push_back(i + 1 < lad.levels.size() ? fmt::format("escalate {}", names[i + 1]) : "abort");
    }
    std::vector<std::string> seen;
    std::vector<Micros> waited;
    Micros last_send{0};
    for (const auto& j : ue_events(b, "ran-1")) {
        auto action = j.at("action").get<std::string>();
        Micros t(j.at("t").get<std::int64_t>());
        if (action == "send") {
            last_send = t;
            continue;
        }
        if (action == "timeout" || action == "escalate") {
            seen.push_back(action + " " + j.at("detail").get<std::string>());
        } else if (action == "abort") {
            seen.push_back(action);
        } else {
            continue;
        }
        if (action == "timeout") waited.push_back(t - last_send);
    }
    v.require(seen == expected, fmt::format("sequence [{}]", fmt::join(seen, ", ")));
    v.require(waited == spacing, "each timeout fires one level timer after the last send");
    std::size_t aborted = 0;
    for (const auto& r : b.latency) aborted += r.outcome == Outcome::Aborted ? 1 : 0;
    v.require(aborted == 1, fmt::format("{} aborted episode", aborted));
    faulted.push_back(std::move(b));
    return v;
}

Verdict keepalive() {
    Verdict v;
    auto b = run_scenario(scenario({{"name", "keepalive"},
                                    {"seed", 5},
                                    {"duration_s", 8},
                                    {"drain_s", 30},
                                    {"core", base_core(2, 1)},
                                    {"workload",
                                     {{"ues", 8}, {"profile", {"REG", "PDU", "SR"}}, {"repeat", "last"}, {"gap_ms", 50}}},
                                    {"faults",
                                     {{{"at_ms", 2000},
                                       {"type", "silence_keepalive"},
                                       {"target", "amf-2"},
                                       {"duration_ms", 3000}}}},
                                    {"probes", {{{"discover", "amf"}, {"every_ms", 10}, {"until_ms", 8000}}}}}));
    const auto& core = b.scenario.core;
    const Micros interval = core.keepalive_interval;
    const Micros probe = b.scenario.probes.at(0).every;
    const Micros silence_start = ms(2000), silence_end = ms(5000);
    std::optional<Micros> gone, back;
    for (const auto& j : ue_events(b, "nrf-1")) {
        if (j.at("action") != "discover") continue;
        auto detail = j.at("detail").get<std::string>();
        if (detail.find("requester=probe") == std::string::npos) continue;
        Micros t(j.at("t").get<std::int64_t>());
        bool listed = detail.find("amf-2") != std::string::npos;
        if (!gone && !listed && t >= silence_start) gone = t;
        if (gone && !back && listed) back = t;
    }
    // The last keepalive lands at or before the silence starts.
    const Micros out_by = silence_start + interval * core.miss_threshold + interval + probe;
    v.require(gone && *gone <= out_by,
              fmt::format("left discovery at {:.3f}s (bound {:.3f}s)", gone ? gone->count() / 1e6 : -1.0,
                          out_by.count() / 1e6));
    v.require(gone && *gone >= silence_start + interval * (core.miss_threshold - 1), "not before the threshold");
    const Micros in_by = silence_end + interval + probe;
    v.require(back && *back >= silence_end && *back <= in_by,
              fmt::format("back in discovery at {:.3f}s (bound {:.3f}s)", back ? back->count() / 1e6 : -1.0,
                          in_by.count() / 1e6));
    auto r = checks::keepalive_circulation(b);
    v.require(r.ok() && r.examined > 0, "keepalive_circulation check");
    faulted.push_back(std::move(b));
    return v;
}

Verdict crash_equivalence() {
    Verdict v;
    // Extra fault kinds beyond those run by other criteria.
    faulted.push_back(run_scenario(scenario({{"name", "amf-kill"},
                                             {"seed", 9},
                                             {"duration_s", 12},
                                             {"drain_s", 60},
                                             {"core", base_core(2, 2)},
                                             {"workload",
                                              {{"ues", 48},
                                               {"profile", {"REG", "PDU", "SR"}},
                                               {"repeat", "cycle"},
                                               {"gap_ms", 30},
                                               {"downstream_per_s", 1.0}}},
                                             {"faults",
                                              {{{"at_s", 4}, {"type", "kill"}, {"target", "amf-1"}},
                                               {{"at_s", 7}, {"type", "kill"}, {"target", "smf-2"}}}}})));
    faulted.push_back(run_scenario(scenario({{"name", "store-pause"},
                                             {"seed", 10},
                                             {"duration_s", 8},
                                             {"drain_s", 60},
                                             {"core", base_core(1, 1)},
                                             {"workload",
                                              {{"ues", 32},
                                               {"profile", {"REG", "PDU", "SR"}},
                                               {"repeat", "cycle"},
                                               {"gap_ms", 20}}},
                                             {"faults",
                                              {{{"at_s", 2}, {"type", "pause_store"}, {"duration_ms", 1500}},
                                               {{"at_s", 5}, {"type", "kill"}, {"target", "amf-1"}}}}})));
    std::size_t total = 0;
    for (const auto& b : faulted) {
        auto r = checks::crash_equivalence(b);
        std::size_t eligible = 0;
        for (const auto& u : b.ues) eligible += u.aborts == 0 && !u.active_at_end ? 1 : 0;
        total += r.examined;
        v.require(r.ok() && r.examined == eligible,
                  fmt::format("{}: {} of {} non-aborted UEs match the fault-free replay", b.scenario.name,
                              r.examined - r.violations, eligible));
    }
    v.require(total > 0, fmt::format("{} UEs examined", total));
    return v;
}

Verdict autoscaling() {
    Verdict v;
    auto ramp = [](bool autoscaled) {
        json core = base_core(1, 1);
        core["logs"] = {{"routing", false}, {"events", false}, {"attribution", false}};
        if (autoscaled) {
            json policy{{"min", 1}, {"max", 5}};
            core["autoscale"] = {{"amf", policy}, {"smf", policy}, {"ausf", policy}, {"udm", policy}, {"pcf", policy}};
        }
        return run_scenario(scenario({{"name", autoscaled ? "ramp-autoscaled" : "ramp-static"},
                                      {"seed", 11},
                                      {"duration_s", 340},
                                      {"drain_s", 60},
                                      {"core", core},
                                      {"workload",
                                       {{"ues", 256},
                                        {"ramp_per_s", 1},
                                        {"profile", {"REG", "PDU", "SR"}},
                                        {"repeat", "last"},
                                        {"gap_ms", 10}}}}));
    };
    auto fixed = ramp(false);
    auto scaled = ramp(true);
    auto rows = compare({&fixed, &scaled}, "p50", 0.75);
    double ratio = -1;
    for (const auto& r : rows) {
        if (r.key == "SR") ratio = r.ratios.at(1);
    }
    v.require(ratio > 0 && ratio <= 0.5, fmt::format("steady-state SR p50 ratio {:.3f} <= 0.5", ratio));
    auto s = summarize(scaled, 0.75);
    auto ups = s.instances.count("amf") ? s.instances.at("amf").scale_ups : 0;
    v.require(ups >= 2, fmt::format("{} AMF scale-ups", ups));
    return v;
}

Verdict determinism() {
    Verdict v;
    auto s = scenario({{"name", "determinism"},
                       {"seed", 77},
                       {"duration_s", 6},
                       {"drain_s", 60},
                       {"core", base_core(3, 2)},
                       {"workload",
                        {{"ues", 64},
                         {"profile", {"REG", "PDU", "SR"}},
                         {"repeat", "cycle"},
                         {"gap_ms", 25},
                         {"downstream_per_s", 2.0}}},
                       {"faults", {{{"at_s", 3}, {"type", "kill"}, {"target", "amf-2"}}}}});
    auto a = run_scenario(s);
    auto b = run_scenario(s);
    auto lat = [](const Bundle& x) {
        std::vector<std::string> out;
        for (const auto& r : x.latency) out.push_back(latency_line(r));
        return out;
    };
    v.require(!a.routing.empty() && a.routing == b.routing, fmt::format("routing log ({} lines)", a.routing.size()));
    v.require(!a.latency.empty() && lat(a) == lat(b), fmt::format("latency log ({} lines)", a.latency.size()));
    v.require(!a.events.empty() && a.events == b.events, fmt::format("event log ({} lines)", a.events.size()));
    return v;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"1 store-op reduction", store_op_reduction},
        {"2 stickiness", stickiness},
        {"3 bidirectional collision", collision},
        {"4 block disjointness", block_disjointness},
        {"5 failover timing", failover},
        {"8 timer-ladder escalation", ladder},
        {"10 nrf keepalive", keepalive},
        {"6 crash equivalence", crash_equivalence},
        {"7 autoscaling trend", autoscaling},
        {"9 determinism", determinism},
    };
    std::map<int, std::string> lines;
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v.require(false, fmt::format("raised {}", e.what()));
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        auto line = fmt::format("{} criterion {} ({:.1f}s): {}", v.ok ? "PASS" : "FAIL", name, secs,
                                fmt::join(v.notes, "; "));
        std::cerr << line << std::endl;
        lines[std::stoi(name)] = line;
        failed += v.ok ? 0 : 1;
    }
    for (const auto& [n, line] : lines) std::cout << line << "\n";
    std::cout << fmt::format("{} of {} criteria passed\n", lines.size() - static_cast<std::size_t>(failed), lines.size());
    return failed == 0 ? 0 : 1;
}
