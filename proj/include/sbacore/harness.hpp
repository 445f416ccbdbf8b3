#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbacore/emulator.hpp"
#include "sbacore/runtime.hpp"

namespace sbacore {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error("config error: " + what) {}
};

class EmptyBundle : public std::runtime_error {
public:
    EmptyBundle() : std::runtime_error("bundle has no latency records") {}
};

class WorkloadMismatch : public std::runtime_error {
public:
    explicit WorkloadMismatch(const std::string& what) : std::runtime_error("workload mismatch: " + what) {}
};

struct CheckResult {
    std::string name;
    std::uint64_t examined = 0;
    std::uint64_t violations = 0;
    std::vector<std::string> excerpt;  // first few offending lines

    bool ok() const { return violations == 0; }
};

class InvariantViolation : public std::runtime_error {
public:
    explicit InvariantViolation(std::vector<CheckResult> failed);
    const std::vector<CheckResult>& failed() const { return failed_; }

private:
    std::vector<CheckResult> failed_;
};

// Periodic NRF discovery queries, logged like any other discovery response.
struct DiscoveryProbe {
    NfKind kind = NfKind::Amf;
    Micros every = ms(100);
    Micros from{0};
    Micros until = seconds(10);
};

struct Scenario {
    std::string name = "scenario";
    std::uint64_t seed = 1;
    Micros duration = seconds(10);
    // Extra time after `duration` for in-flight episodes to finish.
    Micros drain = seconds(120);
    CoreConfig core;
    WorkloadConfig workload;
    // Path of the IAT trace, or "synthetic"; recorded for serialization.
    std::string trace_source;
    FaultPlan faults;
    std::vector<DiscoveryProbe> probes;

    // Throws ConfigError.
    void validate() const;

    nlohmann::json to_json() const;
    static Scenario from_json(const nlohmann::json& j, const std::string& base_dir = ".");
    static Scenario load(const std::string& path);
};

struct UeOutcome {
    std::uint32_t ue = 0;
    std::uint32_t aborts = 0;
    bool active_at_end = false;
    std::uint64_t completed = 0;
};

struct RunStats {
    Micros end{0};
    std::uint64_t tasks = 0;
    bool drained = true;
};

// Everything a run produces. Text logs keep their JSON-lines form.
struct Bundle {
    Scenario scenario;
    std::vector<LatencyRecord> latency;
    std::vector<MetricSample> metrics;
    std::vector<std::string> routing;
    std::vector<std::string> events;
    std::vector<std::string> store;
    std::vector<std::string> persisted;
    std::vector<UeOutcome> ues;
    RunStats stats;

    std::vector<PersistedContext> persisted_contexts() const;

    void write(const std::string& dir) const;
    static Bundle load(const std::string& dir);
};

std::string store_op_line(const StoreOp& op, std::string_view store);

Bundle run_scenario(const Scenario& s);

struct EventRow {
    std::string key;  // REG, PDU, SR, SR-down
    std::uint64_t count = 0;
    std::uint64_t completed = 0;
    double p50_ms = 0, p95_ms = 0, p99_ms = 0, mean_ms = 0;
    double mean_store_ops = 0;
    double warm_store_ops = 0;
    std::uint64_t warm_count = 0;
    std::uint64_t aborts = 0;
    std::uint64_t escalated = 0;
};

struct KindTimeline {
    std::vector<std::pair<Micros, double>> points;
    std::uint32_t scale_ups = 0;
    std::uint32_t scale_downs = 0;
    double max() const;
};

struct Summary {
    std::vector<EventRow> rows;
    std::map<std::string, KindTimeline> instances;

    const EventRow* row(std::string_view key) const;
    std::string to_csv() const;
};

// Nearest-rank percentile of an unsorted sample.
double percentile(std::vector<double> values, double p);

// `from_fraction` restricts latency statistics to episodes starting after that share of the run.
Summary summarize(const Bundle& b, double from_fraction = 0.0);

struct RatioRow {
    std::string key;
    std::vector<double> values;
    std::vector<double> ratios;
};

double metric_of(const EventRow& row, std::string_view metric);
std::vector<RatioRow> compare(const std::vector<const Bundle*>& bundles, std::string_view metric,
                              double from_fraction = 0.0);
std::string ratio_csv(const std::vector<RatioRow>& rows, std::string_view metric);

// Post-hoc invariant checks over bundle logs.
namespace checks {
CheckResult stickiness(const Bundle& b);
CheckResult cross_log(const Bundle& b);
CheckResult latency_complete(const Bundle& b);
CheckResult one_outstanding(const Bundle& b);
CheckResult single_owner(const Bundle& b);
CheckResult block_disjointness(const Bundle& b);
CheckResult expiry_redistribution(const Bundle& b);
CheckResult crash_equivalence(const Bundle& b);
CheckResult collision_same_amf(const Bundle& b);
CheckResult p3_stateless(const Bundle& b);
CheckResult startup_order(const Bundle& b);
CheckResult keepalive_circulation(const Bundle& b);

// Replays store-log lines: no two blocks of a pool table overlap at any write.
CheckResult pool_disjoint(const std::vector<std::string>& store_lines,
                          const std::string& name = "block_disjointness");
// Replays store-log lines: an expired instance holds no block later than its last heartbeat + ttl + sweep.
CheckResult pool_expiry(const std::vector<std::string>& store_lines, Micros ttl, Micros sweep);
}  // namespace checks

// The checks that apply to the bundle's scenario.
std::vector<CheckResult> check_bundle(const Bundle& b);
// Throws InvariantViolation if any result failed.
void require_clean(const std::vector<CheckResult>& results);

}  // namespace sbacore
