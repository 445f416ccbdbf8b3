#include "sbacore/harness.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <unordered_map>

#include "sbacore/services.hpp"

namespace sbacore {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kExcerptLines = 8;

constexpr std::array<NfKind, 7> kSpawnable = {NfKind::Amf, NfKind::Smf, NfKind::Nrf, NfKind::Ausf,
                                              NfKind::Udm, NfKind::Pcf, NfKind::Udr};
constexpr std::array<NfKind, 5> kRequired = {NfKind::Amf, NfKind::Smf, NfKind::Ausf, NfKind::Udm, NfKind::Pcf};

bool spawnable(NfKind k) { return std::find(kSpawnable.begin(), kSpawnable.end(), k) != kSpawnable.end(); }

NfKind parse_kind(const std::string& name) {
    try {
        return nf_kind_from_string(name);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

double as_ms(Micros d) { return static_cast<double>(d.count()) / 1000.0; }

Micros read_dur(const json& j, const std::string& name, Micros def) {
    if (auto it = j.find(name + "_ms"); it != j.end()) return Micros(std::llround(it->get<double>() * 1000.0));
    if (auto it = j.find(name + "_s"); it != j.end()) return Micros(std::llround(it->get<double>() * 1e6));
    if (auto it = j.find(name + "_us"); it != j.end()) return Micros(it->get<std::int64_t>());
    return def;
}

template <class T>
T get_or(const json& j, const char* key, T def) {
    auto it = j.find(key);
    return it == j.end() ? def : it->get<T>();
}

// Rejects keys outside `plain` and the unit-suffixed forms of `durations`.
void expect_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> plain,
                 std::initializer_list<std::string_view> durations = {}) {
    if (!j.is_object()) throw ConfigError(fmt::format("{} must be an object", where));
    for (const auto& [key, _] : j.items()) {
        bool known = std::find(plain.begin(), plain.end(), key) != plain.end();
        for (auto d : durations) {
            for (auto suffix : {"_ms", "_s", "_us"}) known = known || key == std::string(d) + suffix;
        }
        if (!known) throw ConfigError(fmt::format("unknown key '{}' in {}", key, where));
    }
}

std::string repeat_name(RepeatMode m) {
    switch (m) {
        case RepeatMode::None: return "none";
        case RepeatMode::Last: return "last";
        case RepeatMode::Cycle: return "cycle";
    }
    return "last";
}

RepeatMode repeat_from(const std::string& s) {
    if (s == "none") return RepeatMode::None;
    if (s == "last") return RepeatMode::Last;
    if (s == "cycle") return RepeatMode::Cycle;
    throw ConfigError("unknown repeat mode: " + s);
}

FaultType fault_from(const std::string& s) {
    if (s == "kill") return FaultType::Kill;
    if (s == "pause_store") return FaultType::PauseStore;
    if (s == "drop") return FaultType::Drop;
    if (s == "silence_keepalive") return FaultType::SilenceKeepalive;
    throw ConfigError("unknown fault type: " + s);
}

std::string kind_key(NfKind k) { return std::string(to_string(k)); }

json core_to_json(const CoreConfig& c) {
    json j;
    json inst = json::object();
    for (auto [k, n] : c.instances) inst[kind_key(k)] = n;
    j["instances"] = inst;
    json as = json::object();
    for (const auto& [k, p] : c.autoscale) {
        as[kind_key(k)] = {{"min", p.min_instances},
                           {"max", p.max_instances},
                           {"up", p.scale_up_threshold},
                           {"down", p.scale_down_threshold},
                           {"cooldown_ms", as_ms(p.cooldown)},
                           {"window_ms", as_ms(p.window)}};
    }
    j["autoscale"] = as;
    j["respawn"] = c.respawn;
    j["loopback"] = c.loopback;
    j["cache"] = {{"enabled", c.cache.enabled},
                  {"flush_interval_ms", as_ms(c.cache.flush_interval)},
                  {"flush_batch", c.cache.flush_batch},
                  {"coalesce", c.cache.coalesce},
                  {"retry_backoff_ms", as_ms(c.cache.retry_backoff)}};
    json timers = json::object();
    for (auto level : {TimerLevel::T3550Sr, TimerLevel::T3580Pdu, TimerLevel::T3510Reg}) {
        const auto& t = c.ladder.at(level);
        timers[std::string(to_string(level))] = {{"timeout_ms", as_ms(t.timeout)}, {"max_retries", t.max_retries}};
    }
    j["timers"] = timers;
    j["drsm"] = {{"ttl_ms", as_ms(c.drsm.ttl)},
                 {"heartbeat_ms", as_ms(c.drsm.heartbeat)},
                 {"block_size", c.drsm.block_size},
                 {"ngap_capacity", c.drsm.ngap_capacity},
                 {"ip_capacity", c.drsm.ip_capacity},
                 {"sweep_ms", as_ms(c.sweep_interval)},
                 {"feed_latency_ms", as_ms(c.feed_latency)}};
    j["nrf"] = {{"keepalive_ms", as_ms(c.keepalive_interval)}, {"miss_threshold", c.miss_threshold}};
    j["costs"] = {{"base_service_ms", as_ms(c.base_service)},   {"gateway_cost_ms", as_ms(c.gateway_cost)},
                  {"control_cost_ms", as_ms(c.control_cost)},   {"store_latency_ms", as_ms(c.store_latency)},
                  {"paging_delay_ms", as_ms(c.paging_delay)},   {"boot_delay_ms", as_ms(c.boot_delay)},
                  {"link_sctp_ms", as_ms(c.latency.sctp)},      {"link_pfcp_ms", as_ms(c.latency.pfcp)},
                  {"link_sbi_ms", as_ms(c.latency.sbi)}};
    j["orchestrator"] = {{"reconcile_ms", as_ms(c.reconcile_interval)},
                         {"metrics_ms", as_ms(c.metrics_interval)},
                         {"drain_poll_ms", as_ms(c.drain_poll)},
                         {"drain_limit_ms", as_ms(c.drain_limit)}};
    j["upf"] = {{"retry_ms", as_ms(c.upf_retry)}, {"max_retries", c.upf_max_retries}};
    j["gateway"] = {{"retry_ms", as_ms(c.gateway_retry)}, {"max_holds", c.gateway_max_holds}};
    j["logs"] = {{"routing", c.logs.routing},
                 {"events", c.logs.events},
                 {"store", c.logs.store},
                 {"ue_store", c.logs.ue_store},
                 {"attribution", c.store_attribution}};
    return j;
}

CoreConfig core_from_json(const json& j) {
    expect_keys(j, "core",
                {"instances", "autoscale", "respawn", "loopback", "cache", "timers", "drsm", "nrf", "costs",
                 "orchestrator", "upf", "gateway", "logs"});
    CoreConfig c;
    // Listed kinds override the defaults; unlisted kinds keep them.
    if (auto it = j.find("instances"); it != j.end()) {
        for (const auto& [name, n] : it->items()) {
            auto k = parse_kind(name);
            if (!spawnable(k)) throw ConfigError("kind is not spawnable: " + name);
            c.instances[k] = n.get<std::uint32_t>();
        }
    }
    if (auto it = j.find("autoscale"); it != j.end()) {
        for (const auto& [name, p] : it->items()) {
            expect_keys(p, "autoscale." + name, {"min", "max", "up", "down"}, {"cooldown", "window"});
            auto k = parse_kind(name);
            if (!spawnable(k)) throw ConfigError("kind is not spawnable: " + name);
            AutoscalePolicy pol;
            pol.min_instances = get_or(p, "min", pol.min_instances);
            pol.max_instances = get_or(p, "max", pol.max_instances);
            pol.scale_up_threshold = get_or(p, "up", pol.scale_up_threshold);
            pol.scale_down_threshold = get_or(p, "down", pol.scale_down_threshold);
            pol.cooldown = read_dur(p, "cooldown", pol.cooldown);
            pol.window = read_dur(p, "window", pol.window);
            c.autoscale[k] = pol;
        }
    }
    c.respawn = get_or(j, "respawn", c.respawn);
    c.loopback = get_or(j, "loopback", c.loopback);
    if (auto it = j.find("cache"); it != j.end()) {
        expect_keys(*it, "cache", {"enabled", "flush_batch", "coalesce"}, {"flush_interval", "retry_backoff"});
        c.cache.enabled = get_or(*it, "enabled", c.cache.enabled);
        c.cache.flush_interval = read_dur(*it, "flush_interval", c.cache.flush_interval);
        c.cache.flush_batch = get_or(*it, "flush_batch", c.cache.flush_batch);
        c.cache.coalesce = get_or(*it, "coalesce", c.cache.coalesce);
        c.cache.retry_backoff = read_dur(*it, "retry_backoff", c.cache.retry_backoff);
    }
    if (auto it = j.find("timers"); it != j.end()) {
        expect_keys(*it, "timers", {"T3550", "T3580", "T3510"});
        for (auto level : {TimerLevel::T3550Sr, TimerLevel::T3580Pdu, TimerLevel::T3510Reg}) {
            auto t = it->find(std::string(to_string(level)));
            if (t == it->end()) continue;
            expect_keys(*t, "timers." + std::string(to_string(level)), {"max_retries"}, {"timeout"});
            auto& s = c.ladder.levels[static_cast<std::size_t>(level)];
            s.timeout = read_dur(*t, "timeout", s.timeout);
            s.max_retries = get_or(*t, "max_retries", s.max_retries);
        }
    }
    if (auto it = j.find("drsm"); it != j.end()) {
        expect_keys(*it, "drsm", {"block_size", "ngap_capacity", "ip_capacity"},
                    {"ttl", "heartbeat", "sweep", "feed_latency"});
        c.drsm.ttl = read_dur(*it, "ttl", c.drsm.ttl);
        c.drsm.heartbeat = read_dur(*it, "heartbeat", c.drsm.heartbeat);
        c.drsm.block_size = get_or(*it, "block_size", c.drsm.block_size);
        c.drsm.ngap_capacity = get_or(*it, "ngap_capacity", c.drsm.ngap_capacity);
        c.drsm.ip_capacity = get_or(*it, "ip_capacity", c.drsm.ip_capacity);
        c.sweep_interval = read_dur(*it, "sweep", c.sweep_interval);
        c.feed_latency = read_dur(*it, "feed_latency", c.feed_latency);
    }
    if (auto it = j.find("nrf"); it != j.end()) {
        expect_keys(*it, "nrf", {"miss_threshold"}, {"keepalive"});
        c.keepalive_interval = read_dur(*it, "keepalive", c.keepalive_interval);
        c.miss_threshold = get_or(*it, "miss_threshold", c.miss_threshold);
    }
    if (auto it = j.find("costs"); it != j.end()) {
        expect_keys(*it, "costs", {},
                    {"base_service", "gateway_cost", "control_cost", "store_latency", "paging_delay", "boot_delay",
                     "link_sctp", "link_pfcp", "link_sbi"});
        c.base_service = read_dur(*it, "base_service", c.base_service);
        c.gateway_cost = read_dur(*it, "gateway_cost", c.gateway_cost);
        c.control_cost = read_dur(*it, "control_cost", c.control_cost);
        c.store_latency = read_dur(*it, "store_latency", c.store_latency);
        c.paging_delay = read_dur(*it, "paging_delay", c.paging_delay);
        c.boot_delay = read_dur(*it, "boot_delay", c.boot_delay);
        c.latency.sctp = read_dur(*it, "link_sctp", c.latency.sctp);
        c.latency.pfcp = read_dur(*it, "link_pfcp", c.latency.pfcp);
        c.latency.sbi = read_dur(*it, "link_sbi", c.latency.sbi);
    }
    if (auto it = j.find("orchestrator"); it != j.end()) {
        expect_keys(*it, "orchestrator", {}, {"reconcile", "metrics", "drain_poll", "drain_limit"});
        c.reconcile_interval = read_dur(*it, "reconcile", c.reconcile_interval);
        c.metrics_interval = read_dur(*it, "metrics", c.metrics_interval);
        c.drain_poll = read_dur(*it, "drain_poll", c.drain_poll);
        c.drain_limit = read_dur(*it, "drain_limit", c.drain_limit);
    }
    if (auto it = j.find("upf"); it != j.end()) {
        expect_keys(*it, "upf", {"max_retries"}, {"retry"});
        c.upf_retry = read_dur(*it, "retry", c.upf_retry);
        c.upf_max_retries = get_or(*it, "max_retries", c.upf_max_retries);
    }
    if (auto it = j.find("gateway"); it != j.end()) {
        expect_keys(*it, "gateway", {"max_holds"}, {"retry"});
        c.gateway_retry = read_dur(*it, "retry", c.gateway_retry);
        c.gateway_max_holds = get_or(*it, "max_holds", c.gateway_max_holds);
    }
    if (auto it = j.find("logs"); it != j.end()) {
        expect_keys(*it, "logs", {"routing", "events", "store", "ue_store", "attribution"});
        c.logs.routing = get_or(*it, "routing", c.logs.routing);
        c.logs.events = get_or(*it, "events", c.logs.events);
        c.logs.store = get_or(*it, "store", c.logs.store);
        c.logs.ue_store = get_or(*it, "ue_store", c.logs.ue_store);
        c.store_attribution = get_or(*it, "attribution", c.store_attribution);
    }
    return c;
}

json fault_to_json(const FaultAction& a) {
    json j{{"at_ms", as_ms(a.at)}, {"type", std::string(to_string(a.type))}};
    if (!a.target.empty()) j["target"] = a.target;
    if (a.duration.count() != 0) j["duration_ms"] = as_ms(a.duration);
    if (a.channel) j["channel"] = std::string(to_string(*a.channel));
    if (a.receiver_kind) j["receiver_kind"] = kind_key(*a.receiver_kind);
    if (a.count != 0) j["count"] = a.count;
    return j;
}

FaultAction fault_from_json(const json& j) {
    expect_keys(j, "fault", {"type", "target", "channel", "receiver_kind", "count"}, {"at", "duration"});
    FaultAction a;
    a.at = read_dur(j, "at", a.at);
    a.type = fault_from(j.at("type").get<std::string>());
    a.target = get_or<std::string>(j, "target", "");
    a.duration = read_dur(j, "duration", a.duration);
    if (auto it = j.find("channel"); it != j.end()) {
        try {
            a.channel = channel_from_string(it->get<std::string>());
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
    if (auto it = j.find("receiver_kind"); it != j.end()) a.receiver_kind = parse_kind(it->get<std::string>());
    a.count = get_or(j, "count", a.count);
    return a;
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    for (const auto& l : lines) out << l << '\n';
}

std::string ue_outcome_line(const UeOutcome& u) {
    return fmt::format("{{\"supi\":\"{}\",\"aborts\":{},\"active_at_end\":{},\"completed\":{}}}", supi_of(u.ue),
                       u.aborts, u.active_at_end, u.completed);
}

UeOutcome parse_ue_outcome(const std::string& line) {
    auto j = json::parse(line);
    UeOutcome u;
    u.ue = ue_of(j.at("supi").get<std::string>());
    u.aborts = j.at("aborts").get<std::uint32_t>();
    u.active_at_end = j.at("active_at_end").get<bool>();
    u.completed = j.at("completed").get<std::uint64_t>();
    return u;
}

std::string row_key(const LatencyRecord& r) {
    std::string k(to_string(r.event));
    if (r.direction == Direction::Downstream) k += "-down";
    return k;
}

CheckResult named(std::string name) {
    CheckResult r;
    r.name = std::move(name);
    return r;
}

void note(CheckResult& r, const std::string& line) {
    ++r.violations;
    if (r.excerpt.size() < kExcerptLines) r.excerpt.push_back(line);
}

// Splits "k1=v1 k2=v2" into a map.
std::map<std::string, std::string> fields(std::string_view detail) {
    std::map<std::string, std::string> out;
    std::istringstream in{std::string(detail)};
    std::string tok;
    while (in >> tok) {
        auto eq = tok.find('=');
        if (eq != std::string::npos) out[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

bool has_faults(const Scenario& s) { return !s.faults.actions.empty(); }
bool has_autoscale(const Scenario& s) { return !s.core.autoscale.empty(); }

bool is_ue_instance(std::string_view name) { return name.rfind("ran-", 0) == 0; }

}  // namespace

// ---------------------------------------------------------------------------------------------
// Scenario

InvariantViolation::InvariantViolation(std::vector<CheckResult> failed)
    : std::runtime_error([&] {
          std::string msg = "invariant violation:";
          for (const auto& r : failed) {
              msg += fmt::format(" {} ({} of {})", r.name, r.violations, r.examined);
              for (const auto& l : r.excerpt) msg += "\n  " + l;
          }
          return msg;
      }()),
      failed_(std::move(failed)) {}

void Scenario::validate() const {
    if (duration.count() <= 0) throw ConfigError("duration must be positive");
    if (drain.count() < 0) throw ConfigError("drain must not be negative");
    if (workload.n_ues == 0) throw ConfigError("workload needs at least one UE");
    if (workload.ramp_per_s < 0) throw ConfigError("ramp rate must not be negative");
    if (workload.downstream_per_s < 0) throw ConfigError("downstream rate must not be negative");
    if (workload.profile.events.empty()) throw ConfigError("profile is empty");
    if (workload.trace && workload.trace->empty()) throw ConfigError("IAT trace is empty");

    for (auto [k, n] : core.instances) {
        if (!spawnable(k)) throw ConfigError("kind is not spawnable: " + kind_key(k));
        (void)n;
    }
    for (const auto& [k, p] : core.autoscale) {
        if (!spawnable(k)) throw ConfigError("kind is not spawnable: " + kind_key(k));
        if (p.max_instances == 0) throw ConfigError("max_instances is 0 for " + kind_key(k));
        if (p.min_instances > p.max_instances) throw ConfigError("min_instances > max_instances for " + kind_key(k));
        if (k == NfKind::Nrf) throw ConfigError("nrf cannot be autoscaled");
        if (!(p.scale_down_threshold >= 0 && p.scale_down_threshold < p.scale_up_threshold &&
              p.scale_up_threshold <= 1)) {
            throw ConfigError("autoscale thresholds out of range for " + kind_key(k));
        }
        if (p.window.count() <= 0) throw ConfigError("autoscale window must be positive");
    }
    auto count_of = [&](NfKind k) -> std::uint32_t {
        auto it = core.instances.find(k);
        return it == core.instances.end() ? 0 : it->second;
    };
    auto max_of = [&](NfKind k) -> std::uint32_t {
        auto a = core.autoscale.find(k);
        if (a != core.autoscale.end()) return a->second.max_instances;
        return count_of(k);
    };
    auto initial_of = [&](NfKind k) -> std::uint32_t {
        auto a = core.autoscale.find(k);
        if (a != core.autoscale.end()) {
            return std::clamp(count_of(k), a->second.min_instances, a->second.max_instances);
        }
        return count_of(k);
    };
    if (auto it = core.instances.find(NfKind::Nrf); it != core.instances.end() && it->second != 1) {
        throw ConfigError("exactly one nrf instance is supported");
    }
    for (auto k : kRequired) {
        if (max_of(k) == 0) throw ConfigError("max_instances is 0 for " + kind_key(k));
        if (initial_of(k) == 0) throw ConfigError("no initial instance of " + kind_key(k));
    }

    const auto& d = core.drsm;
    if (d.block_size == 0) throw ConfigError("block_size must be positive");
    if (d.ttl <= Micros(0) || d.heartbeat <= Micros(0) || d.heartbeat >= d.ttl) {
        throw ConfigError("heartbeat must be positive and shorter than ttl");
    }
    auto blocks_for = [&](std::uint32_t n) -> std::uint64_t { return (n + d.block_size - 1) / d.block_size; };
    // Every instance holds at least one block; UEs spread across blocks.
    std::uint64_t ngap_demand = max_of(NfKind::Amf) + blocks_for(workload.n_ues + 1);
    std::uint64_t ip_demand = max_of(NfKind::Smf) + blocks_for(workload.n_ues);
    if (ngap_demand > d.ngap_capacity / d.block_size) {
        throw ConfigError(fmt::format("ngap pool holds {} blocks, demand is {}", d.ngap_capacity / d.block_size,
                                      ngap_demand));
    }
    if (ip_demand > d.ip_capacity / d.block_size) {
        throw ConfigError(
            fmt::format("ip pool holds {} blocks, demand is {}", d.ip_capacity / d.block_size, ip_demand));
    }
    if (core.keepalive_interval.count() <= 0 || core.miss_threshold == 0) {
        throw ConfigError("keepalive interval and miss threshold must be positive");
    }
    for (const auto& lvl : core.ladder.levels) {
        if (lvl.timeout.count() <= 0 || lvl.max_retries == 0) throw ConfigError("timer levels need timeout and retries");
    }
    if (core.loopback && core.clock != ClockMode::Wall) throw ConfigError("loopback needs the wall clock");

    for (const auto& a : faults.actions) {
        if (a.at.count() < 0) throw ConfigError("fault time must not be negative");
        if (a.type == FaultType::Kill || a.type == FaultType::SilenceKeepalive ||
            (a.type == FaultType::Drop && !a.target.empty())) {
            InstanceId id;
            try {
                id = InstanceId::parse(a.target);
            } catch (const std::exception& e) {
                throw ConfigError(e.what());
            }
            if (id.ordinal == 0) throw ConfigError("instance ordinals start at 1: " + a.target);
            if (spawnable(id.kind) && max_of(id.kind) == 0 && id.kind != NfKind::Nrf) {
                throw ConfigError("fault targets a kind with no instances: " + a.target);
            }
            if (!spawnable(id.kind) && id.kind != NfKind::Gateway && id.kind != NfKind::Upf) {
                throw ConfigError("fault target is not a core instance: " + a.target);
            }
        }
        if ((a.type == FaultType::PauseStore || a.type == FaultType::SilenceKeepalive) && a.duration.count() <= 0) {
            throw ConfigError(fmt::format("{} needs a positive duration", to_string(a.type)));
        }
    }
    for (const auto& p : probes) {
        if (p.every.count() <= 0) throw ConfigError("probe interval must be positive");
    }
}

json Scenario::to_json() const {
    json j;
    j["name"] = name;
    j["seed"] = seed;
    j["clock"] = std::string(sbacore::to_string(core.clock));
    j["duration_ms"] = as_ms(duration);
    j["drain_ms"] = as_ms(drain);
    j["core"] = core_to_json(core);
    json w;
    w["ues"] = workload.n_ues;
    w["ramp_per_s"] = workload.ramp_per_s;
    json prof = json::array();
    for (auto e : workload.profile.events) prof.push_back(std::string(sbacore::to_string(e)));
    w["profile"] = prof;
    w["repeat"] = repeat_name(workload.profile.repeat);
    w["repeat_count"] = workload.profile.repeat_count;
    w["gap_ms"] = as_ms(workload.profile.gap);
    if (workload.trace) w["iat_trace"] = trace_source.empty() ? "inline" : trace_source;
    w["downstream_per_s"] = workload.downstream_per_s;
    w["collide"] = workload.collide;
    j["workload"] = w;
    json f = json::array();
    for (const auto& a : faults.actions) f.push_back(fault_to_json(a));
    j["faults"] = f;
    json p = json::array();
    for (const auto& pr : probes) {
        p.push_back({{"discover", kind_key(pr.kind)},
                     {"every_ms", as_ms(pr.every)},
                     {"from_ms", as_ms(pr.from)},
                     {"until_ms", as_ms(pr.until)}});
    }
    j["probes"] = p;
    return j;
}

Scenario Scenario::from_json(const json& j, const std::string& base_dir) {
    try {
        expect_keys(j, "scenario", {"name", "seed", "clock", "core", "workload", "faults", "probes"},
                    {"duration", "drain"});
        Scenario s;
        s.name = get_or<std::string>(j, "name", s.name);
        s.seed = get_or(j, "seed", s.seed);
        s.duration = read_dur(j, "duration", s.duration);
        s.drain = read_dur(j, "drain", s.drain);
        if (auto it = j.find("core"); it != j.end()) s.core = core_from_json(*it);
        if (auto it = j.find("clock"); it != j.end()) s.core.clock = clock_mode_from_string(it->get<std::string>());
        if (auto it = j.find("workload"); it != j.end()) {
            const auto& w = *it;
            expect_keys(w, "workload",
                        {"ues", "ramp_per_s", "profile", "repeat", "repeat_count", "iat_trace", "downstream_per_s",
                         "collide"},
                        {"gap"});
            s.workload.n_ues = get_or(w, "ues", s.workload.n_ues);
            s.workload.ramp_per_s = get_or(w, "ramp_per_s", s.workload.ramp_per_s);
            if (auto p = w.find("profile"); p != w.end()) {
                s.workload.profile.events.clear();
                for (const auto& e : *p) s.workload.profile.events.push_back(event_type_from_string(e.get<std::string>()));
            }
            if (auto r = w.find("repeat"); r != w.end()) s.workload.profile.repeat = repeat_from(r->get<std::string>());
            s.workload.profile.repeat_count = get_or(w, "repeat_count", s.workload.profile.repeat_count);
            s.workload.profile.gap = read_dur(w, "gap", s.workload.profile.gap);
            if (auto t = w.find("iat_trace"); t != w.end()) {
                if (t->is_array()) {
                    std::string text;
                    for (const auto& row : *t) text += row.dump() + "\n";
                    s.workload.trace = IatTrace::parse(text);
                } else {
                    auto src = t->get<std::string>();
                    if (src == "synthetic") {
                        s.workload.trace = synthetic_trace(s.seed, 1000);
                        s.trace_source = src;
                    } else {
                        fs::path p(src);
                        if (p.is_relative()) p = fs::path(base_dir) / p;
                        s.workload.trace = IatTrace::load(p.lexically_normal().string());
                        s.trace_source = p.lexically_normal().string();
                    }
                }
            }
            s.workload.downstream_per_s = get_or(w, "downstream_per_s", s.workload.downstream_per_s);
            s.workload.collide = get_or(w, "collide", s.workload.collide);
        }
        if (auto it = j.find("faults"); it != j.end()) {
            for (const auto& f : *it) s.faults.actions.push_back(fault_from_json(f));
        }
        if (auto it = j.find("probes"); it != j.end()) {
            for (const auto& p : *it) {
                expect_keys(p, "probe", {"discover"}, {"every", "from", "until"});
                DiscoveryProbe pr;
                pr.kind = parse_kind(p.at("discover").get<std::string>());
                pr.every = read_dur(p, "every", pr.every);
                pr.from = read_dur(p, "from", pr.from);
                pr.until = read_dur(p, "until", pr.until);
                s.probes.push_back(pr);
            }
        }
        s.workload.seed = s.seed;
        s.core.seed = s.seed;
        return s;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

Scenario Scenario::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError(fmt::format("{}: {}", path, e.what()));
    }
    return from_json(j, fs::path(path).parent_path().string().empty() ? "." : fs::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------------------------
// Running

std::string store_op_line(const StoreOp& op, std::string_view store) {
    json j{{"t", op.at.count()}, {"store", store},   {"op", op.op},         {"key", op.key},
           {"version", op.version}, {"ok", op.ok}, {"hash", op.value_hash}};
    if (!op.value.empty()) j["value"] = op.value;
    return j.dump();
}

Bundle run_scenario(const Scenario& s) {
    s.validate();
    CoreConfig cfg = s.core;
    cfg.seed = s.seed;
    LogSink sink(cfg.logs);
    Core core(cfg, sink);
    WorkloadConfig w = s.workload;
    w.seed = s.seed;

    core.start();
    Emulator emu(core, w);
    core.inject(s.faults);
    for (const auto& p : s.probes) {
        auto tick = std::make_shared<std::function<void()>>();
        *tick = [&core, p, weak = std::weak_ptr<std::function<void()>>(tick)] {
            core.nrf().discover(p.kind, "probe");
            if (core.now() + p.every <= p.until) {
                if (auto t = weak.lock()) core.exec().schedule_after(p.every, [t] { (*t)(); });
            }
        };
        core.exec().schedule_at(p.from, [tick] { (*tick)(); });
    }
    emu.start();

    auto& sched = core.scheduler();
    sched.run_until(s.duration);
    emu.stop();
    sched.run_until(s.duration + s.drain, [&] { return emu.idle(); });
    Bundle b;
    b.stats.drained = emu.idle();
    // Let trailing acknowledgements and write-behind flushes land.
    sched.run_until(core.now() + ms(100));
    core.flush_all();

    for (auto* inst : core.all_instances()) {
        if (!inst->alive()) continue;
        sink.lifecycle(core.now(), inst->name(), "introspect", fmt::format("contexts={}", inst->ue_context_entries()));
        for (const auto& m : inst->endpoint()->clear()) sink.event(core.now(), inst->name(), "drop", &m, "end_of_run");
    }
    b.stats.end = core.now();
    b.stats.tasks = sched.executed();

    b.scenario = s;
    b.latency = sink.latency_records();
    if (cfg.store_attribution) {
        auto& store = core.ue_store();
        for (auto& r : b.latency) {
            std::uint64_t ops = 0;
            auto supi = supi_of(r.ue);
            for (auto seq = r.seq_first; seq != 0 && seq <= r.seq_last; ++seq) ops += store.ops_for(supi, seq);
            r.store_ops = static_cast<std::uint32_t>(ops);
        }
    }
    b.metrics = sink.metrics();
    b.routing = sink.routing_lines();
    b.events = sink.event_lines();
    if (cfg.logs.store) {
        for (const auto& op : core.drsm_store().op_log()) b.store.push_back(store_op_line(op, "drsm"));
    }
    if (cfg.logs.ue_store) {
        for (const auto& op : core.ue_kv().op_log()) b.store.push_back(store_op_line(op, "ue"));
    }
    for (const auto& p : core.ue_store().export_all()) b.persisted.push_back(encode_context(p.context, p.committed_at));
    for (std::uint32_t ue = 1; ue <= emu.size(); ++ue) {
        const auto& a = emu.agent(ue);
        b.ues.push_back(UeOutcome{ue, a.aborts(), a.in_episode(), a.completed().size()});
    }
    return b;
}

std::vector<PersistedContext> Bundle::persisted_contexts() const {
    std::vector<PersistedContext> out;
    out.reserve(persisted.size());
    for (const auto& l : persisted) out.push_back(decode_context(l));
    return out;
}

void Bundle::write(const std::string& dir) const {
    fs::create_directories(dir);
    fs::path d(dir);
    std::vector<std::string> lat;
    lat.reserve(latency.size());
    for (const auto& r : latency) lat.push_back(latency_line(r));
    write_lines(d / "latency.jsonl", lat);
    std::vector<std::string> met;
    met.reserve(metrics.size());
    for (const auto& m : metrics) met.push_back(metric_line(m));
    write_lines(d / "metrics.jsonl", met);
    write_lines(d / "routing.jsonl", routing);
    write_lines(d / "events.jsonl", events);
    write_lines(d / "store.jsonl", store);
    write_lines(d / "persisted.jsonl", persisted);
    std::vector<std::string> ue_lines;
    ue_lines.reserve(ues.size());
    for (const auto& u : ues) ue_lines.push_back(ue_outcome_line(u));
    write_lines(d / "ues.jsonl", ue_lines);
    write_lines(d / "scenario.json", {scenario.to_json().dump(2)});
    json st{{"end_us", stats.end.count()}, {"tasks", stats.tasks}, {"drained", stats.drained}};
    write_lines(d / "stats.json", {st.dump()});
    if (!latency.empty()) {
        std::ofstream out(d / "summary.csv", std::ios::binary);
        out << summarize(*this).to_csv();
    }
}

Bundle Bundle::load(const std::string& dir) {
    fs::path d(dir);
    if (!fs::is_directory(d)) throw std::runtime_error("no bundle at " + dir);
    Bundle b;
    {
        std::ifstream in(d / "scenario.json");
        if (!in) throw std::runtime_error("bundle has no scenario.json: " + dir);
        auto j = json::parse(in);
        // Trace files are not part of the bundle; keep the workload description without reloading them.
        if (j.contains("workload") && j["workload"].contains("iat_trace")) {
            auto src = j["workload"]["iat_trace"];
            j["workload"].erase("iat_trace");
            b.scenario = Scenario::from_json(j, d.string());
            b.scenario.trace_source = src.get<std::string>();
            b.scenario.workload.trace = IatTrace{};
        } else {
            b.scenario = Scenario::from_json(j, d.string());
        }
    }
    for (const auto& l : read_lines(d / "latency.jsonl")) b.latency.push_back(parse_latency_line(l));
    for (const auto& l : read_lines(d / "metrics.jsonl")) b.metrics.push_back(parse_metric_line(l));
    b.routing = read_lines(d / "routing.jsonl");
    b.events = read_lines(d / "events.jsonl");
    b.store = read_lines(d / "store.jsonl");
    b.persisted = read_lines(d / "persisted.jsonl");
    for (const auto& l : read_lines(d / "ues.jsonl")) b.ues.push_back(parse_ue_outcome(l));
    auto st = read_lines(d / "stats.json");
    if (!st.empty()) {
        auto j = json::parse(st.front());
        b.stats.end = Micros(j.at("end_us").get<std::int64_t>());
        b.stats.tasks = j.at("tasks").get<std::uint64_t>();
        b.stats.drained = j.at("drained").get<bool>();
    }
    return b;
}

// ---------------------------------------------------------------------------------------------
// Summaries

double percentile(std::vector<double> values, double p) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

double KindTimeline::max() const {
    double m = 0;
    for (const auto& [t, v] : points) m = std::max(m, v);
    return m;
}

const EventRow* Summary::row(std::string_view key) const {
    for (const auto& r : rows) {
        if (r.key == key) return &r;
    }
    return nullptr;
}

std::string Summary::to_csv() const {
    std::string out = "series,key,metric,value\n";
    for (const auto& r : rows) {
        auto put = [&](std::string_view metric, auto v) { out += fmt::format("latency,{},{},{}\n", r.key, metric, v); };
        put("count", r.count);
        put("completed", r.completed);
        put("p50_ms", fmt::format("{:.3f}", r.p50_ms));
        put("p95_ms", fmt::format("{:.3f}", r.p95_ms));
        put("p99_ms", fmt::format("{:.3f}", r.p99_ms));
        put("mean_ms", fmt::format("{:.3f}", r.mean_ms));
        put("mean_store_ops", fmt::format("{:.4f}", r.mean_store_ops));
        put("warm_store_ops", fmt::format("{:.4f}", r.warm_store_ops));
        put("aborts", r.aborts);
        put("escalated", r.escalated);
    }
    for (const auto& [kind, tl] : instances) {
        out += fmt::format("instances,{},max,{}\n", kind, tl.max());
        out += fmt::format("instances,{},final,{}\n", kind, tl.points.empty() ? 0.0 : tl.points.back().second);
        out += fmt::format("instances,{},scale_ups,{}\n", kind, tl.scale_ups);
        out += fmt::format("instances,{},scale_downs,{}\n", kind, tl.scale_downs);
    }
    return out;
}

Summary summarize(const Bundle& b, double from_fraction) {
    if (b.latency.empty()) throw EmptyBundle();
    const Micros from(static_cast<std::int64_t>(from_fraction * static_cast<double>(b.scenario.duration.count())));

    struct Acc {
        std::vector<double> lat;
        std::uint64_t count = 0, aborts = 0, escalated = 0, ops = 0, warm_ops = 0, warm = 0;
    };
    std::map<std::string, Acc> acc;
    std::set<std::pair<std::uint32_t, std::string>> seen;
    for (const auto& r : b.latency) {
        auto key = row_key(r);
        bool first = seen.emplace(r.ue, key).second;
        if (r.t_start < from) continue;
        auto& a = acc[key];
        ++a.count;
        a.ops += r.store_ops;
        if (!first) {
            ++a.warm;
            a.warm_ops += r.store_ops;
        }
        if (r.outcome == Outcome::Aborted) {
            ++a.aborts;
            continue;
        }
        if (r.outcome == Outcome::Escalated) ++a.escalated;
        a.lat.push_back(r.latency_ms());
    }

    Summary s;
    for (const auto* key : {"REG", "PDU", "SR", "SR-down"}) {
        auto it = acc.find(key);
        if (it == acc.end()) continue;
        const auto& a = it->second;
        EventRow row;
        row.key = key;
        row.count = a.count;
        row.completed = a.lat.size();
        row.p50_ms = percentile(a.lat, 50);
        row.p95_ms = percentile(a.lat, 95);
        row.p99_ms = percentile(a.lat, 99);
        double sum = 0;
        for (double v : a.lat) sum += v;
        row.mean_ms = a.lat.empty() ? 0.0 : sum / static_cast<double>(a.lat.size());
        row.mean_store_ops = a.count ? static_cast<double>(a.ops) / static_cast<double>(a.count) : 0.0;
        row.warm_count = a.warm;
        row.warm_store_ops = a.warm ? static_cast<double>(a.warm_ops) / static_cast<double>(a.warm) : 0.0;
        row.aborts = a.aborts;
        row.escalated = a.escalated;
        s.rows.push_back(row);
    }

    for (const auto& m : b.metrics) {
        if (m.series != "instances") continue;
        for (const auto& [k, v] : m.labels) {
            if (k == "kind") s.instances[v].points.emplace_back(m.t, m.value);
        }
    }
    for (const auto& line : b.events) {
        bool up = line.find("\"action\":\"scale_up\"") != std::string::npos;
        bool down = line.find("\"action\":\"scale_down\"") != std::string::npos;
        if (!up && !down) continue;
        auto j = json::parse(line);
        auto kind = std::string(to_string(InstanceId::parse(j.at("instance").get<std::string>()).kind));
        if (up) ++s.instances[kind].scale_ups;
        if (down) ++s.instances[kind].scale_downs;
    }
    return s;
}

double metric_of(const EventRow& row, std::string_view metric) {
    if (metric == "p50") return row.p50_ms;
    if (metric == "p95") return row.p95_ms;
    if (metric == "p99") return row.p99_ms;
    if (metric == "mean") return row.mean_ms;
    if (metric == "store_ops") return row.mean_store_ops;
    if (metric == "warm_store_ops") return row.warm_store_ops;
    if (metric == "aborts") return static_cast<double>(row.aborts);
    throw std::invalid_argument("unknown metric: " + std::string(metric));
}

std::vector<RatioRow> compare(const std::vector<const Bundle*>& bundles, std::string_view metric,
                              double from_fraction) {
    if (bundles.size() < 2) throw std::invalid_argument("compare needs at least two bundles");
    auto workload_of = [](const Bundle& b) {
        auto j = b.scenario.to_json();
        return json{{"workload", j["workload"]}, {"duration_ms", j["duration_ms"]}};
    };
    const auto base = workload_of(*bundles.front());
    for (std::size_t i = 1; i < bundles.size(); ++i) {
        if (workload_of(*bundles[i]) != base) {
            throw WorkloadMismatch(fmt::format("bundle {} ({}) differs from bundle 0 ({})", i,
                                               bundles[i]->scenario.name, bundles.front()->scenario.name));
        }
    }
    std::vector<Summary> sums;
    for (const auto* b : bundles) sums.push_back(summarize(*b, from_fraction));
    std::vector<RatioRow> out;
    for (const auto& r0 : sums.front().rows) {
        RatioRow row;
        row.key = r0.key;
        const double v0 = metric_of(r0, metric);
        for (const auto& s : sums) {
            const auto* r = s.row(r0.key);
            double v = r ? metric_of(*r, metric) : 0.0;
            row.values.push_back(v);
            if (v0 == 0.0) {
                row.ratios.push_back(v == 0.0 ? 1.0 : std::numeric_limits<double>::infinity());
            } else {
                row.ratios.push_back(v / v0);
            }
        }
        out.push_back(std::move(row));
    }
    return out;
}

std::string ratio_csv(const std::vector<RatioRow>& rows, std::string_view metric) {
    std::string out = "key,metric,bundle,value,ratio\n";
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.values.size(); ++i) {
            out += fmt::format("{},{},{},{:.4f},{:.4f}\n", r.key, metric, i, r.values[i], r.ratios[i]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Checks

namespace checks {

CheckResult stickiness(const Bundle& b) {
    CheckResult r = named("stickiness");
    std::map<std::pair<std::string, std::string>, std::string> chosen;
    for (const auto& line : b.routing) {
        auto j = json::parse(line);
        auto kind = j.at("kind").get<std::string>();
        if (kind != "amf" && kind != "smf") continue;
        ++r.examined;
        auto key = std::make_pair(j.at("supi").get<std::string>(), kind);
        auto inst = j.at("chosen").get<std::string>();
        auto [it, fresh] = chosen.emplace(key, inst);
        if (!fresh && it->second != inst) note(r, line);
    }
    return r;
}

CheckResult cross_log(const Bundle& b) {
    CheckResult r = named("cross_log");
    std::map<std::tuple<std::uint64_t, std::uint32_t, std::string>, std::int64_t> balance;
    for (const auto& line : b.routing) {
        auto j = json::parse(line);
        ++balance[{j.at("msg_id").get<std::uint64_t>(), j.at("attempt").get<std::uint32_t>(),
                   j.at("chosen").get<std::string>()}];
    }
    std::map<std::tuple<std::uint64_t, std::uint32_t, std::string>, std::int64_t> seen;
    for (const auto& line : b.events) {
        if (line.find("\"action\":\"recv\"") == std::string::npos &&
            line.find("\"action\":\"drop\"") == std::string::npos) {
            continue;
        }
        auto j = json::parse(line);
        if (!j.contains("msg_id")) continue;
        std::tuple<std::uint64_t, std::uint32_t, std::string> key{
            j.at("msg_id").get<std::uint64_t>(), j.at("attempt").get<std::uint32_t>(),
            j.at("instance").get<std::string>()};
        if (balance.count(key)) ++seen[key];
    }
    for (const auto& [key, n] : balance) {
        ++r.examined;
        auto got = seen[key];
        if (got != n) {
            note(r, fmt::format("msg_id={} attempt={} chosen={} routed={} logged={}", std::get<0>(key),
                                std::get<1>(key), std::get<2>(key), n, got));
        }
    }
    return r;
}

CheckResult latency_complete(const Bundle& b) {
    CheckResult r = named("latency_complete");
    std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> episodes;
    for (const auto& line : b.events) {
        bool start = line.find("\"action\":\"episode_start\"") != std::string::npos;
        bool end = line.find("\"action\":\"episode_end\"") != std::string::npos;
        if (!start && !end) continue;
        auto inst = json::parse(line).at("instance").get<std::string>();
        auto& e = episodes[inst];
        (start ? e.first : e.second) += 1;
    }
    std::map<std::uint32_t, std::uint64_t> records;
    for (const auto& rec : b.latency) ++records[rec.ue];
    for (const auto& u : b.ues) {
        ++r.examined;
        auto name = InstanceId{NfKind::Ran, u.ue}.str();
        auto [starts, ends] = episodes[name];
        auto recs = records[u.ue];
        if (recs != ends || starts != ends + (u.active_at_end ? 1 : 0)) {
            note(r, fmt::format("{} starts={} ends={} records={} active={}", supi_of(u.ue), starts, ends, recs,
                                u.active_at_end));
        }
    }
    return r;
}

CheckResult one_outstanding(const Bundle& b) {
    CheckResult r = named("one_outstanding");
    std::map<std::string, bool> open;
    for (const auto& line : b.events) {
        bool start = line.find("\"action\":\"episode_start\"") != std::string::npos;
        bool end = line.find("\"action\":\"episode_end\"") != std::string::npos;
        if (!start && !end) continue;
        ++r.examined;
        auto inst = json::parse(line).at("instance").get<std::string>();
        bool& o = open[inst];
        if (start == o) note(r, line);
        o = start;
    }
    return r;
}

CheckResult single_owner(const Bundle& b) {
    CheckResult r = named("single_owner");
    const bool stable = !has_faults(b.scenario) && !has_autoscale(b.scenario);
    std::map<std::string, std::pair<std::uint64_t, std::optional<InstanceId>>> last;
    for (const auto& line : b.store) {
        if (line.find("\"key\":\"own/") == std::string::npos) continue;
        auto j = json::parse(line);
        auto op = j.at("op").get<std::string>();
        if (!j.at("ok").get<bool>() || (op != "put" && op != "cas")) continue;
        ++r.examined;
        auto key = j.at("key").get<std::string>();
        auto supi = key.substr(4);
        auto version = j.at("version").get<std::uint64_t>();
        OwnershipEntry e;
        try {
            e = OwnershipEntry::from_json(j.at("value").get<std::string>(), version);
        } catch (const std::exception&) {
            note(r, line);
            continue;
        }
        auto& [v, amf] = last[supi];
        bool bad = e.ue != supi || version <= v;
        if (stable && amf && e.owner_amf && *amf != *e.owner_amf) bad = true;
        if (bad) note(r, line);
        v = version;
        if (e.owner_amf) amf = e.owner_amf;
    }
    return r;
}

CheckResult pool_disjoint(const std::vector<std::string>& store_lines, const std::string& name) {
    CheckResult r = named(name);
    for (const auto& line : store_lines) {
        if (line.find("\"key\":\"pool/") == std::string::npos) continue;
        auto j = json::parse(line);
        auto op = j.at("op").get<std::string>();
        if (!j.at("ok").get<bool>() || (op != "put" && op != "cas") || !j.contains("value")) continue;
        ++r.examined;
        auto table = PoolTable::from_json(j.at("value").get<std::string>());
        auto blocks = table.blocks;
        std::sort(blocks.begin(), blocks.end(), [](const auto& x, const auto& y) { return x.start < y.start; });
        bool bad = false;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (blocks[i].len == 0 || blocks[i].end() > table.capacity) bad = true;
            if (i > 0 && blocks[i - 1].overlaps(blocks[i])) bad = true;
        }
        if (bad) note(r, line);
    }
    return r;
}

CheckResult pool_expiry(const std::vector<std::string>& store_lines, Micros ttl, Micros sweep) {
    CheckResult r = named("expiry_redistribution");
    std::map<std::string, Micros> last_beat;
    std::map<std::string, PoolTable> tables;
    struct Pending {
        std::string id;
        Micros deadline;
        std::string line;
    };
    std::vector<Pending> pending;
    auto holds = [&](const std::string& id) {
        for (const auto& [_, t] : tables) {
            for (const auto& blk : t.blocks) {
                if (blk.holder && blk.holder->str() == id) return true;
            }
        }
        return false;
    };
    auto settle = [&](Micros now) {
        for (auto it = pending.begin(); it != pending.end();) {
            if (!holds(it->id)) {
                if (now > it->deadline) note(r, it->line);
                it = pending.erase(it);
            } else {
                ++it;
            }
        }
    };
    for (const auto& line : store_lines) {
        bool inst = line.find("\"key\":\"inst/") != std::string::npos;
        bool pool = line.find("\"key\":\"pool/") != std::string::npos;
        if (!inst && !pool) continue;
        auto j = json::parse(line);
        if (!j.at("ok").get<bool>()) continue;
        auto op = j.at("op").get<std::string>();
        auto key = j.at("key").get<std::string>();
        Micros t(j.at("t").get<std::int64_t>());
        if (inst) {
            auto id = key.substr(5);
            if (op == "put" || op == "cas") {
                last_beat[id] = t;
            } else if (op == "expire") {
                ++r.examined;
                auto beat = last_beat.count(id) ? last_beat[id] : Micros(0);
                pending.push_back(Pending{id, beat + ttl + sweep, line});
                settle(t);
            } else if (op == "erase") {
                last_beat.erase(id);
            }
            continue;
        }
        if ((op == "put" || op == "cas") && j.contains("value")) {
            tables[key] = PoolTable::from_json(j.at("value").get<std::string>());
            settle(t);
        }
    }
    for (const auto& p : pending) note(r, p.line);
    return r;
}

CheckResult block_disjointness(const Bundle& b) { return pool_disjoint(b.store, "block_disjointness"); }

CheckResult expiry_redistribution(const Bundle& b) {
    return pool_expiry(b.store, b.scenario.core.drsm.ttl, b.scenario.core.sweep_interval);
}

CheckResult crash_equivalence(const Bundle& b) {
    CheckResult r = named("crash_equivalence");
    std::map<std::string, std::map<std::uint64_t, EventType>> done;
    for (const auto& line : b.events) {
        if (line.find("\"action\":\"complete\"") == std::string::npos) continue;
        auto j = json::parse(line);
        if (!is_ue_instance(j.at("instance").get<std::string>())) continue;
        auto detail = j.at("detail").get<std::string>();
        auto type = event_type_from_string(detail.substr(0, detail.find(' ')));
        done[j.at("supi").get<std::string>()][j.at("seq").get<std::uint64_t>()] = type;
    }
    std::map<std::string, UeContext> persisted;
    for (const auto& p : b.persisted_contexts()) persisted[p.context.id.supi] = p.context;
    for (const auto& u : b.ues) {
        if (u.aborts > 0 || u.active_at_end) continue;
        ++r.examined;
        auto supi = supi_of(u.ue);
        UeContext oracle = fresh_context(supi);
        bool replay_ok = true;
        for (const auto& [seq, type] : done[supi]) {
            try {
                oracle = apply_event(oracle, EventKind{type, Direction::Upstream}, seq);
            } catch (const IllegalTransition&) {
                replay_ok = false;
            }
        }
        auto it = persisted.find(supi);
        if (it == persisted.end()) {
            if (!done[supi].empty() || !replay_ok) note(r, fmt::format("{}: no persisted context", supi));
            continue;
        }
        if (!replay_ok || !protocol_equal(oracle, it->second)) {
            note(r, fmt::format("{}: persisted {} v{} seq{} vs oracle {} v{} seq{}", supi,
                                encode_context(it->second, Micros(0)), it->second.version,
                                it->second.last_event_seq, encode_context(oracle, Micros(0)), oracle.version,
                                oracle.last_event_seq));
        }
    }
    return r;
}

CheckResult collision_same_amf(const Bundle& b) {
    CheckResult r = named("collision_same_amf");
    std::map<std::string, std::set<std::string>> amfs;
    for (const auto& line : b.events) {
        if (line.find("\"action\":\"recv\"") == std::string::npos) continue;
        if (line.find("\"type\":\"ue_request\"") == std::string::npos &&
            line.find("\"type\":\"downlink_notify\"") == std::string::npos) {
            continue;
        }
        auto j = json::parse(line);
        auto inst = j.at("instance").get<std::string>();
        if (inst.rfind("amf-", 0) != 0) continue;
        amfs[j.at("supi").get<std::string>()].insert(inst);
    }
    for (const auto& [supi, set] : amfs) {
        ++r.examined;
        if (set.size() != 1) {
            std::string names;
            for (const auto& s : set) names += s + " ";
            note(r, fmt::format("{} reached {}", supi, names));
        }
    }
    return r;
}

CheckResult p3_stateless(const Bundle& b) {
    CheckResult r = named("p3_stateless");
    for (const auto& line : b.events) {
        if (line.find("\"action\":\"introspect\"") == std::string::npos) continue;
        auto j = json::parse(line);
        auto id = InstanceId::parse(j.at("instance").get<std::string>());
        if (pattern_of(id.kind) != Pattern::P3Ephemeral) continue;
        ++r.examined;
        if (j.at("detail").get<std::string>() != "contexts=0") note(r, line);
    }
    return r;
}

CheckResult startup_order(const Bundle& b) {
    CheckResult r = named("startup_order");
    static const std::vector<std::string> order = {"spawn", "drsm_register", "claim_block", "nrf_register", "ready"};
    struct Progress {
        std::size_t stage = 0;
        bool aborted = false;
        bool reported = false;
    };
    std::map<std::string, Progress> seen;
    for (const auto& line : b.events) {
        auto j = json::parse(line);
        auto inst = j.at("instance").get<std::string>();
        if (inst.rfind("amf-", 0) != 0 && inst.rfind("smf-", 0) != 0) continue;
        auto action = j.at("action").get<std::string>();
        auto& p = seen[inst];
        if (action == "spawn_aborted") p.aborted = true;
        if (p.aborted || p.reported) continue;
        if (p.stage < order.size() && action == order[p.stage]) {
            ++p.stage;
            if (p.stage == order.size()) ++r.examined;
            continue;
        }
        if (action == "claim_block" && p.stage >= 3) continue;  // later claims of a ready instance
        bool before_ready = p.stage < order.size();
        bool lifecycle_step = std::find(order.begin(), order.end(), action) != order.end();
        if ((before_ready && (action == "recv" || lifecycle_step)) || (!before_ready && lifecycle_step)) {
            p.reported = true;
            note(r, line);
        }
    }
    return r;
}

CheckResult keepalive_circulation(const Bundle& b) {
    CheckResult r = named("keepalive_circulation");
    const auto interval = b.scenario.core.keepalive_interval;
    const auto miss = b.scenario.core.miss_threshold;
    Micros probe_every = interval;
    for (const auto& p : b.scenario.probes) probe_every = std::min(probe_every, p.every);

    std::map<std::string, std::vector<Micros>> keepalives;
    std::vector<std::pair<Micros, std::set<std::string>>> probes;
    std::set<std::string> probed_kinds;
    for (const auto& line : b.events) {
        bool ka = line.find("\"type\":\"keepalive\"") != std::string::npos &&
                  line.find("\"action\":\"recv\"") != std::string::npos;
        bool disc = line.find("\"action\":\"discover\"") != std::string::npos &&
                    line.find("requester=probe") != std::string::npos;
        if (!ka && !disc) continue;
        auto j = json::parse(line);
        Micros t(j.at("t").get<std::int64_t>());
        if (ka) {
            if (j.at("instance").get<std::string>().rfind("nrf-", 0) != 0) continue;
            keepalives[j.at("from").get<std::string>()].push_back(t);
            continue;
        }
        auto f = fields(j.at("detail").get<std::string>());
        auto ids = split(f["result"], ',');
        probes.emplace_back(t, std::set<std::string>(ids.begin(), ids.end()));
        probed_kinds.insert(f["kind"]);
    }

    for (const auto& a : b.scenario.faults.actions) {
        if (a.type != FaultType::SilenceKeepalive) continue;
        ++r.examined;
        const auto& target = a.target;
        const auto& ka = keepalives[target];
        const Micros silence_end = a.at + a.duration;
        std::optional<Micros> last, resumed;
        for (auto t : ka) {
            if (t <= silence_end && t <= a.at + interval) last = t;
            if (t > silence_end && !resumed) resumed = t;
        }
        if (!last) {
            note(r, fmt::format("{}: no keepalive before the silence", target));
            continue;
        }
        const Micros threshold = *last + interval * static_cast<std::int64_t>(miss);
        const bool removable = silence_end > threshold;
        std::optional<Micros> out_at, back_at;
        bool premature = false;
        for (const auto& [t, ids] : probes) {
            if (t <= *last) continue;
            bool present = ids.count(target) != 0;
            if (t <= threshold && !present) premature = true;
            if (!out_at && !present) out_at = t;
            if (out_at && resumed && t >= *resumed && present && !back_at) back_at = t;
        }
        if (premature) note(r, fmt::format("{}: left discovery before the miss threshold at {}us", target,
                                           threshold.count()));
        if (!removable) continue;
        if (!out_at || *out_at > threshold + interval + probe_every) {
            note(r, fmt::format("{}: threshold {}us, left discovery at {}", target, threshold.count(),
                                out_at ? std::to_string(out_at->count()) + "us" : std::string("never")));
        }
        if (!resumed) {
            note(r, fmt::format("{}: keepalives never resumed", target));
        } else if (!back_at || *back_at > *resumed + interval + probe_every) {
            note(r, fmt::format("{}: resumed {}us, back in discovery at {}", target, resumed->count(),
                                back_at ? std::to_string(back_at->count()) + "us" : std::string("never")));
        }
    }
    return r;
}

}  // namespace checks

std::vector<CheckResult> check_bundle(const Bundle& b) {
    std::vector<CheckResult> out;
    const auto& logs = b.scenario.core.logs;
    const bool stable = !has_faults(b.scenario) && !has_autoscale(b.scenario);
    if (logs.routing && logs.events) out.push_back(checks::cross_log(b));
    if (logs.routing && stable) out.push_back(checks::stickiness(b));
    if (logs.events) {
        out.push_back(checks::latency_complete(b));
        out.push_back(checks::one_outstanding(b));
        out.push_back(checks::crash_equivalence(b));
        out.push_back(checks::startup_order(b));
        if (b.scenario.workload.collide && stable) out.push_back(checks::collision_same_amf(b));
        bool silence = false;
        for (const auto& a : b.scenario.faults.actions) silence = silence || a.type == FaultType::SilenceKeepalive;
        if (silence && !b.scenario.probes.empty()) out.push_back(checks::keepalive_circulation(b));
    }
    out.push_back(checks::p3_stateless(b));
    if (logs.store) {
        out.push_back(checks::block_disjointness(b));
        out.push_back(checks::expiry_redistribution(b));
        out.push_back(checks::single_owner(b));
    }
    return out;
}

void require_clean(const std::vector<CheckResult>& results) {
    std::vector<CheckResult> failed;
    for (const auto& r : results) {
        if (!r.ok()) failed.push_back(r);
    }
    if (!failed.empty()) throw InvariantViolation(std::move(failed));
}

}  // namespace sbacore
