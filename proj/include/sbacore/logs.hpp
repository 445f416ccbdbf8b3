#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sbacore/model.hpp"
#include "sbacore/transport.hpp"

namespace sbacore {

struct LogFlags {
    bool routing = true;
    bool events = true;
    bool store = true;      // DRSM store operations
    bool ue_store = false;  // UE context store operations (large)
};

enum class Outcome : std::uint8_t { Completed, Escalated, Aborted };

std::string_view to_string(Outcome o);
Outcome outcome_from_string(std::string_view s);

struct LatencyRecord {
    std::uint32_t ue = 0;
    EventType event = EventType::Registration;
    Direction direction = Direction::Upstream;
    Micros t_start{0};
    Micros t_end{0};
    std::uint32_t retries = 0;
    Outcome outcome = Outcome::Completed;
    std::uint64_t seq_first = 0;
    std::uint64_t seq_last = 0;
    std::uint32_t store_ops = 0;

    double latency_ms() const { return static_cast<double>((t_end - t_start).count()) / 1000.0; }
};

struct MetricSample {
    Micros t{0};
    std::string series;
    std::vector<std::pair<std::string, std::string>> labels;
    double value = 0.0;
};

std::string supi_of(std::uint32_t ue);
std::uint32_t ue_of(std::string_view supi);

// In-memory sinks for the five run logs. Lines are JSON, produced in execution order.
class LogSink {
public:
    explicit LogSink(LogFlags flags = {}) : flags_(flags) {}

    const LogFlags& flags() const { return flags_; }

    void routing(Micros t, const ControlMessage& msg, std::string_view supi, NfKind kind, const InstanceId& router,
                 const InstanceId& chosen, std::string_view reason);

    // Per-instance event log. `msg` may be null for actions not tied to a message.
    void event(Micros t, std::string_view instance, std::string_view action, const ControlMessage* msg = nullptr,
               std::string_view detail = {});
    void event(Micros t, std::string_view instance, std::string_view action, std::string_view supi,
               std::uint64_t seq, std::string_view detail = {});
    // Always recorded: lifecycle and fault actions needed by post-run checks.
    void lifecycle(Micros t, std::string_view instance, std::string_view action, std::string_view detail = {});

    void latency(const LatencyRecord& rec) { latency_.push_back(rec); }
    void metric(MetricSample s) { metrics_.push_back(std::move(s)); }

    const std::vector<std::string>& routing_lines() const { return routing_; }
    const std::vector<std::string>& event_lines() const { return events_; }
    std::vector<LatencyRecord>& latency_records() { return latency_; }
    const std::vector<LatencyRecord>& latency_records() const { return latency_; }
    const std::vector<MetricSample>& metrics() const { return metrics_; }

private:
    LogFlags flags_;
    std::vector<std::string> routing_;
    std::vector<std::string> events_;
    std::vector<LatencyRecord> latency_;
    std::vector<MetricSample> metrics_;
};

std::string latency_line(const LatencyRecord& r);
LatencyRecord parse_latency_line(std::string_view line);
std::string metric_line(const MetricSample& s);
MetricSample parse_metric_line(std::string_view line);

}  // namespace sbacore
