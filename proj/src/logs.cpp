#include "sbacore/logs.hpp"

#include <fmt/format.h>

#include <charconv>
#include <nlohmann/json.hpp>

namespace sbacore {

std::string_view to_string(Outcome o) {
    switch (o) {
        case Outcome::Completed: return "completed";
        case Outcome::Escalated: return "escalated";
        case Outcome::Aborted: return "aborted";
    }
    return "completed";
}

Outcome outcome_from_string(std::string_view s) {
    if (s == "completed") return Outcome::Completed;
    if (s == "escalated") return Outcome::Escalated;
    if (s == "aborted") return Outcome::Aborted;
    throw std::invalid_argument("unknown outcome: " + std::string(s));
}

std::string supi_of(std::uint32_t ue) { return fmt::format("imsi-{:010}", ue); }

std::uint32_t ue_of(std::string_view supi) {
    std::uint32_t v = 0;
    if (supi.size() > 5) std::from_chars(supi.data() + 5, supi.data() + supi.size(), v);
    return v;
}

namespace {

// Minimal escaping; identifiers and details here never carry control characters.
std::string esc(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

}  // namespace

void LogSink::routing(Micros t, const ControlMessage& msg, std::string_view supi, NfKind kind,
                      const InstanceId& router, const InstanceId& chosen, std::string_view reason) {
    if (!flags_.routing) return;
    routing_.push_back(fmt::format(
        "{{\"t\":{},\"msg_id\":{},\"attempt\":{},\"supi\":\"{}\",\"kind\":\"{}\",\"router\":\"{}\",\"chosen\":\"{}\","
        "\"reason\":\"{}\"}}",
        t.count(), msg.msg_id, msg.attempt, esc(supi), to_string(kind), router.str(), chosen.str(), reason));
}

void LogSink::event(Micros t, std::string_view instance, std::string_view action, const ControlMessage* msg,
                    std::string_view detail) {
    if (!flags_.events) return;
    if (msg) {
        events_.push_back(fmt::format(
            "{{\"t\":{},\"instance\":\"{}\",\"action\":\"{}\",\"msg_id\":{},\"attempt\":{},\"type\":\"{}\","
            "\"event\":\"{}\",\"supi\":\"{}\",\"seq\":{},\"step\":{},\"from\":\"{}\",\"detail\":\"{}\"}}",
            t.count(), instance, action, msg->msg_id, msg->attempt, to_string(msg->type), to_string(msg->event.type),
            esc(msg->ue.supi), msg->seq, msg->step, msg->sender.str(), esc(detail)));
    } else {
        events_.push_back(fmt::format("{{\"t\":{},\"instance\":\"{}\",\"action\":\"{}\",\"detail\":\"{}\"}}",
                                      t.count(), instance, action, esc(detail)));
    }
}

void LogSink::event(Micros t, std::string_view instance, std::string_view action, std::string_view supi,
                    std::uint64_t seq, std::string_view detail) {
    if (!flags_.events) return;
    events_.push_back(
        fmt::format("{{\"t\":{},\"instance\":\"{}\",\"action\":\"{}\",\"supi\":\"{}\",\"seq\":{},\"detail\":\"{}\"}}",
                    t.count(), instance, action, esc(supi), seq, esc(detail)));
}

void LogSink::lifecycle(Micros t, std::string_view instance, std::string_view action, std::string_view detail) {
    events_.push_back(fmt::format("{{\"t\":{},\"instance\":\"{}\",\"action\":\"{}\",\"detail\":\"{}\"}}", t.count(),
                                  instance, action, esc(detail)));
}

std::string latency_line(const LatencyRecord& r) {
    return fmt::format(
        "{{\"supi\":\"{}\",\"event\":\"{}\",\"direction\":\"{}\",\"t_start\":{},\"t_end\":{},\"retries\":{},"
        "\"outcome\":\"{}\",\"seq_first\":{},\"seq_last\":{},\"store_ops\":{}}}",
        supi_of(r.ue), to_string(r.event), to_string(r.direction), r.t_start.count(), r.t_end.count(), r.retries,
        to_string(r.outcome), r.seq_first, r.seq_last, r.store_ops);
}

LatencyRecord parse_latency_line(std::string_view line) {
    auto j = nlohmann::json::parse(line);
    LatencyRecord r;
    r.ue = ue_of(j.at("supi").get<std::string>());
    r.event = event_type_from_string(j.at("event").get<std::string>());
    r.direction = j.at("direction").get<std::string>() == "down" ? Direction::Downstream : Direction::Upstream;
    r.t_start = Micros(j.at("t_start").get<std::int64_t>());
    r.t_end = Micros(j.at("t_end").get<std::int64_t>());
    r.retries = j.at("retries").get<std::uint32_t>();
    r.outcome = outcome_from_string(j.at("outcome").get<std::string>());
    r.seq_first = j.at("seq_first").get<std::uint64_t>();
    r.seq_last = j.at("seq_last").get<std::uint64_t>();
    r.store_ops = j.at("store_ops").get<std::uint32_t>();
    return r;
}

std::string metric_line(const MetricSample& s) {
    nlohmann::json labels = nlohmann::json::object();
    for (const auto& [k, v] : s.labels) labels[k] = v;
    return fmt::format("{{\"t\":{},\"series\":\"{}\",\"labels\":{},\"value\":{}}}", s.t.count(), s.series,
                       labels.dump(), s.value);
}

MetricSample parse_metric_line(std::string_view line) {
    auto j = nlohmann::json::parse(line);
    MetricSample s;
    s.t = Micros(j.at("t").get<std::int64_t>());
    s.series = j.at("series").get<std::string>();
    for (const auto& [k, v] : j.at("labels").items()) s.labels.emplace_back(k, v.get<std::string>());
    s.value = j.at("value").get<double>();
    return s;
}

}  // namespace sbacore
