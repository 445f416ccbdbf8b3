#include "sbacore/emulator.hpp"
#include "sbacore/services.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace sbacore {

std::uint32_t steps_of(EventType type) {
    return static_cast<std::uint32_t>(flow_for(EventKind{type, Direction::Upstream}).messages.size());
}

IatTrace IatTrace::parse(std::string_view jsonl) {
    IatTrace t;
    std::istringstream in{std::string(jsonl)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = nlohmann::json::parse(line);
        auto type = event_type_from_string(j.at("event").get<std::string>());
        double v = j.at("iat_ms").get<double>();
        if (!(v > 0.0)) throw std::invalid_argument(fmt::format("non-positive iat_ms: {}", v));
        t.iat_ms[type].push_back(v);
    }
    return t;
}

IatTrace IatTrace::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string IatTrace::to_jsonl() const {
    std::string out;
    for (const auto& [type, values] : iat_ms) {
        for (double v : values) out += fmt::format("{{\"event\":\"{}\",\"iat_ms\":{}}}\n", to_string(type), v);
    }
    return out;
}

bool IatTrace::empty() const {
    for (const auto& [type, values] : iat_ms) {
        if (!values.empty()) return false;
    }
    return true;
}

IatTrace synthetic_trace(std::uint64_t seed, std::size_t per_kind) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double alpha = 1.5;
    IatTrace t;
    for (auto [type, scale] : {std::pair{EventType::Registration, 500.0}, std::pair{EventType::PduEstablish, 200.0},
                               std::pair{EventType::ServiceRequest, 50.0}}) {
        auto& out = t.iat_ms[type];
        for (std::size_t i = 0; i < per_kind; ++i) {
            double x = scale / std::pow(1.0 - u(rng), 1.0 / alpha);
            out.push_back(std::round(std::min(x, scale * 200.0) * 1000.0) / 1000.0);
        }
    }
    return t;
}

std::optional<EventType> UeProfile::at(std::uint64_t index) const {
    if (events.empty()) return std::nullopt;
    const auto n = events.size();
    if (index < n) return events[index];
    const auto extra = index - n;
    switch (repeat) {
        case RepeatMode::None: return std::nullopt;
        case RepeatMode::Last:
            if (repeat_count != 0 && extra >= repeat_count) return std::nullopt;
            return events.back();
        case RepeatMode::Cycle:
            if (repeat_count != 0 && extra / n >= repeat_count) return std::nullopt;
            return events[extra % n];
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------------------------

Emulator::Emulator(Core& core, WorkloadConfig cfg) : core_(core), cfg_(std::move(cfg)) {
    if (cfg_.n_ues == 0) throw std::invalid_argument("workload needs at least one UE");
    agents_.reserve(cfg_.n_ues);
    for (std::uint32_t k = 1; k <= cfg_.n_ues; ++k) agents_.push_back(std::make_unique<UeAgent>(*this, core_, k));
}

Emulator::~Emulator() = default;

void Emulator::start() {
    for (auto& a : agents_) {
        Micros at{0};
        if (cfg_.ramp_per_s > 0.0) {
            at = Micros(static_cast<std::int64_t>(std::llround((a->ue() - 1) / cfg_.ramp_per_s * 1e6)));
        }
        auto* agent = a.get();
        core_.exec().schedule_at(core_.now() + at, [this, agent] {
            if (!stopped_) agent->start();
        });
    }
}

void Emulator::stop() { stopped_ = true; }

bool Emulator::idle() const { return active() == 0; }

std::size_t Emulator::active() const {
    std::size_t n = 0;
    for (const auto& a : agents_) n += a->in_episode() ? 1 : 0;
    return n;
}

UeAgent& Emulator::agent(std::uint32_t ue) { return *agents_.at(ue - 1); }
const UeAgent& Emulator::agent(std::uint32_t ue) const { return *agents_.at(ue - 1); }

void Emulator::inject_downstream(std::uint32_t ue) { agent(ue).inject_downstream(); }

// ---------------------------------------------------------------------------------------------

UeAgent::UeAgent(Emulator& emu, Core& core, std::uint32_t ue)
    : emu_(emu),
      core_(core),
      ue_(ue),
      supi_(supi_of(ue)),
      id_{NfKind::Ran, ue},
      name_(id_.str()),
      ep_(std::make_shared<Endpoint>(id_)) {
    std::seed_seq seq{static_cast<std::uint32_t>(emu.config().seed), static_cast<std::uint32_t>(emu.config().seed >> 32),
                      ue};
    rng_.seed(seq);
    ep_->set_on_enqueue([this, tok = token_] {
        if (!*tok || wake_pending_) return;
        auto head = ep_->head_ready_at();
        if (!head) return;
        wake_pending_ = true;
        core_.exec().schedule_at(std::max(*head, core_.now()), [this, tok] {
            if (*tok) on_message();
        });
    });
    core_.fabric().register_endpoint(ep_);
}

UeAgent::~UeAgent() {
    *token_ = false;
    ep_->set_on_enqueue({});
}

void UeAgent::log(std::string_view action, const ControlMessage* msg, std::string_view detail) {
    core_.logs().event(core_.now(), name_, action, msg, detail);
}

void UeAgent::log_seq(std::string_view action, std::uint64_t seq, std::string_view detail) {
    core_.logs().event(core_.now(), name_, action, supi_, seq, detail);
}

void UeAgent::on_message() {
    wake_pending_ = false;
    while (auto m = ep_->pop_ready(core_.now())) handle(*m);
    if (auto head = ep_->head_ready_at()) {
        wake_pending_ = true;
        core_.exec().schedule_at(std::max(*head, core_.now()), [this, tok = token_] {
            if (*tok) on_message();
        });
    }
}

void UeAgent::handle(const ControlMessage& m) {
    log("recv", &m);
    switch (m.type) {
        case MsgType::UeResponse: on_response(m); return;
        case MsgType::Nack: on_nack(m); return;
        case MsgType::Paging: on_paging(); return;
        default: return;
    }
}

void UeAgent::start() {
    if (started_) return;
    started_ = true;
    log("ue_start");
    next_event();
    schedule_downstream();
}

void UeAgent::schedule_downstream() {
    double rate = emu_.config().downstream_per_s;
    if (rate <= 0.0) return;
    std::exponential_distribution<double> d(rate);
    auto delay = Micros(std::max<std::int64_t>(1, static_cast<std::int64_t>(d(rng_) * 1e6)));
    core_.exec().schedule_after(delay, [this, tok = token_] {
        if (!*tok || emu_.stopped()) return;
        inject_downstream();
        schedule_downstream();
    });
}

void UeAgent::inject_downstream() { core_.upf().notify(supi_, ip_); }

Micros UeAgent::gap_before(EventType next) {
    const auto& trace = emu_.config().trace;
    if (trace) {
        auto it = trace->iat_ms.find(next);
        if (it != trace->iat_ms.end() && !it->second.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, it->second.size() - 1);
            return Micros(static_cast<std::int64_t>(std::llround(it->second[pick(rng_)] * 1000.0)));
        }
    }
    return emu_.config().profile.gap;
}

void UeAgent::schedule_next(Micros delay) {
    next_timer_ = core_.exec().schedule_after(delay, [this, tok = token_] {
        if (!*tok) return;
        next_timer_.reset();
        next_event();
    });
}

void UeAgent::next_event() {
    if (emu_.stopped() || episode_) return;
    auto ev = emu_.config().profile.at(cursor_);
    if (!ev) return;
    begin_episode(*ev, Direction::Upstream, true);
}

void UeAgent::begin_episode(EventType type, Direction dir, bool from_profile) {
    Episode e;
    e.original = type;
    e.direction = dir;
    e.level = base_level(type);
    e.chain = recovery_chain(e.level, type);
    e.t_start = core_.now();
    e.seq_first = next_seq_;
    e.from_profile = from_profile;
    episode_ = std::move(e);
    log("episode_start", nullptr, fmt::format("{}/{}", to_string(type), to_string(dir)));
    start_chain_event();
}

void UeAgent::start_chain_event() {
    auto& e = *episode_;
    auto type = e.chain[e.chain_pos];
    auto dir = (e.chain_pos + 1 == e.chain.size() && type == e.original) ? e.direction : Direction::Upstream;
    begin_exchange(EventKind{type, dir}, next_seq_++, false);
}

std::uint64_t UeAgent::last_completed_before(std::uint64_t seq) const {
    if (seq > last_completed_) return last_completed_;
    std::uint64_t best = 0;
    for (const auto& c : completed_) {
        if (c.seq < seq) best = std::max(best, c.seq);
    }
    return best;
}

void UeAgent::begin_exchange(EventKind ev, std::uint64_t seq, bool replay) {
    Exchange x;
    x.event = ev;
    x.seq = seq;
    x.prior = last_completed_before(seq);
    x.step = 1;
    x.msg_id = core_.next_msg_id();
    x.replay = replay;
    exchange_ = x;
    transmit();
    arm_timer();
    if (emu_.config().collide && !replay && ev.type == EventType::ServiceRequest && ev.direction == Direction::Upstream) {
        std::uniform_int_distribution<std::int64_t> jitter(0, 999);
        core_.exec().schedule_after(Micros(jitter(rng_)), [this, tok = token_] {
            if (*tok) inject_downstream();
        });
    }
}

void UeAgent::transmit() {
    const auto& x = *exchange_;
    ControlMessage m;
    m.msg_id = x.msg_id;
    m.channel = Channel::SctpSim;
    m.type = MsgType::UeRequest;
    m.event = x.event;
    m.ue = UeRef{ngap_ == 0 ? supi_ : std::string(), ngap_, ip_};
    m.seq = x.seq;
    m.step = x.step;
    m.prior_seq = x.prior;
    m.sender = id_;
    m.receiver = NfKind::Gateway;
    m.origin = id_;
    m.attempt = x.attempt;
    log("send", &m);
    core_.fabric().send(m, core_.gateway_id());
}

void UeAgent::arm_timer() {
    if (timer_) core_.exec().cancel(*timer_);
    auto timeout = core_.config().ladder.at(episode_->level).timeout;
    timer_ = core_.exec().schedule_after(timeout, [this, tok = token_] {
        if (!*tok) return;
        timer_.reset();
        on_timeout();
    });
}

void UeAgent::on_timeout() {
    if (!episode_ || !exchange_) return;
    auto& e = *episode_;
    ++e.retries_done;
    ++e.total_retries;
    log_seq("timeout", exchange_->seq, to_string(e.level));
    auto next = escalate(core_.config().ladder, e.level, e.retries_done);
    if (auto* level = std::get_if<TimerLevel>(&next); level && *level == e.level) {
        ++exchange_->attempt;
        transmit();
        arm_timer();
        return;
    }
    if (!exchange_->replay) abandoned_[exchange_->seq] = exchange_->event.type;
    if (std::holds_alternative<Abort>(next)) {
        log_seq("abort", exchange_->seq);
        ++aborts_;
        ngap_ = 0;
        ip_.reset();
        cursor_ = 0;
        end_episode(Outcome::Aborted);
        return;
    }
    e.level = std::get<TimerLevel>(next);
    e.retries_done = 0;
    e.escalated = true;
    e.replays.clear();
    e.chain = recovery_chain(e.level, e.original);
    e.chain_pos = 0;
    log_seq("escalate", exchange_->seq, to_string(e.level));
    start_chain_event();
}

void UeAgent::on_response(const ControlMessage& m) {
    if (exchange_ && m.seq == exchange_->seq && m.step == exchange_->step) {
        auto& x = *exchange_;
        if (m.ue.ngap_id != 0) ngap_ = m.ue.ngap_id;
        if (m.ue.ip_index && x.event.type != EventType::Registration) ip_ = m.ue.ip_index;
        episode_->retries_done = 0;
        if (x.step < steps_of(x.event.type)) {
            ++x.step;
            x.msg_id = core_.next_msg_id();
            x.attempt = 1;
            transmit();
            arm_timer();
            return;
        }
        if (timer_) {
            core_.exec().cancel(*timer_);
            timer_.reset();
        }
        event_completed(x);
        return;
    }
    auto it = abandoned_.find(m.seq);
    if (it != abandoned_.end() && m.step == steps_of(it->second) && m.aux == m.seq) {
        completed_.push_back(CompletedEvent{m.seq, it->second});
        last_completed_ = std::max(last_completed_, m.seq);
        log_seq("complete", m.seq, fmt::format("{} late", to_string(it->second)));
        abandoned_.erase(it);
    }
}

void UeAgent::event_completed(const Exchange& done) {
    Exchange x = done;
    auto& e = *episode_;
    if (x.replay) {
        log_seq("replayed", x.seq, to_string(x.event.type));
        if (!e.replays.empty()) e.replays.erase(e.replays.begin());
        if (!e.replays.empty()) {
            auto r = e.replays.front();
            begin_exchange(EventKind{r.event, Direction::Upstream}, r.seq, true);
            return;
        }
        // Resume the interrupted event; its seq is the one above the replayed ones.
        auto type = e.chain[e.chain_pos];
        auto dir = (e.chain_pos + 1 == e.chain.size() && type == e.original) ? e.direction : Direction::Upstream;
        begin_exchange(EventKind{type, dir}, next_seq_ - 1, false);
        return;
    }
    completed_.push_back(CompletedEvent{x.seq, x.event.type});
    last_completed_ = std::max(last_completed_, x.seq);
    if (x.event.type == EventType::Registration) ip_.reset();
    log_seq("complete", x.seq, to_string(x.event.type));
    ++e.chain_pos;
    if (e.chain_pos < e.chain.size()) {
        start_chain_event();
        return;
    }
    end_episode(e.escalated ? Outcome::Escalated : Outcome::Completed);
}

void UeAgent::on_nack(const ControlMessage& m) {
    if (!exchange_ || m.seq != exchange_->seq || m.step != exchange_->step) return;
    auto& x = *exchange_;
    switch (m.status) {
        case Status::ProcedureLost:
            log_seq("restart", x.seq, to_string(m.status));
            x.step = 1;
            x.msg_id = core_.next_msg_id();
            x.attempt = 1;
            transmit();
            arm_timer();
            return;
        case Status::StateLost: {
            std::vector<CompletedEvent> replay;
            for (const auto& c : completed_) {
                if (c.seq > m.aux && c.seq < x.seq) replay.push_back(c);
            }
            std::sort(replay.begin(), replay.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
            if (replay.empty()) {
                if (timer_) {
                    core_.exec().cancel(*timer_);
                    timer_.reset();
                }
                on_timeout();
                return;
            }
            log_seq("replay", x.seq, fmt::format("from {}", m.aux));
            episode_->replays = replay;
            auto r = replay.front();
            begin_exchange(EventKind{r.event, Direction::Upstream}, r.seq, true);
            return;
        }
        case Status::IllegalTransition:
            log_seq("rejected", x.seq, to_string(m.status));
            if (timer_) {
                core_.exec().cancel(*timer_);
                timer_.reset();
            }
            on_timeout();
            return;
        default: return;
    }
}

void UeAgent::on_paging() {
    if (episode_) {
        paging_pending_ = true;
        return;
    }
    if (next_timer_) {
        core_.exec().cancel(*next_timer_);
        next_timer_.reset();
    }
    begin_episode(EventType::ServiceRequest, Direction::Downstream, false);
}

void UeAgent::end_episode(Outcome outcome) {
    if (timer_) {
        core_.exec().cancel(*timer_);
        timer_.reset();
    }
    auto e = std::move(*episode_);
    episode_.reset();
    exchange_.reset();
    LatencyRecord rec;
    rec.ue = ue_;
    rec.event = e.original;
    rec.direction = e.direction;
    rec.t_start = e.t_start;
    rec.t_end = core_.now();
    rec.retries = e.total_retries;
    rec.outcome = outcome;
    rec.seq_first = e.seq_first;
    rec.seq_last = next_seq_ - 1;
    core_.logs().latency(rec);
    log("episode_end", nullptr, to_string(outcome));
    if (e.from_profile && outcome != Outcome::Aborted) ++cursor_;
    if (emu_.stopped()) return;
    if (paging_pending_) {
        paging_pending_ = false;
        if (e.original != EventType::ServiceRequest || outcome == Outcome::Aborted) {
            begin_episode(EventType::ServiceRequest, Direction::Downstream, false);
            return;
        }
    }
    auto next = emu_.config().profile.at(cursor_);
    if (!next) return;
    schedule_next(gap_before(*next));
}

}  // namespace sbacore
