#include "sbacore/services.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <sstream>

namespace sbacore {

namespace {

std::vector<InstanceId> parse_id_list(std::string_view text) {
    std::vector<InstanceId> out;
    while (!text.empty()) {
        auto comma = text.find(',');
        auto item = text.substr(0, comma);
        if (!item.empty()) out.push_back(InstanceId::parse(item));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return out;
}

std::string join_ids(const std::vector<InstanceId>& ids) {
    std::string out;
    for (const auto& id : ids) {
        if (!out.empty()) out.push_back(',');
        out += id.str();
    }
    return out;
}

}  // namespace

Micros ServiceSpec::hop_cost(EventType type) const {
    auto points = handling_points(type, kind);
    if (points == 0) return Micros(0);
    double w = flow_for(EventKind{type, Direction::Upstream}).weight(kind);
    return Micros(static_cast<std::int64_t>(static_cast<double>(base_cost.count()) * w / points + 0.5));
}

ServiceSpec service_spec(NfKind kind, Micros base_cost) { return ServiceSpec{kind, pattern_of(kind), base_cost}; }

// ---------------------------------------------------------------------------------------------
// Instance

Instance::Instance(Core& core, InstanceId id)
    : core_(core),
      lb_(std::make_unique<UeLoadBalancer>(core.drsm(), view_)),
      id_(id),
      name_(id.str()),
      spec_(service_spec(id.kind, core.config().base_service)),
      ep_(std::make_shared<Endpoint>(id)) {
    ep_->set_on_enqueue([this, tok = token_] {
        if (*tok) schedule_wake();
    });
}

Instance::~Instance() {
    *token_ = false;
    ep_->set_on_enqueue({});
}

Micros Instance::now() const { return core_.now(); }

void Instance::after(Micros delay, std::function<void()> fn) {
    core_.exec().schedule_after(delay, [tok = token_, fn = std::move(fn)] {
        if (*tok) fn();
    });
}

std::vector<std::string> Instance::view_prefixes() const {
    return {std::string(keys::kInstancePrefix), std::string(keys::kOwnerPrefix), std::string(keys::kNrfPrefix)};
}

Load Instance::current_load() const { return Load{served_ues(), queue_depth()}; }

void Instance::log(std::string_view action, const ControlMessage* msg, std::string_view detail) {
    core_.logs().event(now(), name_, action, msg, detail);
}

void Instance::log_ue(std::string_view action, std::string_view supi, std::uint64_t seq, std::string_view detail) {
    core_.logs().event(now(), name_, action, supi, seq, detail);
}

void Instance::bring_up() {
    auto& drsm = core_.drsm();
    subs_ = attach_view(core_.drsm_store(), view_, view_prefixes());
    if (pattern_of(kind()) != Pattern::Stub) {
        InstanceRecord rec{id_, current_load(), now() + drsm.config().ttl, {}};
        drsm.register_instance(rec);
        core_.logs().lifecycle(now(), name_, "drsm_register");
        if (auto pool = pool_for(kind())) {
            auto block = drsm.claim_block(*pool, drsm.config().block_size, id_);
            blocks_.push_back(block);
            core_.logs().lifecycle(now(), name_, "claim_block",
                                   fmt::format("{}:{}+{}", to_string(*pool), block.start, block.len));
        }
        if (kind() != NfKind::Nrf) {
            core_.nrf().register_nf(id_);
            core_.logs().lifecycle(now(), name_, "nrf_register");
        }
    }
    ready_ = true;
    core_.logs().lifecycle(now(), name_, "ready");
    if (pattern_of(kind()) != Pattern::Stub) {
        after(drsm.config().heartbeat, [this] { heartbeat(); });
        if (kind() != NfKind::Nrf) after(core_.config().keepalive_interval, [this] { keepalive(); });
    }
    on_ready();
    schedule_wake();
}

void Instance::heartbeat() {
    if (!alive_ || draining_) return;
    try {
        core_.drsm().publish_load(id_, current_load());
    } catch (const UnknownInstance&) {
        InstanceRecord rec{id_, current_load(), now() + core_.drsm().config().ttl, blocks_};
        core_.drsm().register_instance(rec);
        core_.logs().lifecycle(now(), name_, "drsm_reregister");
    }
    after(core_.drsm().config().heartbeat, [this] { heartbeat(); });
}

void Instance::keepalive() {
    if (!alive_ || draining_) return;
    if (now() >= silenced_until_) {
        auto msg = make(MsgType::Keepalive, Channel::Sbi, NfKind::Nrf);
        send_now(msg, core_.nrf_id());
    }
    after(core_.config().keepalive_interval, [this] { keepalive(); });
}

void Instance::crash() {
    alive_ = false;
    ready_ = false;
    busy_ = false;
    *token_ = false;
    subs_.clear();
    outbox_.clear();
    on_crash();
}

void Instance::begin_drain() {
    draining_ = true;
    if (auto* c = cache()) {
        try {
            c->flush_fence();
        } catch (const StoreUnavailable&) {
        }
    }
    try {
        core_.drsm().deregister_instance(id_);
    } catch (const UnknownInstance&) {
    }
    if (kind() != NfKind::Nrf) core_.nrf().deregister_nf(id_);
    core_.logs().lifecycle(now(), name_, "drain");
}

bool Instance::finish_drain() {
    if (auto* c = cache()) {
        try {
            c->flush_fence();
        } catch (const StoreUnavailable&) {
            return false;
        }
    }
    alive_ = false;
    ready_ = false;
    *token_ = false;
    subs_.clear();
    core_.logs().lifecycle(now(), name_, "removed");
    return true;
}

double Instance::utilization(Micros window) const {
    Micros end = now();
    Micros start = end - window;
    Micros busy{0};
    for (const auto& [b, e] : busy_log_) {
        auto lo = std::max(b, start);
        auto hi = std::min(e, end);
        if (hi > lo) busy += hi - lo;
    }
    if (busy_) {
        auto lo = std::max(busy_start_, start);
        if (end > lo) busy += end - lo;
    }
    if (window.count() <= 0) return 0.0;
    return std::min(1.0, static_cast<double>(busy.count()) / static_cast<double>(window.count()));
}

void Instance::schedule_wake() {
    if (!alive_ || !ready_ || busy_) return;
    auto head = ep_->head_ready_at();
    if (!head) return;
    Micros at = std::max(*head, now());
    if (wake_pending_) {
        if (wake_at_ <= at) return;
        core_.exec().cancel(wake_task_);
    }
    wake_pending_ = true;
    wake_at_ = at;
    wake_task_ = core_.exec().schedule_at(at, [this, tok = token_] {
        if (!*tok) return;
        wake_pending_ = false;
        process();
    });
}

void Instance::process() {
    if (!alive_ || !ready_ || busy_) return;
    auto msg = ep_->pop_ready(now());
    if (!msg) {
        schedule_wake();
        return;
    }
    busy_ = true;
    busy_start_ = now();
    cost_ = Micros(0);
    outbox_.clear();
    ++handled_;
    log("recv", &*msg);
    auto before = store_ops();
    try {
        if (msg->type == MsgType::Keepalive && msg->status == Status::Unavailable) {
            charge(core_.config().control_cost);
            if (!draining_) {
                core_.nrf().register_nf(id_);
                core_.logs().lifecycle(now(), name_, "nrf_reregister");
            }
        } else {
            handle(*msg);
        }
    } catch (const std::exception& e) {
        log("error", &*msg, e.what());
    }
    cost_ += Micros(static_cast<std::int64_t>(store_ops() - before) * core_.config().store_latency.count());
    core_.exec().schedule_after(cost_, [this, tok = token_] {
        if (*tok) complete();
    });
}

void Instance::complete() {
    busy_log_.emplace_back(busy_start_, now());
    while (!busy_log_.empty() && busy_log_.front().second < now() - seconds(5)) busy_log_.pop_front();
    auto out = std::move(outbox_);
    outbox_.clear();
    busy_ = false;
    for (auto& o : out) dispatch(std::move(o));
    if (!alive_) return;
    process();
}

ControlMessage Instance::make(MsgType type, Channel channel, NfKind receiver) {
    ControlMessage m;
    m.msg_id = core_.next_msg_id();
    m.channel = channel;
    m.type = type;
    m.sender = id_;
    m.receiver = receiver;
    m.origin = id_;
    return m;
}

ControlMessage Instance::reply_to(const ControlMessage& req, MsgType type) {
    ControlMessage m = make(type, req.channel, req.sender.kind);
    m.event = req.event;
    m.ue = req.ue;
    m.seq = req.seq;
    m.step = req.step;
    m.prior_seq = req.prior_seq;
    m.origin = req.origin;
    m.aux = req.aux;
    return m;
}

void Instance::emit(ControlMessage msg, const InstanceId& to) { outbox_.push_back(Outgoing{std::move(msg), to, {}, {}, {}}); }

bool Instance::emit_routed(ControlMessage msg, NfKind kind, const std::string& supi, const std::set<InstanceId>& avoid) {
    try {
        auto d = lb_->route(kind, supi, avoid);
        core_.logs().routing(now(), msg, supi, kind, id_, d.target, to_string(d.reason));
        outbox_.push_back(Outgoing{std::move(msg), d.target, kind, supi, avoid});
        return true;
    } catch (const NoLiveInstance&) {
        on_unroutable(msg, kind);
        return false;
    }
}

SendResult Instance::send_now(ControlMessage msg, const InstanceId& to) { return core_.fabric().send(std::move(msg), to); }

void Instance::dispatch(Outgoing out) {
    for (int tries = 0;; ++tries) {
        auto res = core_.fabric().send(out.msg, out.to);
        if (res.ok()) return;
        view_.mark_suspect(out.to);
        if (!out.routed_kind || tries >= 3 || !alive_) {
            on_delivery_failed(out.msg, out.to);
            return;
        }
        out.avoid.insert(out.to);
        try {
            auto d = lb_->route(*out.routed_kind, out.supi, out.avoid);
            core_.logs().routing(now(), out.msg, out.supi, *out.routed_kind, id_, d.target, to_string(d.reason));
            out.to = d.target;
        } catch (const NoLiveInstance&) {
            on_unroutable(out.msg, *out.routed_kind);
            return;
        }
    }
}

void Instance::on_unroutable(const ControlMessage& msg, NfKind kind) { log("unroutable", &msg, to_string(kind)); }

void Instance::on_delivery_failed(const ControlMessage& msg, const InstanceId& to) {
    log("delivery_failed", &msg, to.str());
}

// ---------------------------------------------------------------------------------------------
// Gateway

std::vector<std::string> Gateway::view_prefixes() const {
    return {std::string(keys::kInstancePrefix), std::string(keys::kOwnerPrefix), std::string(keys::kBindPrefix),
            std::string(keys::kNrfPrefix)};
}

void Gateway::handle(const ControlMessage& m) {
    charge(core_.config().gateway_cost);
    switch (m.type) {
        case MsgType::UeRequest: ingest_sctp(m); return;
        case MsgType::DownlinkNotify: ingest_pfcp(m); return;
        case MsgType::UeResponse:
        case MsgType::Nack:
        case MsgType::Paging: {
            ControlMessage fwd = m;
            fwd.channel = Channel::SctpSim;
            fwd.sender = id();
            fwd.receiver = NfKind::Ran;
            emit(std::move(fwd), InstanceId{NfKind::Ran, ue_of(m.ue.supi)});
            return;
        }
        case MsgType::DownlinkAck: {
            ControlMessage fwd = m;
            fwd.channel = Channel::PfcpSim;
            fwd.sender = id();
            fwd.receiver = NfKind::Upf;
            emit(std::move(fwd), core_.upf_id());
            return;
        }
        default: log("unexpected", &m); return;
    }
}

void Gateway::ingest_sctp(const ControlMessage& m) {
    std::string supi;
    try {
        supi = lb_->extract_ue_key(m);
    } catch (const UnknownNgapId&) {
        if (parked_.insert({m.msg_id, m.attempt}).second) {
            log("park", &m, "unknown_ngap");
            after(core_.config().feed_latency * 2, [this, m] { endpoint()->push(m, now()); });
        } else {
            log("drop", &m, "unknown_ngap");
        }
        return;
    }
    ControlMessage fwd = m;
    fwd.channel = Channel::Sbi;
    fwd.sender = id();
    fwd.receiver = NfKind::Amf;
    fwd.ue.supi = supi;
    emit_routed(std::move(fwd), NfKind::Amf, supi);
}

void Gateway::ingest_pfcp(const ControlMessage& m) {
    std::string supi;
    try {
        supi = lb_->extract_ue_key(m);
    } catch (const UnknownIpIndex&) {
        if (parked_.insert({m.msg_id, m.attempt}).second) {
            log("park", &m, "unknown_ip");
            after(core_.config().feed_latency * 2, [this, m] { endpoint()->push(m, now()); });
        } else {
            log("drop", &m, "unknown_ip");
        }
        return;
    }
    ControlMessage fwd = m;
    fwd.channel = Channel::Sbi;
    fwd.sender = id();
    fwd.receiver = NfKind::Smf;
    fwd.ue.supi = supi;
    emit_routed(std::move(fwd), NfKind::Smf, supi);
}

void Gateway::on_unroutable(const ControlMessage& msg, NfKind kind) {
    auto key = next_hold_++;
    held_.emplace(key, Held{msg, kind, 0});
    log("hold", &msg, to_string(kind));
    after(core_.config().gateway_retry, [this, key] { retry_held(key); });
}

void Gateway::retry_held(std::uint64_t key) {
    auto it = held_.find(key);
    if (it == held_.end()) return;
    auto& h = it->second;
    std::set<InstanceId> avoid;
    for (int tries = 0; tries < 3; ++tries) {
        try {
            auto d = lb_->route(h.kind, h.msg.ue.supi, avoid);
            core_.logs().routing(now(), h.msg, h.msg.ue.supi, h.kind, id(), d.target, to_string(d.reason));
            if (send_now(h.msg, d.target).ok()) {
                held_.erase(it);
                return;
            }
            view_.mark_suspect(d.target);
            avoid.insert(d.target);
        } catch (const NoLiveInstance&) {
            break;
        }
    }
    if (++h.tries >= core_.config().gateway_max_holds) {
        log("drop", &h.msg, "held_too_long");
        held_.erase(it);
        return;
    }
    after(core_.config().gateway_retry, [this, key] { retry_held(key); });
}

// ---------------------------------------------------------------------------------------------
// AMF

Amf::Amf(Core& core, InstanceId id)
    : Instance(core, id), cache_(core.ue_store(), core.exec(), core.config().cache, CacheMode::WriteBehind) {}

std::uint64_t Amf::store_ops() const {
    const auto& c = cache_.counters();
    return c.reads + c.sync_writes;
}

bool Amf::quiescent() const {
    if (!Instance::quiescent()) return false;
    for (const auto& [supi, p] : procs_) {
        if (!p.done) return false;
    }
    return true;
}

void Amf::on_crash() {
    cache_.drop();
    procs_.clear();
    downlinks_.clear();
    paging_.clear();
}

void Amf::on_unroutable(const ControlMessage& msg, NfKind kind) { log("unroutable", &msg, to_string(kind)); }

std::optional<UeContext> Amf::load(const std::string& supi, std::uint64_t seq) {
    try {
        return cache_.get_or_load(supi, seq);
    } catch (const StoreUnavailable&) {
        log_ue("store_unavailable", supi, seq);
        return std::nullopt;
    }
}

void Amf::handle(const ControlMessage& m) {
    switch (m.type) {
        case MsgType::UeRequest: on_ue_request(m); return;
        case MsgType::SbiResponse:
        case MsgType::DiscoverResponse: on_sbi_response(m); return;
        case MsgType::DownlinkNotify: on_downlink(m); return;
        default: charge(core_.config().control_cost); log("unexpected", &m); return;
    }
}

void Amf::on_ue_request(const ControlMessage& m) {
    charge_hop(m.event.type);
    const auto& supi = m.ue.supi;
    auto loaded = load(supi, m.seq);
    if (!loaded) return;
    UeContext ctx = *loaded;

    auto it = procs_.find(supi);
    if (it != procs_.end() && it->second.seq == m.seq) {
        Proc& p = it->second;
        if (m.step == p.step) {
            p.ue_msg = m;
            if (p.done) {
                respond(m, ctx, p.ngap, p.ip);
            } else {
                redrive(p);
            }
            return;
        }
        if (m.step == p.step + 1 && p.done) {
            p.step = m.step;
            p.stage = 0;
            p.done = false;
            p.ue_msg = m;
            p.outstanding.reset();
            p.outstanding_kind.reset();
            advance(p, ctx, nullptr);
            return;
        }
        if (m.step < p.step) {
            respond(m, ctx, p.ngap, p.ip);
            return;
        }
        nack(m, Status::ProcedureLost);
        return;
    }

    if (m.seq <= ctx.last_event_seq) {
        respond(m, ctx, ctx.id.ngap_id, ctx.id.ip_index);
        return;
    }
    if (m.step != 1) {
        nack(m, Status::ProcedureLost);
        return;
    }
    if (m.prior_seq > ctx.last_event_seq) {
        nack(m, Status::StateLost, ctx.last_event_seq);
        return;
    }
    if (!is_legal(ctx, m.event)) {
        nack(m, Status::IllegalTransition);
        return;
    }
    Proc p;
    p.event = m.event;
    p.seq = m.seq;
    p.step = 1;
    p.ue_msg = m;
    p.ngap = ctx.id.ngap_id;
    p.ip = ctx.id.ip_index;
    p.smf = ctx.owner_smf;
    auto& slot = procs_[supi];
    slot = std::move(p);
    advance(slot, ctx, nullptr);
}

void Amf::on_sbi_response(const ControlMessage& m) {
    const auto& supi = m.ue.supi;
    auto it = procs_.find(supi);
    if (it == procs_.end()) {
        charge(core_.config().control_cost);
        return;
    }
    Proc& p = it->second;
    bool expected = p.seq == m.seq && p.step == m.step && !p.done && p.outstanding_kind &&
                    *p.outstanding_kind == m.sender.kind &&
                    (m.type == MsgType::DiscoverResponse) == (p.outstanding->type == MsgType::Discover);
    if (!expected) {
        charge(core_.config().control_cost);
        log("stale", &m);
        return;
    }
    charge_hop(p.event.type);
    auto loaded = load(supi, m.seq);
    if (!loaded) return;
    UeContext ctx = *loaded;
    advance(p, ctx, &m);
}

void Amf::send_sbi(Proc& p, NfKind kind, const std::string& payload) {
    auto msg = make(kind == NfKind::Nrf ? MsgType::Discover : MsgType::SbiRequest, Channel::Sbi, kind);
    msg.event = p.event;
    msg.ue = UeRef{p.ue_msg.ue.supi, p.ngap, p.ip};
    msg.seq = p.seq;
    msg.step = p.step;
    msg.prior_seq = p.ue_msg.prior_seq;
    msg.payload = payload;
    p.outstanding = msg;
    p.outstanding_kind = kind;
    emit_routed(std::move(msg), kind, p.ue_msg.ue.supi);
}

void Amf::redrive(Proc& p) {
    if (!p.outstanding || !p.outstanding_kind) return;
    ControlMessage msg = *p.outstanding;
    ++msg.attempt;
    p.outstanding = msg;
    std::set<InstanceId> avoid;
    if (*p.outstanding_kind == NfKind::Ausf && p.stage == 2) {
        // Retrying the AUSF leg re-runs discovery.
        p.stage = 1;
        auto d = make(MsgType::Discover, Channel::Sbi, NfKind::Nrf);
        d.event = p.event;
        d.ue = msg.ue;
        d.seq = p.seq;
        d.step = p.step;
        d.payload = std::string(to_string(NfKind::Ausf));
        p.outstanding = d;
        p.outstanding_kind = NfKind::Nrf;
        emit_routed(std::move(d), NfKind::Nrf, p.ue_msg.ue.supi);
        return;
    }
    emit_routed(std::move(msg), *p.outstanding_kind, p.ue_msg.ue.supi, avoid);
}

std::uint32_t Amf::allocate_ngap() {
    const auto block_size = core_.drsm().config().block_size;
    for (;;) {
        if (block_index_ >= blocks_.size()) {
            auto b = core_.drsm().claim_block(Pool::NgapIds, block_size, id());
            blocks_.push_back(b);
            core_.logs().lifecycle(now(), name(), "claim_block",
                                   fmt::format("{}:{}+{}", to_string(Pool::NgapIds), b.start, b.len));
        }
        const auto& b = blocks_[block_index_];
        std::uint32_t value = b.start + block_used_;
        ++block_used_;
        if (block_used_ >= b.len) {
            ++block_index_;
            block_used_ = 0;
        } else if (block_used_ == b.len * 9 / 10 && block_index_ + 1 >= blocks_.size()) {
            auto next = core_.drsm().claim_block(Pool::NgapIds, block_size, id());
            blocks_.push_back(next);
            core_.logs().lifecycle(now(), name(), "claim_block",
                                   fmt::format("{}:{}+{}", to_string(Pool::NgapIds), next.start, next.len));
        }
        if (value != 0) return value;
    }
}

void Amf::advance(Proc& p, UeContext& ctx, const ControlMessage* resp) {
    const auto& supi = p.ue_msg.ue.supi;
    switch (p.event.type) {
        case EventType::Registration:
            if (p.step == 1) {
                if (p.stage == 0) {
                    if (p.ngap == 0) {
                        p.ngap = allocate_ngap();
                        core_.drsm().bind_ngap(p.ngap, supi);
                    }
                    p.stage = 1;
                    send_sbi(p, NfKind::Nrf, std::string(to_string(NfKind::Ausf)));
                    return;
                }
                if (p.stage == 1) {
                    auto candidates = parse_id_list(resp ? resp->payload : std::string());
                    std::set<InstanceId> avoid;
                    for (const auto& v : view_.live(NfKind::Ausf)) {
                        if (std::find(candidates.begin(), candidates.end(), v.id) == candidates.end()) avoid.insert(v.id);
                    }
                    p.stage = 2;
                    auto msg = make(MsgType::SbiRequest, Channel::Sbi, NfKind::Ausf);
                    msg.event = p.event;
                    msg.ue = UeRef{supi, p.ngap, p.ip};
                    msg.seq = p.seq;
                    msg.step = p.step;
                    msg.prior_seq = p.ue_msg.prior_seq;
                    p.outstanding = msg;
                    p.outstanding_kind = NfKind::Ausf;
                    emit_routed(std::move(msg), NfKind::Ausf, supi, avoid);
                    return;
                }
                finish_step(p, ctx);
                return;
            }
            if (p.stage == 0) {
                p.stage = 1;
                send_sbi(p, p.step == 2 ? NfKind::Udm : NfKind::Pcf);
                return;
            }
            if (p.step == 3) {
                commit(p, ctx);
            } else {
                finish_step(p, ctx);
            }
            return;
        case EventType::PduEstablish:
        case EventType::ServiceRequest:
            if (p.stage == 0) {
                p.stage = 1;
                send_sbi(p, NfKind::Smf);
                return;
            }
            if (resp) {
                if (resp->ue.ip_index) p.ip = resp->ue.ip_index;
                p.smf = resp->sender;
            }
            if (p.step == 2) {
                commit(p, ctx);
            } else {
                finish_step(p, ctx);
            }
            return;
    }
}

void Amf::finish_step(Proc& p, UeContext& ctx) {
    p.done = true;
    p.outstanding.reset();
    p.outstanding_kind.reset();
    if (p.ngap != 0) ctx.id.ngap_id = p.ngap;
    if (!cache_.enabled()) {
        try {
            cache_.write_through(ctx, p.seq);
        } catch (const StoreUnavailable&) {
            log_ue("store_unavailable", p.ue_msg.ue.supi, p.seq);
            p.done = false;
            return;
        }
    }
    respond(p.ue_msg, ctx, p.ngap, p.ip);
}

void Amf::commit(Proc& p, UeContext& ctx) {
    const auto& supi = p.ue_msg.ue.supi;
    UeContext next;
    try {
        next = apply_event(ctx, p.event, p.seq);
    } catch (const IllegalTransition&) {
        nack(p.ue_msg, Status::IllegalTransition);
        procs_.erase(supi);
        return;
    }
    if (p.ngap != 0) next.id.ngap_id = p.ngap;
    if (p.event.type != EventType::Registration) {
        if (p.ip) next.id.ip_index = p.ip;
        if (p.smf) next.owner_smf = p.smf;
    }
    next.owner_amf = id();
    if (cache_.enabled()) {
        cache_.put_async(next, p.seq);
    } else {
        try {
            cache_.write_through(next, p.seq);
        } catch (const StoreUnavailable&) {
            log_ue("store_unavailable", supi, p.seq);
            return;
        }
    }
    served_.insert(supi);
    log_ue("commit", supi, p.seq, to_string(p.event.type));
    p.done = true;
    p.outstanding.reset();
    p.outstanding_kind.reset();
    if (p.event.type == EventType::ServiceRequest) {
        auto dl = downlinks_.find(supi);
        if (dl != downlinks_.end()) {
            for (const auto& d : dl->second) {
                auto ack = make(MsgType::DownlinkAck, Channel::Sbi, NfKind::Smf);
                ack.ue = UeRef{supi, next.id.ngap_id, next.id.ip_index};
                ack.event = EventKind::sr(Direction::Downstream);
                ack.aux = d.notify;
                emit(ack, d.smf);
                log_ue("dl_ack", supi, d.notify);
            }
            downlinks_.erase(dl);
        }
    }
    respond(p.ue_msg, next, p.ngap, next.id.ip_index);
}

void Amf::respond(const ControlMessage& req, const UeContext& ctx, std::uint32_t ngap,
                  std::optional<std::uint32_t> ip) {
    auto r = reply_to(req, MsgType::UeResponse);
    r.ue.ngap_id = ngap != 0 ? ngap : ctx.id.ngap_id;
    r.ue.ip_index = ip ? ip : ctx.id.ip_index;
    r.aux = ctx.last_event_seq;
    r.status = Status::Ok;
    emit(std::move(r), req.sender);
}

void Amf::nack(const ControlMessage& req, Status status, std::uint64_t aux) {
    auto r = reply_to(req, MsgType::Nack);
    r.status = status;
    r.aux = aux;
    log("nack", &req, to_string(status));
    emit(std::move(r), req.sender);
}

void Amf::on_downlink(const ControlMessage& m) {
    charge_hop(EventType::ServiceRequest);
    const auto& supi = m.ue.supi;
    auto loaded = load(supi, 0);
    if (!loaded) return;
    const UeContext& ctx = *loaded;
    auto ack = [&](Status st) {
        auto r = reply_to(m, MsgType::DownlinkAck);
        r.status = st;
        emit(std::move(r), m.sender);
        log_ue(st == Status::Ok ? "dl_ack" : "dl_nack", supi, m.aux, to_string(st));
    };
    if (ctx.session_state != SessionState::Established) {
        ack(Status::NoSession);
        return;
    }
    if (ctx.conn_state == ConnState::Connected) {
        ack(Status::Ok);
        return;
    }
    auto& pending = downlinks_[supi];
    for (const auto& d : pending) {
        if (d.notify == m.aux) return;
    }
    pending.push_back(Downlink{m.aux, m.sender});
    if (paging_.insert(supi).second) {
        after(core_.config().paging_delay, [this, supi] { page(supi); });
    }
}

void Amf::page(const std::string& supi) {
    paging_.erase(supi);
    auto dl = downlinks_.find(supi);
    if (dl == downlinks_.end() || dl->second.empty()) return;
    auto pit = procs_.find(supi);
    if (pit != procs_.end() && !pit->second.done && pit->second.event.type == EventType::ServiceRequest) return;
    const UeContext* ctx = cache_.peek(supi);
    if (ctx && ctx->conn_state == ConnState::Connected) {
        for (const auto& d : dl->second) {
            auto ack = make(MsgType::DownlinkAck, Channel::Sbi, NfKind::Smf);
            ack.ue = UeRef{supi, ctx->id.ngap_id, ctx->id.ip_index};
            ack.event = EventKind::sr(Direction::Downstream);
            ack.aux = d.notify;
            send_now(ack, d.smf);
            log_ue("dl_ack", supi, d.notify);
        }
        downlinks_.erase(dl);
        return;
    }
    auto msg = make(MsgType::Paging, Channel::Sbi, NfKind::Gateway);
    msg.ue.supi = supi;
    msg.event = EventKind::sr(Direction::Downstream);
    log_ue("page", supi, 0);
    send_now(msg, core_.gateway_id());
}

// ---------------------------------------------------------------------------------------------
// SMF

Smf::Smf(Core& core, InstanceId id)
    : Instance(core, id), cache_(core.ue_store(), core.exec(), core.config().cache, CacheMode::ReadThrough) {}

std::uint64_t Smf::store_ops() const {
    const auto& c = cache_.counters();
    return c.reads + c.sync_writes;
}

void Smf::on_crash() {
    cache_.drop();
    steps_.clear();
    ip_of_.clear();
    downlink_origin_.clear();
}

void Smf::on_unroutable(const ControlMessage& msg, NfKind kind) { log("unroutable", &msg, to_string(kind)); }

void Smf::handle(const ControlMessage& m) {
    switch (m.type) {
        case MsgType::SbiRequest: on_request(m); return;
        case MsgType::PfcpAck: on_pfcp_ack(m); return;
        case MsgType::DownlinkNotify: on_downlink(m); return;
        case MsgType::DownlinkAck: on_downlink_ack(m); return;
        default: charge(core_.config().control_cost); log("unexpected", &m); return;
    }
}

std::uint32_t Smf::allocate_ip() {
    const auto block_size = core_.drsm().config().block_size;
    if (block_index_ >= blocks_.size()) {
        auto b = core_.drsm().claim_block(Pool::IpIndices, block_size, id());
        blocks_.push_back(b);
        core_.logs().lifecycle(now(), name(), "claim_block",
                               fmt::format("{}:{}+{}", to_string(Pool::IpIndices), b.start, b.len));
    }
    const auto& b = blocks_[block_index_];
    std::uint32_t value = b.start + block_used_;
    if (++block_used_ >= b.len) {
        ++block_index_;
        block_used_ = 0;
    }
    return value;
}

void Smf::on_request(const ControlMessage& m) {
    charge_hop(m.event.type);
    const auto& supi = m.ue.supi;
    UeContext ctx;
    try {
        ctx = cache_.get_or_load(supi, m.seq);
    } catch (const StoreUnavailable&) {
        log_ue("store_unavailable", supi, m.seq);
        return;
    }
    auto it = steps_.find(supi);
    if (it != steps_.end() && it->second.seq == m.seq && it->second.step == m.step) {
        auto& s = it->second;
        s.req = m;
        if (s.done && s.response) {
            auto r = *s.response;
            r.msg_id = core_.next_msg_id();
            emit(std::move(r), m.sender);
        } else {
            send_pfcp(s);
        }
        return;
    }
    Step s;
    s.seq = m.seq;
    s.step = m.step;
    s.req = m;
    auto known = ip_of_.find(supi);
    if (known != ip_of_.end()) {
        s.ip = known->second;
    } else if (m.ue.ip_index) {
        s.ip = *m.ue.ip_index;
    } else if (ctx.id.ip_index) {
        s.ip = *ctx.id.ip_index;
    } else {
        s.ip = allocate_ip();
        core_.drsm().bind_ip(s.ip, supi);
    }
    ip_of_[supi] = s.ip;
    auto& slot = steps_[supi];
    slot = std::move(s);
    send_pfcp(slot);
}

void Smf::send_pfcp(const Step& s) {
    auto msg = make(MsgType::PfcpAction, Channel::PfcpSim, NfKind::Upf);
    msg.event = s.req.event;
    msg.ue = UeRef{s.req.ue.supi, 0, s.ip};
    msg.seq = s.seq;
    msg.step = s.step;
    msg.origin = s.req.sender;
    emit(std::move(msg), core_.upf_id());
}

void Smf::on_pfcp_ack(const ControlMessage& m) {
    const auto& supi = m.ue.supi;
    auto it = steps_.find(supi);
    if (it == steps_.end() || it->second.seq != m.seq || it->second.step != m.step || it->second.done) {
        charge(core_.config().control_cost);
        log("stale", &m);
        return;
    }
    auto& s = it->second;
    charge_hop(s.req.event.type);
    UeContext ctx;
    try {
        ctx = cache_.get_or_load(supi, m.seq);
    } catch (const StoreUnavailable&) {
        log_ue("store_unavailable", supi, m.seq);
        return;
    }
    if (s.req.event.type == EventType::PduEstablish && s.step == 2) {
        ctx.session_state = SessionState::Established;
        ctx.id.ip_index = s.ip;
    }
    if (cache_.enabled()) {
        cache_.update_local(ctx);
    } else {
        try {
            cache_.write_through(ctx, m.seq);
        } catch (const StoreUnavailable&) {
            log_ue("store_unavailable", supi, m.seq);
            return;
        }
    }
    auto r = reply_to(s.req, MsgType::SbiResponse);
    r.ue.ip_index = s.ip;
    s.done = true;
    s.response = r;
    emit(std::move(r), s.req.sender);
}

void Smf::on_downlink(const ControlMessage& m) {
    charge_hop(EventType::ServiceRequest);
    const auto& supi = m.ue.supi;
    try {
        cache_.get_or_load(supi, 0);
    } catch (const StoreUnavailable&) {
        log_ue("store_unavailable", supi, 0);
        return;
    }
    downlink_origin_[m.msg_id] = m.sender;
    auto fwd = make(MsgType::DownlinkNotify, Channel::Sbi, NfKind::Amf);
    fwd.event = EventKind::sr(Direction::Downstream);
    fwd.ue = UeRef{supi, 0, m.ue.ip_index};
    fwd.aux = m.msg_id;
    emit_routed(std::move(fwd), NfKind::Amf, supi);
}

void Smf::on_downlink_ack(const ControlMessage& m) {
    charge(core_.config().control_cost);
    InstanceId to = core_.gateway_id();
    auto it = downlink_origin_.find(m.aux);
    if (it != downlink_origin_.end()) {
        to = it->second;
        downlink_origin_.erase(it);
    }
    auto fwd = make(MsgType::DownlinkAck, Channel::Sbi, NfKind::Gateway);
    fwd.event = m.event;
    fwd.ue = m.ue;
    fwd.aux = m.aux;
    fwd.status = m.status;
    emit(std::move(fwd), to);
}

// ---------------------------------------------------------------------------------------------
// NRF

void Nrf::register_nf(const InstanceId& id) {
    auto& e = registry_[id];
    e.kind = id.kind;
    e.last_keepalive = now();
    e.in_circulation = true;
    persist(id, e);
    log("register", nullptr, id.str());
}

void Nrf::deregister_nf(const InstanceId& id) {
    if (registry_.erase(id) == 0) return;
    core_.drsm_store().erase(keys::nrf_status(id));
    log("deregister", nullptr, id.str());
}

std::vector<InstanceId> Nrf::discover(NfKind kind, std::string_view requester) {
    std::vector<InstanceId> out;
    for (auto it = registry_.lower_bound(InstanceId{kind, 0}); it != registry_.end() && it->first.kind == kind;
         ++it) {
        if (it->second.in_circulation) out.push_back(it->first);
    }
    core_.logs().lifecycle(now(), name(), "discover",
                           fmt::format("requester={} kind={} result={}", requester, to_string(kind), join_ids(out)));
    return out;
}

void Nrf::persist(const InstanceId& id, const Entry& e) {
    core_.drsm_store().put(keys::nrf_status(id), fmt::format("{{\"in_circulation\":{}}}", e.in_circulation));
}

void Nrf::on_ready() {
    expiry_sub_ = core_.drsm_store().watch(std::string(keys::kInstancePrefix), [this](const ChangeEvent& ev) {
        if (ev.type != ChangeType::Expire || !alive()) return;
        deregister_nf(InstanceId::parse(std::string_view(ev.key).substr(keys::kInstancePrefix.size())));
    });
    after(core_.config().keepalive_interval, [this] { tick(); });
}

void Nrf::tick() {
    if (!alive()) return;
    const auto limit = core_.config().keepalive_interval * core_.config().miss_threshold;
    for (auto& [id, e] : registry_) {
        if (e.in_circulation && now() - e.last_keepalive > limit) {
            e.in_circulation = false;
            persist(id, e);
            core_.logs().lifecycle(now(), name(), "circulation_out", id.str());
        }
    }
    after(core_.config().keepalive_interval, [this] { tick(); });
}

void Nrf::handle(const ControlMessage& m) {
    charge(core_.config().control_cost);
    switch (m.type) {
        case MsgType::Keepalive: {
            auto it = registry_.find(m.sender);
            if (it == registry_.end()) {
                auto r = reply_to(m, MsgType::Keepalive);
                r.status = Status::Unavailable;
                emit(std::move(r), m.sender);
                return;
            }
            it->second.last_keepalive = now();
            if (!it->second.in_circulation) {
                it->second.in_circulation = true;
                persist(it->first, it->second);
                core_.logs().lifecycle(now(), name(), "circulation_in", it->first.str());
            }
            return;
        }
        case MsgType::Discover: {
            charge_hop(m.event.type);
            auto ids = discover(nf_kind_from_string(m.payload), m.sender.str());
            auto r = reply_to(m, MsgType::DiscoverResponse);
            r.payload = join_ids(ids);
            emit(std::move(r), m.sender);
            return;
        }
        default: log("unexpected", &m); return;
    }
}

// ---------------------------------------------------------------------------------------------
// P3

Ephemeral::Ephemeral(Core& core, InstanceId id) : Instance(core, id) {
    if (id.kind == NfKind::Ausf || id.kind == NfKind::Pcf) downstream_ = NfKind::Udm;
}

std::vector<std::string> Ephemeral::view_prefixes() const {
    return {std::string(keys::kInstancePrefix), std::string(keys::kNrfPrefix)};
}

void Ephemeral::on_unroutable(const ControlMessage& msg, NfKind kind) { log("unroutable", &msg, to_string(kind)); }

void Ephemeral::handle(const ControlMessage& m) {
    charge_hop(m.event.type);
    switch (m.type) {
        case MsgType::SbiRequest: {
            if (downstream_) {
                auto fwd = make(MsgType::SbiRequest, Channel::Sbi, *downstream_);
                fwd.event = m.event;
                fwd.ue = m.ue;
                fwd.seq = m.seq;
                fwd.step = m.step;
                fwd.prior_seq = m.prior_seq;
                fwd.origin = m.sender;
                emit_routed(std::move(fwd), *downstream_, m.ue.supi);
            } else {
                emit(reply_to(m, MsgType::SbiResponse), m.sender);
            }
            return;
        }
        case MsgType::SbiResponse: {
            auto r = make(MsgType::SbiResponse, Channel::Sbi, m.origin.kind);
            r.event = m.event;
            r.ue = m.ue;
            r.seq = m.seq;
            r.step = m.step;
            r.prior_seq = m.prior_seq;
            r.origin = m.origin;
            emit(std::move(r), m.origin);
            return;
        }
        default: log("unexpected", &m); return;
    }
}

// ---------------------------------------------------------------------------------------------
// UPF stub

void Upf::handle(const ControlMessage& m) {
    switch (m.type) {
        case MsgType::PfcpAction: {
            charge_hop(m.event.type);
            emit(reply_to(m, MsgType::PfcpAck), m.sender);
            return;
        }
        case MsgType::DownlinkAck: {
            charge(core_.config().control_cost);
            auto it = pending_.find(m.aux);
            if (it == pending_.end()) return;
            log_ue(m.status == Status::Ok ? "dl_delivered" : "dl_rejected", it->second.msg.ue.supi, m.aux,
                   to_string(m.status));
            pending_.erase(it);
            return;
        }
        default: charge(core_.config().control_cost); log("unexpected", &m); return;
    }
}

std::optional<std::uint64_t> Upf::notify(const std::string& supi, std::optional<std::uint32_t> ip) {
    if (!ip) {
        log_ue("dl_nosession", supi, 0);
        return std::nullopt;
    }
    auto msg = make(MsgType::DownlinkNotify, Channel::PfcpSim, NfKind::Gateway);
    msg.event = EventKind::sr(Direction::Downstream);
    msg.ue = UeRef{std::string(), 0, ip};
    // The supi is kept locally for logging only; the gateway resolves the UE from the ip index.
    Pending p{msg, 1};
    p.msg.ue.supi = supi;
    auto id = msg.msg_id;
    pending_.emplace(id, std::move(p));
    log_ue("dl_notify", supi, id);
    send_now(msg, core_.gateway_id());
    after(core_.config().upf_retry, [this, id] { retry(id); });
    return id;
}

void Upf::retry(std::uint64_t id) {
    auto it = pending_.find(id);
    if (it == pending_.end()) return;
    auto& p = it->second;
    if (p.attempts > core_.config().upf_max_retries) {
        log_ue("dl_failed", p.msg.ue.supi, id);
        pending_.erase(it);
        return;
    }
    ++p.attempts;
    auto msg = p.msg;
    msg.ue.supi.clear();
    msg.attempt = p.attempts;
    p.msg.attempt = p.attempts;
    send_now(msg, core_.gateway_id());
    after(core_.config().upf_retry, [this, id] { retry(id); });
}

}  // namespace sbacore
