#include "sbacore/statestore.hpp"

#include <fmt/format.h>

#include <nlohmann/json.hpp>

namespace sbacore {

namespace {

std::string owner_field(const std::optional<InstanceId>& id) {
    return id ? "\"" + id->str() + "\"" : std::string("null");
}

std::string ue_key(std::string_view supi) { return "ue/" + std::string(supi); }

}  // namespace

std::string encode_context(const UeContext& c, Micros committed_at) {
    return fmt::format(
        "{{\"supi\":\"{}\",\"guti\":{},\"ngap_id\":{},\"ip_index\":{},\"reg\":\"{}\",\"session\":\"{}\","
        "\"conn\":\"{}\",\"owner_amf\":{},\"owner_smf\":{},\"version\":{},\"last_event_seq\":{},"
        "\"committed_at_us\":{}}}",
        c.id.supi, c.id.guti, c.id.ngap_id, c.id.ip_index ? std::to_string(*c.id.ip_index) : "null",
        to_string(c.reg_state), to_string(c.session_state), to_string(c.conn_state), owner_field(c.owner_amf),
        owner_field(c.owner_smf), c.version, c.last_event_seq, committed_at.count());
}

PersistedContext decode_context(std::string_view text) {
    auto j = nlohmann::json::parse(text);
    PersistedContext p;
    auto& c = p.context;
    c.id.supi = j.at("supi").get<std::string>();
    c.id.guti = j.at("guti").get<std::uint64_t>();
    c.id.ngap_id = j.at("ngap_id").get<std::uint32_t>();
    if (!j.at("ip_index").is_null()) c.id.ip_index = j.at("ip_index").get<std::uint32_t>();
    c.reg_state = j.at("reg").get<std::string>() == "Registered" ? RegState::Registered : RegState::Deregistered;
    c.session_state =
        j.at("session").get<std::string>() == "Established" ? SessionState::Established : SessionState::NoSession;
    c.conn_state = j.at("conn").get<std::string>() == "Connected" ? ConnState::Connected : ConnState::Idle;
    if (!j.at("owner_amf").is_null()) c.owner_amf = InstanceId::parse(j.at("owner_amf").get<std::string>());
    if (!j.at("owner_smf").is_null()) c.owner_smf = InstanceId::parse(j.at("owner_smf").get<std::string>());
    c.version = j.at("version").get<std::uint64_t>();
    c.last_event_seq = j.at("last_event_seq").get<std::uint64_t>();
    p.ue = c.id.supi;
    p.committed_version = c.version;
    p.committed_at = Micros(j.at("committed_at_us").get<std::int64_t>());
    return p;
}

void UeStore::attribute(const std::string& supi, std::uint64_t seq) {
    if (attribution_on_) ++per_event_[{supi, seq}];
}

std::optional<PersistedContext> UeStore::read(const std::string& supi, std::uint64_t seq_tag) {
    auto rec = kv_.get(ue_key(supi));
    ++reads_;
    attribute(supi, seq_tag);
    if (!rec) return std::nullopt;
    return decode_context(rec->value);
}

bool UeStore::write(const UeContext& ctx, std::uint64_t seq_tag) {
    auto it = committed_.find(ctx.id.supi);
    if (it != committed_.end() && it->second > ctx.version) {
        ++rejected_;
        return false;
    }
    kv_.put(ue_key(ctx.id.supi), encode_context(ctx, exec_.now()));
    committed_[ctx.id.supi] = ctx.version;
    ++writes_;
    attribute(ctx.id.supi, seq_tag);
    return true;
}

std::uint64_t UeStore::ops_for(const std::string& supi, std::uint64_t seq) const {
    auto it = per_event_.find({supi, seq});
    return it == per_event_.end() ? 0 : it->second;
}

std::vector<PersistedContext> UeStore::export_all() {
    std::vector<PersistedContext> out;
    for (const auto& [key, rec] : kv_.scan("ue/")) out.push_back(decode_context(rec.value));
    return out;
}

SoftStateCache::SoftStateCache(UeStore& store, Executor& exec, CacheConfig cfg, CacheMode mode)
    : store_(store), exec_(exec), cfg_(cfg), mode_(mode) {}

SoftStateCache::~SoftStateCache() {
    *alive_ = false;
    if (drain_task_) exec_.cancel(*drain_task_);
}

UeContext SoftStateCache::load(const std::string& supi, std::uint64_t seq_tag) {
    auto persisted = store_.read(supi, seq_tag);
    ++counters_.reads;
    if (persisted) {
        ++counters_.recovery_reads;
        return persisted->context;
    }
    ++counters_.first_touch_reads;
    return fresh_context(supi);
}

UeContext SoftStateCache::get_or_load(const std::string& supi, std::uint64_t seq_tag) {
    if (cfg_.enabled) {
        auto it = entries_.find(supi);
        if (it != entries_.end()) return it->second;
    }
    auto ctx = load(supi, seq_tag);
    if (cfg_.enabled) entries_[supi] = ctx;
    return ctx;
}

const UeContext* SoftStateCache::peek(const std::string& supi) const {
    auto it = entries_.find(supi);
    return it == entries_.end() ? nullptr : &it->second;
}

bool SoftStateCache::put_async(const UeContext& ctx, std::uint64_t seq_tag) {
    auto it = entries_.find(ctx.id.supi);
    if (it != entries_.end() && ctx.version <= it->second.version) return false;
    entries_[ctx.id.supi] = ctx;
    dirty_.push_back(Pending{next_order_++, ctx, seq_tag});
    if (dirty_.size() >= cfg_.flush_batch) {
        arm_drain(Micros(0));
    } else {
        arm_drain(cfg_.flush_interval);
    }
    return true;
}

void SoftStateCache::update_local(const UeContext& ctx) {
    if (cfg_.enabled) entries_[ctx.id.supi] = ctx;
}

void SoftStateCache::write_through(const UeContext& ctx, std::uint64_t seq_tag) {
    store_.write(ctx, seq_tag);
    ++counters_.sync_writes;
}

void SoftStateCache::arm_drain(Micros delay) {
    if (drain_task_) {
        if (delay > Micros(0)) return;
        exec_.cancel(*drain_task_);
    }
    std::weak_ptr<bool> alive = alive_;
    drain_task_ = exec_.schedule_after(delay, [this, alive] {
        if (alive.expired() || !*alive.lock()) return;
        drain_task_.reset();
        if (!drain(next_order_ - 1)) {
            arm_drain(cfg_.retry_backoff);
        } else if (!dirty_.empty()) {
            arm_drain(cfg_.flush_interval);
        }
    });
}

bool SoftStateCache::drain(std::uint64_t upto) {
    std::deque<Pending> batch;
    while (!dirty_.empty() && dirty_.front().order <= upto) {
        batch.push_back(std::move(dirty_.front()));
        dirty_.pop_front();
    }
    if (cfg_.coalesce && batch.size() > 1) {
        std::unordered_map<std::string, std::size_t> latest;
        for (std::size_t i = 0; i < batch.size(); ++i) latest[batch[i].ctx.id.supi] = i;
        std::deque<Pending> kept;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (latest[batch[i].ctx.id.supi] == i) {
                kept.push_back(std::move(batch[i]));
            } else {
                ++counters_.coalesced;
            }
        }
        batch = std::move(kept);
    }
    while (!batch.empty()) {
        try {
            store_.write(batch.front().ctx, batch.front().seq_tag);
        } catch (const StoreUnavailable&) {
            while (!batch.empty()) {
                dirty_.push_front(std::move(batch.back()));
                batch.pop_back();
            }
            return false;
        }
        ++counters_.drained_writes;
        batch.pop_front();
    }
    return true;
}

void SoftStateCache::flush_fence() {
    if (dirty_.empty()) return;
    if (!drain(next_order_ - 1)) throw StoreUnavailable();
}

std::size_t SoftStateCache::recover_into(const std::vector<std::string>& ues, std::uint64_t seq_tag) {
    std::size_t loaded = 0;
    for (const auto& supi : ues) {
        if (cfg_.enabled && entries_.count(supi)) continue;
        auto ctx = load(supi, seq_tag);
        if (cfg_.enabled) entries_[supi] = ctx;
        ++loaded;
    }
    return loaded;
}

void SoftStateCache::drop() {
    entries_.clear();
    dirty_.clear();
    if (drain_task_) {
        exec_.cancel(*drain_task_);
        drain_task_.reset();
    }
}

}  // namespace sbacore
