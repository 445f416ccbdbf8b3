#include "sbacore/drsm.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>

namespace sbacore {

using nlohmann::json;

std::uint64_t value_hash(std::string_view value) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : value) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

MemoryKvStore::MemoryKvStore(Executor& exec, KvStoreOptions opts) : exec_(exec), opts_(opts) {
    std::weak_ptr<bool> alive = alive_;
    auto tick = std::make_shared<std::function<void()>>();
    *tick = [this, alive, weak_tick = std::weak_ptr<std::function<void()>>(tick)] {
        if (alive.expired()) return;
        sweep();
        if (auto t = weak_tick.lock()) exec_.schedule_after(opts_.sweep_interval, *t);
    };
    sweep_tick_ = tick;
    exec_.schedule_after(opts_.sweep_interval, *tick);
}

MemoryKvStore::~MemoryKvStore() { *alive_ = false; }

void MemoryKvStore::record(StoreOp op) {
    if (!opts_.log_ops) return;
    if (!opts_.keep_values) op.value.clear();
    log_.push_back(std::move(op));
}

std::optional<KvRecord> MemoryKvStore::live_get(const std::string& key) {
    auto it = data_.find(key);
    if (it == data_.end()) return std::nullopt;
    if (it->second.expires_at && *it->second.expires_at <= exec_.now()) return std::nullopt;
    return it->second;
}

std::optional<KvRecord> MemoryKvStore::get(const std::string& key) {
    check_available();
    auto rec = live_get(key);
    if (opts_.log_reads) {
        record(StoreOp{"get", key, rec ? rec->version : 0, rec ? value_hash(rec->value) : 0, exec_.now(),
                       rec.has_value(), {}});
    }
    return rec;
}

std::uint64_t MemoryKvStore::write(const std::string& key, const std::string& value, std::optional<Micros> ttl,
                                   const char* op) {
    auto version = next_version_++;
    KvRecord rec{value, version, std::nullopt};
    if (ttl) rec.expires_at = exec_.now() + *ttl;
    data_[key] = rec;
    StoreOp entry{op, key, version, value_hash(value), exec_.now(), true, value};
    record(entry);
    publish(ChangeEvent{key, ChangeType::Put, value, version, exec_.now()});
    if (write_hook_) write_hook_(entry);
    return version;
}

std::optional<std::uint64_t> MemoryKvStore::compare_and_set(const std::string& key, std::uint64_t expected_version,
                                                            const std::string& value, std::optional<Micros> ttl) {
    check_available();
    auto cur = live_get(key);
    std::uint64_t have = cur ? cur->version : 0;
    if (have != expected_version) {
        record(StoreOp{"cas", key, have, 0, exec_.now(), false, {}});
        return std::nullopt;
    }
    return write(key, value, ttl, "cas");
}

std::uint64_t MemoryKvStore::put(const std::string& key, const std::string& value) {
    check_available();
    return write(key, value, std::nullopt, "put");
}

std::uint64_t MemoryKvStore::put_with_ttl(const std::string& key, const std::string& value, Micros ttl) {
    check_available();
    return write(key, value, ttl, "put");
}

bool MemoryKvStore::erase(const std::string& key) {
    check_available();
    auto it = data_.find(key);
    if (it == data_.end()) return false;
    auto version = it->second.version;
    data_.erase(it);
    record(StoreOp{"erase", key, version, 0, exec_.now(), true, {}});
    publish(ChangeEvent{key, ChangeType::Delete, {}, version, exec_.now()});
    return true;
}

std::vector<std::pair<std::string, KvRecord>> MemoryKvStore::scan(const std::string& prefix) {
    check_available();
    std::vector<std::pair<std::string, KvRecord>> out;
    Micros now = exec_.now();
    for (auto it = data_.lower_bound(prefix); it != data_.end() && it->first.compare(0, prefix.size(), prefix) == 0;
         ++it) {
        if (it->second.expires_at && *it->second.expires_at <= now) continue;
        out.emplace_back(it->first, it->second);
    }
    return out;
}

Subscription MemoryKvStore::watch(const std::string& prefix, Watcher fn) {
    auto active = std::make_shared<bool>(true);
    watches_.push_back(Watch{prefix, std::move(fn), active});
    return Subscription(active);
}

void MemoryKvStore::publish(ChangeEvent ev) {
    bool stale = false;
    for (const auto& w : watches_) {
        if (!*w.active) {
            stale = true;
            continue;
        }
        if (ev.key.compare(0, w.prefix.size(), w.prefix) != 0) continue;
        exec_.schedule_after(opts_.feed_latency, [active = w.active, fn = w.fn, ev] {
            if (*active) fn(ev);
        });
    }
    if (stale) {
        watches_.erase(std::remove_if(watches_.begin(), watches_.end(), [](const Watch& w) { return !*w.active; }),
                       watches_.end());
    }
}

void MemoryKvStore::sweep() {
    Micros now = exec_.now();
    std::vector<std::pair<std::string, KvRecord>> expired;
    for (auto it = data_.begin(); it != data_.end();) {
        if (it->second.expires_at && *it->second.expires_at <= now) {
            expired.emplace_back(it->first, std::move(it->second));
            it = data_.erase(it);
        } else {
            ++it;
        }
    }
    for (const auto& [key, rec] : expired) {
        record(StoreOp{"expire", key, rec.version, 0, now, true, {}});
        if (expiry_hook_) expiry_hook_(key, rec);
        publish(ChangeEvent{key, ChangeType::Expire, {}, rec.version, now});
    }
}

std::size_t MemoryKvStore::size() const { return data_.size(); }

std::string_view to_string(Pool p) { return p == Pool::NgapIds ? "ngap" : "ip"; }

std::optional<Pool> pool_for(NfKind kind) {
    if (kind == NfKind::Amf) return Pool::NgapIds;
    if (kind == NfKind::Smf) return Pool::IpIndices;
    return std::nullopt;
}

namespace {

NfKind pool_kind(Pool p) { return p == Pool::NgapIds ? NfKind::Amf : NfKind::Smf; }

json block_json(const ResourceBlock& b) {
    json j{{"start", b.start}, {"len", b.len}};
    j["holder"] = b.holder ? json(b.holder->str()) : json(nullptr);
    return j;
}

ResourceBlock block_from(const json& j, Pool pool) {
    ResourceBlock b;
    b.pool = pool;
    b.start = j.at("start").get<std::uint32_t>();
    b.len = j.at("len").get<std::uint32_t>();
    if (!j.at("holder").is_null()) b.holder = InstanceId::parse(j.at("holder").get<std::string>());
    return b;
}

}  // namespace

std::optional<ResourceBlock> PoolTable::allocate(std::uint32_t want, const InstanceId& holder) const {
    if (want == 0) throw std::invalid_argument("block length must be positive");
    auto sorted = blocks;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
    std::uint64_t cursor = 0;
    for (const auto& b : sorted) {
        if (b.start >= cursor && b.start - cursor >= want) break;
        cursor = std::max<std::uint64_t>(cursor, b.end());
    }
    if (cursor + want > capacity) return std::nullopt;
    return ResourceBlock{pool, static_cast<std::uint32_t>(cursor), want, holder};
}

std::vector<ResourceBlock> PoolTable::held_by(const InstanceId& holder) const {
    std::vector<ResourceBlock> out;
    for (const auto& b : blocks) {
        if (b.holder == holder) out.push_back(b);
    }
    return out;
}

std::vector<ResourceBlock> PoolTable::parked() const {
    std::vector<ResourceBlock> out;
    for (const auto& b : blocks) {
        if (!b.holder) out.push_back(b);
    }
    return out;
}

std::string PoolTable::to_json() const {
    json j{{"pool", to_string(pool)}, {"capacity", capacity}, {"blocks", json::array()}};
    for (const auto& b : blocks) j["blocks"].push_back(block_json(b));
    return j.dump();
}

PoolTable PoolTable::from_json(std::string_view text) {
    auto j = json::parse(text);
    PoolTable t;
    t.pool = j.at("pool").get<std::string>() == "ngap" ? Pool::NgapIds : Pool::IpIndices;
    t.capacity = j.at("capacity").get<std::uint32_t>();
    for (const auto& b : j.at("blocks")) t.blocks.push_back(block_from(b, t.pool));
    return t;
}

std::string InstanceRecord::to_json() const {
    json j{{"id", id.str()},
           {"ues", load.ues},
           {"queue", load.queue},
           {"deadline_us", heartbeat_deadline.count()},
           {"blocks", json::array()}};
    for (const auto& b : owned_blocks) {
        auto bj = block_json(b);
        bj["pool"] = to_string(b.pool);
        j["blocks"].push_back(bj);
    }
    return j.dump();
}

InstanceRecord InstanceRecord::from_json(std::string_view text) {
    auto j = json::parse(text);
    InstanceRecord r;
    r.id = InstanceId::parse(j.at("id").get<std::string>());
    r.load.ues = j.at("ues").get<std::uint32_t>();
    r.load.queue = j.at("queue").get<std::uint32_t>();
    r.heartbeat_deadline = Micros(j.at("deadline_us").get<std::int64_t>());
    for (const auto& b : j.at("blocks")) {
        r.owned_blocks.push_back(
            block_from(b, b.at("pool").get<std::string>() == "ngap" ? Pool::NgapIds : Pool::IpIndices));
    }
    return r;
}

std::string OwnershipEntry::to_json() const {
    json j{{"ue", ue}};
    j["amf"] = owner_amf ? json(owner_amf->str()) : json(nullptr);
    j["smf"] = owner_smf ? json(owner_smf->str()) : json(nullptr);
    return j.dump();
}

OwnershipEntry OwnershipEntry::from_json(std::string_view text, std::uint64_t version) {
    auto j = json::parse(text);
    OwnershipEntry e;
    e.ue = j.at("ue").get<std::string>();
    if (!j.at("amf").is_null()) e.owner_amf = InstanceId::parse(j.at("amf").get<std::string>());
    if (!j.at("smf").is_null()) e.owner_smf = InstanceId::parse(j.at("smf").get<std::string>());
    e.version = version;
    return e;
}

namespace keys {
std::string instance(const InstanceId& id) { return "inst/" + id.str(); }
std::string pool(Pool p) { return "pool/" + std::string(to_string(p)); }
std::string owner(std::string_view supi) { return "own/" + std::string(supi); }
std::string ngap_binding(std::uint32_t ngap_id) { return "bind/ngap/" + std::to_string(ngap_id); }
std::string ip_binding(std::uint32_t ip_index) { return "bind/ip/" + std::to_string(ip_index); }
std::string nrf_status(const InstanceId& id) { return "nrf/" + id.str(); }
}  // namespace keys

Drsm::Drsm(KvStore& store, Executor& exec, DrsmConfig cfg) : store_(store), exec_(exec), cfg_(cfg) {}

void Drsm::register_instance(const InstanceRecord& rec, std::optional<Micros> ttl) {
    auto r = rec;
    auto lease = ttl.value_or(cfg_.ttl);
    r.heartbeat_deadline = exec_.now() + lease;
    if (!store_.compare_and_set(keys::instance(rec.id), 0, r.to_json(), lease)) throw DuplicateInstance(rec.id);
    adopt_parked(rec.id);
}

void Drsm::publish_load(const InstanceId& id, Load load) {
    auto cur = store_.get(keys::instance(id));
    if (!cur) throw UnknownInstance(id);
    auto rec = InstanceRecord::from_json(cur->value);
    rec.load = load;
    rec.heartbeat_deadline = exec_.now() + cfg_.ttl;
    if (auto p = pool_for(id.kind)) rec.owned_blocks = pool_table(*p).held_by(id);
    store_.put_with_ttl(keys::instance(id), rec.to_json(), cfg_.ttl);
}

void Drsm::deregister_instance(const InstanceId& id) {
    if (!store_.erase(keys::instance(id))) throw UnknownInstance(id);
    if (auto p = pool_for(id.kind)) redistribute_expired(*p);
}

std::optional<InstanceRecord> Drsm::lookup_instance(const InstanceId& id) {
    auto cur = store_.get(keys::instance(id));
    if (!cur) return std::nullopt;
    return InstanceRecord::from_json(cur->value);
}

std::vector<InstanceRecord> Drsm::live_instances(NfKind kind) {
    std::vector<InstanceRecord> out;
    for (const auto& [key, rec] : store_.scan("inst/" + std::string(to_string(kind)) + "-")) {
        out.push_back(InstanceRecord::from_json(rec.value));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return out;
}

bool Drsm::is_live(const InstanceId& id) { return store_.get(keys::instance(id)).has_value(); }

PoolTable Drsm::pool_table(Pool pool) {
    auto cur = store_.get(keys::pool(pool));
    if (cur) return PoolTable::from_json(cur->value);
    PoolTable t;
    t.pool = pool;
    t.capacity = pool == Pool::NgapIds ? cfg_.ngap_capacity : cfg_.ip_capacity;
    return t;
}

PreparedClaim Drsm::prepare_claim(Pool pool, std::uint32_t want, const InstanceId& holder) {
    if (!is_live(holder)) throw UnknownInstance(holder);
    auto cur = store_.get(keys::pool(pool));
    PreparedClaim c;
    c.pool = pool;
    c.expected_version = cur ? cur->version : 0;
    c.next = cur ? PoolTable::from_json(cur->value) : pool_table(pool);
    auto blk = c.next.allocate(want, holder);
    if (!blk) throw PoolExhausted(pool);
    c.block = *blk;
    c.next.blocks.push_back(*blk);
    return c;
}

bool Drsm::commit_claim(const PreparedClaim& claim) {
    return store_.compare_and_set(keys::pool(claim.pool), claim.expected_version, claim.next.to_json()).has_value();
}

ResourceBlock Drsm::claim_block(Pool pool, std::uint32_t want, const InstanceId& holder) {
    for (;;) {
        auto c = prepare_claim(pool, want, holder);
        if (commit_claim(c)) return c.block;
    }
}

std::vector<std::pair<ResourceBlock, std::optional<InstanceId>>> Drsm::redistribute_expired(Pool pool) {
    for (;;) {
        auto cur = store_.get(keys::pool(pool));
        if (!cur) return {};
        auto table = PoolTable::from_json(cur->value);
        auto live = live_instances(pool_kind(pool));
        std::map<InstanceId, std::size_t> counts;
        for (const auto& r : live) counts[r.id] = 0;
        for (const auto& b : table.blocks) {
            if (b.holder && counts.count(*b.holder)) ++counts[*b.holder];
        }
        std::vector<std::pair<ResourceBlock, std::optional<InstanceId>>> moves;
        std::vector<std::size_t> order(table.blocks.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return table.blocks[a].start < table.blocks[b].start; });
        for (auto i : order) {
            auto& b = table.blocks[i];
            bool orphan = !b.holder || counts.count(*b.holder) == 0;
            if (!orphan) continue;
            if (counts.empty()) {
                if (b.holder) {
                    auto before = b;
                    b.holder.reset();
                    moves.emplace_back(before, std::nullopt);
                }
                continue;
            }
            auto best = counts.begin();
            for (auto it = counts.begin(); it != counts.end(); ++it) {
                if (it->second < best->second) best = it;
            }
            auto before = b;
            b.holder = best->first;
            ++best->second;
            moves.emplace_back(before, best->first);
        }
        if (moves.empty()) return moves;
        if (store_.compare_and_set(keys::pool(pool), cur->version, table.to_json())) {
            if (redistribution_observer_) redistribution_observer_(pool, moves);
            return moves;
        }
    }
}

std::size_t Drsm::adopt_parked(const InstanceId& holder) {
    auto pool = pool_for(holder.kind);
    if (!pool) return 0;
    for (;;) {
        auto cur = store_.get(keys::pool(*pool));
        if (!cur) return 0;
        auto table = PoolTable::from_json(cur->value);
        std::vector<std::pair<ResourceBlock, std::optional<InstanceId>>> moves;
        for (auto& b : table.blocks) {
            if (!b.holder) {
                moves.emplace_back(b, holder);
                b.holder = holder;
            }
        }
        if (moves.empty()) return 0;
        if (store_.compare_and_set(keys::pool(*pool), cur->version, table.to_json())) {
            if (redistribution_observer_) redistribution_observer_(*pool, moves);
            return moves.size();
        }
    }
}

OwnershipEntry Drsm::claim_ue_ownership(const std::string& supi, const InstanceId& claimer,
                                        const std::set<InstanceId>& suspects) {
    if (claimer.kind != NfKind::Amf && claimer.kind != NfKind::Smf) {
        throw std::invalid_argument("ownership is held by AMF or SMF instances");
    }
    auto key = keys::owner(supi);
    for (;;) {
        auto cur = store_.get(key);
        OwnershipEntry e;
        std::uint64_t expected = 0;
        if (cur) {
            e = OwnershipEntry::from_json(cur->value, cur->version);
            expected = cur->version;
        } else {
            e.ue = supi;
        }
        auto& field = claimer.kind == NfKind::Amf ? e.owner_amf : e.owner_smf;
        if (field == claimer) return e;
        if (field && suspects.count(*field) == 0 && is_live(*field)) return e;
        field = claimer;
        if (auto v = store_.compare_and_set(key, expected, e.to_json())) {
            e.version = *v;
            return e;
        }
    }
}

std::optional<OwnershipEntry> Drsm::ownership(const std::string& supi) {
    auto cur = store_.get(keys::owner(supi));
    if (!cur) return std::nullopt;
    return OwnershipEntry::from_json(cur->value, cur->version);
}

std::optional<InstanceId> Drsm::lookup_owner(const std::string& supi, NfKind kind) {
    auto e = ownership(supi);
    if (!e) return std::nullopt;
    return kind == NfKind::Smf ? e->owner_smf : e->owner_amf;
}

void Drsm::bind_ngap(std::uint32_t ngap_id, const std::string& supi) { store_.put(keys::ngap_binding(ngap_id), supi); }

void Drsm::bind_ip(std::uint32_t ip_index, const std::string& supi) { store_.put(keys::ip_binding(ip_index), supi); }

Subscription Drsm::subscribe(NfKind kind, std::function<void(const ChangeEvent&)> fn) {
    return store_.watch("inst/" + std::string(to_string(kind)) + "-", std::move(fn));
}

void Drsm::attach_expiry_redistribution(MemoryKvStore& store) {
    store.set_expiry_hook([this](const std::string& key, const KvRecord&) {
        if (key.rfind(keys::kInstancePrefix, 0) != 0) return;
        auto id = InstanceId::parse(std::string_view(key).substr(keys::kInstancePrefix.size()));
        if (auto p = pool_for(id.kind)) redistribute_expired(*p);
    });
}

}  // namespace sbacore
