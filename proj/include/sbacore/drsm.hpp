#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sbacore/clock.hpp"
#include "sbacore/model.hpp"

namespace sbacore {

struct KvRecord {
    std::string value;
    std::uint64_t version = 0;
    std::optional<Micros> expires_at;
};

enum class ChangeType : std::uint8_t { Put, Delete, Expire };

struct ChangeEvent {
    std::string key;
    ChangeType type = ChangeType::Put;
    std::string value;
    std::uint64_t version = 0;
    Micros at{0};
};

struct StoreOp {
    std::string op;  // get, put, cas, erase, expire
    std::string key;
    std::uint64_t version = 0;
    std::uint64_t value_hash = 0;
    Micros at{0};
    bool ok = true;
    std::string value;  // kept only when the store retains values
};

std::uint64_t value_hash(std::string_view value);

class StoreUnavailable : public std::runtime_error {
public:
    StoreUnavailable() : std::runtime_error("store unavailable") {}
};

// Live watch. Destroying or cancelling it stops deliveries.
class Subscription {
public:
    Subscription() = default;
    explicit Subscription(std::shared_ptr<bool> active) : active_(std::move(active)) {}
    Subscription(Subscription&&) = default;
    Subscription& operator=(Subscription&& other) noexcept {
        cancel();
        active_ = std::move(other.active_);
        return *this;
    }
    ~Subscription() { cancel(); }
    void cancel() {
        if (active_) *active_ = false;
        active_.reset();
    }

private:
    std::shared_ptr<bool> active_;
};

class KvStore {
public:
    using Watcher = std::function<void(const ChangeEvent&)>;

    virtual ~KvStore() = default;
    virtual std::optional<KvRecord> get(const std::string& key) = 0;
    // expected_version 0 means "absent". Returns the new version, or nullopt on conflict.
    virtual std::optional<std::uint64_t> compare_and_set(const std::string& key, std::uint64_t expected_version,
                                                         const std::string& value,
                                                         std::optional<Micros> ttl = std::nullopt) = 0;
    virtual std::uint64_t put(const std::string& key, const std::string& value) = 0;
    virtual std::uint64_t put_with_ttl(const std::string& key, const std::string& value, Micros ttl) = 0;
    virtual bool erase(const std::string& key) = 0;
    virtual std::vector<std::pair<std::string, KvRecord>> scan(const std::string& prefix) = 0;
    virtual Subscription watch(const std::string& prefix, Watcher fn) = 0;
};

struct KvStoreOptions {
    Micros sweep_interval = ms(100);
    Micros feed_latency{200};
    bool keep_values = true;
    bool log_reads = true;
    bool log_ops = true;
};

// Single-process linearizable map with an operation log, periodic TTL sweeps and prefix feeds.
class MemoryKvStore : public KvStore {
public:
    MemoryKvStore(Executor& exec, KvStoreOptions opts = {});
    ~MemoryKvStore() override;

    std::optional<KvRecord> get(const std::string& key) override;
    std::optional<std::uint64_t> compare_and_set(const std::string& key, std::uint64_t expected_version,
                                                 const std::string& value,
                                                 std::optional<Micros> ttl = std::nullopt) override;
    std::uint64_t put(const std::string& key, const std::string& value) override;
    std::uint64_t put_with_ttl(const std::string& key, const std::string& value, Micros ttl) override;
    bool erase(const std::string& key) override;
    std::vector<std::pair<std::string, KvRecord>> scan(const std::string& prefix) override;
    Subscription watch(const std::string& prefix, Watcher fn) override;

    // Unavailable stores throw StoreUnavailable from every operation.
    void set_available(bool available) { available_ = available; }
    bool available() const { return available_; }

    void sweep();
    const std::vector<StoreOp>& op_log() const { return log_; }
    std::size_t size() const;
    const KvStoreOptions& options() const { return opts_; }

    // Called synchronously after each expiry, before feeds fire.
    void set_expiry_hook(std::function<void(const std::string& key, const KvRecord& rec)> hook) {
        expiry_hook_ = std::move(hook);
    }
    // Called synchronously after every write (tests use it to interleave work).
    void set_write_hook(std::function<void(const StoreOp&)> hook) { write_hook_ = std::move(hook); }

private:
    struct Watch {
        std::string prefix;
        Watcher fn;
        std::shared_ptr<bool> active;
    };

    std::optional<KvRecord> live_get(const std::string& key);
    std::uint64_t write(const std::string& key, const std::string& value, std::optional<Micros> ttl,
                        const char* op);
    void record(StoreOp op);
    void publish(ChangeEvent ev);
    void check_available() const {
        if (!available_) throw StoreUnavailable();
    }

    Executor& exec_;
    KvStoreOptions opts_;
    std::map<std::string, KvRecord> data_;
    std::uint64_t next_version_ = 1;
    std::vector<StoreOp> log_;
    std::vector<Watch> watches_;
    std::function<void(const std::string&, const KvRecord&)> expiry_hook_;
    std::function<void(const StoreOp&)> write_hook_;
    bool available_ = true;
    std::shared_ptr<bool> alive_ = std::make_shared<bool>(true);
    std::shared_ptr<std::function<void()>> sweep_tick_;
};

enum class Pool : std::uint8_t { NgapIds, IpIndices };

std::string_view to_string(Pool p);
std::optional<Pool> pool_for(NfKind kind);

struct ResourceBlock {
    Pool pool = Pool::NgapIds;
    std::uint32_t start = 0;
    std::uint32_t len = 0;
    std::optional<InstanceId> holder;

    std::uint32_t end() const { return start + len; }
    bool contains(std::uint32_t v) const { return v >= start && v < end(); }
    bool overlaps(const ResourceBlock& o) const { return start < o.end() && o.start < end(); }

    friend bool operator==(const ResourceBlock&, const ResourceBlock&) = default;
};

class PoolExhausted : public std::runtime_error {
public:
    explicit PoolExhausted(Pool p) : std::runtime_error("pool exhausted: " + std::string(to_string(p))) {}
};

// Allocation table for one pool: held blocks and parked (holderless) blocks.
struct PoolTable {
    Pool pool = Pool::NgapIds;
    std::uint32_t capacity = 0;
    std::vector<ResourceBlock> blocks;

    // Lowest-fit allocation over the gaps between existing blocks.
    std::optional<ResourceBlock> allocate(std::uint32_t want, const InstanceId& holder) const;
    std::vector<ResourceBlock> held_by(const InstanceId& holder) const;
    std::vector<ResourceBlock> parked() const;

    std::string to_json() const;
    static PoolTable from_json(std::string_view text);
};

struct Load {
    std::uint32_t ues = 0;
    std::uint32_t queue = 0;
    friend bool operator==(const Load&, const Load&) = default;
};

struct InstanceRecord {
    InstanceId id;
    Load load;
    Micros heartbeat_deadline{0};
    std::vector<ResourceBlock> owned_blocks;

    std::string to_json() const;
    static InstanceRecord from_json(std::string_view text);
};

struct OwnershipEntry {
    std::string ue;
    std::optional<InstanceId> owner_amf;
    std::optional<InstanceId> owner_smf;
    std::uint64_t version = 0;

    std::string to_json() const;
    static OwnershipEntry from_json(std::string_view text, std::uint64_t version);
};

class DuplicateInstance : public std::runtime_error {
public:
    explicit DuplicateInstance(const InstanceId& id) : std::runtime_error("duplicate instance " + id.str()) {}
};

class UnknownInstance : public std::runtime_error {
public:
    explicit UnknownInstance(const InstanceId& id) : std::runtime_error("unknown instance " + id.str()) {}
};

struct DrsmConfig {
    Micros ttl = seconds(2);
    Micros heartbeat = ms(500);
    std::uint32_t block_size = 1024;
    std::uint32_t ngap_capacity = 1u << 20;
    std::uint32_t ip_capacity = 1u << 16;
};

// Separate prepare and commit steps of a block claim; used to interleave competing claimers.
struct PreparedClaim {
    Pool pool;
    std::uint64_t expected_version = 0;
    PoolTable next;
    ResourceBlock block;
};

namespace keys {
std::string instance(const InstanceId& id);
std::string pool(Pool p);
std::string owner(std::string_view supi);
std::string ngap_binding(std::uint32_t ngap_id);
std::string ip_binding(std::uint32_t ip_index);
std::string nrf_status(const InstanceId& id);
inline constexpr std::string_view kInstancePrefix = "inst/";
inline constexpr std::string_view kOwnerPrefix = "own/";
inline constexpr std::string_view kBindPrefix = "bind/";
inline constexpr std::string_view kNrfPrefix = "nrf/";
}  // namespace keys

class Drsm {
public:
    Drsm(KvStore& store, Executor& exec, DrsmConfig cfg = {});

    const DrsmConfig& config() const { return cfg_; }
    KvStore& store() { return store_; }

    void register_instance(const InstanceRecord& rec, std::optional<Micros> ttl = std::nullopt);
    void publish_load(const InstanceId& id, Load load);
    void deregister_instance(const InstanceId& id);
    std::optional<InstanceRecord> lookup_instance(const InstanceId& id);
    std::vector<InstanceRecord> live_instances(NfKind kind);

    ResourceBlock claim_block(Pool pool, std::uint32_t want, const InstanceId& holder);
    PreparedClaim prepare_claim(Pool pool, std::uint32_t want, const InstanceId& holder);
    bool commit_claim(const PreparedClaim& claim);
    PoolTable pool_table(Pool pool);
    std::vector<std::pair<ResourceBlock, std::optional<InstanceId>>> redistribute_expired(Pool pool);
    // Hands parked blocks of the holder's pool to it; returns how many moved.
    std::size_t adopt_parked(const InstanceId& holder);

    // Claims the field matching the claimer's kind (AMF or SMF) and returns the winning entry.
    // A current owner in `suspects` or without a live record is replaced.
    OwnershipEntry claim_ue_ownership(const std::string& supi, const InstanceId& claimer,
                                      const std::set<InstanceId>& suspects = {});
    std::optional<OwnershipEntry> ownership(const std::string& supi);
    std::optional<InstanceId> lookup_owner(const std::string& supi, NfKind kind = NfKind::Amf);

    void bind_ngap(std::uint32_t ngap_id, const std::string& supi);
    void bind_ip(std::uint32_t ip_index, const std::string& supi);

    Subscription subscribe(NfKind kind, std::function<void(const ChangeEvent&)> fn);

    // Registers the TTL hook that redistributes blocks of expired instances.
    void attach_expiry_redistribution(MemoryKvStore& store);

    void set_redistribution_observer(
        std::function<void(Pool, const std::vector<std::pair<ResourceBlock, std::optional<InstanceId>>>&)> fn) {
        redistribution_observer_ = std::move(fn);
    }

private:
    bool is_live(const InstanceId& id);

    KvStore& store_;
    Executor& exec_;
    DrsmConfig cfg_;
    std::function<void(Pool, const std::vector<std::pair<ResourceBlock, std::optional<InstanceId>>>&)>
        redistribution_observer_;
};

}  // namespace sbacore
