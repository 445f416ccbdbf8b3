#pragma once

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sbacore/clock.hpp"
#include "sbacore/drsm.hpp"
#include "sbacore/model.hpp"

namespace sbacore {

struct PersistedContext {
    std::string ue;
    UeContext context;
    std::uint64_t committed_version = 0;
    Micros committed_at{0};
};

std::string encode_context(const UeContext& ctx, Micros committed_at);
PersistedContext decode_context(std::string_view text);

// P4 storage of UE contexts. Counts every request and attributes it to the (supi, seq) being served.
class UeStore {
public:
    UeStore(KvStore& kv, Executor& exec) : kv_(kv), exec_(exec) {}

    std::optional<PersistedContext> read(const std::string& supi, std::uint64_t seq_tag);
    // Rejects (returns false) a version older than the stored one.
    bool write(const UeContext& ctx, std::uint64_t seq_tag);

    std::uint64_t reads() const { return reads_; }
    std::uint64_t writes() const { return writes_; }
    std::uint64_t rejected_writes() const { return rejected_; }
    std::uint64_t ops_for(const std::string& supi, std::uint64_t seq) const;
    const std::map<std::pair<std::string, std::uint64_t>, std::uint32_t>& attribution() const { return per_event_; }

    std::vector<PersistedContext> export_all();
    KvStore& kv() { return kv_; }
    // Per-(supi, seq) attribution costs memory on long runs; it can be switched off.
    void set_attribution(bool on) { attribution_on_ = on; }

private:
    void attribute(const std::string& supi, std::uint64_t seq);

    KvStore& kv_;
    Executor& exec_;
    std::uint64_t reads_ = 0;
    std::uint64_t writes_ = 0;
    std::uint64_t rejected_ = 0;
    std::map<std::pair<std::string, std::uint64_t>, std::uint32_t> per_event_;
    std::unordered_map<std::string, std::uint64_t> committed_;
    bool attribution_on_ = true;
};

struct CacheConfig {
    bool enabled = true;
    Micros flush_interval = ms(10);
    std::size_t flush_batch = 64;
    bool coalesce = true;
    Micros retry_backoff = ms(10);
};

enum class CacheMode : std::uint8_t {
    WriteBehind,  // owner of the canonical context: mutations queue a write
    ReadThrough,  // reader of a context owned elsewhere: local mirror only
};

struct CacheCounters {
    std::uint64_t reads = 0;           // synchronous store reads
    std::uint64_t recovery_reads = 0;  // reads that found an existing persisted context
    std::uint64_t first_touch_reads = 0;
    std::uint64_t sync_writes = 0;
    std::uint64_t drained_writes = 0;
    std::uint64_t coalesced = 0;
};

class SoftStateCache {
public:
    SoftStateCache(UeStore& store, Executor& exec, CacheConfig cfg, CacheMode mode);
    ~SoftStateCache();
    SoftStateCache(const SoftStateCache&) = delete;
    SoftStateCache& operator=(const SoftStateCache&) = delete;

    bool enabled() const { return cfg_.enabled; }
    CacheMode mode() const { return mode_; }

    // Hit: no store traffic. Miss (or cache disabled): one synchronous read. Unknown UE: fresh context.
    UeContext get_or_load(const std::string& supi, std::uint64_t seq_tag);
    bool contains(const std::string& supi) const { return entries_.count(supi) != 0; }
    const UeContext* peek(const std::string& supi) const;

    // Write-behind mutation. Returns false (cache unchanged) when the version does not advance.
    bool put_async(const UeContext& ctx, std::uint64_t seq_tag);
    // Mirror a context without scheduling a write.
    void update_local(const UeContext& ctx);
    // Synchronous write, used when the cache is disabled.
    void write_through(const UeContext& ctx, std::uint64_t seq_tag);

    // Makes every write queued before the call durable. Throws StoreUnavailable if the store refuses.
    void flush_fence();
    std::size_t recover_into(const std::vector<std::string>& ues, std::uint64_t seq_tag);

    // Crash: entries and pending writes vanish.
    void drop();

    std::size_t size() const { return entries_.size(); }
    std::size_t dirty() const { return dirty_.size(); }
    const CacheCounters& counters() const { return counters_; }

private:
    struct Pending {
        std::uint64_t order;
        UeContext ctx;
        std::uint64_t seq_tag;
    };

    UeContext load(const std::string& supi, std::uint64_t seq_tag);
    void arm_drain(Micros delay);
    // Drains pending writes with order <= upto. Returns false if the store was unavailable.
    bool drain(std::uint64_t upto);

    UeStore& store_;
    Executor& exec_;
    CacheConfig cfg_;
    CacheMode mode_;
    std::unordered_map<std::string, UeContext> entries_;
    std::deque<Pending> dirty_;
    std::uint64_t next_order_ = 1;
    std::optional<TaskId> drain_task_;
    CacheCounters counters_;
    std::shared_ptr<bool> alive_ = std::make_shared<bool>(true);
};

}  // namespace sbacore
