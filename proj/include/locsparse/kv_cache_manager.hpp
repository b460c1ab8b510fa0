#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace locsparse {

enum class Tier : std::uint8_t { fast = 0, slow = 1 };

std::string to_string(Tier tier);

// Physical block store of one tier, laid out as (num_blocks, heads, block_size,
// head_dim) for each of K and V so a (slot, head) block is contiguous.
struct PhysicalLayout {
    Tier tier = Tier::fast;
    std::size_t num_blocks = 0;  // slots per head
    std::size_t heads = 1;
    std::size_t block_size = 32;
    std::size_t head_dim = 16;
    std::size_t element_width = 2;  // bytes; 2 or 4

    std::size_t bytes_per_block() const { return 2 * block_size * head_dim * element_width; }
};

struct BlockKey {
    std::uint32_t batch = 0;
    std::uint32_t head = 0;
    std::uint32_t block = 0;

    auto operator<=>(const BlockKey&) const = default;
};

struct BlockKeyHash {
    std::size_t operator()(const BlockKey& key) const noexcept;
};

struct BlockLocation {
    Tier tier = Tier::fast;
    std::size_t head = 0;
    std::size_t slot = 0;

    bool operator==(const BlockLocation&) const = default;
};

enum class KvErrorCode {
    out_of_blocks,
    duplicate_key,
    unknown_key,
    capacity_exceeded,
    stale_plan,
    layout_mismatch,
};

class KvCacheError : public std::runtime_error {
  public:
    KvCacheError(KvErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}
    KvErrorCode code() const { return code_; }

  private:
    KvErrorCode code_;
};

struct TransferPlan {
    std::vector<BlockKey> fetch;  // slow -> fast
    std::vector<BlockKey> evict;  // fast -> slow
    std::vector<BlockKey> required;
    std::size_t bytes_up = 0;
    std::size_t bytes_down = 0;
    std::size_t hits = 0;  // required blocks already fast-resident
    std::uint64_t generation = 0;

    bool empty() const { return fetch.empty() && evict.empty() && required.empty(); }
};

struct ResidencyStats {
    double hit_rate = 1.0;  // hits / required; 1 when nothing has been required
    std::size_t hits = 0;
    std::size_t required = 0;
    std::size_t bytes_up = 0;
    std::size_t bytes_down = 0;
    std::size_t steps = 0;  // applied non-empty plans
};

struct AuditRow {
    BlockKey key;
    Tier tier = Tier::fast;
    std::size_t slot = 0;
};

// Chooses which fast-resident blocks make room for fetches.
class EvictionPolicy {
  public:
    virtual ~EvictionPolicy() = default;
    // Key became fast-resident, or was required again, at `clock`.
    virtual void touched(const BlockKey& key, std::uint64_t clock) = 0;
    // Key left the fast tier.
    virtual void removed(const BlockKey& key) = 0;
    // Up to `count` victims among fast-resident blocks of `head`, skipping
    // anything in `keep` (sorted).
    virtual std::vector<BlockKey> victims(std::uint32_t head, std::size_t count,
                                          std::span<const BlockKey> keep) const = 0;
};

// Evicts the least recently required block first; ties by key order.
class LeastRecentlyRequired final : public EvictionPolicy {
  public:
    void touched(const BlockKey& key, std::uint64_t clock) override;
    void removed(const BlockKey& key) override;
    std::vector<BlockKey> victims(std::uint32_t head, std::size_t count,
                                  std::span<const BlockKey> keep) const override;

  private:
    std::unordered_map<BlockKey, std::uint64_t, BlockKeyHash> clock_of_;
    std::map<std::uint32_t, std::set<std::pair<std::uint64_t, BlockKey>>> order_;
};

using PayloadMover =
    std::function<void(const BlockKey&, const BlockLocation& from, const BlockLocation& to)>;

// Two-tier paged KV block store. Logical (batch, head, block) keys map to a
// (tier, head, slot) location in exactly one tier. Free lists are LIFO per
// tier and head. Tables are guarded by a reader/writer lock so concurrent
// readers never see a key in two tiers.
class KvCacheManager {
  public:
    KvCacheManager(const PhysicalLayout& fast, const PhysicalLayout& slow,
                   bool store_payload = false,
                   std::unique_ptr<EvictionPolicy> policy = nullptr);

    std::size_t allocate(Tier tier, const BlockKey& key);
    std::optional<BlockLocation> lookup(const BlockKey& key) const;
    void free(const BlockKey& key);

    // Marks blocks as required now so that plans for other sequences in the
    // same step will not evict them. Unknown keys are ignored.
    void touch(std::uint32_t batch, std::uint32_t head, std::span<const std::size_t> blocks);

    TransferPlan plan_transfers(std::span<const std::size_t> required_blocks,
                                std::uint32_t batch, std::uint32_t head) const;
    void apply_transfers(const TransferPlan& plan, const PayloadMover& mover = {});

    ResidencyStats residency_stats() const;
    void reset_stats();

    std::size_t free_count(Tier tier, std::uint32_t head) const;
    std::size_t mapped_count() const;
    const PhysicalLayout& layout(Tier tier) const { return layouts_[index(tier)]; }

    // Walks both tiers, checks that mapped slots and free lists partition
    // every tier's slots, and returns the mapping sorted by (tier, head, slot).
    // Throws std::logic_error on any inconsistency.
    std::vector<AuditRow> audit() const;
    std::string audit_csv() const;

    // Block payload access; requires store_payload.
    void write_block(const BlockKey& key, std::span<const std::byte> bytes);
    std::vector<std::byte> read_block(const BlockKey& key) const;

  private:
    struct Entry {
        Tier tier;
        std::uint32_t slot;
    };

    static std::size_t index(Tier tier) { return static_cast<std::size_t>(tier); }
    std::byte* payload(Tier tier, std::uint32_t head, std::uint32_t slot);
    const std::byte* payload(Tier tier, std::uint32_t head, std::uint32_t slot) const;
    std::uint32_t take_slot(Tier tier, std::uint32_t head, const BlockKey& key);
    void release_slot(Tier tier, std::uint32_t head, std::uint32_t slot);
    void check_head(const BlockKey& key) const;
    void move_locked(const BlockKey& key, Tier to, const PayloadMover& mover);

    PhysicalLayout layouts_[2];
    bool store_payload_;
    std::unique_ptr<EvictionPolicy> policy_;
    std::unordered_map<BlockKey, Entry, BlockKeyHash> table_;
    // [tier][head] -> owner of each slot
    std::vector<std::vector<std::optional<BlockKey>>> owners_[2];
    std::vector<std::vector<std::uint32_t>> free_[2];
    std::vector<std::byte> arena_[2];
    std::uint64_t clock_ = 0;
    std::uint64_t generation_ = 0;
    ResidencyStats stats_;
    mutable std::shared_mutex mutex_;
};

} // namespace locsparse
