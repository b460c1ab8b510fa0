#include "locsparse/kv_cache_manager.hpp"

#include <algorithm>
#include <cstring>
#include <mutex>
#include <sstream>

namespace locsparse {

std::string to_string(Tier tier) { return tier == Tier::fast ? "fast" : "slow"; }

std::size_t BlockKeyHash::operator()(const BlockKey& key) const noexcept {
    std::uint64_t h = (static_cast<std::uint64_t>(key.batch) << 32) ^
                      (static_cast<std::uint64_t>(key.head) << 24) ^ key.block;
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return static_cast<std::size_t>(h);
}

namespace {

std::string describe(const BlockKey& key) {
    return "(b=" + std::to_string(key.batch) + ", h=" + std::to_string(key.head) +
           ", i=" + std::to_string(key.block) + ")";
}

} // namespace

void LeastRecentlyRequired::touched(const BlockKey& key, std::uint64_t clock) {
    auto& order = order_[key.head];
    auto it = clock_of_.find(key);
    if (it != clock_of_.end()) {
        order.erase({it->second, key});
        it->second = clock;
    } else {
        clock_of_.emplace(key, clock);
    }
    order.insert({clock, key});
}

void LeastRecentlyRequired::removed(const BlockKey& key) {
    auto it = clock_of_.find(key);
    if (it == clock_of_.end()) {
        return;
    }
    order_[key.head].erase({it->second, key});
    clock_of_.erase(it);
}

std::vector<BlockKey> LeastRecentlyRequired::victims(std::uint32_t head, std::size_t count,
                                                     std::span<const BlockKey> keep) const {
    std::vector<BlockKey> out;
    auto found = order_.find(head);
    if (found == order_.end()) {
        return out;
    }
    for (const auto& [clock, key] : found->second) {
        if (out.size() == count) {
            break;
        }
        if (!std::binary_search(keep.begin(), keep.end(), key)) {
            out.push_back(key);
        }
    }
    return out;
}

KvCacheManager::KvCacheManager(const PhysicalLayout& fast, const PhysicalLayout& slow,
                               bool store_payload, std::unique_ptr<EvictionPolicy> policy)
    : layouts_{fast, slow}, store_payload_(store_payload), policy_(std::move(policy)) {
    if (fast.heads != slow.heads || fast.block_size != slow.block_size ||
        fast.head_dim != slow.head_dim || fast.element_width != slow.element_width) {
        throw KvCacheError(KvErrorCode::layout_mismatch,
                           "fast and slow layouts disagree on heads, block size, head width "
                           "or element width");
    }
    if (fast.element_width != 2 && fast.element_width != 4) {
        throw KvCacheError(KvErrorCode::layout_mismatch, "element width must be 2 or 4 bytes");
    }
    layouts_[0].tier = Tier::fast;
    layouts_[1].tier = Tier::slow;
    if (!policy_) {
        policy_ = std::make_unique<LeastRecentlyRequired>();
    }
    for (std::size_t t = 0; t < 2; ++t) {
        const PhysicalLayout& layout = layouts_[t];
        owners_[t].assign(layout.heads, std::vector<std::optional<BlockKey>>(layout.num_blocks));
        free_[t].resize(layout.heads);
        for (auto& stack : free_[t]) {
            // Top of the stack is slot 0.
            for (std::size_t s = layout.num_blocks; s-- > 0;) {
                stack.push_back(static_cast<std::uint32_t>(s));
            }
        }
        if (store_payload_) {
            arena_[t].assign(layout.num_blocks * layout.heads * layout.bytes_per_block(),
                             std::byte{0});
        }
    }
}

void KvCacheManager::check_head(const BlockKey& key) const {
    if (key.head >= layouts_[0].heads) {
        throw KvCacheError(KvErrorCode::unknown_key,
                           "head out of range for key " + describe(key));
    }
}

std::uint32_t KvCacheManager::take_slot(Tier tier, std::uint32_t head, const BlockKey& key) {
    auto& stack = free_[index(tier)][head];
    if (stack.empty()) {
        throw KvCacheError(KvErrorCode::out_of_blocks,
                           to_string(tier) + " tier has no free block for head " +
                               std::to_string(head) + " (key " + describe(key) + ")");
    }
    const std::uint32_t slot = stack.back();
    stack.pop_back();
    owners_[index(tier)][head][slot] = key;
    return slot;
}

void KvCacheManager::release_slot(Tier tier, std::uint32_t head, std::uint32_t slot) {
    owners_[index(tier)][head][slot].reset();
    free_[index(tier)][head].push_back(slot);
}

std::size_t KvCacheManager::allocate(Tier tier, const BlockKey& key) {
    std::unique_lock lock(mutex_);
    check_head(key);
    if (table_.contains(key)) {
        throw KvCacheError(KvErrorCode::duplicate_key, "key " + describe(key) + " already mapped");
    }
    const std::uint32_t slot = take_slot(tier, key.head, key);
    table_.emplace(key, Entry{tier, slot});
    if (tier == Tier::fast) {
        policy_->touched(key, clock_);
    }
    ++generation_;
    return slot;
}

std::optional<BlockLocation> KvCacheManager::lookup(const BlockKey& key) const {
    std::shared_lock lock(mutex_);
    auto it = table_.find(key);
    if (it == table_.end()) {
        return std::nullopt;
    }
    return BlockLocation{it->second.tier, key.head, it->second.slot};
}

void KvCacheManager::free(const BlockKey& key) {
    std::unique_lock lock(mutex_);
    auto it = table_.find(key);
    if (it == table_.end()) {
        throw KvCacheError(KvErrorCode::unknown_key, "free of unmapped key " + describe(key));
    }
    release_slot(it->second.tier, key.head, it->second.slot);
    if (it->second.tier == Tier::fast) {
        policy_->removed(key);
    }
    table_.erase(it);
    ++generation_;
}

void KvCacheManager::touch(std::uint32_t batch, std::uint32_t head,
                           std::span<const std::size_t> blocks) {
    std::unique_lock lock(mutex_);
    ++clock_;
    for (std::size_t b : blocks) {
        const BlockKey key{batch, head, static_cast<std::uint32_t>(b)};
        auto it = table_.find(key);
        if (it != table_.end() && it->second.tier == Tier::fast) {
            policy_->touched(key, clock_);
        }
    }
    ++generation_;
}

TransferPlan KvCacheManager::plan_transfers(std::span<const std::size_t> required_blocks,
                                            std::uint32_t batch, std::uint32_t head) const {
    std::shared_lock lock(mutex_);
    TransferPlan plan;
    plan.generation = generation_;
    if (head >= layouts_[0].heads) {
        throw KvCacheError(KvErrorCode::unknown_key, "head " + std::to_string(head) +
                                                         " out of range");
    }
    for (std::size_t b : required_blocks) {
        plan.required.push_back({batch, head, static_cast<std::uint32_t>(b)});
    }
    std::sort(plan.required.begin(), plan.required.end());
    plan.required.erase(std::unique(plan.required.begin(), plan.required.end()),
                        plan.required.end());
    const std::size_t capacity = layouts_[0].num_blocks;
    if (plan.required.size() > capacity) {
        throw KvCacheError(KvErrorCode::capacity_exceeded,
                           std::to_string(plan.required.size()) + " required blocks exceed " +
                               std::to_string(capacity) + " fast slots for head " +
                               std::to_string(head));
    }
    for (const BlockKey& key : plan.required) {
        auto it = table_.find(key);
        if (it == table_.end()) {
            throw KvCacheError(KvErrorCode::unknown_key,
                               "required key " + describe(key) + " is not mapped in any tier");
        }
        if (it->second.tier == Tier::fast) {
            ++plan.hits;
        } else {
            plan.fetch.push_back(key);
        }
    }
    const std::size_t available = free_[0][head].size();
    if (plan.fetch.size() > available) {
        const std::size_t need = plan.fetch.size() - available;
        plan.evict = policy_->victims(head, need, plan.required);
        if (plan.evict.size() < need) {
            throw KvCacheError(KvErrorCode::capacity_exceeded,
                               "cannot free " + std::to_string(need) +
                                   " fast slots for head " + std::to_string(head));
        }
    }
    const std::size_t block_bytes = layouts_[0].bytes_per_block();
    plan.bytes_up = plan.fetch.size() * block_bytes;
    plan.bytes_down = plan.evict.size() * block_bytes;
    return plan;
}

std::byte* KvCacheManager::payload(Tier tier, std::uint32_t head, std::uint32_t slot) {
    const PhysicalLayout& l = layouts_[index(tier)];
    return arena_[index(tier)].data() + (slot * l.heads + head) * l.bytes_per_block();
}

const std::byte* KvCacheManager::payload(Tier tier, std::uint32_t head,
                                         std::uint32_t slot) const {
    const PhysicalLayout& l = layouts_[index(tier)];
    return arena_[index(tier)].data() + (slot * l.heads + head) * l.bytes_per_block();
}

void KvCacheManager::move_locked(const BlockKey& key, Tier to, const PayloadMover& mover) {
    Entry& entry = table_.at(key);
    const Tier from = entry.tier;
    const std::uint32_t new_slot = take_slot(to, key.head, key);
    if (store_payload_) {
        std::memcpy(payload(to, key.head, new_slot), payload(from, key.head, entry.slot),
                    layouts_[0].bytes_per_block());
    }
    if (mover) {
        mover(key, {from, key.head, entry.slot}, {to, key.head, new_slot});
    }
    release_slot(from, key.head, entry.slot);
    if (from == Tier::fast) {
        policy_->removed(key);
    }
    entry = Entry{to, new_slot};
}

void KvCacheManager::apply_transfers(const TransferPlan& plan, const PayloadMover& mover) {
    if (plan.empty()) {
        return;
    }
    std::unique_lock lock(mutex_);
    if (plan.generation != generation_) {
        throw KvCacheError(KvErrorCode::stale_plan,
                           "plan was made at generation " + std::to_string(plan.generation) +
                               ", tables are at " + std::to_string(generation_));
    }
    // Check room up front so a failing plan leaves the tables untouched.
    // A plan covers a single head.
    if (!plan.evict.empty() && free_[1][plan.evict.front().head].size() < plan.evict.size()) {
        throw KvCacheError(KvErrorCode::out_of_blocks,
                           "slow tier cannot absorb " + std::to_string(plan.evict.size()) +
                               " evicted blocks for head " +
                               std::to_string(plan.evict.front().head));
    }
    for (const BlockKey& key : plan.evict) {
        move_locked(key, Tier::slow, mover);
    }
    for (const BlockKey& key : plan.fetch) {
        move_locked(key, Tier::fast, mover);
    }
    ++clock_;
    for (const BlockKey& key : plan.required) {
        policy_->touched(key, clock_);
    }
    stats_.hits += plan.hits;
    stats_.required += plan.required.size();
    stats_.bytes_up += plan.bytes_up;
    stats_.bytes_down += plan.bytes_down;
    ++stats_.steps;
    ++generation_;
}

ResidencyStats KvCacheManager::residency_stats() const {
    std::shared_lock lock(mutex_);
    ResidencyStats out = stats_;
    out.hit_rate = out.required == 0
                       ? 1.0
                       : static_cast<double>(out.hits) / static_cast<double>(out.required);
    return out;
}

void KvCacheManager::reset_stats() {
    std::unique_lock lock(mutex_);
    stats_ = ResidencyStats{};
}

std::size_t KvCacheManager::free_count(Tier tier, std::uint32_t head) const {
    std::shared_lock lock(mutex_);
    return free_[index(tier)].at(head).size();
}

std::size_t KvCacheManager::mapped_count() const {
    std::shared_lock lock(mutex_);
    return table_.size();
}

std::vector<AuditRow> KvCacheManager::audit() const {
    std::shared_lock lock(mutex_);
    std::vector<AuditRow> rows;
    std::size_t owned = 0;
    for (std::size_t t = 0; t < 2; ++t) {
        const Tier tier = static_cast<Tier>(t);
        for (std::size_t h = 0; h < layouts_[t].heads; ++h) {
            std::vector<bool> seen(layouts_[t].num_blocks, false);
            for (std::uint32_t slot : free_[t][h]) {
                if (slot >= seen.size() || seen[slot] || owners_[t][h][slot]) {
                    throw std::logic_error("audit: free list of " + to_string(tier) + " head " +
                                           std::to_string(h) + " is inconsistent at slot " +
                                           std::to_string(slot));
                }
                seen[slot] = true;
            }
            for (std::size_t s = 0; s < seen.size(); ++s) {
                const auto& owner = owners_[t][h][s];
                if (!owner) {
                    if (!seen[s]) {
                        throw std::logic_error("audit: slot " + std::to_string(s) +
                                               " is neither free nor mapped");
                    }
                    continue;
                }
                auto it = table_.find(*owner);
                if (it == table_.end() || it->second.tier != tier || it->second.slot != s ||
                    owner->head != h) {
                    throw std::logic_error("audit: slot owner " + describe(*owner) +
                                           " disagrees with the table");
                }
                rows.push_back({*owner, tier, s});
                ++owned;
            }
        }
    }
    if (owned != table_.size()) {
        throw std::logic_error("audit: table has entries without a slot");
    }
    return rows;
}

std::string KvCacheManager::audit_csv() const {
    std::ostringstream out;
    out << "batch,head,block,tier,slot\n";
    for (const AuditRow& row : audit()) {
        out << row.key.batch << ',' << row.key.head << ',' << row.key.block << ','
            << to_string(row.tier) << ',' << row.slot << '\n';
    }
    return out.str();
}

void KvCacheManager::write_block(const BlockKey& key, std::span<const std::byte> bytes) {
    std::unique_lock lock(mutex_);
    if (!store_payload_) {
        throw std::logic_error("write_block: manager was built without payload storage");
    }
    auto it = table_.find(key);
    if (it == table_.end()) {
        throw KvCacheError(KvErrorCode::unknown_key, "write to unmapped key " + describe(key));
    }
    if (bytes.size() != layouts_[0].bytes_per_block()) {
        throw std::invalid_argument("write_block: expected " +
                                    std::to_string(layouts_[0].bytes_per_block()) + " bytes");
    }
    std::memcpy(payload(it->second.tier, key.head, it->second.slot), bytes.data(), bytes.size());
}

std::vector<std::byte> KvCacheManager::read_block(const BlockKey& key) const {
    std::shared_lock lock(mutex_);
    if (!store_payload_) {
        throw std::logic_error("read_block: manager was built without payload storage");
    }
    auto it = table_.find(key);
    if (it == table_.end()) {
        throw KvCacheError(KvErrorCode::unknown_key, "read of unmapped key " + describe(key));
    }
    const std::byte* src = payload(it->second.tier, key.head, it->second.slot);
    return {src, src + layouts_[0].bytes_per_block()};
}

} // namespace locsparse
