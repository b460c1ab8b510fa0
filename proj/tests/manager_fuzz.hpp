#pragma once

// Randomised operation sequence run against KvCacheManager and a plain map
// model side by side. The model tracks slots with its own LIFO stacks and
// picks victims by a linear scan for the least recently required block.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "locsparse/kv_cache_manager.hpp"
#include "locsparse/numerics.hpp"

namespace fuzz {

using namespace locsparse;

struct Outcome {
    bool ok = true;
    std::string failure;
    std::size_t operations = 0;
    std::size_t errors_checked = 0;
    std::size_t transfers = 0;
};

class Model {
  public:
    Model(std::size_t heads, std::size_t fast, std::size_t slow) : fast_slots_(fast) {
        for (int t = 0; t < 2; ++t) {
            stacks_[t].resize(heads);
            for (auto& s : stacks_[t])
                for (std::size_t i = (t == 0 ? fast : slow); i-- > 0;) s.push_back(static_cast<std::uint32_t>(i));
        }
    }

    struct Loc {
        Tier tier;
        std::uint32_t slot;
    };

    std::map<BlockKey, Loc> table;
    std::map<BlockKey, std::uint64_t> last_required;  // fast-resident only
    std::uint64_t clock = 0;

    std::optional<KvErrorCode> allocate(Tier tier, const BlockKey& k) {
        if (table.contains(k)) return KvErrorCode::duplicate_key;
        auto& st = stacks_[static_cast<int>(tier)][k.head];
        if (st.empty()) return KvErrorCode::out_of_blocks;
        table[k] = {tier, st.back()};
        st.pop_back();
        if (tier == Tier::fast) last_required[k] = clock;
        return std::nullopt;
    }

    std::optional<KvErrorCode> free(const BlockKey& k) {
        auto it = table.find(k);
        if (it == table.end()) return KvErrorCode::unknown_key;
        stacks_[static_cast<int>(it->second.tier)][k.head].push_back(it->second.slot);
        last_required.erase(k);
        table.erase(it);
        return std::nullopt;
    }

    void touch(std::uint32_t batch, std::uint32_t head, const std::vector<std::size_t>& blocks) {
        ++clock;
        for (std::size_t b : blocks) {
            const BlockKey k{batch, head, static_cast<std::uint32_t>(b)};
            auto it = table.find(k);
            if (it != table.end() && it->second.tier == Tier::fast) last_required[k] = clock;
        }
    }

    // Expected fetch and evict lists, or the error a plan must raise.
    struct Plan {
        std::optional<KvErrorCode> error;
        std::vector<BlockKey> fetch, evict, required;
        std::size_t hits = 0;
    };

    Plan plan(const std::vector<std::size_t>& blocks, std::uint32_t batch, std::uint32_t head) const {
        Plan p;
        std::map<BlockKey, bool> req;
        for (std::size_t b : blocks) req[{batch, head, static_cast<std::uint32_t>(b)}] = true;
        for (const auto& [k, _] : req) p.required.push_back(k);
        if (p.required.size() > fast_slots_) {
            p.error = KvErrorCode::capacity_exceeded;
            return p;
        }
        for (const BlockKey& k : p.required) {
            auto it = table.find(k);
            if (it == table.end()) {
                p.error = KvErrorCode::unknown_key;
                return p;
            }
            if (it->second.tier == Tier::fast) ++p.hits;
            else p.fetch.push_back(k);
        }
        const std::size_t free_fast = stacks_[0][head].size();
        if (p.fetch.size() > free_fast) {
            std::size_t need = p.fetch.size() - free_fast;
            std::vector<std::pair<std::uint64_t, BlockKey>> pool;
            for (const auto& [k, c] : last_required)
                if (k.head == head && !req.contains(k)) pool.push_back({c, k});
            std::sort(pool.begin(), pool.end());
            if (pool.size() < need) {
                p.error = KvErrorCode::capacity_exceeded;
                return p;
            }
            for (std::size_t i = 0; i < need; ++i) p.evict.push_back(pool[i].second);
        }
        return p;
    }

    std::optional<KvErrorCode> apply(const Plan& p) {
        if (p.required.empty()) return std::nullopt;  // nothing to do, clock untouched
        if (!p.evict.empty() && stacks_[1][p.evict.front().head].size() < p.evict.size())
            return KvErrorCode::out_of_blocks;
        for (const BlockKey& k : p.evict) move(k, Tier::slow);
        for (const BlockKey& k : p.fetch) move(k, Tier::fast);
        ++clock;
        for (const BlockKey& k : p.required) last_required[k] = clock;
        return std::nullopt;
    }

    std::size_t free_count(Tier t, std::uint32_t head) const { return stacks_[static_cast<int>(t)][head].size(); }

  private:
    void move(const BlockKey& k, Tier to) {
        Loc& loc = table.at(k);
        auto& dst = stacks_[static_cast<int>(to)][k.head];
        const std::uint32_t slot = dst.back();
        dst.pop_back();
        stacks_[static_cast<int>(loc.tier)][k.head].push_back(loc.slot);
        if (loc.tier == Tier::fast) last_required.erase(k);
        loc = {to, slot};
    }

    std::size_t fast_slots_;
    std::vector<std::vector<std::uint32_t>> stacks_[2];
};

inline std::string key_text(const BlockKey& k) {
    return "(" + std::to_string(k.batch) + "," + std::to_string(k.head) + "," + std::to_string(k.block) + ")";
}

inline bool same_tables(const KvCacheManager& m, const Model& ref, std::string& why) {
    std::vector<AuditRow> rows;
    try {
        rows = m.audit();
    } catch (const std::logic_error& e) {
        why = e.what();
        return false;
    }
    if (rows.size() != ref.table.size()) {
        why = "mapped " + std::to_string(rows.size()) + " vs model " + std::to_string(ref.table.size());
        return false;
    }
    for (const AuditRow& r : rows) {
        auto it = ref.table.find(r.key);
        if (it == ref.table.end() || it->second.tier != r.tier || it->second.slot != r.slot) {
            why = "entry " + key_text(r.key) + " differs from the model";
            return false;
        }
    }
    return true;
}

inline Outcome run(std::size_t operations, std::uint64_t seed) {
    constexpr std::uint32_t heads = 2, batches = 3, blocks = 16;
    constexpr std::size_t fast_slots = 8, slow_slots = 24;
    PhysicalLayout fast{Tier::fast, fast_slots, heads, 4, 2, 2};
    PhysicalLayout slow = fast;
    slow.tier = Tier::slow;
    slow.num_blocks = slow_slots;
    KvCacheManager m(fast, slow);
    Model ref(heads, fast_slots, slow_slots);
    Rng rng(seed);
    Outcome out;

    auto fail = [&](const std::string& what) {
        out.ok = false;
        out.failure = "op " + std::to_string(out.operations) + ": " + what;
    };
    auto random_key = [&] {
        return BlockKey{static_cast<std::uint32_t>(rng.below(batches)), static_cast<std::uint32_t>(rng.below(heads)),
                        static_cast<std::uint32_t>(rng.below(blocks))};
    };
    auto expect = [&](std::optional<KvErrorCode> want, auto&& action, const char* name) {
        std::optional<KvErrorCode> got;
        try {
            action();
        } catch (const KvCacheError& e) {
            got = e.code();
        }
        if (got != want) {
            fail(std::string(name) + " error mismatch");
            return false;
        }
        if (want) ++out.errors_checked;
        return true;
    };

    for (out.operations = 0; out.operations < operations && out.ok; ++out.operations) {
        const std::uint64_t op = rng.below(100);
        if (op < 30) {
            const BlockKey k = random_key();
            const Tier tier = rng.below(3) == 0 ? Tier::fast : Tier::slow;
            const auto want = ref.allocate(tier, k);
            expect(want, [&] { m.allocate(tier, k); }, "allocate");
        } else if (op < 45) {
            const BlockKey k = random_key();
            const auto want = ref.free(k);
            expect(want, [&] { m.free(k); }, "free");
        } else if (op < 60) {
            const BlockKey k = random_key();
            const auto got = m.lookup(k);
            auto it = ref.table.find(k);
            const bool match = it == ref.table.end()
                                   ? !got.has_value()
                                   : got && got->tier == it->second.tier && got->slot == it->second.slot &&
                                         got->head == k.head;
            if (!match) fail("lookup " + key_text(k));
        } else if (op < 68) {
            const auto batch = static_cast<std::uint32_t>(rng.below(batches));
            const auto head = static_cast<std::uint32_t>(rng.below(heads));
            std::vector<std::size_t> bl;
            for (std::size_t i = rng.below(6); i-- > 0;) bl.push_back(rng.below(blocks));
            ref.touch(batch, head, bl);
            m.touch(batch, head, bl);
        } else {
            const auto batch = static_cast<std::uint32_t>(rng.below(batches));
            const auto head = static_cast<std::uint32_t>(rng.below(heads));
            std::vector<std::size_t> bl;
            const bool mapped_only = rng.below(4) != 0;
            for (std::size_t i = 1 + rng.below(op < 97 ? 6 : 11); i-- > 0;) {
                const std::size_t b = rng.below(blocks);
                if (!mapped_only || ref.table.contains({batch, head, static_cast<std::uint32_t>(b)})) bl.push_back(b);
            }
            const Model::Plan want = ref.plan(bl, batch, head);
            TransferPlan got;
            if (!expect(want.error, [&] { got = m.plan_transfers(bl, batch, head); }, "plan")) break;
            if (want.error) continue;
            if (got.fetch != want.fetch || got.evict != want.evict || got.required != want.required ||
                got.hits != want.hits) {
                fail("plan contents differ");
                break;
            }
            if (got.bytes_up != want.fetch.size() * fast.bytes_per_block()) {
                fail("plan byte count");
                break;
            }
            if (op == 99) {
                // Any mutation in between makes the plan stale.
                const BlockKey k = random_key();
                if (!ref.allocate(Tier::slow, k)) m.allocate(Tier::slow, k);
                else {
                    ref.touch(batch, head, {});
                    m.touch(batch, head, {});
                }
                const auto want_err = got.empty() ? std::nullopt : std::optional{KvErrorCode::stale_plan};
                expect(want_err, [&] { m.apply_transfers(got); }, "stale apply");
                continue;
            }
            const auto apply_err = ref.apply(want);
            if (expect(apply_err, [&] { m.apply_transfers(got); }, "apply") && !apply_err) ++out.transfers;
        }
        if (out.ok && out.operations % 4096 == 0) {
            std::string why;
            if (!same_tables(m, ref, why)) fail(why);
        }
    }
    if (out.ok) {
        std::string why;
        if (!same_tables(m, ref, why)) fail(why);
        for (std::uint32_t h = 0; h < heads && out.ok; ++h)
            for (Tier t : {Tier::fast, Tier::slow})
                if (m.free_count(t, h) != ref.free_count(t, h)) fail("free count");
    }
    return out;
}

} // namespace fuzz
