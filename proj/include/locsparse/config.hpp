#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "locsparse/numerics.hpp"

namespace locsparse {

class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// How the always-attended sink and window tokens are charged.
//  fixed_in_budget:  k includes sink + window; the free query-agnostic
//                    top-k budget is k - n_s - n_w - k_q.
//  fixed_outside:    sink + window come on top of k; the query-agnostic
//                    top-k budget is k_e.
enum class BudgetMode { fixed_in_budget, fixed_outside };

std::string to_string(BudgetMode mode);
BudgetMode budget_mode_from_string(const std::string& name);

// All counts are in tokens unless the accessor says blocks.
struct AttentionConfig {
    std::size_t n = 2048;       // maximum sequence length
    std::size_t d = 64;         // model width
    std::size_t n_head = 4;     // query heads
    std::size_t n_kv_head = 1;  // key/value heads
    std::size_t d_head = 16;
    std::size_t n_b = 32;       // block size
    std::size_t n_s = 32;       // attention sink
    std::size_t n_w = 64;       // sliding window
    std::size_t k = 512;        // total selection budget
    std::size_t k_q = 128;      // query-aware budget
    std::size_t k_e = 384;      // query-agnostic budget
    BudgetMode budget = BudgetMode::fixed_in_budget;

    // Throws ConfigError naming the first violated constraint.
    void validate() const;

    std::size_t group_size() const { return n_head / n_kv_head; }

    std::size_t sink_blocks() const { return n_s / n_b; }
    std::size_t query_blocks() const { return k_q / n_b; }
    // Query-agnostic top-k budget in tokens after fixed-block accounting.
    std::size_t agnostic_topk_tokens() const;
    std::size_t agnostic_blocks() const { return agnostic_topk_tokens() / n_b; }
    std::size_t topk_blocks() const { return query_blocks() + agnostic_blocks(); }
    // Query-score-only baseline budget, under the same accounting.
    std::size_t baseline_blocks() const;

    // Number of blocks touched by positions [0, t].
    std::size_t block_count(std::size_t t) const { return t / n_b + 1; }
    // First block overlapping the window ending at position t (the block
    // holding t when n_w == 0).
    std::size_t first_window_block(std::size_t t) const;
    // Complete blocks outside sink and window: [sink_blocks, first_window_block).
    IndexSet candidate_blocks(std::size_t t) const;
    // Sink blocks plus window blocks present at position t.
    IndexSet fixed_blocks(std::size_t t) const;

    bool operator==(const AttentionConfig&) const = default;
};

} // namespace locsparse
