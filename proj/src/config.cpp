#include "locsparse/config.hpp"

#include <algorithm>

namespace locsparse {

std::string to_string(BudgetMode mode) {
    return mode == BudgetMode::fixed_in_budget ? "fixed_in_budget" : "fixed_outside";
}

BudgetMode budget_mode_from_string(const std::string& name) {
    if (name == "fixed_in_budget") {
        return BudgetMode::fixed_in_budget;
    }
    if (name == "fixed_outside") {
        return BudgetMode::fixed_outside;
    }
    throw ConfigError("budget: unknown mode '" + name +
                      "' (expected fixed_in_budget or fixed_outside)");
}

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) {
        throw ConfigError(message);
    }
}

} // namespace

void AttentionConfig::validate() const {
    require(n_b > 0, "n_b must be positive");
    require(n_head > 0 && n_kv_head > 0, "n_head and n_kv_head must be positive");
    require(d_head > 0 && d > 0, "d and d_head must be positive");
    require(n_head % n_kv_head == 0, "n_head must be divisible by n_kv_head");
    require(n_s % n_b == 0, "n_s must be divisible by n_b");
    require(n_w % n_b == 0, "n_w must be divisible by n_b");
    require(k % n_b == 0, "k must be divisible by n_b");
    require(k_q % n_b == 0, "k_q must be divisible by n_b");
    require(k_e % n_b == 0, "k_e must be divisible by n_b");
    require(k == k_q + k_e, "k must equal k_q + k_e");
    require(n_s + n_w <= k, "n_s + n_w must not exceed k");
    require(k <= n, "k must not exceed n");
    if (budget == BudgetMode::fixed_in_budget) {
        require(k_q + n_s + n_w <= k, "k_q + n_s + n_w must not exceed k when sink and window "
                                      "are charged against k");
    }
}

std::size_t AttentionConfig::agnostic_topk_tokens() const {
    if (budget == BudgetMode::fixed_outside) {
        return k_e;
    }
    return k - n_s - n_w - k_q;
}

std::size_t AttentionConfig::baseline_blocks() const {
    if (budget == BudgetMode::fixed_outside) {
        return k / n_b;
    }
    return (k - n_s - n_w) / n_b;
}

std::size_t AttentionConfig::first_window_block(std::size_t t) const {
    if (n_w == 0) {
        return t / n_b;
    }
    const std::size_t first_token = t + 1 >= n_w ? t + 1 - n_w : 0;
    return first_token / n_b;
}

IndexSet AttentionConfig::candidate_blocks(std::size_t t) const {
    IndexSet out;
    for (std::size_t b = sink_blocks(); b < first_window_block(t); ++b) {
        out.push_back(b);
    }
    return out;
}

IndexSet AttentionConfig::fixed_blocks(std::size_t t) const {
    const std::size_t present = block_count(t);
    const std::size_t window_start = first_window_block(t);
    IndexSet out;
    for (std::size_t b = 0; b < std::min(sink_blocks(), present); ++b) {
        out.push_back(b);
    }
    for (std::size_t b = std::max(window_start, sink_blocks()); b < present; ++b) {
        out.push_back(b);
    }
    return out;
}

} // namespace locsparse
