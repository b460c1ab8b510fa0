#pragma once

#include <vector>

#include "locsparse/config.hpp"
#include "locsparse/eviction_head.hpp"
#include "locsparse/numerics.hpp"

namespace locsparse {

struct ProjectedQkv {
    std::vector<Matrix> q;  // n_head entries, each (n x d_head)
    std::vector<Matrix> k;  // n_kv_head entries
    std::vector<Matrix> v;  // n_kv_head entries
};

// Grouped-query projection. w_q is (d x n_head*d_head); w_k and w_v are
// (d x n_kv_head*d_head). Query head h reads KV head h / group_size.
ProjectedQkv project_qkv(const Matrix& hidden, const Matrix& w_q, const Matrix& w_k,
                         const Matrix& w_v, const AttentionConfig& config);

// Mean-pools each run of n_b rows; a trailing partial block is averaged over
// the rows it actually has.
Matrix compress_blocks(const Matrix& x, std::size_t n_b);
ScoreVector compress_scores(std::span<const double> scores, std::size_t n_b);

// One dot-product score per compressed block.
ScoreVector query_block_scores(std::span<const double> query, const Matrix& compressed_keys);

struct SelectionResult {
    std::size_t step = 0;
    IndexSet blocks_q;      // query-aware top-k blocks
    IndexSet blocks_e;      // query-agnostic top-k blocks
    IndexSet blocks_fixed;  // sink and window blocks

    // Query-aware and query-agnostic blocks together.
    IndexSet topk_blocks() const;
    // Every block attended at this step.
    IndexSet attended_blocks() const;
    // Token positions covered by attended blocks, clipped to [0, step].
    IndexSet attended_tokens(std::size_t n_b) const;

    bool operator==(const SelectionResult&) const = default;
};

// Combined selection at position t. Block score vectors are indexed by
// absolute block id and must cover every candidate block. Query-aware blocks
// are chosen first by query score; the query-agnostic budget is then filled
// from the remaining candidates by importance score. With fewer candidates
// than the combined budget every candidate is selected.
SelectionResult nosa_select(std::span<const double> query_scores,
                            std::span<const double> importance_block_scores, std::size_t t,
                            const AttentionConfig& config);

// Query-score-only baseline with the same fixed blocks.
SelectionResult infllmv2_select(std::span<const double> query_scores, std::size_t t,
                                const AttentionConfig& config);

// Mask over positions [0, t]: 0 where attended, -inf elsewhere.
ScoreVector build_token_mask(const SelectionResult& selection, std::size_t t,
                             const AttentionConfig& config);

// Per-token bias from block-compressed importance scores.
ScoreVector expand_block_bias(std::span<const double> block_scores, std::size_t tokens,
                              std::size_t n_b);

// softmax over unmasked j of (q . k_j + beta_j), applied to V. beta_j comes
// from logit_offset(variant, bias_j); masked positions get zero weight.
ScoreVector attend_biased(std::span<const double> query, const Matrix& keys,
                          const Matrix& values, std::span<const double> mask,
                          std::span<const double> bias, EvictionVariant variant);

// Loop-based reference for attend_biased with its own normalisation path.
ScoreVector dense_oracle(std::span<const double> query, const Matrix& keys, const Matrix& values,
                         std::span<const double> mask, std::span<const double> bias,
                         EvictionVariant variant);

} // namespace locsparse
