#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "locsparse/config.hpp"
#include "locsparse/eviction_head.hpp"
#include "locsparse/sparse_attention.hpp"

namespace locsparse {

enum class SelectionPolicy { nosa, infllmv2 };

std::string to_string(SelectionPolicy policy);
SelectionPolicy selection_policy_from_string(const std::string& name);

// One attention layer's weights: projections plus one eviction head per KV head.
struct ModelWeights {
    AttentionConfig config;
    EvictionVariant variant = EvictionVariant::ed_dma;
    std::size_t eviction_hidden = 4;
    std::uint64_t seed = 0;
    Matrix w_q;  // (d x n_head*d_head)
    Matrix w_k;  // (d x n_kv_head*d_head)
    Matrix w_v;
    std::vector<EvictionHead> eviction;

    static ModelWeights random(const AttentionConfig& config, EvictionVariant variant,
                               std::uint64_t seed, std::size_t eviction_hidden = 4);

    bool operator==(const ModelWeights&) const = default;
};

struct StepOutput {
    std::vector<SelectionResult> selections;  // one per KV head
    std::vector<ScoreVector> outputs;         // one per query head; empty when disabled
};

// Single-sequence incremental decoder. Each step appends the new token's K/V
// and importance score, then selects blocks per KV head (query scores summed
// over the head's query group) and attends over positions [0, t].
class DecodeState {
  public:
    DecodeState(ModelWeights weights, SelectionPolicy policy, bool compute_outputs = true);

    StepOutput step(std::span<const double> hidden_row);

    std::size_t length() const { return tokens_; }
    const ModelWeights& weights() const { return weights_; }
    const Matrix& keys(std::size_t kv_head) const { return heads_.at(kv_head).keys; }
    const Matrix& values(std::size_t kv_head) const { return heads_.at(kv_head).values; }
    const ScoreVector& importance(std::size_t kv_head) const {
        return heads_.at(kv_head).importance;
    }
    const Matrix& hidden() const { return hidden_; }
    Matrix compressed_keys(std::size_t kv_head) const;
    ScoreVector compressed_importance(std::size_t kv_head) const;

  private:
    struct HeadState {
        Matrix keys;
        Matrix values;
        ScoreVector importance;
        Matrix key_block_sums;
        ScoreVector importance_block_sums;
    };

    ModelWeights weights_;
    SelectionPolicy policy_;
    bool compute_outputs_;
    std::size_t tokens_ = 0;
    Matrix hidden_;
    std::vector<HeadState> heads_;
};

// Selection history of one KV head.
struct DecodeTrace {
    AttentionConfig config;
    SelectionPolicy policy = SelectionPolicy::nosa;
    EvictionVariant variant = EvictionVariant::ed_dma;
    std::uint64_t seed = 0;
    std::size_t kv_head = 0;
    std::vector<SelectionResult> steps;

    bool operator==(const DecodeTrace&) const = default;
};

struct InputSpec {
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    // AR(1) correlation between consecutive hidden inputs; 0 gives i.i.d. inputs.
    double correlation = 0.0;
};

// Seeded hidden-state stream (steps x d).
Matrix generate_inputs(std::size_t d, const InputSpec& inputs);

// Decodes the seeded input stream and returns one trace per KV head.
std::vector<DecodeTrace> generate_traces(const ModelWeights& weights, SelectionPolicy policy,
                                         const InputSpec& inputs);

} // namespace locsparse
