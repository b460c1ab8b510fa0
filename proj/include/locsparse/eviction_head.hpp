#pragma once

#include <string>

#include "locsparse/numerics.hpp"

namespace locsparse {

// Eviction-head families. They differ in how the per-token importance score
// is formed and in how that score enters the attention logits:
//
//   variant    importance score s_j             logit offset beta_j
//   retaining  sigmoid(h_j W1) W2               b_j
//   dma        exp(tau(v_j W1) W2)              log(b_j)   (weight b_j)
//   ed_dma     tau(v_j W1) W2                   b_j        (weight exp(b_j))
//   s_dma      tau(v_j W1) W2                   0          (b - stopgrad(b))
//
// ed_dma and s_dma share the score; s_dma's bias only carries gradient, so its
// forward attention is unbiased.
enum class EvictionVariant { retaining, dma, ed_dma, s_dma };

enum class Activation { sigmoid, silu };

std::string to_string(EvictionVariant variant);
EvictionVariant variant_from_string(const std::string& name);
std::string to_string(Activation activation);
Activation activation_from_string(const std::string& name);

struct EvictionHead {
    EvictionVariant variant = EvictionVariant::ed_dma;
    Matrix w1;  // (d_head x hidden), or (d x hidden) for retaining
    Matrix w2;  // (hidden x 1)
    Activation tau = Activation::silu;

    // Random head with the conventional activation for the variant.
    static EvictionHead random(EvictionVariant variant, std::size_t input_width,
                               std::size_t hidden, Rng& rng);
    bool operator==(const EvictionHead&) const = default;
};

double activate(Activation activation, double x);

// Per-token importance scores. `values` is (t x d_head); `hidden` is (t x d)
// and is only read by the retaining head.
ScoreVector importance_scores(const EvictionHead& head, const Matrix& values,
                              const Matrix& hidden, Precision precision = Precision::f64);

// Score of a single token.
double importance_score(const EvictionHead& head, std::span<const double> value_row,
                        std::span<const double> hidden_row);

// Additive logit offset applied by attention for a given bias value.
double logit_offset(EvictionVariant variant, double bias);

} // namespace locsparse
