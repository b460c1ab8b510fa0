#include "locsparse/eviction_head.hpp"

#include <cmath>
#include <stdexcept>

namespace locsparse {

std::string to_string(EvictionVariant variant) {
    switch (variant) {
    case EvictionVariant::retaining:
        return "retaining";
    case EvictionVariant::dma:
        return "dma";
    case EvictionVariant::ed_dma:
        return "ed_dma";
    case EvictionVariant::s_dma:
        return "s_dma";
    }
    throw std::invalid_argument("unknown eviction variant");
}

EvictionVariant variant_from_string(const std::string& name) {
    if (name == "retaining") {
        return EvictionVariant::retaining;
    }
    if (name == "dma") {
        return EvictionVariant::dma;
    }
    if (name == "ed_dma" || name == "ed-dma") {
        return EvictionVariant::ed_dma;
    }
    if (name == "s_dma" || name == "s-dma") {
        return EvictionVariant::s_dma;
    }
    throw std::invalid_argument("unknown eviction variant '" + name +
                                "' (expected retaining, dma, ed_dma or s_dma)");
}

std::string to_string(Activation activation) {
    return activation == Activation::sigmoid ? "sigmoid" : "silu";
}

Activation activation_from_string(const std::string& name) {
    if (name == "sigmoid") {
        return Activation::sigmoid;
    }
    if (name == "silu") {
        return Activation::silu;
    }
    throw std::invalid_argument("unknown activation '" + name + "'");
}

EvictionHead EvictionHead::random(EvictionVariant variant, std::size_t input_width,
                                  std::size_t hidden, Rng& rng) {
    EvictionHead head;
    head.variant = variant;
    head.tau = variant == EvictionVariant::retaining ? Activation::sigmoid : Activation::silu;
    const double scale = 1.0 / std::sqrt(static_cast<double>(input_width));
    head.w1 = random_normal(input_width, hidden, rng, scale);
    head.w2 = random_normal(hidden, 1, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
    return head;
}

double activate(Activation activation, double x) {
    const double sig = 1.0 / (1.0 + std::exp(-x));
    return activation == Activation::sigmoid ? sig : x * sig;
}

double importance_score(const EvictionHead& head, std::span<const double> value_row,
                        std::span<const double> hidden_row) {
    const auto input = head.variant == EvictionVariant::retaining ? hidden_row : value_row;
    if (head.w1.rows() != input.size() || head.w2.rows() != head.w1.cols() ||
        head.w2.cols() != 1) {
        throw ShapeError("importance_score: input width " + std::to_string(input.size()) +
                         " with W1 " + shape_string(head.w1) + " and W2 " +
                         shape_string(head.w2));
    }
    ScoreVector projected = vecmat(input, head.w1);
    double s = 0.0;
    for (std::size_t i = 0; i < projected.size(); ++i) {
        s += activate(head.tau, projected[i]) * head.w2(i, 0);
    }
    return head.variant == EvictionVariant::dma ? std::exp(s) : s;
}

ScoreVector importance_scores(const EvictionHead& head, const Matrix& values,
                              const Matrix& hidden, Precision precision) {
    const bool uses_hidden = head.variant == EvictionVariant::retaining;
    const Matrix& input = uses_hidden ? hidden : values;
    ScoreVector out(input.rows());
    for (std::size_t j = 0; j < input.rows(); ++j) {
        out[j] = uses_hidden ? importance_score(head, {}, input.row(j))
                             : importance_score(head, input.row(j), {});
    }
    return round_to(out, precision);
}

double logit_offset(EvictionVariant variant, double bias) {
    switch (variant) {
    case EvictionVariant::retaining:
    case EvictionVariant::ed_dma:
        return bias;
    case EvictionVariant::dma:
        if (!(bias > 0.0)) {
            throw std::domain_error("dma bias must be positive, got " + std::to_string(bias));
        }
        return std::log(bias);
    case EvictionVariant::s_dma:
        return 0.0;
    }
    throw std::invalid_argument("unknown eviction variant");
}

} // namespace locsparse
