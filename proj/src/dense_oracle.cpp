// Reference attention written independently of attend_biased: scores are
// formed with explicit loops, the bias is applied as a multiplicative weight
// where the variant defines one, and normalisation is done in a separate pass.

#include <cmath>
#include <limits>
#include <stdexcept>

#include "locsparse/sparse_attention.hpp"

namespace locsparse {

ScoreVector dense_oracle(std::span<const double> query, const Matrix& keys, const Matrix& values,
                         std::span<const double> mask, std::span<const double> bias,
                         EvictionVariant variant) {
    const std::size_t t = keys.rows();
    if (values.rows() != t || mask.size() != t || bias.size() != t || keys.cols() != query.size()) {
        throw ShapeError("dense_oracle: inconsistent shapes");
    }
    std::vector<bool> open(t);
    std::vector<double> raw(t, 0.0);
    bool any = false;
    for (std::size_t j = 0; j < t; ++j) {
        open[j] = std::isfinite(mask[j]);
        any = any || open[j];
        double s = 0.0;
        for (std::size_t c = 0; c < keys.cols(); ++c) {
            s += query[c] * keys(j, c);
        }
        raw[j] = s;
    }
    if (!any) {
        throw std::invalid_argument("dense_oracle: every position is masked");
    }

    // exponent_j is the part that goes through exp(); factor_j multiplies it.
    std::vector<double> exponent(t), factor(t, 1.0);
    for (std::size_t j = 0; j < t; ++j) {
        switch (variant) {
        case EvictionVariant::dma:
            exponent[j] = raw[j];
            factor[j] = bias[j];
            break;
        case EvictionVariant::ed_dma:
        case EvictionVariant::retaining:
            exponent[j] = raw[j] + bias[j];
            break;
        case EvictionVariant::s_dma:
            exponent[j] = raw[j] + (bias[j] - bias[j]);
            break;
        }
    }
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < t; ++j) {
        if (open[j] && exponent[j] > shift) {
            shift = exponent[j];
        }
    }

    std::vector<double> numer(values.cols(), 0.0);
    double denom = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
        if (!open[j]) {
            continue;
        }
        const double w = factor[j] * std::exp(exponent[j] - shift);
        denom += w;
        for (std::size_t c = 0; c < values.cols(); ++c) {
            numer[c] += w * values(j, c);
        }
    }
    for (double& x : numer) {
        x /= denom;
    }
    return numer;
}

} // namespace locsparse
