#include "locsparse/sparse_attention.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>

namespace locsparse {

ProjectedQkv project_qkv(const Matrix& hidden, const Matrix& w_q, const Matrix& w_k,
                         const Matrix& w_v, const AttentionConfig& config) {
    const std::size_t dh = config.d_head;
    if (hidden.cols() != config.d || w_q.rows() != config.d || w_k.rows() != config.d ||
        w_v.rows() != config.d || w_q.cols() != config.n_head * dh ||
        w_k.cols() != config.n_kv_head * dh || w_v.cols() != config.n_kv_head * dh) {
        throw ShapeError("project_qkv: H " + shape_string(hidden) + ", W_Q " +
                         shape_string(w_q) + ", W_K " + shape_string(w_k) + ", W_V " +
                         shape_string(w_v) + " inconsistent with d=" + std::to_string(config.d) +
                         ", heads=" + std::to_string(config.n_head) + "/" +
                         std::to_string(config.n_kv_head) + ", d_head=" + std::to_string(dh));
    }
    const Matrix q = matmul(hidden, w_q);
    const Matrix k = matmul(hidden, w_k);
    const Matrix v = matmul(hidden, w_v);
    ProjectedQkv out;
    for (std::size_t h = 0; h < config.n_head; ++h) {
        out.q.push_back(q.col_slice(h * dh, dh));
    }
    for (std::size_t h = 0; h < config.n_kv_head; ++h) {
        out.k.push_back(k.col_slice(h * dh, dh));
        out.v.push_back(v.col_slice(h * dh, dh));
    }
    return out;
}

Matrix compress_blocks(const Matrix& x, std::size_t n_b) {
    if (n_b == 0) {
        throw std::invalid_argument("compress_blocks: n_b must be positive");
    }
    const std::size_t blocks = (x.rows() + n_b - 1) / n_b;
    Matrix out(blocks, x.cols());
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t first = b * n_b;
        const std::size_t last = std::min(first + n_b, x.rows());
        auto dst = out.row(b);
        for (std::size_t r = first; r < last; ++r) {
            auto src = x.row(r);
            for (std::size_t c = 0; c < x.cols(); ++c) {
                dst[c] += src[c];
            }
        }
        const auto count = static_cast<double>(last - first);
        for (double& v : dst) {
            v /= count;
        }
    }
    return out;
}

ScoreVector compress_scores(std::span<const double> scores, std::size_t n_b) {
    Matrix column(scores.size(), 1, std::vector<double>(scores.begin(), scores.end()));
    return compress_blocks(column, n_b).data();
}

ScoreVector query_block_scores(std::span<const double> query, const Matrix& compressed_keys) {
    if (!compressed_keys.empty() && query.size() != compressed_keys.cols()) {
        throw ShapeError("query_block_scores: query of width " + std::to_string(query.size()) +
                         " against K_c " + shape_string(compressed_keys));
    }
    return matvec(compressed_keys, query);
}

IndexSet SelectionResult::topk_blocks() const {
    IndexSet out;
    std::set_union(blocks_q.begin(), blocks_q.end(), blocks_e.begin(), blocks_e.end(),
                   std::back_inserter(out));
    return out;
}

IndexSet SelectionResult::attended_blocks() const {
    IndexSet topk = topk_blocks();
    IndexSet out;
    std::set_union(topk.begin(), topk.end(), blocks_fixed.begin(), blocks_fixed.end(),
                   std::back_inserter(out));
    return out;
}

IndexSet SelectionResult::attended_tokens(std::size_t n_b) const {
    IndexSet out;
    for (std::size_t b : attended_blocks()) {
        const std::size_t first = b * n_b;
        const std::size_t last = std::min(first + n_b, step + 1);
        for (std::size_t j = first; j < last; ++j) {
            out.push_back(j);
        }
    }
    return out;
}

namespace {

void check_cover(std::span<const double> scores, std::size_t t, const AttentionConfig& config,
                 const char* what) {
    const std::size_t needed = config.first_window_block(t);
    if (scores.size() < needed) {
        throw ShapeError(std::string(what) + ": " + std::to_string(scores.size()) +
                         " block scores cannot cover " + std::to_string(needed) +
                         " blocks before the window at t=" + std::to_string(t));
    }
}

// Top `count` of `pool` (absolute block ids) by `scores`, lowest id on ties.
IndexSet top_of(const IndexSet& pool, std::span<const double> scores, std::size_t count) {
    ScoreVector gathered(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        gathered[i] = scores[pool[i]];
    }
    IndexSet picked = argtopk(gathered, std::min(count, pool.size()));
    for (std::size_t& i : picked) {
        i = pool[i];
    }
    return picked;
}

} // namespace

SelectionResult nosa_select(std::span<const double> query_scores,
                            std::span<const double> importance_block_scores, std::size_t t,
                            const AttentionConfig& config) {
    check_cover(query_scores, t, config, "nosa_select");
    check_cover(importance_block_scores, t, config, "nosa_select");
    SelectionResult out;
    out.step = t;
    out.blocks_fixed = config.fixed_blocks(t);
    const IndexSet candidates = config.candidate_blocks(t);
    out.blocks_q = top_of(candidates, query_scores, config.query_blocks());
    IndexSet remaining;
    std::set_difference(candidates.begin(), candidates.end(), out.blocks_q.begin(),
                        out.blocks_q.end(), std::back_inserter(remaining));
    out.blocks_e = top_of(remaining, importance_block_scores, config.agnostic_blocks());
    return out;
}

SelectionResult infllmv2_select(std::span<const double> query_scores, std::size_t t,
                                const AttentionConfig& config) {
    check_cover(query_scores, t, config, "infllmv2_select");
    SelectionResult out;
    out.step = t;
    out.blocks_fixed = config.fixed_blocks(t);
    out.blocks_q = top_of(config.candidate_blocks(t), query_scores, config.baseline_blocks());
    return out;
}

ScoreVector build_token_mask(const SelectionResult& selection, std::size_t t,
                             const AttentionConfig& config) {
    if (selection.step != t) {
        throw std::invalid_argument("build_token_mask: selection is for step " +
                                    std::to_string(selection.step) + ", not " +
                                    std::to_string(t));
    }
    ScoreVector mask(t + 1, -std::numeric_limits<double>::infinity());
    for (std::size_t j : selection.attended_tokens(config.n_b)) {
        mask[j] = 0.0;
    }
    return mask;
}

ScoreVector expand_block_bias(std::span<const double> block_scores, std::size_t tokens,
                              std::size_t n_b) {
    if (block_scores.size() * n_b < tokens) {
        throw ShapeError("expand_block_bias: " + std::to_string(block_scores.size()) +
                         " blocks cannot cover " + std::to_string(tokens) + " tokens");
    }
    ScoreVector out(tokens);
    for (std::size_t j = 0; j < tokens; ++j) {
        out[j] = block_scores[j / n_b];
    }
    return out;
}

namespace {

void check_attention_shapes(std::span<const double> query, const Matrix& keys,
                            const Matrix& values, std::span<const double> mask,
                            std::span<const double> bias, const char* what) {
    const std::size_t t = keys.rows();
    if (values.rows() != t || mask.size() != t || bias.size() != t || keys.cols() != query.size()) {
        throw ShapeError(std::string(what) + ": query " + std::to_string(query.size()) +
                         ", K " + shape_string(keys) + ", V " + shape_string(values) +
                         ", mask " + std::to_string(mask.size()) + ", bias " +
                         std::to_string(bias.size()));
    }
}

} // namespace

ScoreVector attend_biased(std::span<const double> query, const Matrix& keys,
                          const Matrix& values, std::span<const double> mask,
                          std::span<const double> bias, EvictionVariant variant) {
    check_attention_shapes(query, keys, values, mask, bias, "attend_biased");
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    ScoreVector logits(keys.rows(), neg_inf);
    for (std::size_t j = 0; j < keys.rows(); ++j) {
        if (mask[j] != neg_inf) {
            logits[j] = dot(query, keys.row(j)) + logit_offset(variant, bias[j]) + mask[j];
        }
    }
    const ScoreVector weights = softmax_stable(logits);
    ScoreVector out(values.cols(), 0.0);
    for (std::size_t j = 0; j < values.rows(); ++j) {
        if (weights[j] == 0.0) {
            continue;
        }
        auto v = values.row(j);
        for (std::size_t c = 0; c < out.size(); ++c) {
            out[c] += weights[j] * v[c];
        }
    }
    return out;
}

} // namespace locsparse
