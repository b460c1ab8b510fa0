#include "locsparse/decode.hpp"

#include <cmath>
#include <stdexcept>

namespace locsparse {

std::string to_string(SelectionPolicy policy) {
    return policy == SelectionPolicy::nosa ? "nosa" : "infllmv2";
}

SelectionPolicy selection_policy_from_string(const std::string& name) {
    if (name == "nosa") {
        return SelectionPolicy::nosa;
    }
    if (name == "infllmv2") {
        return SelectionPolicy::infllmv2;
    }
    throw std::invalid_argument("unknown selection policy '" + name +
                                "' (expected nosa or infllmv2)");
}

ModelWeights ModelWeights::random(const AttentionConfig& config, EvictionVariant variant,
                                  std::uint64_t seed, std::size_t eviction_hidden) {
    config.validate();
    ModelWeights w;
    w.config = config;
    w.variant = variant;
    w.eviction_hidden = eviction_hidden;
    w.seed = seed;
    Rng rng = Rng::split(seed, 0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.d));
    w.w_q = random_normal(config.d, config.n_head * config.d_head, rng, scale);
    w.w_k = random_normal(config.d, config.n_kv_head * config.d_head, rng, scale);
    w.w_v = random_normal(config.d, config.n_kv_head * config.d_head, rng, scale);
    const std::size_t input = variant == EvictionVariant::retaining ? config.d : config.d_head;
    for (std::size_t h = 0; h < config.n_kv_head; ++h) {
        w.eviction.push_back(EvictionHead::random(variant, input, eviction_hidden, rng));
    }
    return w;
}

DecodeState::DecodeState(ModelWeights weights, SelectionPolicy policy, bool compute_outputs)
    : weights_(std::move(weights)), policy_(policy), compute_outputs_(compute_outputs) {
    weights_.config.validate();
    if (weights_.eviction.size() != weights_.config.n_kv_head) {
        throw ShapeError("DecodeState: expected one eviction head per KV head");
    }
    heads_.resize(weights_.config.n_kv_head);
}

Matrix DecodeState::compressed_keys(std::size_t kv_head) const {
    const HeadState& head = heads_.at(kv_head);
    const std::size_t n_b = weights_.config.n_b;
    Matrix out = head.key_block_sums;
    for (std::size_t b = 0; b < out.rows(); ++b) {
        const auto count = static_cast<double>(std::min(n_b, tokens_ - b * n_b));
        for (double& v : out.row(b)) {
            v /= count;
        }
    }
    return out;
}

ScoreVector DecodeState::compressed_importance(std::size_t kv_head) const {
    const HeadState& head = heads_.at(kv_head);
    const std::size_t n_b = weights_.config.n_b;
    ScoreVector out = head.importance_block_sums;
    for (std::size_t b = 0; b < out.size(); ++b) {
        out[b] /= static_cast<double>(std::min(n_b, tokens_ - b * n_b));
    }
    return out;
}

StepOutput DecodeState::step(std::span<const double> hidden_row) {
    const AttentionConfig& cfg = weights_.config;
    if (hidden_row.size() != cfg.d) {
        throw ShapeError("decode_step: hidden row of width " + std::to_string(hidden_row.size()) +
                         ", expected " + std::to_string(cfg.d));
    }
    const std::size_t t = tokens_;
    const std::size_t dh = cfg.d_head;
    hidden_.append_row(hidden_row);
    const ScoreVector q_all = vecmat(hidden_row, weights_.w_q);
    const ScoreVector k_all = vecmat(hidden_row, weights_.w_k);
    const ScoreVector v_all = vecmat(hidden_row, weights_.w_v);
    const bool new_block = t % cfg.n_b == 0;
    ++tokens_;

    StepOutput out;
    for (std::size_t h = 0; h < cfg.n_kv_head; ++h) {
        HeadState& head = heads_[h];
        const std::span<const double> k_row(k_all.data() + h * dh, dh);
        const std::span<const double> v_row(v_all.data() + h * dh, dh);
        head.keys.append_row(k_row);
        head.values.append_row(v_row);
        const double score = importance_score(weights_.eviction[h], v_row, hidden_row);
        head.importance.push_back(score);
        if (new_block) {
            head.key_block_sums.append_row(k_row);
            head.importance_block_sums.push_back(score);
        } else {
            auto sums = head.key_block_sums.row(head.key_block_sums.rows() - 1);
            for (std::size_t c = 0; c < dh; ++c) {
                sums[c] += k_row[c];
            }
            head.importance_block_sums.back() += score;
        }

        ScoreVector group_query(dh, 0.0);
        const std::size_t group = cfg.group_size();
        for (std::size_t qh = h * group; qh < (h + 1) * group; ++qh) {
            for (std::size_t c = 0; c < dh; ++c) {
                group_query[c] += q_all[qh * dh + c];
            }
        }
        const Matrix kc = compressed_keys(h);
        const ScoreVector sec = compressed_importance(h);
        const ScoreVector query_scores = query_block_scores(group_query, kc);
        SelectionResult sel = policy_ == SelectionPolicy::nosa
                                  ? nosa_select(query_scores, sec, t, cfg)
                                  : infllmv2_select(query_scores, t, cfg);

        if (compute_outputs_) {
            const ScoreVector mask = build_token_mask(sel, t, cfg);
            const ScoreVector bias = expand_block_bias(sec, t + 1, cfg.n_b);
            for (std::size_t qh = h * group; qh < (h + 1) * group; ++qh) {
                const std::span<const double> q(q_all.data() + qh * dh, dh);
                out.outputs.push_back(
                    attend_biased(q, head.keys, head.values, mask, bias, weights_.variant));
            }
        }
        out.selections.push_back(std::move(sel));
    }
    return out;
}

Matrix generate_inputs(std::size_t d, const InputSpec& inputs) {
    if (inputs.correlation < 0.0 || inputs.correlation >= 1.0) {
        throw std::invalid_argument("input correlation must lie in [0, 1)");
    }
    Rng rng = Rng::split(inputs.seed, 1);
    Matrix out(inputs.steps, d);
    const double rho = inputs.correlation;
    const double innovation = std::sqrt(1.0 - rho * rho);
    for (std::size_t t = 0; t < inputs.steps; ++t) {
        for (std::size_t c = 0; c < d; ++c) {
            const double fresh = rng.normal();
            out(t, c) = t == 0 ? fresh : rho * out(t - 1, c) + innovation * fresh;
        }
    }
    return out;
}

std::vector<DecodeTrace> generate_traces(const ModelWeights& weights, SelectionPolicy policy,
                                         const InputSpec& inputs) {
    DecodeState state(weights, policy, /*compute_outputs=*/false);
    const Matrix hidden = generate_inputs(weights.config.d, inputs);
    std::vector<DecodeTrace> traces(weights.config.n_kv_head);
    for (std::size_t h = 0; h < traces.size(); ++h) {
        traces[h].config = weights.config;
        traces[h].policy = policy;
        traces[h].variant = weights.variant;
        traces[h].seed = inputs.seed;
        traces[h].kv_head = h;
        traces[h].steps.reserve(inputs.steps);
    }
    for (std::size_t t = 0; t < inputs.steps; ++t) {
        StepOutput step = state.step(hidden.row(t));
        for (std::size_t h = 0; h < traces.size(); ++h) {
            traces[h].steps.push_back(std::move(step.selections[h]));
        }
    }
    return traces;
}

} // namespace locsparse
