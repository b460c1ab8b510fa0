#include <doctest.h>

#include <cmath>
#include <limits>

#include "locsparse/decode.hpp"
#include "locsparse/eviction_head.hpp"
#include "locsparse/sparse_attention.hpp"
#include "oracles.hpp"

using namespace locsparse;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

AttentionConfig small_config() {
    AttentionConfig c;
    c.n = 256;
    c.d = 8;
    c.n_head = 2;
    c.n_kv_head = 1;
    c.d_head = 4;
    c.n_b = 4;
    c.n_s = 4;
    c.n_w = 8;
    c.k = 36;
    c.k_q = 8;
    c.k_e = 28;
    return c;
}

std::vector<double> random_scores(std::size_t n, Rng& rng, bool ties) {
    std::vector<double> s(n);
    for (auto& x : s) x = ties ? static_cast<double>(rng.below(3)) : rng.normal();
    return s;
}

} // namespace

TEST_SUITE("sparse-attention") {

TEST_CASE("config accessors at the defaults") {
    const AttentionConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.sink_blocks() == 1);
    CHECK(c.query_blocks() == 4);
    CHECK(c.agnostic_topk_tokens() == 512 - 32 - 64 - 128);
    CHECK(c.agnostic_blocks() == 9);
    CHECK(c.topk_blocks() == 13);
    CHECK(c.baseline_blocks() == (512 - 96) / 32);
}

TEST_CASE("invalid configs name the field") {
    AttentionConfig c;
    c.k_q = 100;  // not a block multiple
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("k_q"), ConfigError);
    c = {};
    c.n_kv_head = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.n_b = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("candidate and fixed blocks partition the present blocks") {
    const AttentionConfig c = small_config();
    for (std::size_t t = 0; t < 200; ++t) {
        const IndexSet cand = c.candidate_blocks(t);
        REQUIRE(cand == oracle::candidates(t, c));
        const IndexSet fixed = c.fixed_blocks(t);
        IndexSet all;
        std::set_union(cand.begin(), cand.end(), fixed.begin(), fixed.end(),
                       std::back_inserter(all));
        REQUIRE(all.size() == cand.size() + fixed.size());
        REQUIRE(all.size() == c.block_count(t));
        // window tokens are all covered by fixed blocks
        for (std::size_t j = t + 1 > c.n_w ? t + 1 - c.n_w : 0; j <= t; ++j)
            REQUIRE(std::binary_search(fixed.begin(), fixed.end(), j / c.n_b));
    }
}

TEST_CASE("mean pooling of blocks") {
    const Matrix x{{1, 10}, {3, 20}, {5, 30}, {7, 40}, {9, 50}};
    const Matrix c = compress_blocks(x, 2);
    CHECK(c == Matrix{{2, 15}, {6, 35}, {9, 50}});
    const std::vector<double> s{1, 2, 3, 4, 5, 6, 7};
    CHECK(compress_scores(s, 3) == ScoreVector{2, 5, 7});
    CHECK_THROWS_AS(compress_blocks(x, 0), std::invalid_argument);
}

TEST_CASE("query block scores are q . K_c") {
    Rng rng(2);
    const Matrix k = random_normal(37, 5, rng);
    const Matrix q = random_normal(1, 5, rng);
    const Matrix kc = compress_blocks(k, 8);
    CHECK(kc.rows() == 5);
    const auto s = query_block_scores(q.row(0), kc);
    for (std::size_t b = 0; b < kc.rows(); ++b) {
        double mean_dot = 0.0;
        const std::size_t last = std::min<std::size_t>(k.rows(), (b + 1) * 8);
        for (std::size_t j = b * 8; j < last; ++j) mean_dot += dot(q.row(0), k.row(j));
        mean_dot /= static_cast<double>(last - b * 8);
        CHECK(s[b] == doctest::Approx(mean_dot).epsilon(1e-12));
    }
}

TEST_CASE("nosa selection sets are disjoint, sized and inside the candidates") {
    const AttentionConfig c = small_config();
    Rng rng(7);
    for (std::size_t t = 0; t < 250; ++t) {
        const std::size_t blocks = c.block_count(t);
        const auto qs = random_scores(blocks, rng, t % 3 == 0);
        const auto es = random_scores(blocks, rng, t % 3 == 0);
        const SelectionResult sel = nosa_select(qs, es, t, c);
        const IndexSet cand = c.candidate_blocks(t);
        IndexSet both;
        std::set_intersection(sel.blocks_q.begin(), sel.blocks_q.end(), sel.blocks_e.begin(),
                              sel.blocks_e.end(), std::back_inserter(both));
        REQUIRE(both.empty());
        REQUIRE(sel.blocks_q.size() == std::min(c.query_blocks(), cand.size()));
        REQUIRE(sel.topk_blocks().size() == std::min(c.topk_blocks(), cand.size()));
        const IndexSet topk = sel.topk_blocks();
        REQUIRE(std::includes(cand.begin(), cand.end(), topk.begin(), topk.end()));
        REQUIRE(topk == oracle::lifted_select(qs, es, t, c));
        REQUIRE(sel.blocks_fixed == c.fixed_blocks(t));
    }
}

TEST_CASE("k_q = 0 selects by importance only") {
    AttentionConfig c = small_config();
    c.k_q = 0;
    c.k_e = 36;
    Rng rng(3);
    const std::size_t t = 120;
    const auto qs = random_scores(c.block_count(t), rng, false);
    const auto es = random_scores(c.block_count(t), rng, false);
    const SelectionResult sel = nosa_select(qs, es, t, c);
    CHECK(sel.blocks_q.empty());
    CHECK(sel.blocks_e == oracle::sort_topk(c.candidate_blocks(t), es, c.agnostic_blocks()));
}

TEST_CASE("baseline picks query top blocks with the larger budget") {
    const AttentionConfig c = small_config();
    Rng rng(4);
    const std::size_t t = 150;
    const auto qs = random_scores(c.block_count(t), rng, false);
    const SelectionResult sel = infllmv2_select(qs, t, c);
    CHECK(sel.blocks_e.empty());
    CHECK(sel.blocks_q == oracle::sort_topk(c.candidate_blocks(t), qs, c.baseline_blocks()));
}

TEST_CASE("short score vectors are rejected") {
    const AttentionConfig c = small_config();
    const std::vector<double> s(3, 0.0);
    CHECK_THROWS_AS(nosa_select(s, s, 100, c), ShapeError);
    CHECK_THROWS_AS(infllmv2_select(s, 100, c), ShapeError);
}

TEST_CASE("token mask matches block membership") {
    const AttentionConfig c = small_config();
    Rng rng(8);
    for (std::size_t t = 0; t < 120; t += 7) {
        const auto qs = random_scores(c.block_count(t), rng, false);
        const auto es = random_scores(c.block_count(t), rng, false);
        const SelectionResult sel = nosa_select(qs, es, t, c);
        const ScoreVector mask = build_token_mask(sel, t, c);
        const auto want = oracle::attended_positions(sel, t, c.n_b);
        REQUIRE(mask.size() == t + 1);
        for (std::size_t j = 0; j <= t; ++j) REQUIRE((mask[j] == 0.0) == want[j]);
        for (std::size_t j = 0; j <= t; ++j) REQUIRE((mask[j] == 0.0 || mask[j] == -kInf));
        // sink and the current token are always visible
        REQUIRE(mask[0] == 0.0);
        REQUIRE(mask[t] == 0.0);
    }
    const SelectionResult sel = nosa_select(std::vector<double>(4), std::vector<double>(4), 12, c);
    CHECK_THROWS(build_token_mask(sel, 13, c));
}

TEST_CASE("block bias expands to tokens") {
    const std::vector<double> b{1.0, 2.0};
    CHECK(expand_block_bias(b, 5, 3) == ScoreVector{1, 1, 1, 2, 2});
    CHECK_THROWS_AS(expand_block_bias(b, 7, 3), ShapeError);
}

TEST_CASE("attention matches the dense oracle for every variant") {
    Rng rng(12);
    for (EvictionVariant v : {EvictionVariant::retaining, EvictionVariant::dma,
                              EvictionVariant::ed_dma, EvictionVariant::s_dma}) {
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t t = 1 + rng.below(40), d = 1 + rng.below(8);
            const Matrix k = random_normal(t, d, rng), val = random_normal(t, d, rng);
            const Matrix q = random_normal(1, d, rng);
            std::vector<double> mask(t, 0.0), bias(t);
            for (auto& m : mask) m = rng.uniform() < 0.3 ? -kInf : 0.0;
            mask[t - 1] = 0.0;
            for (auto& b : bias) b = v == EvictionVariant::dma ? std::exp(rng.normal()) : rng.normal();
            const auto got = attend_biased(q.row(0), k, val, mask, bias, v);
            const auto want = dense_oracle(q.row(0), k, val, mask, bias, v);
            for (std::size_t c = 0; c < d; ++c) REQUIRE(got[c] == doctest::Approx(want[c]).epsilon(1e-10));
        }
    }
}

TEST_CASE("masked positions contribute nothing") {
    const Matrix k{{1.0}, {100.0}};
    const Matrix v{{1.0}, {-50.0}};
    const std::vector<double> q{1.0}, mask{0.0, -kInf}, bias{0.0, 0.0};
    CHECK(attend_biased(q, k, v, mask, bias, EvictionVariant::ed_dma) == ScoreVector{1.0});
}

TEST_CASE("eviction head scores and offsets by variant") {
    Rng rng(21);
    EvictionHead ed = EvictionHead::random(EvictionVariant::ed_dma, 4, 3, rng);
    EvictionHead dma = ed;
    dma.variant = EvictionVariant::dma;
    EvictionHead sd = ed;
    sd.variant = EvictionVariant::s_dma;
    const Matrix v = random_normal(5, 4, rng), h;
    const auto e = importance_scores(ed, v, h);
    const auto x = importance_scores(dma, v, h);
    const auto s = importance_scores(sd, v, h);
    for (std::size_t j = 0; j < 5; ++j) {
        CHECK(std::exp(e[j]) == doctest::Approx(x[j]).epsilon(1e-12));
        CHECK(e[j] == s[j]);
        CHECK(logit_offset(EvictionVariant::dma, x[j]) == doctest::Approx(e[j]).epsilon(1e-12));
    }
    CHECK(logit_offset(EvictionVariant::s_dma, 3.0) == 0.0);
    CHECK(logit_offset(EvictionVariant::ed_dma, 3.0) == 3.0);
    CHECK_THROWS_AS(logit_offset(EvictionVariant::dma, 0.0), std::domain_error);
    CHECK(activate(Activation::sigmoid, 0.0) == 0.5);
    CHECK(activate(Activation::silu, 0.0) == 0.0);
    CHECK(ed.tau == Activation::silu);
    CHECK(EvictionHead::random(EvictionVariant::retaining, 8, 3, rng).tau == Activation::sigmoid);
}

TEST_CASE("retaining head reads hidden states") {
    Rng rng(22);
    const EvictionHead head = EvictionHead::random(EvictionVariant::retaining, 6, 3, rng);
    const Matrix v = random_normal(2, 4, rng), h = random_normal(2, 6, rng);
    const auto s = importance_scores(head, v, h);
    double want = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        double z = 0.0;
        for (std::size_t c = 0; c < 6; ++c) z += h(1, c) * head.w1(c, i);
        want += 1.0 / (1.0 + std::exp(-z)) * head.w2(i, 0);
    }
    CHECK(s[1] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("variant names round-trip") {
    for (EvictionVariant v : {EvictionVariant::retaining, EvictionVariant::dma,
                              EvictionVariant::ed_dma, EvictionVariant::s_dma}) {
        CHECK(variant_from_string(to_string(v)) == v);
    }
    CHECK(variant_from_string("ed-dma") == EvictionVariant::ed_dma);
    CHECK_THROWS(variant_from_string("nope"));
}

TEST_CASE("f32 importance scores can flip a near-tie selection") {
    // Two blocks whose importance differs below single precision.
    AttentionConfig c = small_config();
    c.k_q = 0;
    c.k = 8;
    c.k_e = 8;
    c.n_w = 4;
    c.n_s = 0;
    c.validate();
    const std::size_t t = 11;  // candidates 0 and 1, one agnostic slot
    REQUIRE(c.candidate_blocks(t) == IndexSet{0, 1});
    REQUIRE(c.agnostic_blocks() == 1);
    const std::vector<double> es{1.0, 1.0 + 1e-12, 0.0};
    const std::vector<double> qs(3, 0.0);
    CHECK(nosa_select(qs, es, t, c).blocks_e == IndexSet{1});
    const auto rounded = round_to(es, Precision::f32);
    CHECK(nosa_select(qs, rounded, t, c).blocks_e == IndexSet{0});
}

TEST_CASE("incremental decode matches batch recomputation") {
    AttentionConfig c = small_config();
    c.n = 64;
    const ModelWeights w = ModelWeights::random(c, EvictionVariant::ed_dma, 5);
    DecodeState state(w, SelectionPolicy::nosa, true);
    const Matrix inputs = generate_inputs(c.d, {5, 40, 0.5});
    for (std::size_t t = 0; t < inputs.rows(); ++t) {
        const StepOutput out = state.step(inputs.row(t));
        REQUIRE(out.selections.size() == c.n_kv_head);
        REQUIRE(out.outputs.size() == c.n_head);
    }
    const ProjectedQkv qkv = project_qkv(inputs, w.w_q, w.w_k, w.w_v, c);
    CHECK(state.keys(0) == qkv.k[0]);
    CHECK(state.compressed_keys(0) == compress_blocks(qkv.k[0], c.n_b));
    const auto imp = importance_scores(w.eviction[0], qkv.v[0], inputs);
    for (std::size_t j = 0; j < imp.size(); ++j) CHECK(state.importance(0)[j] == doctest::Approx(imp[j]));

    // The last step's output equals masked biased attention recomputed from scratch.
    const std::size_t t = inputs.rows() - 1;
    DecodeState replay(w, SelectionPolicy::nosa, true);
    StepOutput last;
    for (std::size_t i = 0; i <= t; ++i) last = replay.step(inputs.row(i));
    const SelectionResult& sel = last.selections[0];
    const ScoreVector mask = build_token_mask(sel, t, c);
    const ScoreVector bias =
        expand_block_bias(compress_scores(imp, c.n_b), t + 1, c.n_b);
    for (std::size_t h = 0; h < c.n_head; ++h) {
        const auto want = dense_oracle(qkv.q[h].row(t), qkv.k[0], qkv.v[0], mask, bias,
                                       EvictionVariant::ed_dma);
        for (std::size_t i = 0; i < want.size(); ++i)
            CHECK(last.outputs[h][i] == doctest::Approx(want[i]).epsilon(1e-10));
    }
}

TEST_CASE("traces are reproducible from the seed") {
    const AttentionConfig c = small_config();
    const ModelWeights w = ModelWeights::random(c, EvictionVariant::ed_dma, 9);
    const auto a = generate_traces(w, SelectionPolicy::nosa, {9, 100, 0.9});
    const auto b = generate_traces(ModelWeights::random(c, EvictionVariant::ed_dma, 9),
                                   SelectionPolicy::nosa, {9, 100, 0.9});
    CHECK(a == b);
    const auto other = generate_traces(ModelWeights::random(c, EvictionVariant::ed_dma, 10),
                                       SelectionPolicy::nosa, {10, 100, 0.9});
    CHECK_FALSE(a == other);
}

}
