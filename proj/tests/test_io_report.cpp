#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "locsparse/io.hpp"
#include "locsparse/report.hpp"

using namespace locsparse;
namespace fs = std::filesystem;

namespace {

AttentionConfig small() {
    AttentionConfig c;
    c.n = 128;
    c.d = 8;
    c.n_head = 2;
    c.d_head = 4;
    c.n_b = 8;
    c.n_s = 8;
    c.n_w = 16;
    c.k = 48;
    c.k_q = 8;
    c.k_e = 40;
    return c;
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "locsparse_io_test";
    fs::create_directories(dir);
    return dir / name;
}

json locality_doc(const DecodeTrace& trace, bool bound) {
    const LocalityReport r = bound ? verify_locality_bound(trace, trace.config) : baseline_locality(trace);
    json doc = to_json(r);
    doc["source"] = {{"config", to_json(trace.config)}, {"policy", "nosa"}, {"seed", trace.seed}};
    return doc;
}

} // namespace

TEST_SUITE("io-report") {

TEST_CASE("config round-trips and rejects unknown keys") {
    const AttentionConfig c = small();
    CHECK(attention_config_from_json(to_json(c)) == c);
    json j = to_json(c);
    j["mystery"] = 1;
    CHECK_THROWS_WITH(attention_config_from_json(j), doctest::Contains("mystery"));
    json partial = {{"k_q", 0}, {"k_e", 512}};
    const AttentionConfig p = attention_config_from_json(partial);
    CHECK(p.k_q == 0);
    CHECK(p.n == AttentionConfig{}.n);
}

TEST_CASE("weights and traces round-trip exactly") {
    const AttentionConfig c = small();
    const ModelWeights w = ModelWeights::random(c, EvictionVariant::retaining, 3);
    CHECK(weights_from_json(json::parse(dump(to_json(w)))) == w);
    const auto traces = generate_traces(w, SelectionPolicy::nosa, {3, 80, 0.5});
    const DecodeTrace back = trace_from_json(json::parse(dump(to_json(traces[0]))));
    CHECK(back == traces[0]);
    json bad = to_json(traces[0]);
    bad["format"] = "something/9";
    CHECK_THROWS(trace_from_json(bad));
}

TEST_CASE("cost params and sim reports round-trip") {
    CostModelParams p;
    p.overlap = 0.25;
    CHECK(cost_params_from_json(to_json(p)) == p);
    json j = to_json(p);
    j["bw_slow"] = -1.0;
    CHECK_THROWS(cost_params_from_json(j));
    SimReport r;
    r.policy = OffloadPolicy::infllmv2_offload;
    r.batch = 7;
    r.hit_rate = 0.123456789012345678;
    r.bound = {3, 4};
    const SimReport back = sim_report_from_json(json::parse(dump(to_json(r))));
    CHECK(back.batch == 7);
    CHECK(back.hit_rate == r.hit_rate);
    CHECK(back.policy == r.policy);
    CHECK(back.bound == r.bound);
}

TEST_CASE("canonical dump is stable") {
    const json a = json::parse(R"({"b": 1, "a": [1.5, 2]})");
    const json b = json::parse(R"({"a": [1.5, 2], "b": 1})");
    CHECK(dump(a) == dump(b));
    CHECK(dump(a).back() == '\n');
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    CHECK(config_hash(a) != config_hash(json{{"a", 1}}));
}

TEST_CASE("atomic write replaces the file and leaves no temporary") {
    const fs::path p = scratch("atomic.txt");
    write_file_atomic(p, "first");
    write_file_atomic(p, "second");
    CHECK(read_text_file(p) == "second");
    CHECK_FALSE(fs::exists(p.string() + ".tmp"));
    CHECK_THROWS(read_text_file(scratch("missing.json")));
}

TEST_CASE("line of key") {
    const std::string text = "{\n  \"a\": 1,\n  \"k\": 2\n}\n";
    CHECK(line_of_key(text, "k") == 3);
    CHECK(line_of_key(text, "z") == 0);
}

TEST_CASE("locality csv") {
    LocalityReport r;
    r.steps = {4, 5};
    r.gamma = {1.0, 0.75};
    r.bound = Ratio{3, 4};
    CHECK(locality_csv(r) == "step,gamma,bound\n4,1,0.75\n5,0.75,0.75\n");
    r.bound.reset();
    CHECK(locality_csv(r) == "step,gamma,bound\n4,1,\n5,0.75,\n");
}

TEST_CASE("merging drops repeated configs and keeps order") {
    const AttentionConfig c = small();
    const ModelWeights w = ModelWeights::random(c, EvictionVariant::ed_dma, 1);
    const auto t1 = generate_traces(w, SelectionPolicy::nosa, {1, 60, 0.5});
    const json a = locality_doc(t1[0], true);
    const json b = locality_doc(t1[0], false);
    const json merged = merge_reports({a, b, a});
    REQUIRE(merged.at("rows").size() == 2);
    CHECK(merged["rows"][0]["bound"] == a["bound"]["value"]);
    CHECK(merged["rows"][1]["bound"].is_null());
    // merging a merged report is idempotent
    CHECK(merge_reports({merged, a}) == merged);
}

TEST_CASE("report csv round-trips") {
    const AttentionConfig c = small();
    const ModelWeights w = ModelWeights::random(c, EvictionVariant::ed_dma, 2);
    const auto t = generate_traces(w, SelectionPolicy::nosa, {2, 60, 0.5});
    json sim = {{"format", kSimFormat},
                {"config", {{"seed", 1}}},
                {"params", to_json(CostModelParams{})},
                {"rows", json::array()}};
    SimReport r;
    r.batch = 12;
    r.hit_rate = 1.0 / 3.0;
    r.tokens_per_s = 1234.5678;
    sim["rows"].push_back({{"context", 8192}, {"budget_gb", 13.13}, {"report", to_json(r)}});
    const json merged = merge_reports({locality_doc(t[0], true), sim});
    const std::string csv = report_csv(merged);
    CHECK(report_from_csv(csv) == merged);
    CHECK(report_csv(report_from_csv(csv)) == csv);
    CHECK(csv.find("13.13,") != std::string::npos);
}

TEST_CASE("empty input gives a header-only report") {
    const json merged = merge_reports({});
    const std::string csv = report_csv(merged);
    CHECK(csv == "kind,config_hash,policy,context,budget_gb,batch,hit_rate,topk_hit_rate,"
                 "tokens_per_s,attn_ratio,min_gamma,bound,violations\n");
    CHECK(report_from_csv(csv) == merged);
    CHECK_THROWS(report_rows(json{{"format", "other"}}));
}

}
