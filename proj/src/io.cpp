#include "locsparse/io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace locsparse {

json to_json(const Matrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_from_json(const json& j) {
    return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                  j.at("data").get<std::vector<double>>());
}

json to_json(const AttentionConfig& c) {
    return {{"n", c.n},       {"d", c.d},     {"n_head", c.n_head}, {"n_kv_head", c.n_kv_head},
            {"d_head", c.d_head}, {"n_b", c.n_b}, {"n_s", c.n_s},       {"n_w", c.n_w},
            {"k", c.k},       {"k_q", c.k_q}, {"k_e", c.k_e},       {"budget", to_string(c.budget)}};
}

AttentionConfig attention_config_from_json(const json& j, AttentionConfig c) {
    static const std::set<std::string> known = {"n",   "d",   "n_head", "n_kv_head",
                                                "d_head", "n_b", "n_s", "n_w",
                                                "k",   "k_q", "k_e",  "budget"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw ConfigError("unknown attention config field '" + key + "'");
        }
    }
    auto read = [&](const char* key, std::size_t& field) {
        if (j.contains(key)) {
            field = j.at(key).get<std::size_t>();
        }
    };
    read("n", c.n);
    read("d", c.d);
    read("n_head", c.n_head);
    read("n_kv_head", c.n_kv_head);
    read("d_head", c.d_head);
    read("n_b", c.n_b);
    read("n_s", c.n_s);
    read("n_w", c.n_w);
    read("k", c.k);
    read("k_q", c.k_q);
    read("k_e", c.k_e);
    if (j.contains("budget")) {
        c.budget = budget_mode_from_string(j.at("budget").get<std::string>());
    }
    return c;
}

json to_json(const EvictionHead& head) {
    return {{"variant", to_string(head.variant)},
            {"tau", to_string(head.tau)},
            {"w1", to_json(head.w1)},
            {"w2", to_json(head.w2)}};
}

EvictionHead eviction_head_from_json(const json& j) {
    EvictionHead head;
    head.variant = variant_from_string(j.at("variant").get<std::string>());
    head.tau = activation_from_string(j.at("tau").get<std::string>());
    head.w1 = matrix_from_json(j.at("w1"));
    head.w2 = matrix_from_json(j.at("w2"));
    return head;
}

json to_json(const ModelWeights& w) {
    json heads = json::array();
    for (const auto& h : w.eviction) {
        heads.push_back(to_json(h));
    }
    return {{"format", kWeightsFormat},
            {"config", to_json(w.config)},
            {"variant", to_string(w.variant)},
            {"eviction_hidden", w.eviction_hidden},
            {"seed", w.seed},
            {"w_q", to_json(w.w_q)},
            {"w_k", to_json(w.w_k)},
            {"w_v", to_json(w.w_v)},
            {"eviction", heads}};
}

namespace {

void expect_format(const json& j, const char* format) {
    if (!j.contains("format") || j.at("format") != format) {
        throw std::invalid_argument(std::string("expected a document with format '") + format +
                                    "'");
    }
}

} // namespace

ModelWeights weights_from_json(const json& j) {
    expect_format(j, kWeightsFormat);
    ModelWeights w;
    w.config = attention_config_from_json(j.at("config"));
    w.variant = variant_from_string(j.at("variant").get<std::string>());
    w.eviction_hidden = j.at("eviction_hidden").get<std::size_t>();
    w.seed = j.at("seed").get<std::uint64_t>();
    w.w_q = matrix_from_json(j.at("w_q"));
    w.w_k = matrix_from_json(j.at("w_k"));
    w.w_v = matrix_from_json(j.at("w_v"));
    for (const auto& h : j.at("eviction")) {
        w.eviction.push_back(eviction_head_from_json(h));
    }
    return w;
}

json to_json(const SelectionResult& s) {
    return {{"t", s.step}, {"q", s.blocks_q}, {"e", s.blocks_e}, {"fixed", s.blocks_fixed}};
}

SelectionResult selection_from_json(const json& j) {
    SelectionResult s;
    s.step = j.at("t").get<std::size_t>();
    s.blocks_q = j.at("q").get<IndexSet>();
    s.blocks_e = j.at("e").get<IndexSet>();
    s.blocks_fixed = j.at("fixed").get<IndexSet>();
    return s;
}

json to_json(const DecodeTrace& trace) {
    json steps = json::array();
    for (const auto& s : trace.steps) {
        steps.push_back(to_json(s));
    }
    return {{"format", kTraceFormat},
            {"config", to_json(trace.config)},
            {"policy", to_string(trace.policy)},
            {"variant", to_string(trace.variant)},
            {"seed", trace.seed},
            {"kv_head", trace.kv_head},
            {"steps", steps}};
}

DecodeTrace trace_from_json(const json& j) {
    expect_format(j, kTraceFormat);
    DecodeTrace trace;
    trace.config = attention_config_from_json(j.at("config"));
    trace.policy = selection_policy_from_string(j.at("policy").get<std::string>());
    trace.variant = variant_from_string(j.at("variant").get<std::string>());
    trace.seed = j.at("seed").get<std::uint64_t>();
    trace.kv_head = j.at("kv_head").get<std::size_t>();
    for (const auto& s : j.at("steps")) {
        trace.steps.push_back(selection_from_json(s));
    }
    return trace;
}

json to_json(const LocalityReport& r) {
    json out = {{"format", kLocalityFormat},
                {"steps", r.steps},
                {"gamma", r.gamma},
                {"gamma_attended", r.gamma_attended},
                {"min_gamma", r.min_gamma},
                {"violations", r.violations}};
    if (r.bound) {
        out["bound"] = {{"num", r.bound->num}, {"den", r.bound->den}, {"value", r.bound->value()}};
    } else {
        out["bound"] = nullptr;
    }
    return out;
}

std::string locality_csv(const LocalityReport& r) {
    std::ostringstream out;
    out << "step,gamma,bound\n";
    for (std::size_t i = 0; i < r.steps.size(); ++i) {
        out << r.steps[i] << ',' << format_double(r.gamma[i]) << ',';
        if (r.bound) {
            out << format_double(r.bound->value());
        }
        out << '\n';
    }
    return out.str();
}

json to_json(const ResidencyStats& s) {
    return {{"hit_rate", s.hit_rate},   {"hits", s.hits},         {"required", s.required},
            {"bytes_up", s.bytes_up},   {"bytes_down", s.bytes_down}, {"steps", s.steps}};
}

json to_json(const CostModelParams& p) {
    return {{"bw_fast", p.bw_fast},
            {"bw_slow", p.bw_slow},
            {"flops", p.flops},
            {"param_bytes", p.param_bytes},
            {"fixed_overhead_s", p.fixed_overhead_s},
            {"overlap", p.overlap}};
}

CostModelParams cost_params_from_json(const json& j) {
    static const std::set<std::string> known = {"bw_fast",     "bw_slow",          "flops",
                                                "param_bytes", "fixed_overhead_s", "overlap"};
    CostModelParams p;
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw std::invalid_argument("unknown cost model field '" + key + "'");
        }
    }
    p.bw_fast = j.value("bw_fast", p.bw_fast);
    p.bw_slow = j.value("bw_slow", p.bw_slow);
    p.flops = j.value("flops", p.flops);
    p.param_bytes = j.value("param_bytes", p.param_bytes);
    p.fixed_overhead_s = j.value("fixed_overhead_s", p.fixed_overhead_s);
    p.overlap = j.value("overlap", p.overlap);
    p.validate();
    return p;
}

json to_json(const SimReport& r) {
    return {{"policy", to_string(r.policy)},
            {"batch", r.batch},
            {"context", r.context},
            {"layers", r.layers},
            {"fast_blocks_per_head", r.fast_blocks_per_head},
            {"memory_bytes", r.memory_bytes},
            {"steps", r.steps},
            {"hit_rate", r.hit_rate},
            {"topk_hit_rate", r.topk_hit_rate},
            {"max_topk_fetch", r.max_topk_fetch},
            {"topk_fetch_violations", r.topk_fetch_violations},
            {"bound", {{"num", r.bound.num}, {"den", r.bound.den}}},
            {"bytes_up", r.bytes_up},
            {"bytes_down", r.bytes_down},
            {"mean_step_s", r.mean_step_s},
            {"attn_ratio", r.attn_ratio},
            {"tokens_per_s", r.tokens_per_s}};
}

SimReport sim_report_from_json(const json& j) {
    SimReport r;
    r.policy = offload_policy_from_string(j.at("policy").get<std::string>());
    r.batch = j.at("batch").get<std::size_t>();
    r.context = j.at("context").get<std::size_t>();
    r.layers = j.at("layers").get<std::size_t>();
    r.fast_blocks_per_head = j.at("fast_blocks_per_head").get<std::size_t>();
    r.memory_bytes = j.at("memory_bytes").get<std::size_t>();
    r.steps = j.at("steps").get<std::size_t>();
    r.hit_rate = j.at("hit_rate").get<double>();
    r.topk_hit_rate = j.at("topk_hit_rate").get<double>();
    r.max_topk_fetch = j.at("max_topk_fetch").get<std::size_t>();
    r.topk_fetch_violations = j.at("topk_fetch_violations").get<std::size_t>();
    r.bound = {j.at("bound").at("num").get<std::size_t>(),
               j.at("bound").at("den").get<std::size_t>()};
    r.bytes_up = j.at("bytes_up").get<std::size_t>();
    r.bytes_down = j.at("bytes_down").get<std::size_t>();
    r.mean_step_s = j.at("mean_step_s").get<double>();
    r.attn_ratio = j.at("attn_ratio").get<double>();
    r.tokens_per_s = j.at("tokens_per_s").get<double>();
    return r;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
        out << contents;
        if (!out.flush()) {
            throw std::runtime_error("short write to " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

std::size_t line_of_key(const std::string& text, const std::string& key) {
    const std::string needle = "\"" + key + "\"";
    std::size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        std::size_t after = pos + needle.size();
        while (after < text.size() && (text[after] == ' ' || text[after] == '\t')) {
            ++after;
        }
        if (after < text.size() && text[after] == ':') {
            return 1 + static_cast<std::size_t>(
                           std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
        }
        pos = after;
    }
    return 0;
}

std::string config_hash(const json& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : config.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

} // namespace locsparse
