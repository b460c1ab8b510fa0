// Command-line front end. Exit codes: 0 success, 1 property violation,
// 2 usage or input error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "experiment.hpp"
#include "locsparse/report.hpp"

namespace fs = std::filesystem;
using namespace locsparse;
using locsparse::cli::ConfigSource;
using locsparse::cli::ExperimentConfig;

namespace {

constexpr int kOk = 0;
constexpr int kViolation = 1;
constexpr int kUsage = 2;

// Flag overrides; each mirrors a config field of the same name.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n, d, n_head, n_kv_head, d_head, n_b, n_s, n_w, k, k_q, k_e;
    std::optional<std::string> budget, variant, policy;
    std::optional<std::size_t> steps, eviction_hidden;
    std::optional<double> input_correlation;
    std::optional<std::vector<std::size_t>> contexts;
    std::optional<std::vector<double>> budgets_gb;
    std::optional<std::size_t> batch, layers, sampled_layers, element_width, sim_steps, score_dim, threads;
    std::optional<double> query_correlation;
    std::optional<std::string> params;
};

void add_override_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--seed", o.seed);
    cmd->add_option("--n", o.n);
    cmd->add_option("--d", o.d);
    cmd->add_option("--n_head", o.n_head);
    cmd->add_option("--n_kv_head", o.n_kv_head);
    cmd->add_option("--d_head", o.d_head);
    cmd->add_option("--n_b", o.n_b);
    cmd->add_option("--n_s", o.n_s);
    cmd->add_option("--n_w", o.n_w);
    cmd->add_option("--k", o.k);
    cmd->add_option("--k_q", o.k_q);
    cmd->add_option("--k_e", o.k_e);
    cmd->add_option("--budget", o.budget, "fixed_in_budget or fixed_outside");
    cmd->add_option("--variant", o.variant, "retaining, dma, ed_dma or s_dma");
    cmd->add_option("--policy", o.policy, "nosa or infllmv2");
    cmd->add_option("--steps", o.steps, "decode steps for gen");
    cmd->add_option("--eviction_hidden", o.eviction_hidden);
    cmd->add_option("--input_correlation", o.input_correlation);
    cmd->add_option("--contexts", o.contexts, "comma-separated context lengths")->delimiter(',');
    cmd->add_option("--budgets_gb", o.budgets_gb, "comma-separated KV budgets in GB")->delimiter(',');
    cmd->add_option("--batch", o.batch, "fixed batch size; 0 derives it from each budget");
    cmd->add_option("--layers", o.layers);
    cmd->add_option("--sampled_layers", o.sampled_layers, "layers actually simulated; 0 means all");
    cmd->add_option("--element_width", o.element_width);
    cmd->add_option("--sim_steps", o.sim_steps);
    cmd->add_option("--score_dim", o.score_dim);
    cmd->add_option("--query_correlation", o.query_correlation);
    cmd->add_option("--threads", o.threads);
    cmd->add_option("--params", o.params, "cost model parameter file");
}

template <class T, class U>
void apply(const std::optional<T>& value, U& field, const char* name, std::set<std::string>& seen) {
    if (value) {
        field = *value;
        seen.insert(name);
    }
}

ExperimentConfig load_experiment(const std::string& config_path, const Overrides& o,
                                 ConfigSource& src) {
    json doc = json::object();
    if (!config_path.empty()) {
        src.origin = config_path;
        src.text = read_text_file(config_path);
        try {
            doc = json::parse(src.text);
        } catch (const json::parse_error& e) {
            throw ConfigError(config_path + ": " + e.what());
        }
    }
    ExperimentConfig c = cli::experiment_from_json(doc, src);
    auto& seen = src.flags;
    apply(o.seed, c.seed, "seed", seen);
    apply(o.n, c.attention.n, "n", seen);
    apply(o.d, c.attention.d, "d", seen);
    apply(o.n_head, c.attention.n_head, "n_head", seen);
    apply(o.n_kv_head, c.attention.n_kv_head, "n_kv_head", seen);
    apply(o.d_head, c.attention.d_head, "d_head", seen);
    apply(o.n_b, c.attention.n_b, "n_b", seen);
    apply(o.n_s, c.attention.n_s, "n_s", seen);
    apply(o.n_w, c.attention.n_w, "n_w", seen);
    apply(o.k, c.attention.k, "k", seen);
    apply(o.k_q, c.attention.k_q, "k_q", seen);
    apply(o.k_e, c.attention.k_e, "k_e", seen);
    try {
        if (o.budget) {
            c.attention.budget = budget_mode_from_string(*o.budget);
            seen.insert("budget");
        }
        if (o.variant) {
            c.variant = variant_from_string(*o.variant);
        }
        if (o.policy) {
            c.policy = selection_policy_from_string(*o.policy);
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("flag: ") + e.what());
    }
    apply(o.steps, c.steps, "steps", seen);
    apply(o.eviction_hidden, c.eviction_hidden, "eviction_hidden", seen);
    apply(o.input_correlation, c.input_correlation, "input_correlation", seen);
    apply(o.contexts, c.contexts, "contexts", seen);
    apply(o.budgets_gb, c.budgets_gb, "budgets_gb", seen);
    apply(o.batch, c.batch, "batch", seen);
    apply(o.layers, c.layers, "layers", seen);
    apply(o.sampled_layers, c.sampled_layers, "sampled_layers", seen);
    apply(o.element_width, c.element_width, "element_width", seen);
    apply(o.sim_steps, c.sim_steps, "sim_steps", seen);
    apply(o.score_dim, c.score_dim, "score_dim", seen);
    apply(o.query_correlation, c.query_correlation, "query_correlation", seen);
    apply(o.threads, c.threads, "threads", seen);
    apply(o.params, c.params, "params", seen);
    cli::validate_experiment(c, src);
    return c;
}

int cmd_gen(const ExperimentConfig& c, const fs::path& out) {
    const ModelWeights weights =
        ModelWeights::random(c.attention, c.variant, c.seed, c.eviction_hidden);
    const InputSpec inputs{c.seed, c.steps, c.input_correlation};
    const auto traces = generate_traces(weights, c.policy, inputs);
    write_file_atomic(out / "experiment.json", dump(cli::to_json(c)));
    write_file_atomic(out / "weights.json", dump(to_json(weights)));
    for (const auto& trace : traces) {
        write_file_atomic(out / ("trace_kv" + std::to_string(trace.kv_head) + ".json"),
                          dump(to_json(trace)));
    }
    std::cout << "wrote " << traces.size() << " trace(s) of " << c.steps << " steps to "
              << out.string() << "\n";
    return kOk;
}

int cmd_check_theorem(const fs::path& trace_path, bool no_bound, bool eviction,
                      const std::optional<fs::path>& out) {
    const DecodeTrace trace = trace_from_json(read_json_file(trace_path));
    trace.config.validate();
    LocalityReport report =
        no_bound ? baseline_locality(trace) : verify_locality_bound(trace, trace.config);
    json doc = to_json(report);
    doc["source"] = {{"config", to_json(trace.config)},
                     {"policy", to_string(trace.policy)},
                     {"variant", to_string(trace.variant)},
                     {"seed", trace.seed},
                     {"kv_head", trace.kv_head},
                     {"steps", trace.steps.size()}};
    int status = report.violations.empty() ? kOk : kViolation;
    if (eviction) {
        const MonotoneCheck check = eviction_monotone_check(trace, trace.config);
        doc["eviction_monotone"] = check.ok;
        if (!check.ok) {
            doc["eviction_violation"] = {{"t1", check.first_violation->first},
                                         {"t2", check.first_violation->second},
                                         {"block", *check.block}};
            std::cout << "eviction containment violated: block " << *check.block
                      << " passed over at step " << check.first_violation->first
                      << ", selected again at step " << check.first_violation->second << "\n";
            status = kViolation;
        }
    }
    if (out) {
        write_file_atomic(*out / "locality.json", dump(doc));
        write_file_atomic(*out / "locality.csv", locality_csv(report));
    }
    std::cout << "steps " << report.steps.size() << ", min gamma " << report.min_gamma;
    if (report.bound) {
        std::cout << ", bound " << report.bound->num << "/" << report.bound->den;
    }
    std::cout << "\n";
    if (!report.violations.empty()) {
        std::cout << "locality bound violated at " << report.violations.size()
                  << " step(s); first offending step " << report.violations.front() << "\n";
    }
    return status;
}

int cmd_simulate(const ExperimentConfig& c, const fs::path& out) {
    CostModelParams params;
    if (!c.params.empty()) {
        params = cost_params_from_json(read_json_file(c.params));
    }
    json rows = json::array();
    std::ostringstream csv;
    csv << "context,budget_gb,policy,batch,hit_rate,topk_hit_rate,tokens_per_s,attn_ratio\n";
    auto emit = [&](std::size_t context, double budget_gb, const SimReport& r) {
        rows.push_back({{"context", context}, {"budget_gb", budget_gb}, {"report", to_json(r)}});
        csv << context << ',' << format_double(budget_gb) << ',' << to_string(r.policy) << ','
            << r.batch << ',' << format_double(r.hit_rate) << ',' << format_double(r.topk_hit_rate)
            << ',' << format_double(r.tokens_per_s) << ',' << format_double(r.attn_ratio) << '\n';
    };
    if (c.batch != 0) {
        for (std::size_t context : c.contexts) {
            for (OffloadPolicy policy : {OffloadPolicy::nosa, OffloadPolicy::infllmv2_offload,
                                         OffloadPolicy::infllmv2_resident}) {
                SimConfig sc;
                sc.attention = c.attention;
                sc.attention.n = std::max(c.attention.n, context + c.sim_steps + 1);
                sc.context = context;
                sc.steps = c.sim_steps;
                sc.batch = c.batch;
                sc.layers = c.layers;
                sc.element_width = c.element_width;
                sc.score_dim = c.score_dim;
                sc.query_correlation = c.query_correlation;
                sc.seed = c.seed;
                sc.sampled_layers = c.sampled_layers;
                emit(context, 0.0, simulate_decode(sc, policy, params));
            }
        }
    } else {
        GridSpec grid;
        grid.attention = c.attention;
        grid.contexts = c.contexts;
        grid.budgets_gb = c.budgets_gb;
        grid.layers = c.layers;
        grid.element_width = c.element_width;
        grid.steps = c.sim_steps;
        grid.score_dim = c.score_dim;
        grid.query_correlation = c.query_correlation;
        grid.seed = c.seed;
        grid.sampled_layers = c.sampled_layers;
        grid.threads = c.threads;
        for (const GridRow& row : run_grid(grid, params)) {
            emit(row.context, row.budget_gb, row.report);
        }
    }
    json doc = {{"format", kSimFormat},
                {"config", cli::to_json(c)},
                {"params", to_json(params)},
                {"rows", rows}};
    // Curve at the first context's attended bytes, batch 1.
    std::vector<double> grid_h;
    for (int i = 0; i <= 100; ++i) {
        grid_h.push_back(i / 100.0);
    }
    const auto curve = throughput_curve(
        grid_h, std::max<std::size_t>(c.batch, 1),
        attended_bytes_per_seq(c.attention, c.layers, c.element_width), params);
    write_file_atomic(out / "sim.json", dump(doc));
    write_file_atomic(out / "sim.csv", csv.str());
    write_file_atomic(out / "throughput_curve.csv", throughput_csv(curve));
    std::cout << "wrote " << rows.size() << " simulation row(s) to " << out.string() << "\n";
    return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const fs::path& out) {
    std::vector<json> docs;
    for (const auto& path : inputs) {
        docs.push_back(read_json_file(path));
    }
    const json merged = merge_reports(docs);
    write_file_atomic(out / "report.json", dump(merged));
    write_file_atomic(out / "report.csv", report_csv(merged));
    std::cout << "merged " << merged.at("rows").size() << " row(s) into " << out.string() << "\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Locality-constrained sparse attention, KV offloading and cost simulation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    Overrides gen_over, sim_over;

    auto* gen = app.add_subcommand("gen", "Generate seeded weights and decode traces");
    gen->add_option("--config", config_path, "experiment JSON");
    gen->add_option("--out", out_dir, "output directory");
    add_override_flags(gen, gen_over);

    std::string trace_path;
    bool no_bound = false;
    bool eviction = false;
    std::string check_out;
    auto* check = app.add_subcommand("check-theorem", "Check the locality floor on a trace");
    check->add_option("--trace", trace_path, "trace JSON")->required();
    check->add_flag("--no-bound", no_bound, "report the overlap series without a floor");
    check->add_flag("--eviction", eviction, "also check eviction containment");
    check->add_option("--out", check_out, "directory for locality.json and locality.csv");

    auto* sim = app.add_subcommand("simulate", "Run the offloading simulation grid");
    sim->add_option("--config", config_path, "experiment JSON");
    sim->add_option("--out", out_dir, "output directory");
    add_override_flags(sim, sim_over);

    std::vector<std::string> inputs;
    auto* report = app.add_subcommand("report", "Merge locality and simulation outputs");
    report->add_option("--inputs", inputs, "JSON documents to merge");
    report->add_option("--out", out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (gen->parsed()) {
            ConfigSource src;
            return cmd_gen(load_experiment(config_path, gen_over, src), out_dir);
        }
        if (check->parsed()) {
            std::optional<fs::path> out;
            if (!check_out.empty()) {
                out = check_out;
            }
            return cmd_check_theorem(trace_path, no_bound, eviction, out);
        }
        if (sim->parsed()) {
            ConfigSource src;
            return cmd_simulate(load_experiment(config_path, sim_over, src), out_dir);
        }
        if (report->parsed()) {
            return cmd_report(inputs, out_dir);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
