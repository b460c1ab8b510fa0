#include "locsparse/offload_sim.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "locsparse/kv_cache_manager.hpp"
#include "locsparse/sparse_attention.hpp"

namespace locsparse {

void CostModelParams::validate() const {
    if (!(bw_fast > 0.0) || !(bw_slow > 0.0) || !(flops > 0.0)) {
        throw std::invalid_argument("cost model: bandwidths and FLOP rate must be positive");
    }
    if (param_bytes < 0.0 || fixed_overhead_s < 0.0) {
        throw std::invalid_argument("cost model: param_bytes and fixed_overhead_s must be >= 0");
    }
    if (!(overlap >= 0.0 && overlap <= 1.0)) {
        throw std::invalid_argument("cost model: overlap must lie in [0, 1]");
    }
    // A byte fetched from the slow tier must not be cheaper than one read from
    // the fast tier; otherwise throughput would fall as the hit rate rises.
    if ((1.0 - overlap) * bw_fast < bw_slow) {
        throw std::invalid_argument(
            "cost model: (1 - overlap) * bw_fast must be at least bw_slow");
    }
}

StepCost step_cost(std::size_t batch, double attended_bytes_per_seq, double miss_bytes_per_seq,
                   const CostModelParams& params) {
    params.validate();
    if (attended_bytes_per_seq < 0.0 || miss_bytes_per_seq < 0.0) {
        throw std::invalid_argument("step_cost: byte counts must be non-negative");
    }
    const auto b = static_cast<double>(batch);
    StepCost c;
    c.t_weights = params.param_bytes / params.bw_fast;
    c.t_attn_fast = b * std::max(0.0, attended_bytes_per_seq - miss_bytes_per_seq) / params.bw_fast;
    c.t_attn_slow = b * miss_bytes_per_seq / params.bw_slow;
    const double attn = c.t_attn_fast + (1.0 - params.overlap) * c.t_attn_slow;
    c.t_total = params.fixed_overhead_s + c.t_weights + attn;
    c.attn_ratio = c.t_total > 0.0 ? attn / c.t_total : 0.0;
    return c;
}

double attended_bytes_per_seq(const AttentionConfig& config, std::size_t layers,
                              std::size_t element_width) {
    const std::size_t tokens = config.budget == BudgetMode::fixed_in_budget
                                   ? config.k
                                   : config.k + config.n_s + config.n_w;
    return 2.0 * static_cast<double>(tokens) * static_cast<double>(config.d_head) *
           static_cast<double>(element_width) * static_cast<double>(config.n_kv_head) *
           static_cast<double>(layers);
}

std::vector<ThroughputPoint> throughput_curve(std::span<const double> hit_rates,
                                              std::size_t batch, double attended_bytes,
                                              const CostModelParams& params) {
    std::vector<ThroughputPoint> out;
    out.reserve(hit_rates.size());
    for (double h : hit_rates) {
        if (!(h >= 0.0 && h <= 1.0)) {
            throw std::invalid_argument("throughput_curve: hit rate outside [0, 1]");
        }
        const StepCost c = step_cost(batch, attended_bytes, (1.0 - h) * attended_bytes, params);
        out.push_back({h, static_cast<double>(batch) / c.t_total});
    }
    return out;
}

std::string throughput_csv(const std::vector<ThroughputPoint>& curve) {
    std::ostringstream out;
    out << "hit_rate,tokens_per_s\n";
    for (const auto& p : curve) {
        out << format_double(p.hit_rate) << ',' << format_double(p.tokens_per_s) << '\n';
    }
    return out.str();
}

std::string to_string(OffloadPolicy policy) {
    switch (policy) {
    case OffloadPolicy::nosa:
        return "nosa";
    case OffloadPolicy::infllmv2_offload:
        return "infllmv2-offload";
    case OffloadPolicy::infllmv2_resident:
        return "infllmv2-resident";
    }
    throw std::invalid_argument("unknown offload policy");
}

OffloadPolicy offload_policy_from_string(const std::string& name) {
    if (name == "nosa") {
        return OffloadPolicy::nosa;
    }
    if (name == "infllmv2-offload") {
        return OffloadPolicy::infllmv2_offload;
    }
    if (name == "infllmv2-resident") {
        return OffloadPolicy::infllmv2_resident;
    }
    throw std::invalid_argument("unknown policy '" + name +
                                "' (expected nosa, infllmv2-offload or infllmv2-resident)");
}

std::size_t fast_blocks_per_sequence(const AttentionConfig& config) {
    // Window of n_w tokens touches at most n_w / n_b + 1 blocks.
    const std::size_t window = config.n_w / config.n_b + 1;
    return config.sink_blocks() + window + std::max(config.topk_blocks(), config.baseline_blocks());
}

namespace {

std::size_t block_bytes(const AttentionConfig& config, std::size_t element_width) {
    return 2 * config.n_b * config.d_head * element_width;
}

} // namespace

std::size_t memory_footprint(OffloadPolicy policy, const AttentionConfig& config,
                             std::size_t batch, std::size_t context, std::size_t layers,
                             std::size_t element_width) {
    if (policy == OffloadPolicy::infllmv2_resident) {
        return 2 * batch * context * config.d_head * config.n_kv_head * element_width * layers;
    }
    return batch * fast_blocks_per_sequence(config) * block_bytes(config, element_width) *
           config.n_kv_head * layers;
}

std::size_t max_batch(OffloadPolicy policy, const AttentionConfig& config, std::size_t context,
                      std::size_t layers, std::size_t element_width, std::size_t budget_bytes) {
    const std::size_t per_seq =
        memory_footprint(policy, config, 1, context, layers, element_width);
    return per_seq == 0 ? 0 : budget_bytes / per_seq;
}

namespace {

struct Stream {
    Matrix block_keys;
    ScoreVector block_importance;
    ScoreVector query;
    Rng rng{0};
};

} // namespace

SimReport simulate_decode(const SimConfig& config, OffloadPolicy policy,
                          const CostModelParams& params) {
    const AttentionConfig& cfg = config.attention;
    cfg.validate();
    params.validate();
    if (config.batch == 0 || config.layers == 0 || config.context == 0) {
        throw std::invalid_argument("simulate_decode: batch, layers and context must be positive");
    }
    if (config.query_correlation < 0.0 || config.query_correlation >= 1.0) {
        throw std::invalid_argument("simulate_decode: query_correlation must lie in [0, 1)");
    }
    const std::size_t total_steps = config.warmup_steps + config.steps;
    const std::size_t last_position = config.context + total_steps - 1;
    const std::size_t end_blocks = cfg.block_count(last_position);
    const std::size_t heads = cfg.n_kv_head;
    const bool resident = policy == OffloadPolicy::infllmv2_resident;

    PhysicalLayout fast{Tier::fast, 0, heads, cfg.n_b, cfg.d_head, config.element_width};
    PhysicalLayout slow = fast;
    slow.tier = Tier::slow;
    slow.num_blocks = config.batch * end_blocks;
    if (resident) {
        fast.num_blocks = config.batch * end_blocks;
    } else if (config.fast_blocks_per_head != 0) {
        fast.num_blocks = config.fast_blocks_per_head;
    } else {
        fast.num_blocks = config.batch * fast_blocks_per_sequence(cfg);
    }
    const std::size_t bytes_per_block = fast.bytes_per_block();

    // Layers are statistically identical; simulate a sample and scale bytes.
    const std::size_t sim_layers = config.sampled_layers == 0
                                       ? config.layers
                                       : std::min(config.layers, config.sampled_layers);
    const double layer_scale =
        static_cast<double>(config.layers) / static_cast<double>(sim_layers);

    std::vector<std::unique_ptr<KvCacheManager>> managers;
    for (std::size_t l = 0; l < sim_layers; ++l) {
        managers.push_back(std::make_unique<KvCacheManager>(fast, slow));
    }

    const std::size_t prefill_blocks = cfg.block_count(config.context - 1);
    std::vector<Stream> streams(sim_layers * config.batch * heads);
    for (std::size_t l = 0; l < sim_layers; ++l) {
        for (std::size_t b = 0; b < config.batch; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t id = (l * config.batch + b) * heads + h;
                Stream& s = streams[id];
                s.rng = Rng::split(config.seed, id);
                s.block_keys = random_normal(prefill_blocks, config.score_dim, s.rng);
                for (std::size_t i = 0; i < prefill_blocks; ++i) {
                    s.block_importance.push_back(s.rng.normal());
                }
                s.query = random_normal(1, config.score_dim, s.rng).data();
                for (std::size_t i = 0; i < prefill_blocks; ++i) {
                    managers[l]->allocate(resident ? Tier::fast : Tier::slow,
                                          {static_cast<std::uint32_t>(b),
                                           static_cast<std::uint32_t>(h),
                                           static_cast<std::uint32_t>(i)});
                }
            }
        }
    }

    SimReport report;
    report.policy = policy;
    report.batch = config.batch;
    report.context = config.context;
    report.layers = config.layers;
    report.fast_blocks_per_head = fast.num_blocks;
    report.memory_bytes = resident ? memory_footprint(policy, cfg, config.batch, config.context,
                                                      config.layers, config.element_width)
                                   : fast.num_blocks * bytes_per_block * heads * config.layers;
    report.steps = config.steps;
    report.bound = locality_bound(cfg);
    const std::size_t q_blocks = cfg.query_blocks();
    const std::size_t topk_total = cfg.topk_blocks();

    const double rho = config.query_correlation;
    const double innovation = std::sqrt(1.0 - rho * rho);
    std::size_t hits = 0, required = 0, topk_hits = 0, topk_required = 0;
    double step_time = 0.0, ratio = 0.0;
    std::vector<SelectionResult> selections(config.batch * heads);

    for (std::size_t step = 0; step < total_steps; ++step) {
        const std::size_t t = config.context + step;
        const bool measured = step >= config.warmup_steps;
        const bool new_block = t % cfg.n_b == 0;
        std::size_t attended_blocks = 0, charged_fetch = 0;
        for (std::size_t l = 0; l < sim_layers; ++l) {
            KvCacheManager& manager = *managers[l];
            for (std::size_t b = 0; b < config.batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    Stream& s = streams[(l * config.batch + b) * heads + h];
                    if (new_block) {
                        s.block_keys.append_row(
                            random_normal(1, config.score_dim, s.rng).data());
                        s.block_importance.push_back(s.rng.normal());
                        const BlockKey key{static_cast<std::uint32_t>(b),
                                           static_cast<std::uint32_t>(h),
                                           static_cast<std::uint32_t>(t / cfg.n_b)};
                        const bool room = manager.free_count(Tier::fast, key.head) > 0;
                        manager.allocate(room ? Tier::fast : Tier::slow, key);
                    }
                    for (double& x : s.query) {
                        x = rho * x + innovation * s.rng.normal();
                    }
                    const ScoreVector scores = query_block_scores(s.query, s.block_keys);
                    selections[b * heads + h] =
                        policy == OffloadPolicy::nosa
                            ? nosa_select(scores, s.block_importance, t, cfg)
                            : infllmv2_select(scores, t, cfg);
                }
            }
            for (std::size_t b = 0; b < config.batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const IndexSet need = selections[b * heads + h].attended_blocks();
                    manager.touch(static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(h),
                                  need);
                }
            }
            for (std::size_t b = 0; b < config.batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const SelectionResult& sel = selections[b * heads + h];
                    const IndexSet need = sel.attended_blocks();
                    const IndexSet topk = sel.topk_blocks();
                    const TransferPlan plan = manager.plan_transfers(
                        need, static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(h));
                    std::size_t fetched_new = 0, fetched_topk = 0;
                    for (const BlockKey& key : plan.fetch) {
                        if (new_block && key.block == t / cfg.n_b) {
                            ++fetched_new;
                        }
                        if (std::binary_search(topk.begin(), topk.end(), key.block)) {
                            ++fetched_topk;
                        }
                    }
                    manager.apply_transfers(plan);
                    if (!measured) {
                        continue;
                    }
                    attended_blocks += need.size();
                    charged_fetch += plan.fetch.size() - fetched_new;
                    hits += need.size() - (plan.fetch.size() - fetched_new);
                    required += need.size();
                    topk_hits += topk.size() - fetched_topk;
                    topk_required += topk.size();
                    report.max_topk_fetch = std::max(report.max_topk_fetch, fetched_topk);
                    // fetched / |topk| <= q_blocks / topk_total
                    if (fetched_topk * topk_total > q_blocks * topk.size()) {
                        ++report.topk_fetch_violations;
                    }
                }
            }
        }
        if (measured) {
            const auto batch = static_cast<double>(config.batch);
            const double attended =
                layer_scale * static_cast<double>(attended_blocks * bytes_per_block) / batch;
            const double miss =
                layer_scale * static_cast<double>(charged_fetch * bytes_per_block) / batch;
            const StepCost c = step_cost(config.batch, attended, miss, params);
            step_time += c.t_total;
            ratio += c.attn_ratio;
            report.bytes_up += static_cast<std::size_t>(
                std::llround(layer_scale * static_cast<double>(charged_fetch * bytes_per_block)));
        }
    }
    std::size_t bytes_down = 0;
    for (const auto& m : managers) {
        bytes_down += m->residency_stats().bytes_down;
    }
    report.bytes_down =
        static_cast<std::size_t>(std::llround(layer_scale * static_cast<double>(bytes_down)));
    const auto measured_steps = static_cast<double>(std::max<std::size_t>(config.steps, 1));
    report.hit_rate = required == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(required);
    report.topk_hit_rate = topk_required == 0 ? 1.0
                                              : static_cast<double>(topk_hits) /
                                                    static_cast<double>(topk_required);
    report.mean_step_s = step_time / measured_steps;
    report.attn_ratio = ratio / measured_steps;
    report.tokens_per_s =
        report.mean_step_s > 0.0 ? static_cast<double>(config.batch) / report.mean_step_s : 0.0;
    return report;
}

std::vector<GridRow> run_grid(const GridSpec& grid, const CostModelParams& params) {
    struct Task {
        std::size_t context;
        double budget_gb;
        OffloadPolicy policy;
        SimConfig config;
    };
    std::vector<Task> tasks;
    for (std::size_t context : grid.contexts) {
        for (double budget_gb : grid.budgets_gb) {
            const auto budget = static_cast<std::size_t>(std::llround(budget_gb * 1e9));
            for (OffloadPolicy policy : {OffloadPolicy::nosa, OffloadPolicy::infllmv2_offload,
                                         OffloadPolicy::infllmv2_resident}) {
                SimConfig sc;
                sc.attention = grid.attention;
                sc.attention.n = std::max(grid.attention.n, context + grid.steps + 1);
                sc.context = context;
                sc.steps = grid.steps;
                sc.layers = grid.layers;
                sc.element_width = grid.element_width;
                sc.score_dim = grid.score_dim;
                sc.query_correlation = grid.query_correlation;
                sc.seed = grid.seed;
                sc.sampled_layers = grid.sampled_layers;
                sc.batch = max_batch(policy, sc.attention, context, grid.layers,
                                     grid.element_width, budget);
                if (sc.batch == 0) {
                    continue;
                }
                tasks.push_back({context, budget_gb, policy, sc});
            }
        }
    }
    std::vector<GridRow> rows(tasks.size());
    const std::size_t width = std::max<std::size_t>(grid.threads, 1);
    for (std::size_t start = 0; start < tasks.size(); start += width) {
        std::vector<std::future<SimReport>> running;
        const std::size_t stop = std::min(tasks.size(), start + width);
        for (std::size_t i = start; i < stop; ++i) {
            running.push_back(std::async(width == 1 ? std::launch::deferred : std::launch::async,
                                         [&, i] {
                                             return simulate_decode(tasks[i].config,
                                                                    tasks[i].policy, params);
                                         }));
        }
        for (std::size_t i = start; i < stop; ++i) {
            rows[i] = {tasks[i].context, tasks[i].budget_gb, running[i - start].get()};
        }
    }
    return rows;
}

} // namespace locsparse
