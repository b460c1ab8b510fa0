#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "locsparse/config.hpp"
#include "locsparse/locality.hpp"

namespace locsparse {

// Additive roofline-style decode cost model.
struct CostModelParams {
    double bw_fast = 2.0e12;          // bytes/s, HBM class
    double bw_slow = 31.5e9;          // bytes/s, PCIe class
    double flops = 312.0e12;          // FLOP/s; carried for provenance, not used by step_cost
    double param_bytes = 2.0e9;       // weight bytes read once per step
    double fixed_overhead_s = 0.045;  // per-step time outside the bandwidth terms
    double overlap = 0.0;             // share of slow transfer hidden behind compute

    void validate() const;
    bool operator==(const CostModelParams&) const = default;
};

struct StepCost {
    double t_weights = 0.0;
    double t_attn_fast = 0.0;
    double t_attn_slow = 0.0;
    double t_total = 0.0;
    double attn_ratio = 0.0;
};

//   t_weights   = param_bytes / bw_fast
//   t_attn_fast = B * (attended - miss) / bw_fast
//   t_attn_slow = B * miss / bw_slow
//   t_total     = fixed + t_weights + t_attn_fast + (1 - overlap) * t_attn_slow
StepCost step_cost(std::size_t batch, double attended_bytes_per_seq, double miss_bytes_per_seq,
                   const CostModelParams& params);

// Bytes of K and V read per sequence per step under the configured budget.
double attended_bytes_per_seq(const AttentionConfig& config, std::size_t layers,
                              std::size_t element_width);

struct ThroughputPoint {
    double hit_rate = 0.0;
    double tokens_per_s = 0.0;
};

// tokens/s = B / t_total(h) with miss bytes = (1 - h) * attended.
std::vector<ThroughputPoint> throughput_curve(std::span<const double> hit_rates,
                                              std::size_t batch, double attended_bytes,
                                              const CostModelParams& params);
std::string throughput_csv(const std::vector<ThroughputPoint>& curve);

enum class OffloadPolicy { nosa, infllmv2_offload, infllmv2_resident };

std::string to_string(OffloadPolicy policy);
OffloadPolicy offload_policy_from_string(const std::string& name);

// Fast-tier blocks one sequence needs per KV head: the largest fixed set
// (sink, window and current block) plus the top-k budget.
std::size_t fast_blocks_per_sequence(const AttentionConfig& config);

// Resident policy: 2 * B * context * d_head * n_kv_head * element_width * layers.
// Offload policies: fast_blocks_per_head * bytes_per_block * n_kv_head * layers.
std::size_t memory_footprint(OffloadPolicy policy, const AttentionConfig& config,
                             std::size_t batch, std::size_t context, std::size_t layers,
                             std::size_t element_width);

// Largest batch whose footprint fits in `budget_bytes`.
std::size_t max_batch(OffloadPolicy policy, const AttentionConfig& config, std::size_t context,
                      std::size_t layers, std::size_t element_width, std::size_t budget_bytes);

struct SimConfig {
    AttentionConfig attention;
    std::size_t context = 16384;  // tokens already cached when decoding starts
    std::size_t steps = 16;       // measured decode steps
    std::size_t warmup_steps = 1; // cold-start steps excluded from statistics
    std::size_t batch = 1;
    std::size_t layers = 1;
    std::size_t element_width = 2;
    std::size_t score_dim = 8;         // width of synthetic block keys
    double query_correlation = 0.98;   // AR(1) coefficient of the per-step query
    std::uint64_t seed = 0;
    std::size_t fast_blocks_per_head = 0;  // 0: batch * fast_blocks_per_sequence
    std::size_t sampled_layers = 1;        // layers actually simulated; 0 means all
};

struct SimReport {
    OffloadPolicy policy = OffloadPolicy::nosa;
    std::size_t batch = 0;
    std::size_t context = 0;
    std::size_t layers = 0;
    std::size_t fast_blocks_per_head = 0;
    std::size_t memory_bytes = 0;
    std::size_t steps = 0;
    double hit_rate = 1.0;       // over every required block
    double topk_hit_rate = 1.0;  // over top-k blocks only
    std::size_t max_topk_fetch = 0;  // worst per-stream top-k fetch count in one step
    std::size_t topk_fetch_violations = 0;
    Ratio bound;
    std::size_t bytes_up = 0;
    std::size_t bytes_down = 0;
    double mean_step_s = 0.0;
    double attn_ratio = 0.0;
    double tokens_per_s = 0.0;
};

// Decodes `steps` tokens for `batch` synthetic sequences on every layer and KV
// head, runs real block selection per step, routes the required blocks through
// a two-tier KvCacheManager and prices each step with step_cost.
SimReport simulate_decode(const SimConfig& config, OffloadPolicy policy,
                          const CostModelParams& params);

struct GridSpec {
    AttentionConfig attention;
    std::vector<std::size_t> contexts;
    std::vector<double> budgets_gb;  // KV memory budgets, decimal GB
    std::size_t layers = 28;
    std::size_t element_width = 2;
    std::size_t steps = 8;
    std::size_t score_dim = 8;
    double query_correlation = 0.98;
    std::uint64_t seed = 0;
    std::size_t sampled_layers = 1;
    std::size_t threads = 1;
};

struct GridRow {
    std::size_t context = 0;
    double budget_gb = 0.0;
    SimReport report;
};

// Runs every (context, budget, policy) point. Offload policies share the
// batch size that fits the budget; the resident policy gets its own, smaller
// batch. Rows come back in grid order regardless of thread count.
std::vector<GridRow> run_grid(const GridSpec& grid, const CostModelParams& params);

} // namespace locsparse
