#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "locsparse/decode.hpp"
#include "locsparse/numerics.hpp"

namespace locsparse {

// |prev ∩ cur| / |cur|. Both sets sorted ascending; cur must be non-empty.
double gamma(const IndexSet& prev, const IndexSet& cur);
std::size_t intersection_size(const IndexSet& a, const IndexSet& b);

// Exact ratio num/den.
struct Ratio {
    std::size_t num = 0;
    std::size_t den = 1;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool operator==(const Ratio&) const = default;
};

// Guaranteed overlap floor for the combined selection: agnostic / (query + agnostic)
// top-k blocks. 1 when the query-aware budget is zero.
Ratio locality_bound(const AttentionConfig& config);

struct LocalityReport {
    // Per-step overlap for steps t >= 1 that selected at least one top-k
    // block: the share of this step's top-k blocks that were attended at t-1.
    std::vector<std::size_t> steps;
    std::vector<double> gamma;
    // Overlap of the full attended block sets at t and t-1, for every t >= 1.
    std::vector<double> gamma_attended;
    double min_gamma = 1.0;
    std::optional<Ratio> bound;
    std::vector<std::size_t> violations;
};

// Checks the locality floor on every step, in exact integer arithmetic.
LocalityReport verify_locality_bound(const DecodeTrace& trace, const AttentionConfig& config);

// Same series without asserting a floor.
LocalityReport baseline_locality(const DecodeTrace& trace);

struct MonotoneCheck {
    bool ok = true;
    // (t1, t2): the block was passed over at t1 and selected again at t2.
    std::optional<std::pair<std::size_t, std::size_t>> first_violation;
    std::optional<std::size_t> block;
};

// Eviction containment over the query-agnostic sets: for all t1 < t2,
// blocks_e(t2) ⊆ blocks_e(t1) ∪ {blocks that became candidates in (t1, t2]}.
// Runs in one pass; a block violates exactly when it is selected after a step
// at which it was a candidate and was not selected.
MonotoneCheck eviction_monotone_check(const DecodeTrace& trace, const AttentionConfig& config);

} // namespace locsparse
