#include "locsparse/locality.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

namespace locsparse {

std::size_t intersection_size(const IndexSet& a, const IndexSet& b) {
    std::size_t count = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            ++count;
            ++ia;
            ++ib;
        }
    }
    return count;
}

double gamma(const IndexSet& prev, const IndexSet& cur) {
    if (cur.empty()) {
        throw std::invalid_argument("gamma: current selection is empty");
    }
    return static_cast<double>(intersection_size(prev, cur)) / static_cast<double>(cur.size());
}

Ratio locality_bound(const AttentionConfig& config) {
    const std::size_t total = config.topk_blocks();
    if (total == 0) {
        return {1, 1};
    }
    return {config.agnostic_blocks(), total};
}

namespace {

LocalityReport series(const DecodeTrace& trace, std::optional<Ratio> bound) {
    LocalityReport report;
    report.bound = bound;
    for (std::size_t i = 1; i < trace.steps.size(); ++i) {
        const SelectionResult& prev = trace.steps[i - 1];
        const SelectionResult& cur = trace.steps[i];
        const IndexSet prev_attended = prev.attended_blocks();
        report.gamma_attended.push_back(gamma(prev_attended, cur.attended_blocks()));
        const IndexSet topk = cur.topk_blocks();
        if (topk.empty()) {
            continue;
        }
        const std::size_t hit = intersection_size(prev_attended, topk);
        const double g = static_cast<double>(hit) / static_cast<double>(topk.size());
        report.steps.push_back(cur.step);
        report.gamma.push_back(g);
        report.min_gamma = std::min(report.min_gamma, g);
        // hit / |topk| >= num / den, cross-multiplied.
        if (bound && hit * bound->den < bound->num * topk.size()) {
            report.violations.push_back(cur.step);
        }
    }
    return report;
}

} // namespace

LocalityReport verify_locality_bound(const DecodeTrace& trace, const AttentionConfig& config) {
    return series(trace, locality_bound(config));
}

LocalityReport baseline_locality(const DecodeTrace& trace) {
    return series(trace, std::nullopt);
}

MonotoneCheck eviction_monotone_check(const DecodeTrace& trace, const AttentionConfig& config) {
    // block -> first step at which it was a candidate but not selected
    std::unordered_map<std::size_t, std::size_t> passed_over;
    MonotoneCheck result;
    for (const SelectionResult& sel : trace.steps) {
        for (std::size_t b : sel.blocks_e) {
            auto it = passed_over.find(b);
            if (it != passed_over.end()) {
                result.ok = false;
                result.first_violation = std::make_pair(it->second, sel.step);
                result.block = b;
                return result;
            }
        }
        for (std::size_t b : config.candidate_blocks(sel.step)) {
            if (!std::binary_search(sel.blocks_e.begin(), sel.blocks_e.end(), b)) {
                passed_over.try_emplace(b, sel.step);
            }
        }
    }
    return result;
}

} // namespace locsparse

