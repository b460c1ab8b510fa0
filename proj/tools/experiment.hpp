#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "locsparse/io.hpp"

namespace locsparse::cli {

// Everything a command needs, resolved from a config file plus flag overrides.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    AttentionConfig attention;
    EvictionVariant variant = EvictionVariant::ed_dma;
    SelectionPolicy policy = SelectionPolicy::nosa;
    std::size_t steps = 256;
    double input_correlation = 0.0;
    std::size_t eviction_hidden = 4;

    // Simulation grid.
    std::vector<std::size_t> contexts = {16384};
    std::vector<double> budgets_gb = {17.5};
    std::size_t batch = 0;  // 0: derive from each budget
    std::size_t layers = 28;
    std::size_t sampled_layers = 1;  // layers actually simulated; 0 means all
    std::size_t element_width = 2;
    std::size_t sim_steps = 8;
    std::size_t score_dim = 8;
    double query_correlation = 0.98;
    std::size_t threads = 1;
    std::string params;  // cost model JSON path; empty for built-in defaults
};

json to_json(const ExperimentConfig& config);

// Where config values came from, for diagnostics: `text` is the raw config
// file (used to find a field's line), `origin` its name, and `flags` the
// fields that were overridden on the command line.
struct ConfigSource {
    std::string text;
    std::string origin = "<config>";
    std::set<std::string> flags;

    // "file:line: ", "--field: " or "file: ".
    std::string locate(const std::string& key) const;
};

ExperimentConfig experiment_from_json(const json& j, const ConfigSource& source);

// Validates and rethrows ConfigError prefixed with the failing field's location.
void validate_experiment(const ExperimentConfig& config, const ConfigSource& source);

} // namespace locsparse::cli
