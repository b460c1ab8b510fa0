#include "experiment.hpp"

#include <set>

namespace locsparse::cli {

json to_json(const ExperimentConfig& c) {
    return {{"seed", c.seed},
            {"attention", locsparse::to_json(c.attention)},
            {"variant", to_string(c.variant)},
            {"policy", to_string(c.policy)},
            {"steps", c.steps},
            {"input_correlation", c.input_correlation},
            {"eviction_hidden", c.eviction_hidden},
            {"sim",
             {{"contexts", c.contexts},
              {"budgets_gb", c.budgets_gb},
              {"batch", c.batch},
              {"layers", c.layers},
              {"sampled_layers", c.sampled_layers},
              {"element_width", c.element_width},
              {"steps", c.sim_steps},
              {"score_dim", c.score_dim},
              {"query_correlation", c.query_correlation},
              {"threads", c.threads}}},
            {"params", c.params}};
}

std::string ConfigSource::locate(const std::string& key) const {
    if (flags.contains(key)) {
        return "--" + key + ": ";
    }
    const std::size_t line = line_of_key(text, key);
    if (line == 0) {
        return origin + ": ";
    }
    return origin + ":" + std::to_string(line) + ": ";
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const ConfigSource& src) {
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw ConfigError(src.locate(key) + "unknown field '" + key + "'");
        }
    }
}

template <class T>
void read(const json& j, const char* key, T& field, const ConfigSource& src) {
    if (!j.contains(key)) {
        return;
    }
    try {
        field = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(src.locate(key) + "field '" + key + "' has the wrong type");
    }
}

} // namespace

ExperimentConfig experiment_from_json(const json& j, const ConfigSource& src) {
    if (!j.is_object()) {
        throw ConfigError(src.origin + ": config must be a JSON object");
    }
    reject_unknown(j,
                   {"seed", "attention", "variant", "policy", "steps", "input_correlation",
                    "eviction_hidden", "sim", "params"},
                   src);
    ExperimentConfig c;
    read(j, "seed", c.seed, src);
    if (j.contains("attention")) {
        try {
            c.attention = attention_config_from_json(j.at("attention"), c.attention);
        } catch (const ConfigError& e) {
            throw ConfigError(src.locate("attention") + e.what());
        } catch (const json::exception&) {
            throw ConfigError(src.locate("attention") +
                              "attention fields must be non-negative integers");
        }
    }
    try {
        if (j.contains("variant")) {
            c.variant = variant_from_string(j.at("variant").get<std::string>());
        }
        if (j.contains("policy")) {
            c.policy = selection_policy_from_string(j.at("policy").get<std::string>());
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(src.locate(j.contains("policy") ? "policy" : "variant") +
                          e.what());
    }
    read(j, "steps", c.steps, src);
    read(j, "input_correlation", c.input_correlation, src);
    read(j, "eviction_hidden", c.eviction_hidden, src);
    read(j, "params", c.params, src);
    if (j.contains("sim")) {
        const json& s = j.at("sim");
        reject_unknown(s,
                       {"contexts", "budgets_gb", "batch", "layers", "sampled_layers", "element_width",
                        "steps", "score_dim", "query_correlation", "threads"},
                       src);
        read(s, "contexts", c.contexts, src);
        read(s, "budgets_gb", c.budgets_gb, src);
        read(s, "batch", c.batch, src);
        read(s, "layers", c.layers, src);
        read(s, "sampled_layers", c.sampled_layers, src);
        read(s, "element_width", c.element_width, src);
        read(s, "steps", c.sim_steps, src);
        read(s, "score_dim", c.score_dim, src);
        read(s, "query_correlation", c.query_correlation, src);
        read(s, "threads", c.threads, src);
    }
    return c;
}

void validate_experiment(const ExperimentConfig& c, const ConfigSource& src) {
    try {
        c.attention.validate();
    } catch (const ConfigError& e) {
        // Messages lead with the field they constrain.
        const std::string message = e.what();
        const std::string field = message.substr(0, message.find_first_of(" +"));
        throw ConfigError(src.locate(field) + message);
    }
    if (c.input_correlation < 0.0 || c.input_correlation >= 1.0) {
        throw ConfigError(src.locate("input_correlation") +
                          "input_correlation must lie in [0, 1)");
    }
    if (c.query_correlation < 0.0 || c.query_correlation >= 1.0) {
        throw ConfigError(src.locate("query_correlation") +
                          "query_correlation must lie in [0, 1)");
    }
    if (c.element_width != 2 && c.element_width != 4) {
        throw ConfigError(src.locate("element_width") + "element_width must be 2 or 4");
    }
    if (c.eviction_hidden == 0) {
        throw ConfigError(src.locate("eviction_hidden") +
                          "eviction_hidden must be positive");
    }
    if (c.layers == 0) {
        throw ConfigError(src.locate("layers") + "layers must be positive");
    }
    if (c.contexts.empty() || c.budgets_gb.empty()) {
        throw ConfigError(src.locate(c.contexts.empty() ? "contexts" : "budgets_gb") +
                          "the simulation grid must not be empty");
    }
    for (std::size_t context : c.contexts) {
        if (context == 0) {
            throw ConfigError(src.locate("contexts") + "contexts must be positive");
        }
    }
    for (double budget : c.budgets_gb) {
        if (!(budget > 0.0)) {
            throw ConfigError(src.locate("budgets_gb") + "budgets_gb must be positive");
        }
    }
    if (c.steps > c.attention.n) {
        throw ConfigError(src.locate("steps") + "steps must not exceed n");
    }
}

} // namespace locsparse::cli
