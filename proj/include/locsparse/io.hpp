#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "locsparse/decode.hpp"
#include "locsparse/kv_cache_manager.hpp"
#include "locsparse/locality.hpp"
#include "locsparse/offload_sim.hpp"

namespace locsparse {

using nlohmann::json;

inline constexpr const char* kTraceFormat = "locsparse.trace/1";
inline constexpr const char* kWeightsFormat = "locsparse.weights/1";
inline constexpr const char* kLocalityFormat = "locsparse.locality/1";
inline constexpr const char* kSimFormat = "locsparse.sim/1";

json to_json(const Matrix& m);
Matrix matrix_from_json(const json& j);

json to_json(const AttentionConfig& config);
// Unknown keys are rejected; missing keys keep their defaults.
AttentionConfig attention_config_from_json(const json& j, AttentionConfig base = {});

json to_json(const EvictionHead& head);
EvictionHead eviction_head_from_json(const json& j);

json to_json(const ModelWeights& weights);
ModelWeights weights_from_json(const json& j);

json to_json(const SelectionResult& selection);
SelectionResult selection_from_json(const json& j);

json to_json(const DecodeTrace& trace);
DecodeTrace trace_from_json(const json& j);

json to_json(const LocalityReport& report);
std::string locality_csv(const LocalityReport& report);

json to_json(const ResidencyStats& stats);

json to_json(const CostModelParams& params);
CostModelParams cost_params_from_json(const json& j);

json to_json(const SimReport& report);
SimReport sim_report_from_json(const json& j);

// Canonical dump: sorted keys, 2-space indent, trailing newline.
std::string dump(const json& j);

json read_json_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

// 1-based line of the first `"key":` in a JSON document, or 0 if absent.
std::size_t line_of_key(const std::string& text, const std::string& key);

// FNV-1a over the canonical dump.
std::string config_hash(const json& config);

} // namespace locsparse
