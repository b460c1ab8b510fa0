#pragma once

#include <string>
#include <vector>

#include "locsparse/io.hpp"

namespace locsparse {

inline constexpr const char* kReportFormat = "locsparse.report/1";

// Column order of merged reports. Stable; append only.
const std::vector<std::string>& report_columns();

// Flattens a locality or simulation document into report rows. Each row
// carries `config_hash`, the hash of everything that determines it.
std::vector<json> report_rows(const json& document);

// Merges documents into one table, dropping rows whose config_hash was
// already seen. Row order follows first appearance.
json merge_reports(const std::vector<json>& documents);

std::string report_csv(const json& merged);
json report_from_csv(const std::string& csv);

} // namespace locsparse
