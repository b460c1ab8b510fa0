#include "locsparse/report.hpp"

#include <charconv>
#include <set>
#include <sstream>
#include <stdexcept>

namespace locsparse {

namespace {

enum class Kind { text, integer, real };

struct Column {
    std::string name;
    Kind kind;
};

const std::vector<Column>& columns() {
    static const std::vector<Column> cols = {
        {"kind", Kind::text},          {"config_hash", Kind::text},
        {"policy", Kind::text},        {"context", Kind::integer},
        {"budget_gb", Kind::real},     {"batch", Kind::integer},
        {"hit_rate", Kind::real},      {"topk_hit_rate", Kind::real},
        {"tokens_per_s", Kind::real},  {"attn_ratio", Kind::real},
        {"min_gamma", Kind::real},     {"bound", Kind::real},
        {"violations", Kind::integer},
    };
    return cols;
}

json blank_row() {
    json row = json::object();
    for (const auto& c : columns()) {
        row[c.name] = nullptr;
    }
    return row;
}

} // namespace

const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& c : columns()) {
            out.push_back(c.name);
        }
        return out;
    }();
    return names;
}

std::vector<json> report_rows(const json& document) {
    const std::string format = document.value("format", "");
    std::vector<json> rows;
    if (format == kLocalityFormat) {
        json row = blank_row();
        row["kind"] = "locality";
        row["config_hash"] =
            config_hash({{"source", document.at("source")}, {"bound", document.at("bound")}});
        row["policy"] = document.at("source").at("policy");
        row["min_gamma"] = document.at("min_gamma");
        if (!document.at("bound").is_null()) {
            row["bound"] = document.at("bound").at("value");
        }
        row["violations"] = document.at("violations").size();
        rows.push_back(row);
    } else if (format == kSimFormat) {
        for (const auto& entry : document.at("rows")) {
            const json& r = entry.at("report");
            json row = blank_row();
            row["kind"] = "sim";
            row["config_hash"] = config_hash({{"config", document.at("config")},
                                              {"params", document.at("params")},
                                              {"context", entry.at("context")},
                                              {"budget_gb", entry.at("budget_gb")},
                                              {"policy", r.at("policy")}});
            row["policy"] = r.at("policy");
            row["context"] = entry.at("context");
            row["budget_gb"] = entry.at("budget_gb");
            row["batch"] = r.at("batch");
            row["hit_rate"] = r.at("hit_rate");
            row["topk_hit_rate"] = r.at("topk_hit_rate");
            row["tokens_per_s"] = r.at("tokens_per_s");
            row["attn_ratio"] = r.at("attn_ratio");
            row["violations"] = r.at("topk_fetch_violations");
            rows.push_back(row);
        }
    } else if (format == kReportFormat) {
        for (const auto& row : document.at("rows")) {
            rows.push_back(row);
        }
    } else {
        throw std::invalid_argument("report: unsupported document format '" + format + "'");
    }
    return rows;
}

json merge_reports(const std::vector<json>& documents) {
    json merged = {{"format", kReportFormat}, {"columns", report_columns()}, {"rows", json::array()}};
    std::set<std::string> seen;
    for (const auto& doc : documents) {
        for (auto& row : report_rows(doc)) {
            if (seen.insert(row.at("config_hash").get<std::string>()).second) {
                merged["rows"].push_back(std::move(row));
            }
        }
    }
    return merged;
}

std::string report_csv(const json& merged) {
    std::ostringstream out;
    const auto& cols = columns();
    for (std::size_t i = 0; i < cols.size(); ++i) {
        out << (i ? "," : "") << cols[i].name;
    }
    out << '\n';
    for (const auto& row : merged.at("rows")) {
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (i) {
                out << ',';
            }
            const json& v = row.at(cols[i].name);
            if (v.is_null()) {
                continue;
            }
            if (cols[i].kind == Kind::text) {
                out << v.get<std::string>();
            } else if (cols[i].kind == Kind::integer) {
                out << v.get<std::uint64_t>();
            } else {
                out << format_double(v.get<double>());
            }
        }
        out << '\n';
    }
    return out.str();
}

json report_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) {
        throw std::invalid_argument("report csv: missing header");
    }
    const auto& cols = columns();
    std::string expected;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        expected += (i ? "," : "") + cols[i].name;
    }
    if (line != expected) {
        throw std::invalid_argument("report csv: unexpected header '" + line + "'");
    }
    json merged = {{"format", kReportFormat}, {"columns", report_columns()}, {"rows", json::array()}};
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) {
                break;
            }
            start = comma + 1;
        }
        if (cells.size() != cols.size()) {
            throw std::invalid_argument("report csv: row has " + std::to_string(cells.size()) +
                                        " cells");
        }
        json row = blank_row();
        for (std::size_t i = 0; i < cols.size(); ++i) {
            const std::string& cell = cells[i];
            if (cell.empty()) {
                continue;
            }
            switch (cols[i].kind) {
            case Kind::text:
                row[cols[i].name] = cell;
                break;
            case Kind::integer:
                row[cols[i].name] = std::stoull(cell);
                break;
            case Kind::real:
                row[cols[i].name] = std::stod(cell);
                break;
            }
        }
        merged["rows"].push_back(row);
    }
    return merged;
}

} // namespace locsparse
