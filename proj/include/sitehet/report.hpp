#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sitehet/config.hpp"
#include "sitehet/dataset.hpp"
#include "sitehet/site_stats.hpp"

namespace sitehet {

using Cell = std::variant<std::monostate, std::string, double, long long>;

struct Table {
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;
  std::vector<std::string> notes;
};

/// Rounded rendering used in human tables: 3 decimals, or 3 significant
/// digits for magnitudes below 0.01.
std::string round_cell(double v);

struct Report {
  std::string command;
  nlohmann::json data = nlohmann::json::object();
  std::vector<Table> tables;
  std::vector<std::string> diagnostics;
  int exit_code = 0;
  /// Additional files (name, contents) written next to the report.
  std::vector<std::pair<std::string, std::string>> files;
};

std::string render(const Report& report, OutputFormat format);

/// Prints the report and, when out_dir is set, writes <command>.<ext> and any
/// extra files there.
void emit(const Report& report, OutputFormat format, const std::filesystem::path& out_dir, std::ostream& out);

/// Shared ingest pipeline: load, restrict to the focal arm, weight, summarize.
struct Prepared {
  Dataset filtered;
  FilterLog log;
  Weights weights;
  std::vector<SiteSummary> sites;
  /// Input caveats copied into each report's diagnostics.
  std::vector<std::string> notes;
};

Prepared prepare(const RunConfig& cfg);

Report run_summarize(const RunConfig& cfg);
Report run_eb(const RunConfig& cfg);
Report run_metareg(const RunConfig& cfg);
Report run_late(const RunConfig& cfg);
Report run_simulate(const RunConfig& cfg);

}  // namespace sitehet
