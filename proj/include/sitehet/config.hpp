#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sitehet/dataset.hpp"
#include "sitehet/eb.hpp"
#include "sitehet/meta_regression.hpp"
#include "sitehet/simulation.hpp"

namespace sitehet {

enum class OutputFormat { table, json, csv };

OutputFormat parse_format(const std::string& text);
std::string format_extension(OutputFormat f);

struct SimulationConfig {
  nlohmann::json dgp;
  nlohmann::json estimators = nlohmann::json::object();
  int replications = 0;
  unsigned threads = 0;
  /// Writes replicate 0 as a CSV dataset next to the report.
  bool dump_replicate = false;
};

/// Everything a subcommand needs. Paths are resolved against the directory of
/// the configuration file. Unknown keys are rejected.
struct RunConfig {
  std::filesystem::path input;
  ColumnMap columns;
  std::string focal_arm = "treatment";
  std::string second_arm;
  int min_per_arm = kMinPerArm;
  WeightScheme weights;
  nlohmann::json eb_targets = nlohmann::json::array({"itt", "fs"});
  /// One predictor list per regression.
  std::vector<nlohmann::json> regressions;
  Dependent dependent = Dependent::itt;
  LambdaPolicy lambda;
  GridPolicy grid;
  int bootstrap = 0;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  std::filesystem::path out;
  OutputFormat format = OutputFormat::table;
  nlohmann::json sign_tests = nlohmann::json::array({"fs"});
  bool assume_no_skew = false;
  std::optional<SimulationConfig> simulation;

  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
  /// Checks cross-field constraints (alpha range, bootstrap count, ...).
  void validate() const;
};

}  // namespace sitehet
