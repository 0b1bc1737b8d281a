#include "sitehet/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "sitehet/error.hpp"

namespace sitehet {

using nlohmann::json;

OutputFormat parse_format(const std::string& text) {
  if (text == "table") return OutputFormat::table;
  if (text == "json") return OutputFormat::json;
  if (text == "csv") return OutputFormat::csv;
  throw InputError("format must be table, json or csv, got '" + text + "'");
}

std::string format_extension(OutputFormat f) {
  switch (f) {
    case OutputFormat::table:
      return "txt";
    case OutputFormat::json:
      return "json";
    case OutputFormat::csv:
      return "csv";
  }
  return "txt";
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw InputError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw InputError("unknown key '" + it.key() + "' in " + where);
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  reject_unknown(j,
                 {"input", "columns", "focal_arm", "second_arm", "min_per_arm", "weights", "eb_targets", "predictors",
                  "regressions", "dependent", "lambda", "grid", "bootstrap", "seed", "alpha", "out", "format",
                  "sign_tests", "assume_no_skew", "simulation"},
                 "config");
  RunConfig c;
  try {
    if (j.contains("input")) c.input = resolve(base_dir, j.at("input").get<std::string>());
    if (j.contains("columns")) c.columns = ColumnMap::from_json(j.at("columns"));
    if (j.contains("focal_arm")) c.focal_arm = j.at("focal_arm").get<std::string>();
    if (j.contains("second_arm") && !j.at("second_arm").is_null()) c.second_arm = j.at("second_arm").get<std::string>();
    if (j.contains("min_per_arm")) c.min_per_arm = j.at("min_per_arm").get<int>();
    if (j.contains("weights")) c.weights = WeightScheme::from_json(j.at("weights"));
    if (j.contains("eb_targets")) c.eb_targets = j.at("eb_targets");
    if (j.contains("predictors") && j.contains("regressions"))
      throw InputError("give either 'predictors' or 'regressions', not both");
    if (j.contains("predictors")) c.regressions.push_back(j.at("predictors"));
    if (j.contains("regressions")) {
      for (const auto& r : j.at("regressions")) c.regressions.push_back(r);
    }
    if (j.contains("dependent")) {
      const auto d = j.at("dependent").get<std::string>();
      if (d == "itt") c.dependent = Dependent::itt;
      else if (d == "fs") c.dependent = Dependent::fs;
      else throw InputError("dependent must be itt or fs");
    }
    if (j.contains("lambda")) {
      const auto& l = j.at("lambda");
      if (l.is_string()) c.lambda = LambdaPolicy::parse(l.get<std::string>());
      else c.lambda = {false, l.get<double>()};
    }
    if (j.contains("grid")) c.grid.explicit_grid = j.at("grid").get<std::vector<double>>();
    if (j.contains("bootstrap")) c.bootstrap = j.at("bootstrap").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("out")) c.out = resolve(base_dir, j.at("out").get<std::string>());
    if (j.contains("format")) c.format = parse_format(j.at("format").get<std::string>());
    if (j.contains("sign_tests")) c.sign_tests = j.at("sign_tests");
    if (j.contains("assume_no_skew")) c.assume_no_skew = j.at("assume_no_skew").get<bool>();
    if (j.contains("simulation")) {
      const auto& s = j.at("simulation");
      reject_unknown(s, {"dgp", "estimators", "replications", "threads", "dump_replicate"}, "simulation");
      SimulationConfig sc;
      sc.dgp = s.value("dgp", json::object());
      sc.estimators = s.value("estimators", json::object());
      sc.replications = s.value("replications", 0);
      sc.threads = s.value("threads", 0u);
      sc.dump_replicate = s.value("dump_replicate", false);
      c.simulation = sc;
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("bad config value: ") + e.what());
  }
  if (!c.eb_targets.is_array()) throw InputError("eb_targets must be a list");
  if (!c.sign_tests.is_array()) throw InputError("sign_tests must be a list");
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

void RunConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  if (min_per_arm < kMinPerArm) throw InputError("min_per_arm can only be raised above 2");
  if (bootstrap < 0 || bootstrap == 1) throw InputError("bootstrap must be 0 (off) or at least 2");
  if (!lambda.gcv && (!(lambda.fixed >= 0.0) || !std::isfinite(lambda.fixed)))
    throw InputError("lambda must be non-negative");
  if (simulation && simulation->replications < 1) throw InputError("simulation replications must be at least 1");
}

}  // namespace sitehet
