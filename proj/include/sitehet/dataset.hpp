#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace sitehet {

/// One experimental unit: site, assignment arm, take-up, outcome, mediators.
struct UnitRecord {
  std::string site_id;
  std::string arm;
  int d = 0;
  double y = 0.0;
  std::vector<double> m;
  double unit_weight = 1.0;
};

/// Maps logical fields onto the columns of a delimited input file.
struct ColumnMap {
  std::string site = "site";
  std::string arm = "arm";
  std::string d = "d";
  std::string y = "y";
  std::vector<std::string> mediators;
  std::optional<std::string> unit_weight;
  /// Site-level covariates. Each must be constant within a site.
  std::vector<std::string> site_covariates;
  /// Declared arm labels. Rows with any other label are an error.
  std::vector<std::string> arms = {"control", "treatment"};
  std::string control_arm = "control";
  /// 0 means "detect from the header" (tab if present, otherwise comma).
  char delimiter = 0;

  /// Reads a mapping such as
  /// {"site": "office", "arm": "group", "mediators": ["search"], "arms": [...]}.
  /// Unknown keys are rejected.
  static ColumnMap from_json(const nlohmann::json& j);
};

/// Site-level observed covariates, NaN where a site has no value.
struct CovariateTable {
  std::vector<std::string> names;
  std::map<std::string, std::vector<double>> values;

  /// Index of a covariate by name; throws InputError if absent.
  std::size_t index_of(const std::string& name) const;
};

struct RowDiagnostic {
  std::size_t row = 0;  // 1-based data row (the header is row 0)
  std::string message;
};

struct Dataset {
  /// Sorted by site id, then canonically within site, so every downstream
  /// statistic is invariant to the order of rows in the input file.
  std::vector<UnitRecord> records;
  std::vector<std::string> arm_set;
  std::string control_arm = "control";
  std::string focal_arm;
  std::vector<std::string> mediator_names;
  CovariateTable covariates;
  /// Rows skipped because a mapped cell was missing.
  std::vector<RowDiagnostic> rejected_rows;

  std::vector<std::string> site_ids() const;
  std::size_t site_count() const { return site_ids().size(); }
  bool has_arm(const std::string& arm) const;
};

/// Loads a delimited text file. Throws InputError on a missing file or column,
/// a non-numeric cell, an out-of-domain take-up value, an unknown arm label,
/// a site covariate that varies within a site, or an empty file. Rows with a
/// missing (empty or NA) mapped cell are skipped and listed in rejected_rows.
Dataset load_dataset(const std::filesystem::path& path, const ColumnMap& columns);
Dataset parse_dataset(std::istream& in, const ColumnMap& columns);

/// Puts records in canonical order. Called by the loaders; exposed for code
/// that assembles a Dataset by hand.
void canonicalize(Dataset& ds);

struct FilterLog {
  struct Dropped {
    std::string site_id;
    int n_treated = 0;
    int n_control = 0;
    std::string reason;
  };
  std::vector<Dropped> dropped;
  std::size_t retained = 0;
};

inline constexpr int kMinPerArm = 2;

/// Sets the focal arm and drops sites with fewer than min_per_arm focal or
/// control units. Units of other arms in retained sites are kept (they feed
/// second-arm predictors) but never enter focal-arm statistics.
std::pair<Dataset, FilterLog> restrict_and_filter(const Dataset& ds, const std::string& focal_arm,
                                                  int min_per_arm = kMinPerArm);

enum class WeightKind { equal, proportional, custom };

struct WeightScheme {
  WeightKind kind = WeightKind::equal;
  std::map<std::string, double> custom;

  static WeightScheme from_json(const nlohmann::json& j);
};

/// Normalized site weights w_s (summing to one), aligned with the sorted site
/// ids of the dataset they were resolved against.
struct Weights {
  std::vector<std::string> site_ids;
  std::vector<double> w;

  std::size_t size() const { return w.size(); }
  /// Rescaled weight S * w_s.
  double tilde(std::size_t s) const { return static_cast<double>(w.size()) * w[s]; }

  static Weights equal(std::vector<std::string> site_ids);
  /// Normalizes arbitrary positive raw weights.
  static Weights normalized(std::vector<std::string> site_ids, const std::vector<double>& raw);
  /// Restricts to a subset of positions and renormalizes.
  Weights subset(const std::vector<std::size_t>& keep) const;
};

/// Equal: 1/S. Proportional: total unit_weight of focal and control units
/// (the unit count when no weight column is mapped). Custom: user values,
/// normalized; every retained site needs a positive entry.
Weights resolve_weights(const Dataset& ds, const WeightScheme& scheme);

}  // namespace sitehet
