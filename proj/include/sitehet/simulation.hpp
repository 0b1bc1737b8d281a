#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sitehet/dataset.hpp"
#include "sitehet/eb.hpp"
#include "sitehet/meta_regression.hpp"
#include "sitehet/site_stats.hpp"

namespace sitehet {

/// Bounded distribution of a site parameter, sampled through its quantile
/// function so draws can be stratified.
struct Law {
  enum class Kind { constant, uniform, two_point, grid };
  Kind kind = Kind::constant;
  double lo = 0.0;
  double hi = 0.0;
  int levels = 2;

  static Law constant(double v) { return {Kind::constant, v, v, 1}; }
  static Law uniform(double lo, double hi) { return {Kind::uniform, lo, hi, 0}; }
  static Law two_point(double lo, double hi) { return {Kind::two_point, lo, hi, 2}; }
  static Law grid(double lo, double hi, int levels) { return {Kind::grid, lo, hi, levels}; }

  double quantile(double u) const;
  double min() const { return lo; }
  double max() const { return kind == Kind::constant ? lo : hi; }

  /// {"law": "uniform", "lo": 0, "hi": 1}, {"law": "constant", "value": v},
  /// {"law": "two_point", ...}, {"law": "grid", "lo", "hi", "levels"}, or a bare number.
  static Law from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct MediatorLaw {
  std::string name;
  double intercept = 0.0;
  double slope = 0.0;  // on ITT_s
  Law law = Law::constant(0.0);
  double noise = 1.0;
  double rho = 0.0;  // correlation of unit noise with outcome noise
};

struct SecondArmLaw {
  double fraction = 0.0;
  double intercept = 0.0;
  double slope = 0.0;  // on ITT_s
  Law law = Law::constant(0.0);
  double noise = 0.0;
};

struct CovariateLaw {
  std::string name;
  Law law = Law::constant(0.0);
  double effect = 0.0;  // added to LATE_s per unit of the covariate
};

enum class FsLateLink { independent, crossed, linear };

struct DgpConfig {
  int sites = 100;
  int n_min = 10;
  int n_max = 10;
  double p_treat = 0.5;
  bool proportional_weights = false;
  Law y0 = Law::constant(0.0);
  Law fs = Law::constant(1.0);
  Law late = Law::constant(0.0);
  FsLateLink link = FsLateLink::independent;
  /// Crossed designs place FS on this many levels and LATE on sites / fs_levels.
  int fs_levels = 0;
  double link_slope = 0.0;
  /// Standard deviations of the bounded (uniform) unit noises.
  double y_noise = 1.0;
  double gain_noise = 0.0;
  std::vector<MediatorLaw> mediators;
  std::optional<SecondArmLaw> second_arm;
  std::vector<CovariateLaw> covariates;

  /// Throws InputError on any inconsistency.
  void validate() const;
  static DgpConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct SiteParams {
  std::string id;
  int n = 0;
  int n1 = 0;
  int n2 = 0;
  double y0 = 0.0;
  double fs = 0.0;
  double late = 0.0;
  double itt = 0.0;
  double itt2 = 0.0;
  std::vector<double> itt_m;
  std::vector<double> x;
};

/// Finite-population targets evaluated directly from the site parameters.
struct TruthRecord {
  double itt = 0.0;
  double fs = 0.0;
  double late = 0.0;
  double sigma2_itt = 0.0;
  double sigma2_fs = 0.0;
  std::vector<double> sigma2_itt_m;
  /// Uses the FS-weighted weights w_s FS_s / FS.
  double sigma2_late = 0.0;
};

struct Population {
  DgpConfig cfg;
  std::vector<SiteParams> sites;
  Weights weights;
  TruthRecord truth;
  CovariateTable covariates;
  std::vector<std::string> mediator_names;

  /// True value of predictor k for site s (the quantity its estimator targets).
  double predictor_value(const PredictorEntry& e, std::size_t s) const;
};

Population draw_population(const DgpConfig& cfg, std::uint64_t seed);

/// True coefficients of the weighted ridge of ITT_s (or FS_s) on the true
/// predictors, and the implied covariance-sign quantities for scalar X.
Eigen::VectorXd true_beta(const Population& pop, const PredictorSpec& spec, double lambda = 0.0,
                          Dependent dep = Dependent::itt);
/// beta_ITT - LATE * beta_FS for a scalar predictor.
double true_sign_stat(const Population& pop, const PredictorEntry& x);

/// Unit draws and complete randomization for one replication.
std::vector<SiteSummary> draw_summaries(const Population& pop, std::uint64_t seed, std::uint64_t replication);
/// The same replication as a dataset (arms control / treatment / second).
Dataset draw_dataset(const Population& pop, std::uint64_t seed, std::uint64_t replication);
/// Writes a dataset as comma-separated text loadable with the default column map.
void write_dataset_csv(const Dataset& ds, std::ostream& out);

struct SuiteConfig {
  std::vector<EbTarget> eb = {{EbTargetKind::itt, 0}, {EbTargetKind::fs, 0}};
  PredictorSpec predictors;
  std::optional<PredictorEntry> sign_test;
  bool sigma2_late = false;
  bool gcv = false;
  GridPolicy grid;
  double alpha = 0.05;

  static SuiteConfig from_json(const nlohmann::json& j, const std::vector<std::string>& mediator_names);
};

struct McRow {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double mc_se = 0.0;
  /// bias / mc_se.
  double z = 0.0;
  double mean_se = 0.0;
  /// Share of normal CIs covering the truth; share of |est / se| above the
  /// critical value (a size or power figure when truth is or is not zero).
  double coverage = 0.0;
  double rejection = 0.0;
  int used = 0;
  int failed = 0;
  bool has_se = false;

  bool within(double k) const { return std::abs(bias) <= k * mc_se; }
};

struct GcvSummary {
  int used = 0;
  /// Share of replications with |beta(lambda*) - beta|^2 <= |beta(0) - beta|^2.
  double share_not_worse = 0.0;
  double share_positive_lambda = 0.0;
  double mse_star = 0.0;
  double mse_zero = 0.0;
  double mean_lambda = 0.0;
};

struct McSummary {
  int replications = 0;
  std::uint64_t seed = 0;
  std::vector<McRow> rows;
  std::optional<GcvSummary> gcv;

  const McRow& row(const std::string& name) const;
};

/// Runs R replications in parallel; results depend only on (population, seed).
/// Throws EstimationError when an estimator fails in more than 10% of them.
McSummary replicate(const Population& pop, int replications, const SuiteConfig& suite, std::uint64_t seed,
                    unsigned threads = 0);

/// Finite-sample potential outcomes of one site.
struct PotentialOutcomes {
  std::vector<double> y0, y1;
  std::vector<int> d0, d1;
  std::vector<std::vector<double>> m0, m1;  // m[k][i]
  std::vector<double> y2;  // outcome under a second arm, optional

  std::size_t size() const { return y0.size(); }
};

inline constexpr std::size_t kMaxEnumerationUnits = 8;

/// Number of equiprobable assignments with n1 treated out of n.
std::uint64_t assignment_count(std::size_t n, std::size_t n1);

/// Calls fn with the treated indicator of every assignment with n1 treated.
/// With a second arm (po.y2 non-empty) n2 units go to it among the rest.
void for_each_assignment(std::size_t n, std::size_t n1, std::size_t n2,
                         const std::function<void(const std::vector<int>&)>& fn);

/// Exact expectation over assignments of a per-site statistic (vector valued).
/// Labels: 1 treated, 0 control, 2 second arm. Throws InputError for n > 8.
Eigen::VectorXd enumerate_assignments(const PotentialOutcomes& po, std::size_t n1,
                                      const std::function<Eigen::VectorXd(const SiteSummary&)>& stat,
                                      std::size_t n2 = 0);

/// Summary built from realized outcomes under one assignment.
SiteSummary realized_summary(const PotentialOutcomes& po, const std::vector<int>& labels);

}  // namespace sitehet
