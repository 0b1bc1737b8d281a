#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sitehet/dataset.hpp"
#include "sitehet/site_stats.hpp"

namespace sitehet {

/// Reciprocal condition number below which a moment matrix counts as singular.
inline constexpr double kRcondFloor = 1e-10;

struct PredictorEntry {
  enum class Source { observed, estimated };
  Source source = Source::observed;
  std::string name;
  /// Site covariate column, for observed entries.
  std::string column;
  PredictorKind kind = PredictorKind::first_stage;
  std::size_t mediator = 0;

  static PredictorEntry observed(std::string column);
  static PredictorEntry estimated(PredictorKind kind, std::size_t mediator = 0, std::string name = {});
};

struct PredictorSpec {
  std::vector<PredictorEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool all_observed() const;
  /// K >= 1 and unique names. Throws InputError.
  void validate() const;

  /// Accepts a list whose items are "fs", "y0", "itt2", "m:NAME", "x:COLUMN"
  /// or objects {"observed": COLUMN} / {"estimated": KIND, "mediator": NAME}.
  static PredictorSpec from_json(const nlohmann::json& j, const std::vector<std::string>& mediator_names);
};

enum class Dependent { itt, fs };

/// Site-level regression inputs. Sites lacking an observed covariate are
/// dropped and the remaining weights renormalized.
struct Design {
  std::vector<std::string> names;
  std::vector<std::string> site_ids;
  Weights weights;
  std::vector<Eigen::VectorXd> x;
  std::vector<Eigen::MatrixXd> v;
  std::vector<Eigen::VectorXd> c;
  Eigen::VectorXd y;
  Eigen::VectorXd v_y;
  bool observed_only = true;
  std::vector<std::string> dropped_sites;
  std::size_t units = 0;

  std::size_t sites() const { return x.size(); }
  std::size_t dim() const { return names.size(); }
  Design resample(const std::vector<std::size_t>& idx) const;
};

Design build_design(const std::vector<SiteSummary>& sites, const Weights& weights, const PredictorSpec& spec,
                    const CovariateTable& covariates = {}, Dependent dep = Dependent::itt);

struct RidgeFit {
  double lambda = 0.0;
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  Eigen::MatrixXd A_hat;  // A(0) + lambda I
  Eigen::MatrixXd A0;
  Eigen::VectorXd B_hat;
  Eigen::VectorXd mu_hat;
  double y_bar = 0.0;
  /// Corrected cross-site variance of the dependent variable.
  double sigma2_y = 0.0;
  /// Only at lambda = 0.
  std::optional<double> r2;
  bool r2_out_of_range = false;
  double cond = 0.0;
  std::vector<Eigen::MatrixXd> phi2;
  std::vector<Eigen::VectorXd> phi3;
  Eigen::MatrixXd phi4;  // S x K
  bool corrected = true;
};

/// Measurement-error-corrected ridge. Throws EstimationError when the
/// reciprocal condition number of A(lambda) is at or below kRcondFloor.
RidgeFit corrected_ridge(const Design& d, double lambda);

/// Same machinery with the measurement-error terms set to zero.
RidgeFit naive_ridge(const Design& d, double lambda);

struct NaiveFit {
  Eigen::VectorXd beta;
  /// Weighted HC1 standard errors.
  Eigen::VectorXd se;
};

NaiveFit naive_regression(const Design& d);

/// Generalized cross-validation criterion; empty when A(lambda) fails the
/// condition guard or the denominator vanishes.
std::optional<double> gcv_objective(const Design& d, double lambda);

struct GridPolicy {
  /// Replaces the default grid when set.
  std::vector<double> explicit_grid;
  int points = 101;
  double lo_mult = 1e-8;
  double hi_mult = 10.0;
};

struct LambdaPath {
  double lambda_star = 0.0;
  std::vector<double> lambda;
  /// NaN marks an infeasible grid point.
  std::vector<double> value;
};

std::vector<double> lambda_grid(const Design& d, const GridPolicy& policy = {});

/// Grid minimizer of the GCV criterion, ties toward the smaller lambda.
/// Throws EstimationError if every grid point is infeasible.
LambdaPath select_lambda(const Design& d, const GridPolicy& policy = {});

struct LambdaPolicy {
  bool gcv = false;
  double fixed = 0.0;

  static LambdaPolicy parse(const std::string& text);
  std::string str() const;
};

struct BootstrapResult {
  int replications = 0;
  int skipped = 0;
  Eigen::VectorXd se;
  Eigen::VectorXd ci_lo;
  Eigen::VectorXd ci_hi;
  std::vector<double> lambdas;
  Eigen::MatrixXd draws;  // kept replicates x K
};

/// Site bootstrap of beta(lambda*): resamples S sites with replacement,
/// renormalizes their weights, reselects lambda under the policy and refits.
BootstrapResult bootstrap_beta(const Design& d, int replications, std::uint64_t seed, double alpha = 0.05,
                               const LambdaPolicy& policy = {true, 0.0}, const GridPolicy& grid = {},
                               unsigned threads = 0);

/// Type-7 sample quantile of sorted data.
double quantile_sorted(const std::vector<double>& sorted, double p);

}  // namespace sitehet
