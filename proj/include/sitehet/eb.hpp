#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sitehet/site_stats.hpp"

namespace sitehet {

double normal_cdf(double x);
/// Standard normal quantile; p must lie in (0, 1).
double normal_quantile(double p);

enum class EbTargetKind { itt, fs, mediator_itt };

struct EbTarget {
  EbTargetKind kind = EbTargetKind::itt;
  std::size_t mediator = 0;

  std::string label(const std::vector<std::string>& mediator_names = {}) const;
};

/// Parses ["itt", "fs", "m:NAME", ...].
std::vector<EbTarget> parse_eb_targets(const nlohmann::json& j, const std::vector<std::string>& mediator_names);

struct EbEstimate {
  std::string target;
  /// Weighted mean of the site estimates and its robust SE.
  double mean = 0.0;
  double mean_se = 0.0;
  double point = 0.0;
  Eigen::VectorXd phi;
  double se = 0.0;
  double alpha = 0.05;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  /// sqrt(point) / mean; empty when point < 0 or mean == 0.
  std::optional<double> ratio;
  bool negative_flag = false;
  std::size_t sites = 0;
  std::size_t units = 0;
};

/// Cross-site variance of theta_s net of its sampling variance. theta and
/// v_rob are aligned with weights. Throws InputError when S < 2.
EbEstimate eb_variance(const Eigen::VectorXd& theta, const Eigen::VectorXd& v_rob, const Weights& weights,
                       double alpha = 0.05);
EbEstimate eb_variance(const std::vector<SiteSummary>& sites, const Weights& weights, const EbTarget& target,
                       double alpha = 0.05);

/// Per-site estimates and their robust variances for a target.
std::pair<Eigen::VectorXd, Eigen::VectorXd> target_values(const std::vector<SiteSummary>& sites,
                                                          const EbTarget& target);

/// sqrt(variance) / mean. Throws EstimationError for a negative variance and
/// InputError for a zero mean.
double heterogeneity_ratio(double variance, double mean);
double heterogeneity_ratio(const EbEstimate& eb, double mean);

/// P(T < 0) for T normal(mean, variance) truncated to [lo, hi].
double negative_share(double mean, double variance, double lo = -1.0, double hi = 1.0);

/// Normal interval point -/+ z_{1-alpha/2} * se.
std::pair<double, double> normal_ci(double point, double se, double alpha);

}  // namespace sitehet
