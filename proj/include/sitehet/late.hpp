#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sitehet/meta_regression.hpp"
#include "sitehet/site_stats.hpp"

namespace sitehet {

/// Sites whose first stage is below this in absolute value are listed in a
/// diagnostic; per-site Wald ratios are uninformative there.
inline constexpr double kWeakSiteFs = 0.05;

struct SignTest {
  std::string predictor;
  double late = 0.0;
  double fs = 0.0;
  double beta_itt = 0.0;
  double beta_fs = 0.0;
  /// beta_itt - late * beta_fs.
  double stat = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p_value = 1.0;
  bool reject = false;
  /// Corrected variance of X and the implied covariance of LATEs with X.
  double sigma2_x = 0.0;
  double sigma_late_x = 0.0;
  Eigen::VectorXd phi;
  std::size_t sites = 0;
  std::size_t units = 0;
};

/// Covariance sign test for a scalar predictor. Throws EstimationError when
/// the corrected variance of X is not positive or the first stage is weak.
SignTest late_cov_sign(const std::vector<SiteSummary>& sites, const Weights& weights, const PredictorEntry& x,
                       const CovariateTable& covariates = {}, double alpha = 0.05);

struct LateVariance {
  double late = 0.0;
  double late_se = 0.0;
  double fs = 0.0;
  double sigma2 = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool negative_flag = false;
  std::optional<double> ratio;
  double c1 = 0.0, c2 = 0.0, c3 = 0.0, c4 = 0.0;
  Eigen::VectorXd nu;
  Eigen::VectorXd v_nu;
  Eigen::VectorXd phi5;
  Eigen::VectorXd phi6;
  std::vector<std::string> weak_sites;
  std::size_t sites = 0;
  std::size_t units = 0;
};

/// Robust variance of nu_s = ITT_s - FS_s * late from arm moments:
/// sum over arms of (r2_Y - 2 late c_DY + late^2 r2_D) / n_arm.
double v_rob_nu(const SiteSummary& s, double late);

/// Weighted variance of LATEs. Throws EstimationError for a weak aggregate
/// first stage or a non-positive corrected second moment of FS.
LateVariance sigma2_late(const std::vector<SiteSummary>& sites, const Weights& weights, double alpha = 0.05);

/// phi_{s,5}: influence values of the aggregate LATE.
Eigen::VectorXd late_influence(const Eigen::VectorXd& itt, const Eigen::VectorXd& fs, const Weights& weights,
                               double late, double fs_bar);

}  // namespace sitehet
