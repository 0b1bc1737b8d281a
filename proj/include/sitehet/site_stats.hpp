#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sitehet/dataset.hpp"

namespace sitehet {

/// Absolute floor on the aggregate first stage below which LATE is not formed.
inline constexpr double kFsFloor = 1e-6;

/// Variable slots inside ArmMoments: outcome, take-up, then mediators.
inline constexpr std::size_t kVarY = 0;
inline constexpr std::size_t kVarD = 1;
inline constexpr std::size_t kVarM0 = 2;

/// Means and (n - 1)-divisor covariance matrix of (Y, D, M_1..M_m) in one arm.
struct ArmMoments {
  int n = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  double r2(std::size_t v) const { return cov(v, v); }
  double c(std::size_t a, std::size_t b) const { return cov(a, b); }
};

/// Column-oriented unit data of one arm.
struct ArmUnits {
  std::vector<double> y;
  std::vector<int> d;
  std::vector<std::vector<double>> m;  // m[k][i]

  std::size_t size() const { return y.size(); }
};

/// Arm moments from raw columns. Two-pass, so large offsets do not cancel.
ArmMoments arm_moments(const ArmUnits& units);

struct SiteSummary {
  std::string site_id;
  ArmMoments treated;
  ArmMoments control;
  /// The configured second treatment arm, when present with >= 2 units.
  std::optional<ArmMoments> second;
  double w = 0.0;

  int n() const { return treated.n + control.n; }
  int n1() const { return treated.n; }
  int n0() const { return control.n; }
  int n2() const { return second ? second->n : 0; }
  std::size_t mediator_count() const { return static_cast<std::size_t>(treated.mean.size()) - kVarM0; }

  double ybar1() const { return treated.mean(kVarY); }
  double ybar0() const { return control.mean(kVarY); }
  double dbar1() const { return treated.mean(kVarD); }
  double dbar0() const { return control.mean(kVarD); }
  double mbar1(std::size_t k) const { return treated.mean(kVarM0 + k); }
  double mbar0(std::size_t k) const { return control.mean(kVarM0 + k); }

  double r2_y1() const { return treated.r2(kVarY); }
  double r2_y0() const { return control.r2(kVarY); }
  double r2_d1() const { return treated.r2(kVarD); }
  double r2_d0() const { return control.r2(kVarD); }
  double c_dy1() const { return treated.c(kVarD, kVarY); }
  double c_dy0() const { return control.c(kVarD, kVarY); }

  double itt_hat() const { return ybar1() - ybar0(); }
  double fs_hat() const { return dbar1() - dbar0(); }
  double itt_m_hat(std::size_t k) const { return mbar1(k) - mbar0(k); }
  double v_rob_itt() const { return r2_y1() / n1() + r2_y0() / n0(); }
  double v_rob_fs() const { return r2_d1() / n1() + r2_d0() / n0(); }
  double v_rob_itt_m(std::size_t k) const {
    return treated.r2(kVarM0 + k) / n1() + control.r2(kVarM0 + k) / n0();
  }
  /// Per-site Wald ratio; empty when the site's first stage is exactly zero.
  std::optional<double> late_hat() const {
    if (fs_hat() == 0.0) return std::nullopt;
    return itt_hat() / fs_hat();
  }
};

/// Summary of one site. Throws InputError if either arm has fewer than 2 units.
SiteSummary summarize_site(const std::string& site_id, const ArmUnits& treated, const ArmUnits& control,
                           const ArmUnits* second = nullptr);

/// Summaries of every site of a filtered dataset, in site-id order, with
/// weights attached. second_arm names the arm feeding second-arm predictors.
std::vector<SiteSummary> summarize_sites(const Dataset& ds, const Weights& weights,
                                         const std::string& second_arm = {});

/// Linear combination of arm means: sum of coef * mean_arm(var).
enum class Arm { treated, control, second };

struct ContrastTerm {
  Arm arm;
  std::size_t var;
  double coef;
};
using Contrast = std::vector<ContrastTerm>;

namespace contrasts {
Contrast itt();
Contrast first_stage();
Contrast control_mean_outcome();
Contrast mediator_itt(std::size_t k);
Contrast second_arm_itt();
}  // namespace contrasts

double contrast_value(const SiteSummary& s, const Contrast& a);
/// Unbiased covariance estimator of two contrasts: arms are independent given
/// the sample, so only shared arms contribute coef_a * coef_b * c_ab / n_arm.
double contrast_cov(const SiteSummary& s, const Contrast& a, const Contrast& b);

enum class PredictorKind { first_stage, control_mean_outcome, mediator_itt, second_arm_itt };

/// Unbiased estimator triple for an estimated site characteristic.
struct PredictorMoments {
  double xhat = 0.0;
  double vhat = 0.0;
  double cov_itt = 0.0;
};

Contrast predictor_contrast(PredictorKind kind, std::size_t mediator = 0);

/// Throws InputError for a mediator index out of range or a missing second arm.
PredictorMoments predictor_moments(const SiteSummary& s, PredictorKind kind, std::size_t mediator = 0);

struct Aggregates {
  double itt = 0.0;
  double fs = 0.0;
  std::vector<double> itt_m;
  /// Empty when |fs| <= kFsFloor.
  std::optional<double> late;
  /// sqrt(sum w_s^2 V_rob) for the aggregate ITT and FS.
  double se_itt = 0.0;
  double se_fs = 0.0;
  std::size_t n_units = 0;
};

Aggregates aggregate(const std::vector<SiteSummary>& sites, const Weights& weights);

/// Aggregate LATE or an EstimationError naming the weak first stage.
double require_late(const Aggregates& agg);

}  // namespace sitehet
