#include "sitehet/late.hpp"

#include <cmath>
#include <limits>

#include "sitehet/eb.hpp"
#include "sitehet/error.hpp"

namespace sitehet {

namespace {

double population_var(const Eigen::VectorXd& v) { return (v.array() - v.mean()).square().mean(); }

double checked_late(double itt, double fs) {
  if (!(std::abs(fs) > kFsFloor)) {
    throw EstimationError("weak first stage: aggregate FS = " + std::to_string(fs) +
                          " is within the floor of zero; LATE is not identified");
  }
  return itt / fs;
}

}  // namespace

Eigen::VectorXd late_influence(const Eigen::VectorXd& itt, const Eigen::VectorXd& fs, const Weights& weights,
                               double late, double fs_bar) {
  Eigen::VectorXd phi(itt.size());
  for (Eigen::Index s = 0; s < itt.size(); ++s)
    phi(s) = weights.tilde(static_cast<std::size_t>(s)) * (itt(s) - late * fs(s)) / fs_bar;
  return phi;
}

SignTest late_cov_sign(const std::vector<SiteSummary>& sites, const Weights& weights, const PredictorEntry& x,
                       const CovariateTable& covariates, double alpha) {
  PredictorSpec spec{{x}};
  const Design d_itt = build_design(sites, weights, spec, covariates, Dependent::itt);
  const Design d_fs = build_design(sites, weights, spec, covariates, Dependent::fs);
  const Weights& w = d_itt.weights;
  const auto S = static_cast<Eigen::Index>(d_itt.sites());

  Eigen::VectorXd fs = d_fs.y;
  const double itt_bar = Eigen::Map<const Eigen::VectorXd>(w.w.data(), S).dot(d_itt.y);
  const double fs_bar = Eigen::Map<const Eigen::VectorXd>(w.w.data(), S).dot(fs);

  SignTest t;
  t.predictor = x.name;
  t.late = checked_late(itt_bar, fs_bar);
  t.fs = fs_bar;
  t.sites = d_itt.sites();
  t.units = d_itt.units;

  RidgeFit f_itt = corrected_ridge(d_itt, 0.0);
  t.sigma2_x = f_itt.A0(0, 0);
  if (!(t.sigma2_x > 0.0)) throw EstimationError("degenerate predictor: corrected variance of X is not positive");
  Eigen::VectorXd phi_fs;
  const bool x_is_fs = x.source == PredictorEntry::Source::estimated && x.kind == PredictorKind::first_stage;
  if (x_is_fs) {
    // Regressing FS on itself: the coefficient is one and carries no noise.
    t.beta_fs = 1.0;
    phi_fs = Eigen::VectorXd::Zero(S);
  } else {
    RidgeFit f_fs = corrected_ridge(d_fs, 0.0);
    t.beta_fs = f_fs.beta(0);
    phi_fs = f_fs.phi4.col(0);
  }
  t.beta_itt = f_itt.beta(0);
  t.stat = t.beta_itt - t.late * t.beta_fs;
  t.sigma_late_x = t.sigma2_x / fs_bar * t.stat;

  const Eigen::VectorXd phi5 = late_influence(d_itt.y, fs, w, t.late, fs_bar);
  t.phi = f_itt.phi4.col(0) - t.late * phi_fs - t.beta_fs * phi5;
  t.se = std::sqrt(population_var(t.phi) / static_cast<double>(S));
  if (t.se > 0.0) {
    t.z = t.stat / t.se;
    t.p_value = 2.0 * normal_cdf(-std::abs(t.z));
    t.reject = std::abs(t.z) > normal_quantile(1.0 - alpha / 2.0);
  } else {
    // no sampling variation left to test against
    t.z = std::numeric_limits<double>::quiet_NaN();
    t.p_value = std::numeric_limits<double>::quiet_NaN();
  }
  return t;
}

double v_rob_nu(const SiteSummary& s, double late) {
  auto arm = [late](const ArmMoments& a) {
    return (a.r2(kVarY) - 2.0 * late * a.c(kVarD, kVarY) + late * late * a.r2(kVarD)) / a.n;
  };
  return arm(s.treated) + arm(s.control);
}

LateVariance sigma2_late(const std::vector<SiteSummary>& sites, const Weights& weights, double alpha) {
  const auto S = static_cast<Eigen::Index>(sites.size());
  if (S < 2) throw InputError("variance of LATEs needs at least 2 sites");
  if (static_cast<Eigen::Index>(weights.size()) != S) throw InputError("weights do not match the number of sites");

  Eigen::VectorXd itt(S), fs(S), v_fs(S);
  LateVariance r;
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto& site = sites[static_cast<std::size_t>(s)];
    itt(s) = site.itt_hat();
    fs(s) = site.fs_hat();
    v_fs(s) = site.v_rob_fs();
    r.units += static_cast<std::size_t>(site.n());
    if (std::abs(fs(s)) < kWeakSiteFs) r.weak_sites.push_back(site.site_id);
  }
  const Eigen::Map<const Eigen::VectorXd> w(weights.w.data(), S);
  r.sites = static_cast<std::size_t>(S);
  r.fs = w.dot(fs);
  r.late = checked_late(w.dot(itt), r.fs);
  const double L = r.late;
  const double dS = static_cast<double>(S);

  r.nu.resize(S);
  r.v_nu.resize(S);
  Eigen::VectorXd num(S), den(S);
  r.c2 = 0.0;
  r.c1 = 0.0;
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto& site = sites[static_cast<std::size_t>(s)];
    const double wt = weights.tilde(static_cast<std::size_t>(s));
    r.nu(s) = itt(s) - fs(s) * L;
    r.v_nu(s) = v_rob_nu(site, L);
    num(s) = wt * (r.nu(s) * r.nu(s) - r.v_nu(s));
    den(s) = wt * (fs(s) * fs(s) - v_fs(s));
    r.c1 += wt * fs(s) * r.nu(s);
    r.c2 += wt * ((L * site.r2_d1() - site.c_dy1()) / site.n1() + (L * site.r2_d0() - site.c_dy0()) / site.n0());
  }
  r.c1 /= dS;
  r.c2 /= dS;
  r.c4 = den.mean();
  if (!(r.c4 > 0.0))
    throw EstimationError("corrected second moment of the first stage is not positive; variance of LATEs withheld");
  r.sigma2 = num.mean() / r.c4;
  r.c3 = r.sigma2;

  r.phi5 = late_influence(itt, fs, weights, L, r.fs);
  r.late_se = std::sqrt(population_var(r.phi5) / dS);
  r.phi6 = (num - 2.0 * (r.c1 + r.c2) * r.phi5 - den * r.c3) / r.c4;
  r.se = std::sqrt(population_var(r.phi6) / dS);
  std::tie(r.ci_lo, r.ci_hi) = normal_ci(r.sigma2, r.se, alpha);
  r.negative_flag = r.sigma2 < 0.0;
  if (!r.negative_flag && L != 0.0) r.ratio = std::sqrt(r.sigma2) / L;
  return r;
}

}  // namespace sitehet
