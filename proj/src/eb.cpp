#include "sitehet/eb.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/normal.hpp>

#include "sitehet/error.hpp"

namespace sitehet {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InputError("normal quantile needs p in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

std::pair<double, double> normal_ci(double point, double se, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  return {point - z * se, point + z * se};
}

std::string EbTarget::label(const std::vector<std::string>& mediator_names) const {
  switch (kind) {
    case EbTargetKind::itt:
      return "ITT";
    case EbTargetKind::fs:
      return "FS";
    case EbTargetKind::mediator_itt:
      if (mediator < mediator_names.size()) return "ITT[" + mediator_names[mediator] + "]";
      return "ITT[m" + std::to_string(mediator) + "]";
  }
  return "?";
}

std::vector<EbTarget> parse_eb_targets(const nlohmann::json& j, const std::vector<std::string>& mediator_names) {
  if (!j.is_array()) throw InputError("cross-site variance targets must be a list");
  std::vector<EbTarget> out;
  for (const auto& item : j) {
    if (!item.is_string()) throw InputError("cross-site variance targets must be strings");
    const auto text = item.get<std::string>();
    if (text == "itt") {
      out.push_back({EbTargetKind::itt, 0});
    } else if (text == "fs") {
      out.push_back({EbTargetKind::fs, 0});
    } else if (text.rfind("m:", 0) == 0) {
      auto it = std::find(mediator_names.begin(), mediator_names.end(), text.substr(2));
      if (it == mediator_names.end()) throw InputError("unknown mediator '" + text.substr(2) + "'");
      out.push_back({EbTargetKind::mediator_itt, static_cast<std::size_t>(it - mediator_names.begin())});
    } else {
      throw InputError("unknown cross-site variance target '" + text + "'");
    }
  }
  if (out.empty()) throw InputError("cross-site variance target list is empty");
  return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> target_values(const std::vector<SiteSummary>& sites,
                                                          const EbTarget& target) {
  const auto S = static_cast<Eigen::Index>(sites.size());
  Eigen::VectorXd theta(S), v(S);
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto& site = sites[static_cast<std::size_t>(s)];
    switch (target.kind) {
      case EbTargetKind::itt:
        theta(s) = site.itt_hat();
        v(s) = site.v_rob_itt();
        break;
      case EbTargetKind::fs:
        theta(s) = site.fs_hat();
        v(s) = site.v_rob_fs();
        break;
      case EbTargetKind::mediator_itt:
        if (target.mediator >= site.mediator_count()) throw InputError("mediator index out of range");
        theta(s) = site.itt_m_hat(target.mediator);
        v(s) = site.v_rob_itt_m(target.mediator);
        break;
    }
  }
  return {theta, v};
}

EbEstimate eb_variance(const Eigen::VectorXd& theta, const Eigen::VectorXd& v_rob, const Weights& weights,
                       double alpha) {
  const auto S = theta.size();
  if (S < 2) throw InputError("cross-site variance needs at least 2 sites");
  if (v_rob.size() != S || static_cast<Eigen::Index>(weights.size()) != S)
    throw InputError("site vectors and weights differ in length");

  const Eigen::Map<const Eigen::VectorXd> w(weights.w.data(), S);
  EbEstimate e;
  e.alpha = alpha;
  e.sites = static_cast<std::size_t>(S);
  e.mean = w.dot(theta);
  e.mean_se = std::sqrt(w.cwiseProduct(w).dot(v_rob));

  e.phi.resize(S);
  for (Eigen::Index s = 0; s < S; ++s) {
    const double dev = theta(s) - e.mean;
    e.phi(s) = weights.tilde(static_cast<std::size_t>(s)) * (dev * dev - v_rob(s));
  }
  e.point = e.phi.mean();
  const double var_phi = (e.phi.array() - e.point).square().mean();
  e.se = std::sqrt(var_phi / static_cast<double>(S));
  std::tie(e.ci_lo, e.ci_hi) = normal_ci(e.point, e.se, alpha);
  e.negative_flag = e.point < 0.0;
  if (!e.negative_flag && e.mean != 0.0) e.ratio = std::sqrt(e.point) / e.mean;
  return e;
}

EbEstimate eb_variance(const std::vector<SiteSummary>& sites, const Weights& weights, const EbTarget& target,
                       double alpha) {
  auto [theta, v] = target_values(sites, target);
  EbEstimate e = eb_variance(theta, v, weights, alpha);
  e.target = target.label();
  for (const auto& s : sites) e.units += static_cast<std::size_t>(s.n());
  return e;
}

double heterogeneity_ratio(double variance, double mean) {
  if (variance < 0.0)
    throw EstimationError("negative cross-site variance estimate; report the point estimate and its CI instead");
  if (mean == 0.0) throw InputError("heterogeneity ratio needs a non-zero mean");
  return std::sqrt(variance) / mean;
}

double heterogeneity_ratio(const EbEstimate& eb, double mean) { return heterogeneity_ratio(eb.point, mean); }

double negative_share(double mean, double variance, double lo, double hi) {
  if (!(variance > 0.0)) throw InputError("negative share needs a positive variance");
  if (!(lo < 0.0 && 0.0 < hi)) throw InputError("truncation bounds must satisfy lo < 0 < hi");
  const double sd = std::sqrt(variance);
  const double f_lo = normal_cdf((lo - mean) / sd);
  const double f_hi = normal_cdf((hi - mean) / sd);
  const double f_0 = normal_cdf(-mean / sd);
  return (f_0 - f_lo) / (f_hi - f_lo);
}

}  // namespace sitehet
