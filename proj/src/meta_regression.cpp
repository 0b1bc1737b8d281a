#include "sitehet/meta_regression.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "sitehet/error.hpp"
#include "sitehet/parallel.hpp"
#include "sitehet/rng.hpp"

namespace sitehet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

PredictorKind kind_from_string(const std::string& k) {
  if (k == "fs" || k == "first_stage") return PredictorKind::first_stage;
  if (k == "y0" || k == "control_mean_outcome") return PredictorKind::control_mean_outcome;
  if (k == "itt2" || k == "second_arm_itt") return PredictorKind::second_arm_itt;
  if (k == "mediator" || k == "mediator_itt") return PredictorKind::mediator_itt;
  throw InputError("unknown predictor kind '" + k + "'");
}

std::size_t mediator_index(const std::string& name, const std::vector<std::string>& mediator_names) {
  auto it = std::find(mediator_names.begin(), mediator_names.end(), name);
  if (it == mediator_names.end()) throw InputError("unknown mediator '" + name + "'");
  return static_cast<std::size_t>(it - mediator_names.begin());
}

std::string default_name(PredictorKind kind, std::size_t mediator, const std::vector<std::string>& mediator_names) {
  switch (kind) {
    case PredictorKind::first_stage:
      return "FS";
    case PredictorKind::control_mean_outcome:
      return "Y0";
    case PredictorKind::second_arm_itt:
      return "ITT2";
    case PredictorKind::mediator_itt:
      return "ITT[" + (mediator < mediator_names.size() ? mediator_names[mediator] : std::to_string(mediator)) + "]";
  }
  return "?";
}

// Weighted centered moments shared by the corrected and the naive fits. With
// correct == false the measurement-error terms are skipped, not subtracted.
struct Moments {
  Eigen::VectorXd mu;
  double y_bar = 0.0;
  Eigen::MatrixXd A0;
  Eigen::VectorXd B;
  double sigma2_y = 0.0;
  std::vector<Eigen::VectorXd> xc;
  Eigen::VectorXd yc;
};

Moments centered_moments(const Design& d, bool correct) {
  const std::size_t S = d.sites();
  const auto K = static_cast<Eigen::Index>(d.dim());
  if (S < 2) throw InputError("regression needs at least 2 sites");
  Moments m;
  m.mu = Eigen::VectorXd::Zero(K);
  for (std::size_t s = 0; s < S; ++s) {
    m.mu += d.weights.w[s] * d.x[s];
    m.y_bar += d.weights.w[s] * d.y(static_cast<Eigen::Index>(s));
  }
  m.A0 = Eigen::MatrixXd::Zero(K, K);
  m.B = Eigen::VectorXd::Zero(K);
  m.xc.resize(S);
  m.yc.resize(static_cast<Eigen::Index>(S));
  for (std::size_t s = 0; s < S; ++s) {
    const auto si = static_cast<Eigen::Index>(s);
    const double w = d.weights.w[s];
    m.xc[s] = d.x[s] - m.mu;
    m.yc(si) = d.y(si) - m.y_bar;
    Eigen::MatrixXd a = m.xc[s] * m.xc[s].transpose();
    Eigen::VectorXd b = m.xc[s] * m.yc(si);
    double q = m.yc(si) * m.yc(si);
    if (correct) {
      a -= d.v[s];
      b -= d.c[s];
      q -= d.v_y(si);
    }
    m.A0 += w * a;
    m.B += w * b;
    m.sigma2_y += w * q;
  }
  m.A0 = 0.5 * (m.A0 + m.A0.transpose());
  return m;
}

double rcond_of(const Eigen::VectorXd& eig) {
  const double hi = eig.cwiseAbs().maxCoeff();
  if (!(hi > 0.0)) return 0.0;
  return eig.cwiseAbs().minCoeff() / hi;
}

RidgeFit fit_ridge(const Design& d, double lambda, bool correct) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("lambda must be a finite non-negative number");
  const std::size_t S = d.sites();
  const auto K = static_cast<Eigen::Index>(d.dim());
  Moments m = centered_moments(d, correct);

  RidgeFit f;
  f.corrected = correct;
  f.lambda = lambda;
  f.A0 = m.A0;
  f.A_hat = m.A0 + lambda * Eigen::MatrixXd::Identity(K, K);
  f.B_hat = m.B;
  f.mu_hat = m.mu;
  f.y_bar = m.y_bar;
  f.sigma2_y = m.sigma2_y;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f.A_hat, Eigen::EigenvaluesOnly);
  f.cond = rcond_of(es.eigenvalues());
  if (!(f.cond > kRcondFloor)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "moment matrix is singular or ill-conditioned (rcond %.3g)", f.cond);
    throw EstimationError(buf);
  }

  // LU handles the indefinite case; one refinement step tightens the residual.
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(f.A_hat);
  f.beta = lu.solve(f.B_hat);
  f.beta += lu.solve(f.B_hat - f.A_hat * f.beta);

  f.phi2.resize(S);
  f.phi3.resize(S);
  f.phi4.resize(static_cast<Eigen::Index>(S), K);
  for (std::size_t s = 0; s < S; ++s) {
    const double wt = d.weights.tilde(s);
    Eigen::MatrixXd a = m.xc[s] * m.xc[s].transpose();
    Eigen::VectorXd b = m.xc[s] * m.yc(static_cast<Eigen::Index>(s));
    if (correct) {
      a -= d.v[s];
      b -= d.c[s];
    }
    f.phi2[s] = wt * a + lambda * Eigen::MatrixXd::Identity(K, K);
    f.phi3[s] = wt * b;
    f.phi4.row(static_cast<Eigen::Index>(s)) = lu.solve(f.phi3[s] - f.phi2[s] * f.beta).transpose();
  }
  Eigen::MatrixXd centered = f.phi4.rowwise() - f.phi4.colwise().mean();
  Eigen::MatrixXd V = centered.transpose() * centered / static_cast<double>(S);
  f.se = (V.diagonal() / static_cast<double>(S)).cwiseSqrt();

  if (lambda == 0.0) {
    if (f.sigma2_y > 0.0) {
      f.r2 = f.beta.dot(f.A0 * f.beta) / f.sigma2_y;
      f.r2_out_of_range = *f.r2 < 0.0 || *f.r2 > 1.0;
    } else {
      f.r2_out_of_range = true;
    }
  }
  return f;
}

// Eigendecomposition of A(0) reused across a lambda grid.
struct GcvCache {
  Eigen::VectorXd eig;
  Eigen::VectorXd b2;  // squared rotated B
  double sigma2 = 0.0;
  double S = 0.0;

  explicit GcvCache(const Design& d) {
    Moments m = centered_moments(d, true);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.A0);
    eig = es.eigenvalues();
    b2 = (es.eigenvectors().transpose() * m.B).array().square();
    sigma2 = m.sigma2_y;
    S = static_cast<double>(d.sites());
  }

  std::optional<double> operator()(double lambda) const {
    const Eigen::ArrayXd shifted = eig.array() + lambda;
    if (!(rcond_of(shifted.matrix()) > kRcondFloor)) return std::nullopt;
    const double quad = (b2.array() * eig.array() / shifted.square()).sum();
    const double lin = (b2.array() / shifted).sum();
    const double trace = (eig.array() / shifted).sum();
    const double den = (1.0 - trace / S) * (1.0 - trace / S);
    if (!(den > 0.0)) return std::nullopt;
    return (sigma2 + quad - 2.0 * lin) / den;
  }
};

}  // namespace

PredictorEntry PredictorEntry::observed(std::string column) {
  PredictorEntry e;
  e.source = Source::observed;
  e.name = column;
  e.column = std::move(column);
  return e;
}

PredictorEntry PredictorEntry::estimated(PredictorKind kind, std::size_t mediator, std::string name) {
  PredictorEntry e;
  e.source = Source::estimated;
  e.kind = kind;
  e.mediator = mediator;
  e.name = name.empty() ? default_name(kind, mediator, {}) : std::move(name);
  return e;
}

bool PredictorSpec::all_observed() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const PredictorEntry& e) { return e.source == PredictorEntry::Source::observed; });
}

void PredictorSpec::validate() const {
  if (entries.empty()) throw InputError("predictor list is empty");
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.name).second) throw InputError("duplicate predictor name '" + e.name + "'");
  }
}

PredictorSpec PredictorSpec::from_json(const nlohmann::json& j, const std::vector<std::string>& mediator_names) {
  if (!j.is_array()) throw InputError("predictors must be a list");
  PredictorSpec spec;
  for (const auto& item : j) {
    PredictorEntry e;
    if (item.is_string()) {
      const auto text = item.get<std::string>();
      const auto colon = text.find(':');
      const std::string head = text.substr(0, colon);
      const std::string tail = colon == std::string::npos ? std::string() : text.substr(colon + 1);
      if (head == "x" || head == "observed") {
        if (tail.empty()) throw InputError("observed predictor needs a column: '" + text + "'");
        e = PredictorEntry::observed(tail);
      } else if (head == "m" || head == "mediator") {
        const auto k = mediator_index(tail, mediator_names);
        e = PredictorEntry::estimated(PredictorKind::mediator_itt, k, default_name(PredictorKind::mediator_itt, k, mediator_names));
      } else {
        if (colon != std::string::npos) throw InputError("bad predictor '" + text + "'");
        e = PredictorEntry::estimated(kind_from_string(head));
      }
    } else if (item.is_object()) {
      for (auto it = item.begin(); it != item.end(); ++it) {
        if (it.key() != "observed" && it.key() != "estimated" && it.key() != "mediator" && it.key() != "name")
          throw InputError("unknown predictor key '" + it.key() + "'");
      }
      try {
        if (item.contains("observed") == item.contains("estimated"))
          throw InputError("a predictor object needs exactly one of 'observed' or 'estimated'");
        if (item.contains("observed")) {
          e = PredictorEntry::observed(item.at("observed").get<std::string>());
        } else {
          const auto kind = kind_from_string(item.at("estimated").get<std::string>());
          std::size_t k = 0;
          if (kind == PredictorKind::mediator_itt) {
            if (!item.contains("mediator")) throw InputError("mediator predictor needs a 'mediator' name");
            k = mediator_index(item.at("mediator").get<std::string>(), mediator_names);
          }
          e = PredictorEntry::estimated(kind, k, default_name(kind, k, mediator_names));
        }
        if (item.contains("name")) e.name = item.at("name").get<std::string>();
      } catch (const nlohmann::json::exception& ex) {
        throw InputError(std::string("bad predictor entry: ") + ex.what());
      }
    } else {
      throw InputError("predictor entries must be strings or objects");
    }
    spec.entries.push_back(std::move(e));
  }
  spec.validate();
  return spec;
}

Design Design::resample(const std::vector<std::size_t>& idx) const {
  Design out;
  out.names = names;
  out.observed_only = observed_only;
  out.units = units;
  std::vector<std::string> ids;
  std::vector<double> raw;
  out.y.resize(static_cast<Eigen::Index>(idx.size()));
  out.v_y.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::size_t s = idx[i];
    ids.push_back(site_ids.at(s));
    raw.push_back(weights.w.at(s));
    out.x.push_back(x[s]);
    out.v.push_back(v[s]);
    out.c.push_back(c[s]);
    out.y(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(s));
    out.v_y(static_cast<Eigen::Index>(i)) = v_y(static_cast<Eigen::Index>(s));
  }
  out.site_ids = ids;
  out.weights = Weights::normalized(std::move(ids), raw);
  return out;
}

Design build_design(const std::vector<SiteSummary>& sites, const Weights& weights, const PredictorSpec& spec,
                    const CovariateTable& covariates, Dependent dep) {
  spec.validate();
  if (sites.size() != weights.size()) throw InputError("weights do not match the number of sites");
  const std::size_t K = spec.size();

  std::vector<std::size_t> cov_index(K, 0);
  for (std::size_t k = 0; k < K; ++k) {
    if (spec.entries[k].source == PredictorEntry::Source::observed)
      cov_index[k] = covariates.index_of(spec.entries[k].column);
  }

  Design d;
  d.observed_only = spec.all_observed();
  for (const auto& e : spec.entries) d.names.push_back(e.name);

  const Contrast dep_contrast = dep == Dependent::itt ? contrasts::itt() : contrasts::first_stage();
  std::vector<std::size_t> keep;
  std::vector<double> y, vy;
  for (std::size_t s = 0; s < sites.size(); ++s) {
    const SiteSummary& site = sites[s];
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
    Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
    std::vector<Contrast> con(K);
    bool missing = false;
    for (std::size_t k = 0; k < K; ++k) {
      const auto& e = spec.entries[k];
      const auto ki = static_cast<Eigen::Index>(k);
      if (e.source == PredictorEntry::Source::observed) {
        auto it = covariates.values.find(site.site_id);
        const double val = it == covariates.values.end() ? kNaN : it->second[cov_index[k]];
        if (std::isnan(val)) {
          missing = true;
          break;
        }
        x(ki) = val;
      } else {
        if (e.kind == PredictorKind::mediator_itt && e.mediator >= site.mediator_count())
          throw InputError("predictor '" + e.name + "' refers to a mediator the data do not have");
        if (e.kind == PredictorKind::second_arm_itt && !site.second)
          throw InputError("predictor '" + e.name + "' needs 2+ second-arm units in site '" + site.site_id + "'");
        con[k] = predictor_contrast(e.kind, e.mediator);
        x(ki) = contrast_value(site, con[k]);
        c(ki) = contrast_cov(site, con[k], dep_contrast);
      }
    }
    if (missing) {
      d.dropped_sites.push_back(site.site_id);
      continue;
    }
    for (std::size_t a = 0; a < K; ++a) {
      if (con[a].empty()) continue;
      for (std::size_t b = a; b < K; ++b) {
        if (con[b].empty()) continue;
        const double cv = contrast_cov(site, con[a], con[b]);
        v(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = cv;
        v(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = cv;
      }
    }
    keep.push_back(s);
    d.site_ids.push_back(site.site_id);
    d.x.push_back(std::move(x));
    d.v.push_back(std::move(v));
    d.c.push_back(std::move(c));
    y.push_back(dep == Dependent::itt ? site.itt_hat() : site.fs_hat());
    vy.push_back(dep == Dependent::itt ? site.v_rob_itt() : site.v_rob_fs());
    d.units += static_cast<std::size_t>(site.n());
  }
  if (keep.size() < 2) throw InputError("fewer than 2 sites have every observed predictor");
  d.weights = keep.size() == sites.size() ? weights : weights.subset(keep);
  d.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  d.v_y = Eigen::Map<Eigen::VectorXd>(vy.data(), static_cast<Eigen::Index>(vy.size()));
  return d;
}

RidgeFit corrected_ridge(const Design& d, double lambda) { return fit_ridge(d, lambda, true); }

RidgeFit naive_ridge(const Design& d, double lambda) { return fit_ridge(d, lambda, false); }

NaiveFit naive_regression(const Design& d) {
  const std::size_t S = d.sites();
  const std::size_t K = d.dim();
  if (S <= K + 1) throw EstimationError("naive regression needs more sites than predictors plus one");
  RidgeFit f = fit_ridge(d, 0.0, false);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(f.A_hat);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
  for (std::size_t s = 0; s < S; ++s) {
    const Eigen::VectorXd xc = d.x[s] - f.mu_hat;
    const double e = (d.y(static_cast<Eigen::Index>(s)) - f.y_bar) - xc.dot(f.beta);
    const double we = d.weights.w[s] * e;
    meat += (we * we) * xc * xc.transpose();
  }
  const Eigen::MatrixXd ainv = lu.inverse();
  const Eigen::MatrixXd V = ainv * meat * ainv.transpose() * (static_cast<double>(S) / static_cast<double>(S - K - 1));
  return {f.beta, V.diagonal().cwiseSqrt()};
}

std::optional<double> gcv_objective(const Design& d, double lambda) {
  if (!(lambda >= 0.0)) throw InputError("lambda must be non-negative");
  return GcvCache(d)(lambda);
}

std::vector<double> lambda_grid(const Design& d, const GridPolicy& policy) {
  std::vector<double> grid;
  if (!policy.explicit_grid.empty()) {
    for (double l : policy.explicit_grid) {
      if (!(l >= 0.0) || !std::isfinite(l)) throw InputError("lambda grid values must be finite and non-negative");
    }
    grid = policy.explicit_grid;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return grid;
  }
  if (policy.points < 2) throw InputError("lambda grid needs at least 2 log-spaced points");
  grid.push_back(0.0);
  const Moments m = centered_moments(d, true);
  double tau = std::abs(m.A0.diagonal().mean());
  if (!(tau > 0.0)) tau = 1.0;  // no predictor variation: fall back to unit scale
  const double lo = std::log(policy.lo_mult * tau);
  const double hi = std::log(policy.hi_mult * tau);
  for (int i = 0; i < policy.points; ++i) {
    grid.push_back(std::exp(lo + (hi - lo) * i / (policy.points - 1)));
  }
  return grid;
}

LambdaPath select_lambda(const Design& d, const GridPolicy& policy) {
  LambdaPath path;
  path.lambda = lambda_grid(d, policy);
  if (path.lambda.empty()) throw InputError("lambda grid is empty");
  const GcvCache gcv(d);
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (double l : path.lambda) {
    const auto v = gcv(l);
    path.value.push_back(v ? *v : kNaN);
    if (v && *v < best) {
      best = *v;
      path.lambda_star = l;
      found = true;
    }
  }
  if (!found) throw EstimationError("every lambda on the grid gives a singular moment matrix");
  return path;
}

LambdaPolicy LambdaPolicy::parse(const std::string& text) {
  if (text == "gcv") return {true, 0.0};
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw InputError("lambda must be 'gcv' or a non-negative number, got '" + text + "'");
  }
  if (pos != text.size() || !(v >= 0.0) || !std::isfinite(v))
    throw InputError("lambda must be 'gcv' or a non-negative number, got '" + text + "'");
  return {false, v};
}

std::string LambdaPolicy::str() const {
  if (gcv) return "gcv";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", fixed);
  return buf;
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw InputError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BootstrapResult bootstrap_beta(const Design& d, int replications, std::uint64_t seed, double alpha,
                               const LambdaPolicy& policy, const GridPolicy& grid, unsigned threads) {
  if (replications < 2) throw InputError("bootstrap needs at least 2 replications");
  if (d.sites() < 2) throw InputError("bootstrap needs at least 2 sites");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  const std::size_t S = d.sites();
  const auto K = static_cast<Eigen::Index>(d.dim());
  const auto B = static_cast<std::size_t>(replications);

  std::vector<std::optional<Eigen::VectorXd>> beta(B);
  std::vector<double> lambda(B, kNaN);
  parallel_for(B, threads, [&](std::size_t b) {
    CounterRng rng = CounterRng::substream(seed, {streams::kBootstrap, b});
    std::vector<std::size_t> idx(S);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(S));
    const Design rb = d.resample(idx);
    try {
      const double l = policy.gcv ? select_lambda(rb, grid).lambda_star : policy.fixed;
      beta[b] = corrected_ridge(rb, l).beta;
      lambda[b] = l;
    } catch (const EstimationError&) {
    }
  });

  BootstrapResult r;
  r.replications = replications;
  std::vector<Eigen::VectorXd> kept;
  for (std::size_t b = 0; b < B; ++b) {
    if (beta[b]) {
      kept.push_back(*beta[b]);
      r.lambdas.push_back(lambda[b]);
    } else {
      ++r.skipped;
    }
  }
  if (static_cast<double>(r.skipped) > 0.1 * replications)
    throw EstimationError("bootstrap: " + std::to_string(r.skipped) + " of " + std::to_string(replications) +
                          " replicates were singular at every lambda");
  if (kept.size() < 2) throw EstimationError("bootstrap: fewer than 2 usable replicates");

  r.draws.resize(static_cast<Eigen::Index>(kept.size()), K);
  for (std::size_t i = 0; i < kept.size(); ++i) r.draws.row(static_cast<Eigen::Index>(i)) = kept[i].transpose();
  r.se.resize(K);
  r.ci_lo.resize(K);
  r.ci_hi.resize(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    Eigen::VectorXd col = r.draws.col(k);
    const double mean = col.mean();
    r.se(k) = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(col.size() - 1));
    std::vector<double> sorted(col.data(), col.data() + col.size());
    std::sort(sorted.begin(), sorted.end());
    r.ci_lo(k) = quantile_sorted(sorted, alpha / 2.0);
    r.ci_hi(k) = quantile_sorted(sorted, 1.0 - alpha / 2.0);
  }
  return r;
}

}  // namespace sitehet
