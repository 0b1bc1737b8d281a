#include "sitehet/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <set>

#include "sitehet/eb.hpp"
#include "sitehet/error.hpp"
#include "sitehet/late.hpp"
#include "sitehet/parallel.hpp"
#include "sitehet/rng.hpp"

namespace sitehet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
const double kSqrt3 = std::sqrt(3.0);

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw InputError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw InputError("unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InputError(std::string("bad value for '") + key + "': " + e.what());
  }
}

// Stratified draw: one value from each of S equal-probability slices of the
// law, randomly permuted across sites.
std::vector<double> stratified(const Law& law, int S, CounterRng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(S));
  for (int i = 0; i < S; ++i) perm[static_cast<std::size_t>(i)] = i;
  rng.shuffle(perm);
  std::vector<double> out(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) out[static_cast<std::size_t>(s)] = law.quantile((perm[static_cast<std::size_t>(s)] + rng.uniform()) / S);
  return out;
}

std::string site_label(int s, int S) {
  const int width = static_cast<int>(std::to_string(S).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%0*d", width, s + 1);
  return buf;
}

double weighted_var(const std::vector<double>& v, const std::vector<double>& w) {
  double mean = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) mean += w[i] * v[i];
  double var = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) var += w[i] * (v[i] - mean) * (v[i] - mean);
  return var;
}

PotentialOutcomes draw_units(const Population& pop, const SiteParams& p, CounterRng& rng) {
  const auto& cfg = pop.cfg;
  const std::size_t n = static_cast<std::size_t>(p.n);
  const std::size_t m = cfg.mediators.size();
  PotentialOutcomes po;
  po.y0.resize(n);
  po.y1.resize(n);
  po.d0.assign(n, 0);
  po.d1.resize(n);
  po.m0.assign(m, std::vector<double>(n));
  po.m1.assign(m, std::vector<double>(n));
  if (cfg.second_arm) po.y2.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform(-kSqrt3, kSqrt3);
    po.y0[i] = p.y0 + cfg.y_noise * u;
    po.d1[i] = rng.bernoulli(p.fs) ? 1 : 0;
    const double gain = p.late + cfg.gain_noise * rng.uniform(-kSqrt3, kSqrt3);
    po.y1[i] = po.y0[i] + po.d1[i] * gain;
    for (std::size_t k = 0; k < m; ++k) {
      const auto& ml = cfg.mediators[k];
      const double e = ml.rho * u + std::sqrt(1.0 - ml.rho * ml.rho) * rng.uniform(-kSqrt3, kSqrt3);
      po.m0[k][i] = ml.noise * e;
      po.m1[k][i] = p.itt_m[k] + ml.noise * e;
    }
    if (cfg.second_arm) po.y2[i] = po.y0[i] + p.itt2 + cfg.second_arm->noise * rng.uniform(-kSqrt3, kSqrt3);
  }
  return po;
}

std::vector<int> draw_labels(const SiteParams& p, CounterRng& rng) {
  std::vector<int> labels(static_cast<std::size_t>(p.n), 0);
  for (int i = 0; i < p.n1; ++i) labels[static_cast<std::size_t>(i)] = 1;
  for (int i = 0; i < p.n2; ++i) labels[static_cast<std::size_t>(p.n1 + i)] = 2;
  rng.shuffle(labels);
  return labels;
}

void split_arms(const PotentialOutcomes& po, const std::vector<int>& labels, ArmUnits& t, ArmUnits& c, ArmUnits& o) {
  const std::size_t m = po.m0.size();
  for (ArmUnits* a : {&t, &c, &o}) a->m.assign(m, {});
  for (std::size_t i = 0; i < po.size(); ++i) {
    const int z = labels[i];
    ArmUnits& a = z == 1 ? t : (z == 2 ? o : c);
    a.y.push_back(z == 1 ? po.y1[i] : (z == 2 ? po.y2[i] : po.y0[i]));
    a.d.push_back(z == 1 ? po.d1[i] : po.d0[i]);
    for (std::size_t k = 0; k < m; ++k) a.m[k].push_back(z == 1 ? po.m1[k][i] : po.m0[k][i]);
  }
}

SiteSummary summary_from(const PotentialOutcomes& po, const std::vector<int>& labels, const std::string& id) {
  ArmUnits t, c, o;
  split_arms(po, labels, t, c, o);
  return summarize_site(id, t, c, po.y2.empty() ? nullptr : &o);
}

Eigen::VectorXd solve_true(const std::vector<Eigen::VectorXd>& x, const std::vector<double>& y,
                           const std::vector<double>& w, double lambda) {
  const auto K = x.front().size();
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(K);
  double ybar = 0.0;
  for (std::size_t s = 0; s < x.size(); ++s) {
    mu += w[s] * x[s];
    ybar += w[s] * y[s];
  }
  Eigen::MatrixXd A = lambda * Eigen::MatrixXd::Identity(K, K);
  Eigen::VectorXd B = Eigen::VectorXd::Zero(K);
  for (std::size_t s = 0; s < x.size(); ++s) {
    const Eigen::VectorXd xc = x[s] - mu;
    A += w[s] * xc * xc.transpose();
    B += w[s] * xc * (y[s] - ybar);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
  const double hi = es.eigenvalues().cwiseAbs().maxCoeff();
  if (!(hi > 0.0) || es.eigenvalues().cwiseAbs().minCoeff() / hi <= kRcondFloor)
    throw EstimationError("true predictors are collinear; target coefficient undefined");
  return A.ldlt().solve(B);
}

}  // namespace

double Law::quantile(double u) const {
  switch (kind) {
    case Kind::constant:
      return lo;
    case Kind::uniform:
      return lo + u * (hi - lo);
    case Kind::two_point:
      return u < 0.5 ? lo : hi;
    case Kind::grid: {
      if (levels <= 1) return lo;
      const int idx = std::min(static_cast<int>(u * levels), levels - 1);
      return lo + idx * (hi - lo) / (levels - 1);
    }
  }
  return lo;
}

Law Law::from_json(const json& j) {
  if (j.is_number()) return constant(j.get<double>());
  reject_unknown(j, {"law", "value", "lo", "hi", "levels"}, "law");
  const auto kind = get_or<std::string>(j, "law", "constant");
  Law law;
  if (kind == "constant") {
    law = constant(get_or<double>(j, "value", 0.0));
  } else if (kind == "uniform") {
    law = uniform(get_or<double>(j, "lo", 0.0), get_or<double>(j, "hi", 1.0));
  } else if (kind == "two_point") {
    law = two_point(get_or<double>(j, "lo", 0.0), get_or<double>(j, "hi", 1.0));
  } else if (kind == "grid") {
    law = grid(get_or<double>(j, "lo", 0.0), get_or<double>(j, "hi", 1.0), get_or<int>(j, "levels", 2));
    if (law.levels < 1) throw InputError("grid law needs at least one level");
  } else {
    throw InputError("unknown law '" + kind + "'");
  }
  if (!std::isfinite(law.lo) || !std::isfinite(law.hi) || law.hi < law.lo)
    throw InputError("law bounds must be finite with lo <= hi");
  return law;
}

json Law::to_json() const {
  switch (kind) {
    case Kind::constant:
      return {{"law", "constant"}, {"value", lo}};
    case Kind::uniform:
      return {{"law", "uniform"}, {"lo", lo}, {"hi", hi}};
    case Kind::two_point:
      return {{"law", "two_point"}, {"lo", lo}, {"hi", hi}};
    case Kind::grid:
      return {{"law", "grid"}, {"lo", lo}, {"hi", hi}, {"levels", levels}};
  }
  return {};
}

void DgpConfig::validate() const {
  if (sites < 2) throw InputError("simulation needs at least 2 sites");
  const int min_n = second_arm ? 6 : 4;
  if (n_min < min_n || n_max < n_min) throw InputError("site sizes need " + std::to_string(min_n) + " <= n_min <= n_max");
  if (!(p_treat > 0.0 && p_treat < 1.0)) throw InputError("p_treat must lie in (0, 1)");
  if (second_arm && !(second_arm->fraction > 0.0 && p_treat + second_arm->fraction < 1.0))
    throw InputError("second-arm fraction must be positive and leave room for controls");
  if (!(y_noise >= 0.0) || !(gain_noise >= 0.0)) throw InputError("noise scales must be non-negative");
  for (const auto& m : mediators) {
    if (!(std::abs(m.rho) <= 1.0)) throw InputError("mediator rho must lie in [-1, 1]");
    if (!(m.noise >= 0.0)) throw InputError("mediator noise must be non-negative");
  }
  if (link == FsLateLink::crossed && (fs_levels < 1 || sites % fs_levels != 0))
    throw InputError("crossed design needs fs_levels dividing the number of sites");
  std::set<std::string> names;
  for (const auto& m : mediators) {
    if (!names.insert(m.name).second) throw InputError("duplicate mediator name '" + m.name + "'");
  }
  for (const auto& c : covariates) {
    if (!names.insert(c.name).second) throw InputError("duplicate covariate name '" + c.name + "'");
  }
}

DgpConfig DgpConfig::from_json(const json& j) {
  reject_unknown(j, {"sites", "n", "p_treat", "weights", "y0", "fs", "late", "link", "y_noise", "gain_noise",
                     "mediators", "second_arm", "covariates"},
                 "dgp");
  DgpConfig c;
  c.sites = get_or<int>(j, "sites", c.sites);
  if (j.contains("n")) {
    const auto& n = j.at("n");
    if (n.is_number_integer()) {
      c.n_min = c.n_max = n.get<int>();
    } else if (n.is_array() && n.size() == 2) {
      c.n_min = n[0].get<int>();
      c.n_max = n[1].get<int>();
    } else {
      throw InputError("'n' must be an integer or a [min, max] pair");
    }
  }
  c.p_treat = get_or<double>(j, "p_treat", c.p_treat);
  const auto weights = get_or<std::string>(j, "weights", "equal");
  if (weights != "equal" && weights != "proportional") throw InputError("dgp weights must be equal or proportional");
  c.proportional_weights = weights == "proportional";
  if (j.contains("y0")) c.y0 = Law::from_json(j.at("y0"));
  if (j.contains("fs")) c.fs = Law::from_json(j.at("fs"));
  if (j.contains("late")) c.late = Law::from_json(j.at("late"));
  if (j.contains("link")) {
    const auto& l = j.at("link");
    reject_unknown(l, {"kind", "fs_levels", "slope"}, "link");
    const auto kind = get_or<std::string>(l, "kind", "independent");
    if (kind == "independent") c.link = FsLateLink::independent;
    else if (kind == "crossed") c.link = FsLateLink::crossed;
    else if (kind == "linear") c.link = FsLateLink::linear;
    else throw InputError("unknown link kind '" + kind + "'");
    c.fs_levels = get_or<int>(l, "fs_levels", 0);
    c.link_slope = get_or<double>(l, "slope", 0.0);
  }
  c.y_noise = get_or<double>(j, "y_noise", c.y_noise);
  c.gain_noise = get_or<double>(j, "gain_noise", c.gain_noise);
  if (j.contains("mediators")) {
    for (const auto& m : j.at("mediators")) {
      reject_unknown(m, {"name", "intercept", "slope", "law", "noise", "rho"}, "mediator");
      MediatorLaw ml;
      ml.name = get_or<std::string>(m, "name", "m" + std::to_string(c.mediators.size() + 1));
      ml.intercept = get_or<double>(m, "intercept", 0.0);
      ml.slope = get_or<double>(m, "slope", 0.0);
      if (m.contains("law")) ml.law = Law::from_json(m.at("law"));
      ml.noise = get_or<double>(m, "noise", 1.0);
      ml.rho = get_or<double>(m, "rho", 0.0);
      c.mediators.push_back(ml);
    }
  }
  if (j.contains("second_arm") && !j.at("second_arm").is_null()) {
    const auto& a = j.at("second_arm");
    reject_unknown(a, {"fraction", "intercept", "slope", "law", "noise"}, "second_arm");
    SecondArmLaw sa;
    sa.fraction = get_or<double>(a, "fraction", 0.25);
    sa.intercept = get_or<double>(a, "intercept", 0.0);
    sa.slope = get_or<double>(a, "slope", 0.0);
    if (a.contains("law")) sa.law = Law::from_json(a.at("law"));
    sa.noise = get_or<double>(a, "noise", 0.0);
    c.second_arm = sa;
  }
  if (j.contains("covariates")) {
    for (const auto& x : j.at("covariates")) {
      reject_unknown(x, {"name", "law", "effect"}, "covariate");
      CovariateLaw cl;
      cl.name = get_or<std::string>(x, "name", "x" + std::to_string(c.covariates.size() + 1));
      if (x.contains("law")) cl.law = Law::from_json(x.at("law"));
      cl.effect = get_or<double>(x, "effect", 0.0);
      c.covariates.push_back(cl);
    }
  }
  c.validate();
  return c;
}

json DgpConfig::to_json() const {
  json j;
  j["sites"] = sites;
  j["n"] = n_min == n_max ? json(n_min) : json::array({n_min, n_max});
  j["p_treat"] = p_treat;
  j["weights"] = proportional_weights ? "proportional" : "equal";
  j["y0"] = y0.to_json();
  j["fs"] = fs.to_json();
  j["late"] = late.to_json();
  const char* kinds[] = {"independent", "crossed", "linear"};
  j["link"] = {{"kind", kinds[static_cast<int>(link)]}, {"fs_levels", fs_levels}, {"slope", link_slope}};
  j["y_noise"] = y_noise;
  j["gain_noise"] = gain_noise;
  j["mediators"] = json::array();
  for (const auto& m : mediators) {
    j["mediators"].push_back({{"name", m.name}, {"intercept", m.intercept}, {"slope", m.slope},
                              {"law", m.law.to_json()}, {"noise", m.noise}, {"rho", m.rho}});
  }
  if (second_arm) {
    j["second_arm"] = {{"fraction", second_arm->fraction}, {"intercept", second_arm->intercept},
                       {"slope", second_arm->slope}, {"law", second_arm->law.to_json()}, {"noise", second_arm->noise}};
  }
  j["covariates"] = json::array();
  for (const auto& x : covariates) j["covariates"].push_back({{"name", x.name}, {"law", x.law.to_json()}, {"effect", x.effect}});
  return j;
}

double Population::predictor_value(const PredictorEntry& e, std::size_t s) const {
  const SiteParams& p = sites.at(s);
  if (e.source == PredictorEntry::Source::observed) return p.x.at(covariates.index_of(e.column));
  switch (e.kind) {
    case PredictorKind::first_stage:
      return p.fs;
    case PredictorKind::control_mean_outcome:
      return p.y0;
    case PredictorKind::mediator_itt:
      return p.itt_m.at(e.mediator);
    case PredictorKind::second_arm_itt:
      if (!cfg.second_arm) throw InputError("population has no second arm");
      return p.itt2;
  }
  return kNaN;
}

Population draw_population(const DgpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int S = cfg.sites;
  Population pop;
  pop.cfg = cfg;
  pop.sites.resize(static_cast<std::size_t>(S));
  // Each law gets its own substream so adding a mediator does not move the others.
  auto stream = [seed](std::uint64_t tag, std::uint64_t k = 0) {
    return CounterRng::substream(seed, {streams::kPopulation, tag, k});
  };

  auto size_rng = stream(1);
  auto y0_rng = stream(2);
  auto fs_rng = stream(3);
  auto late_rng = stream(4);
  const auto y0 = stratified(cfg.y0, S, y0_rng);
  std::vector<double> fs, late;
  if (cfg.link == FsLateLink::crossed) {
    const int l1 = cfg.fs_levels;
    const int l2 = S / l1;
    for (int s = 0; s < S; ++s) {
      fs.push_back(cfg.fs.quantile((s / l2 + 0.5) / l1));
      late.push_back(cfg.late.quantile((s % l2 + 0.5) / l2));
    }
  } else {
    fs = stratified(cfg.fs, S, fs_rng);
    late = stratified(cfg.late, S, late_rng);
    if (cfg.link == FsLateLink::linear) {
      for (int s = 0; s < S; ++s) late[static_cast<std::size_t>(s)] += cfg.link_slope * fs[static_cast<std::size_t>(s)];
    }
  }

  std::vector<std::vector<double>> x(cfg.covariates.size());
  for (std::size_t k = 0; k < cfg.covariates.size(); ++k) {
    auto rng = stream(5, k);
    x[k] = stratified(cfg.covariates[k].law, S, rng);
    for (int s = 0; s < S; ++s) late[static_cast<std::size_t>(s)] += cfg.covariates[k].effect * x[k][static_cast<std::size_t>(s)];
  }

  for (int s = 0; s < S; ++s) {
    auto& p = pop.sites[static_cast<std::size_t>(s)];
    const auto su = static_cast<std::size_t>(s);
    p.id = site_label(s, S);
    p.n = cfg.n_min == cfg.n_max ? cfg.n_min
                                 : cfg.n_min + static_cast<int>(size_rng.below(static_cast<std::uint64_t>(cfg.n_max - cfg.n_min + 1)));
    p.n2 = cfg.second_arm ? std::max(2, static_cast<int>(std::lround(cfg.second_arm->fraction * p.n))) : 0;
    p.n1 = std::clamp(static_cast<int>(std::lround(cfg.p_treat * p.n)), 2, p.n - p.n2 - 2);
    p.y0 = y0[su];
    p.fs = fs[su];
    p.late = late[su];
    if (!(p.fs > 0.0 && p.fs <= 1.0))
      throw InputError("first-stage law produces FS outside (0, 1] at site " + p.id);
    p.itt = p.fs * p.late;
    for (std::size_t k = 0; k < x.size(); ++k) p.x.push_back(x[k][su]);
  }

  for (std::size_t k = 0; k < cfg.mediators.size(); ++k) {
    auto rng = stream(6, k);
    const auto draw = stratified(cfg.mediators[k].law, S, rng);
    for (int s = 0; s < S; ++s) {
      auto& p = pop.sites[static_cast<std::size_t>(s)];
      p.itt_m.push_back(cfg.mediators[k].intercept + cfg.mediators[k].slope * p.itt + draw[static_cast<std::size_t>(s)]);
    }
    pop.mediator_names.push_back(cfg.mediators[k].name);
  }
  if (cfg.second_arm) {
    auto rng = stream(7);
    const auto draw = stratified(cfg.second_arm->law, S, rng);
    for (int s = 0; s < S; ++s) {
      auto& p = pop.sites[static_cast<std::size_t>(s)];
      p.itt2 = cfg.second_arm->intercept + cfg.second_arm->slope * p.itt + draw[static_cast<std::size_t>(s)];
    }
  }

  std::vector<std::string> ids;
  std::vector<double> raw;
  for (const auto& p : pop.sites) {
    ids.push_back(p.id);
    raw.push_back(cfg.proportional_weights ? static_cast<double>(p.n - p.n2) : 1.0);
  }
  pop.weights = cfg.proportional_weights ? Weights::normalized(ids, raw) : Weights::equal(ids);

  for (const auto& c : cfg.covariates) pop.covariates.names.push_back(c.name);
  for (const auto& p : pop.sites) pop.covariates.values[p.id] = p.x;

  const auto& w = pop.weights.w;
  TruthRecord& t = pop.truth;
  std::vector<double> itt, fsv, latev;
  for (const auto& p : pop.sites) {
    itt.push_back(p.itt);
    fsv.push_back(p.fs);
    latev.push_back(p.late);
  }
  for (std::size_t s = 0; s < itt.size(); ++s) {
    t.itt += w[s] * itt[s];
    t.fs += w[s] * fsv[s];
  }
  t.late = t.itt / t.fs;
  t.sigma2_itt = weighted_var(itt, w);
  t.sigma2_fs = weighted_var(fsv, w);
  std::vector<double> omega(w.size());
  for (std::size_t s = 0; s < w.size(); ++s) omega[s] = w[s] * fsv[s] / t.fs;
  t.sigma2_late = weighted_var(latev, omega);
  for (std::size_t k = 0; k < cfg.mediators.size(); ++k) {
    std::vector<double> v;
    for (const auto& p : pop.sites) v.push_back(p.itt_m[k]);
    t.sigma2_itt_m.push_back(weighted_var(v, w));
  }
  return pop;
}

Eigen::VectorXd true_beta(const Population& pop, const PredictorSpec& spec, double lambda, Dependent dep) {
  spec.validate();
  std::vector<Eigen::VectorXd> x;
  std::vector<double> y;
  for (std::size_t s = 0; s < pop.sites.size(); ++s) {
    Eigen::VectorXd row(static_cast<Eigen::Index>(spec.size()));
    for (std::size_t k = 0; k < spec.size(); ++k) row(static_cast<Eigen::Index>(k)) = pop.predictor_value(spec.entries[k], s);
    x.push_back(row);
    y.push_back(dep == Dependent::itt ? pop.sites[s].itt : pop.sites[s].fs);
  }
  return solve_true(x, y, pop.weights.w, lambda);
}

double true_sign_stat(const Population& pop, const PredictorEntry& x) {
  PredictorSpec spec{{x}};
  const double b_itt = true_beta(pop, spec, 0.0, Dependent::itt)(0);
  const bool x_is_fs = x.source == PredictorEntry::Source::estimated && x.kind == PredictorKind::first_stage;
  const double b_fs = x_is_fs ? 1.0 : true_beta(pop, spec, 0.0, Dependent::fs)(0);
  return b_itt - pop.truth.late * b_fs;
}

std::vector<SiteSummary> draw_summaries(const Population& pop, std::uint64_t seed, std::uint64_t replication) {
  std::vector<SiteSummary> out;
  out.reserve(pop.sites.size());
  for (std::size_t s = 0; s < pop.sites.size(); ++s) {
    CounterRng rng = CounterRng::substream(seed, {streams::kReplication, replication, s});
    const auto& p = pop.sites[s];
    const PotentialOutcomes po = draw_units(pop, p, rng);
    const std::vector<int> labels = draw_labels(p, rng);
    out.push_back(summary_from(po, labels, p.id));
    out.back().w = pop.weights.w[s];
  }
  return out;
}

Dataset draw_dataset(const Population& pop, std::uint64_t seed, std::uint64_t replication) {
  Dataset ds;
  ds.arm_set = {"control", "treatment"};
  if (pop.cfg.second_arm) ds.arm_set.push_back("second");
  ds.control_arm = "control";
  ds.mediator_names = pop.mediator_names;
  ds.covariates = pop.covariates;
  const char* arm_names[] = {"control", "treatment", "second"};
  for (std::size_t s = 0; s < pop.sites.size(); ++s) {
    CounterRng rng = CounterRng::substream(seed, {streams::kReplication, replication, s});
    const auto& p = pop.sites[s];
    const PotentialOutcomes po = draw_units(pop, p, rng);
    const std::vector<int> labels = draw_labels(p, rng);
    for (std::size_t i = 0; i < po.size(); ++i) {
      const int z = labels[i];
      UnitRecord r;
      r.site_id = p.id;
      r.arm = arm_names[z];
      r.d = z == 1 ? po.d1[i] : po.d0[i];
      r.y = z == 1 ? po.y1[i] : (z == 2 ? po.y2[i] : po.y0[i]);
      for (std::size_t k = 0; k < po.m0.size(); ++k) r.m.push_back(z == 1 ? po.m1[k][i] : po.m0[k][i]);
      ds.records.push_back(std::move(r));
    }
  }
  canonicalize(ds);
  return ds;
}

void write_dataset_csv(const Dataset& ds, std::ostream& out) {
  out << "site,arm,d,y";
  for (const auto& m : ds.mediator_names) out << ',' << m;
  for (const auto& x : ds.covariates.names) out << ',' << x;
  out << '\n';
  char buf[64];
  auto num = [&](double v) {
    if (std::isnan(v)) return std::string("NA");
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : ds.records) {
    out << r.site_id << ',' << r.arm << ',' << r.d << ',' << num(r.y);
    for (double m : r.m) out << ',' << num(m);
    auto it = ds.covariates.values.find(r.site_id);
    for (std::size_t k = 0; k < ds.covariates.names.size(); ++k)
      out << ',' << (it == ds.covariates.values.end() ? std::string("NA") : num(it->second[k]));
    out << '\n';
  }
}

SuiteConfig SuiteConfig::from_json(const json& j, const std::vector<std::string>& mediator_names) {
  reject_unknown(j, {"eb", "predictors", "sign_test", "sigma2_late", "gcv", "grid", "alpha"}, "estimators");
  SuiteConfig c;
  if (j.contains("eb")) c.eb = parse_eb_targets(j.at("eb"), mediator_names);
  if (j.contains("predictors")) c.predictors = PredictorSpec::from_json(j.at("predictors"), mediator_names);
  if (j.contains("sign_test") && !j.at("sign_test").is_null()) {
    auto spec = PredictorSpec::from_json(json::array({j.at("sign_test")}), mediator_names);
    c.sign_test = spec.entries.front();
  }
  c.sigma2_late = get_or<bool>(j, "sigma2_late", false);
  c.gcv = get_or<bool>(j, "gcv", false);
  if (j.contains("grid")) c.grid.explicit_grid = j.at("grid").get<std::vector<double>>();
  c.alpha = get_or<double>(j, "alpha", 0.05);
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  if (c.gcv && c.predictors.entries.empty()) throw InputError("gcv needs a predictor list");
  return c;
}

const McRow& McSummary::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw InputError("no Monte Carlo row named '" + name + "'");
}

McSummary replicate(const Population& pop, int replications, const SuiteConfig& suite, std::uint64_t seed,
                    unsigned threads) {
  if (replications < 1) throw InputError("replications must be at least 1");
  const auto R = static_cast<std::size_t>(replications);

  std::vector<std::string> names;
  std::vector<double> truth;
  std::vector<bool> has_se;
  for (const auto& t : suite.eb) {
    names.push_back("sigma2[" + t.label(pop.mediator_names) + "]");
    switch (t.kind) {
      case EbTargetKind::itt:
        truth.push_back(pop.truth.sigma2_itt);
        break;
      case EbTargetKind::fs:
        truth.push_back(pop.truth.sigma2_fs);
        break;
      case EbTargetKind::mediator_itt:
        truth.push_back(pop.truth.sigma2_itt_m.at(t.mediator));
        break;
    }
    has_se.push_back(true);
  }
  Eigen::VectorXd beta_true;
  if (!suite.predictors.entries.empty()) {
    beta_true = true_beta(pop, suite.predictors);
    for (std::size_t k = 0; k < suite.predictors.size(); ++k) {
      names.push_back("beta(0)[" + suite.predictors.entries[k].name + "]");
      truth.push_back(beta_true(static_cast<Eigen::Index>(k)));
      has_se.push_back(true);
    }
  }
  if (suite.sign_test) {
    names.push_back("sign[" + suite.sign_test->name + "]");
    truth.push_back(true_sign_stat(pop, *suite.sign_test));
    has_se.push_back(true);
  }
  if (suite.sigma2_late) {
    names.push_back("LATE");
    truth.push_back(pop.truth.late);
    has_se.push_back(true);
    names.push_back("sigma2[LATE]");
    truth.push_back(pop.truth.sigma2_late);
    has_se.push_back(true);
  }
  const std::size_t M = names.size();

  struct GcvDraw {
    bool ok = false;
    double e_star = 0.0, e_zero = 0.0, lambda = 0.0;
  };
  std::vector<std::vector<double>> est(R, std::vector<double>(M, kNaN));
  std::vector<std::vector<double>> se(R, std::vector<double>(M, kNaN));
  std::vector<GcvDraw> gcv(R);

  parallel_for(R, threads, [&](std::size_t r) {
    const auto sites = draw_summaries(pop, seed, r);
    std::size_t i = 0;
    for (const auto& t : suite.eb) {
      try {
        const auto e = eb_variance(sites, pop.weights, t, suite.alpha);
        est[r][i] = e.point;
        se[r][i] = e.se;
      } catch (const Error&) {
      }
      ++i;
    }
    if (!suite.predictors.entries.empty()) {
      const std::size_t K = suite.predictors.size();
      try {
        const Design d = build_design(sites, pop.weights, suite.predictors, pop.covariates);
        const RidgeFit f = corrected_ridge(d, 0.0);
        for (std::size_t k = 0; k < K; ++k) {
          est[r][i + k] = f.beta(static_cast<Eigen::Index>(k));
          se[r][i + k] = f.se(static_cast<Eigen::Index>(k));
        }
        if (suite.gcv) {
          const double l = select_lambda(d, suite.grid).lambda_star;
          const Eigen::VectorXd b = corrected_ridge(d, l).beta;
          gcv[r] = {true, (b - beta_true).squaredNorm(), (f.beta - beta_true).squaredNorm(), l};
        }
      } catch (const Error&) {
      }
      i += K;
    }
    if (suite.sign_test) {
      try {
        const auto t = late_cov_sign(sites, pop.weights, *suite.sign_test, pop.covariates, suite.alpha);
        est[r][i] = t.stat;
        se[r][i] = t.se;
      } catch (const Error&) {
      }
      ++i;
    }
    if (suite.sigma2_late) {
      try {
        const auto v = sigma2_late(sites, pop.weights, suite.alpha);
        est[r][i] = v.late;
        se[r][i] = v.late_se;
        est[r][i + 1] = v.sigma2;
        se[r][i + 1] = v.se;
      } catch (const Error&) {
      }
      i += 2;
    }
  });

  const double zc = normal_quantile(1.0 - suite.alpha / 2.0);
  McSummary out;
  out.replications = replications;
  out.seed = seed;
  for (std::size_t i = 0; i < M; ++i) {
    McRow row;
    row.name = names[i];
    row.truth = truth[i];
    row.has_se = has_se[i];
    double sum = 0.0, sum_se = 0.0;
    int covered = 0, rejected = 0;
    for (std::size_t r = 0; r < R; ++r) {
      const double e = est[r][i];
      if (std::isnan(e)) {
        ++row.failed;
        continue;
      }
      ++row.used;
      sum += e;
      sum_se += se[r][i];
      if (std::abs(e - row.truth) <= zc * se[r][i]) ++covered;
      if (std::abs(e) > zc * se[r][i]) ++rejected;
    }
    if (row.failed * 10 > replications)
      throw EstimationError("estimator '" + row.name + "' failed in " + std::to_string(row.failed) + " of " +
                            std::to_string(replications) + " replications");
    if (row.used > 0) {
      row.mean = sum / row.used;
      row.mean_se = sum_se / row.used;
      row.coverage = static_cast<double>(covered) / row.used;
      row.rejection = static_cast<double>(rejected) / row.used;
      double ss = 0.0;
      for (std::size_t r = 0; r < R; ++r) {
        if (!std::isnan(est[r][i])) ss += (est[r][i] - row.mean) * (est[r][i] - row.mean);
      }
      row.sd = row.used > 1 ? std::sqrt(ss / (row.used - 1)) : 0.0;
      row.mc_se = row.sd / std::sqrt(static_cast<double>(row.used));
    }
    row.bias = row.mean - row.truth;
    row.z = row.mc_se > 0.0 ? row.bias / row.mc_se : 0.0;
    out.rows.push_back(row);
  }

  if (suite.gcv) {
    GcvSummary g;
    int not_worse = 0, positive = 0;
    for (const auto& d : gcv) {
      if (!d.ok) continue;
      ++g.used;
      if (d.e_star <= d.e_zero) ++not_worse;
      if (d.lambda > 0.0) ++positive;
      g.mse_star += d.e_star;
      g.mse_zero += d.e_zero;
      g.mean_lambda += d.lambda;
    }
    if (g.used > 0) {
      g.share_not_worse = static_cast<double>(not_worse) / g.used;
      g.share_positive_lambda = static_cast<double>(positive) / g.used;
      g.mse_star /= g.used;
      g.mse_zero /= g.used;
      g.mean_lambda /= g.used;
    }
    out.gcv = g;
  }
  return out;
}

std::uint64_t assignment_count(std::size_t n, std::size_t n1) {
  if (n1 > n) return 0;
  std::uint64_t c = 1;
  for (std::size_t i = 1; i <= n1; ++i) c = c * (n - n1 + i) / i;
  return c;
}

void for_each_assignment(std::size_t n, std::size_t n1, std::size_t n2,
                         const std::function<void(const std::vector<int>&)>& fn) {
  if (n > kMaxEnumerationUnits) throw InputError("enumeration supports at most 8 units per site");
  if (n1 + n2 > n) throw InputError("more treated units than units");
  const unsigned full = 1u << n;
  std::vector<int> labels(n);
  for (unsigned t = 0; t < full; ++t) {
    if (static_cast<std::size_t>(__builtin_popcount(t)) != n1) continue;
    for (unsigned o = 0; o < full; ++o) {
      if ((o & t) != 0 || static_cast<std::size_t>(__builtin_popcount(o)) != n2) continue;
      for (std::size_t i = 0; i < n; ++i) labels[i] = (t >> i) & 1u ? 1 : ((o >> i) & 1u ? 2 : 0);
      fn(labels);
    }
  }
}

SiteSummary realized_summary(const PotentialOutcomes& po, const std::vector<int>& labels) {
  return summary_from(po, labels, "site");
}

Eigen::VectorXd enumerate_assignments(const PotentialOutcomes& po, std::size_t n1,
                                      const std::function<Eigen::VectorXd(const SiteSummary&)>& stat,
                                      std::size_t n2) {
  const std::size_t n = po.size();
  if (n > kMaxEnumerationUnits) throw InputError("enumeration supports at most 8 units per site");
  if (n1 < 2 || n < n1 + n2 + 2) throw InputError("enumeration needs at least 2 treated and 2 control units");
  if (n2 > 0 && (n2 < 2 || po.y2.size() != n)) throw InputError("second-arm enumeration needs y2 and n2 >= 2");
  Eigen::VectorXd sum;
  std::uint64_t count = 0;
  for_each_assignment(n, n1, n2, [&](const std::vector<int>& labels) {
    const Eigen::VectorXd v = stat(realized_summary(po, labels));
    if (count == 0) sum = Eigen::VectorXd::Zero(v.size());
    sum += v;
    ++count;
  });
  return sum / static_cast<double>(count);
}

}  // namespace sitehet
