#include "sitehet/site_stats.hpp"

#include <cmath>
#include <map>

#include "sitehet/error.hpp"

namespace sitehet {

ArmMoments arm_moments(const ArmUnits& units) {
  const std::size_t n = units.size();
  const std::size_t p = kVarM0 + units.m.size();
  Eigen::MatrixXd x(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, kVarY) = units.y[i];
    x(i, kVarD) = units.d[i];
    for (std::size_t k = 0; k < units.m.size(); ++k) x(i, kVarM0 + k) = units.m[k][i];
  }
  ArmMoments out;
  out.n = static_cast<int>(n);
  out.mean = x.colwise().mean().transpose();
  Eigen::MatrixXd centered = x.rowwise() - out.mean.transpose();
  out.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

SiteSummary summarize_site(const std::string& site_id, const ArmUnits& treated, const ArmUnits& control,
                           const ArmUnits* second) {
  if (treated.size() < 2 || control.size() < 2)
    throw InputError("site '" + site_id + "' needs at least 2 treated and 2 control units");
  if (treated.m.size() != control.m.size()) throw InputError("site '" + site_id + "': mediator count differs by arm");
  SiteSummary s;
  s.site_id = site_id;
  s.treated = arm_moments(treated);
  s.control = arm_moments(control);
  if (second && second->size() >= 2) s.second = arm_moments(*second);
  return s;
}

std::vector<SiteSummary> summarize_sites(const Dataset& ds, const Weights& weights, const std::string& second_arm) {
  if (ds.focal_arm.empty()) throw InputError("dataset has no focal arm; call restrict_and_filter first");
  if (!second_arm.empty()) {
    if (!ds.has_arm(second_arm)) throw InputError("second arm '" + second_arm + "' is not a declared arm");
    if (second_arm == ds.focal_arm || second_arm == ds.control_arm)
      throw InputError("second arm must differ from the focal and control arms");
  }
  const std::size_t m = ds.mediator_names.size();
  struct Group {
    ArmUnits t, c, o;
  };
  std::map<std::string, Group> groups;
  for (const auto& r : ds.records) {
    auto& g = groups[r.site_id];
    ArmUnits* dst = nullptr;
    if (r.arm == ds.focal_arm) dst = &g.t;
    else if (r.arm == ds.control_arm) dst = &g.c;
    else if (!second_arm.empty() && r.arm == second_arm) dst = &g.o;
    if (!dst) continue;
    if (dst->m.empty()) dst->m.resize(m);
    dst->y.push_back(r.y);
    dst->d.push_back(r.d);
    for (std::size_t k = 0; k < m; ++k) dst->m[k].push_back(r.m[k]);
  }
  if (groups.size() != weights.size()) throw InputError("weights do not match the dataset's sites");

  std::vector<SiteSummary> out;
  out.reserve(groups.size());
  std::size_t s = 0;
  for (auto& [id, g] : groups) {
    if (weights.site_ids[s] != id) throw InputError("weights are not aligned with site '" + id + "'");
    for (ArmUnits* a : {&g.t, &g.c, &g.o}) {
      if (a->m.empty()) a->m.resize(m);
    }
    out.push_back(summarize_site(id, g.t, g.c, second_arm.empty() ? nullptr : &g.o));
    out.back().w = weights.w[s];
    ++s;
  }
  return out;
}

namespace contrasts {
Contrast itt() { return {{Arm::treated, kVarY, 1.0}, {Arm::control, kVarY, -1.0}}; }
Contrast first_stage() { return {{Arm::treated, kVarD, 1.0}, {Arm::control, kVarD, -1.0}}; }
Contrast control_mean_outcome() { return {{Arm::control, kVarY, 1.0}}; }
Contrast mediator_itt(std::size_t k) {
  return {{Arm::treated, kVarM0 + k, 1.0}, {Arm::control, kVarM0 + k, -1.0}};
}
Contrast second_arm_itt() { return {{Arm::second, kVarY, 1.0}, {Arm::control, kVarY, -1.0}}; }
}  // namespace contrasts

namespace {

const ArmMoments& arm_of(const SiteSummary& s, Arm a) {
  switch (a) {
    case Arm::treated:
      return s.treated;
    case Arm::control:
      return s.control;
    case Arm::second:
      if (!s.second) throw InputError("site '" + s.site_id + "' has fewer than 2 units in the second arm");
      return *s.second;
  }
  throw InputError("bad arm");
}

void check_var(const SiteSummary& s, std::size_t var) {
  if (var >= static_cast<std::size_t>(s.treated.mean.size()))
    throw InputError("site '" + s.site_id + "': mediator index out of range");
}

}  // namespace

double contrast_value(const SiteSummary& s, const Contrast& a) {
  double v = 0.0;
  for (const auto& t : a) {
    check_var(s, t.var);
    v += t.coef * arm_of(s, t.arm).mean(t.var);
  }
  return v;
}

double contrast_cov(const SiteSummary& s, const Contrast& a, const Contrast& b) {
  double v = 0.0;
  for (const auto& ta : a) {
    check_var(s, ta.var);
    for (const auto& tb : b) {
      check_var(s, tb.var);
      if (ta.arm != tb.arm) continue;
      const ArmMoments& am = arm_of(s, ta.arm);
      v += ta.coef * tb.coef * am.c(ta.var, tb.var) / am.n;
    }
  }
  return v;
}

Contrast predictor_contrast(PredictorKind kind, std::size_t mediator) {
  switch (kind) {
    case PredictorKind::first_stage:
      return contrasts::first_stage();
    case PredictorKind::control_mean_outcome:
      return contrasts::control_mean_outcome();
    case PredictorKind::mediator_itt:
      return contrasts::mediator_itt(mediator);
    case PredictorKind::second_arm_itt:
      return contrasts::second_arm_itt();
  }
  throw InputError("unknown predictor kind");
}

PredictorMoments predictor_moments(const SiteSummary& s, PredictorKind kind, std::size_t mediator) {
  if (kind == PredictorKind::mediator_itt && mediator >= s.mediator_count())
    throw InputError("mediator index " + std::to_string(mediator) + " out of range");
  const Contrast x = predictor_contrast(kind, mediator);
  const Contrast y = contrasts::itt();
  return {contrast_value(s, x), contrast_cov(s, x, x), contrast_cov(s, x, y)};
}

Aggregates aggregate(const std::vector<SiteSummary>& sites, const Weights& weights) {
  if (sites.empty()) throw InputError("no sites to aggregate");
  if (sites.size() != weights.size()) throw InputError("weights do not match the number of sites");
  Aggregates a;
  const std::size_t m = sites.front().mediator_count();
  a.itt_m.assign(m, 0.0);
  double v_itt = 0.0, v_fs = 0.0;
  for (std::size_t s = 0; s < sites.size(); ++s) {
    const double w = weights.w[s];
    a.itt += w * sites[s].itt_hat();
    a.fs += w * sites[s].fs_hat();
    for (std::size_t k = 0; k < m; ++k) a.itt_m[k] += w * sites[s].itt_m_hat(k);
    v_itt += w * w * sites[s].v_rob_itt();
    v_fs += w * w * sites[s].v_rob_fs();
    a.n_units += static_cast<std::size_t>(sites[s].n());
  }
  a.se_itt = std::sqrt(v_itt);
  a.se_fs = std::sqrt(v_fs);
  if (std::abs(a.fs) > kFsFloor) a.late = a.itt / a.fs;
  return a;
}

double require_late(const Aggregates& agg) {
  if (!agg.late) {
    throw EstimationError("weak first stage: aggregate FS = " + std::to_string(agg.fs) +
                          " is within the floor of zero; LATE is not identified");
  }
  return *agg.late;
}

}  // namespace sitehet
