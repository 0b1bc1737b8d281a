#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sitehet/dataset.hpp"
#include "sitehet/site_stats.hpp"

namespace testing_util {

inline sitehet::ArmUnits arm(std::vector<double> y, std::vector<int> d = {}, std::vector<std::vector<double>> m = {}) {
  sitehet::ArmUnits u;
  u.y = std::move(y);
  u.d = d.empty() ? std::vector<int>(u.y.size(), 0) : std::move(d);
  u.m = std::move(m);
  return u;
}

// Site where D = Z (perfect compliance).
inline sitehet::SiteSummary site(const std::string& id, std::vector<double> y1, std::vector<double> y0) {
  std::vector<int> d1(y1.size(), 1);
  return sitehet::summarize_site(id, arm(std::move(y1), d1), arm(std::move(y0)));
}

inline std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("s" + std::to_string(100 + i));
  return out;
}

inline void attach(std::vector<sitehet::SiteSummary>& sites, const sitehet::Weights& w) {
  for (std::size_t s = 0; s < sites.size(); ++s) sites[s].w = w.w[s];
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample covariance with the n - 1 divisor, written out directly.
inline double sample_cov(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean(a), mb = mean(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(a.size() - 1);
}

}  // namespace testing_util

#include <functional>

#include "sitehet/rng.hpp"

namespace testing_util {

// A site with one-sided noncompliance and uniform outcome noise.
inline sitehet::SiteSummary random_site(sitehet::CounterRng& rng, const std::string& id, double fs, double late,
                                        std::size_t n1, std::size_t n0, double noise = 1.0) {
  const double y0 = rng.uniform(-1, 1);
  auto draw = [&](std::size_t n, bool treated) {
    sitehet::ArmUnits u;
    for (std::size_t i = 0; i < n; ++i) {
      const int d = treated ? rng.bernoulli(fs) : 0;
      u.y.push_back(y0 + d * late + noise * rng.uniform(-1, 1));
      u.d.push_back(d);
    }
    return u;
  };
  const auto t = draw(n1, true);
  const auto c = draw(n0, false);
  return sitehet::summarize_site(id, t, c);
}

// S times the derivative of stat when w_s is scaled by (1 + eps): the
// influence value a linearization should assign to site s.
inline std::vector<double> numeric_influence(const sitehet::Weights& w,
                                             const std::function<double(const sitehet::Weights&)>& stat,
                                             double eps = 1e-6) {
  std::vector<double> out;
  for (std::size_t s = 0; s < w.size(); ++s) {
    sitehet::Weights up = w, down = w;
    up.w[s] *= 1.0 + eps;
    down.w[s] *= 1.0 - eps;
    out.push_back(static_cast<double>(w.size()) * (stat(up) - stat(down)) / (2.0 * eps));
  }
  return out;
}

}  // namespace testing_util
