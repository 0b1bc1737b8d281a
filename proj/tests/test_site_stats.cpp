#include <doctest.h>

#include "helpers.hpp"
#include "sitehet/error.hpp"
#include "sitehet/rng.hpp"

using namespace sitehet;
using testing_util::arm;
using testing_util::sample_cov;

TEST_CASE("treated (1,0), control (0,0)") {
  const SiteSummary s = summarize_site("a", arm({1, 0}), arm({0, 0}));
  CHECK(s.itt_hat() == 0.5);
  CHECK(s.r2_y1() == 0.5);
  CHECK(s.r2_y0() == 0.0);
  CHECK(s.v_rob_itt() == 0.25);
}

TEST_CASE("constant outcomes and perfect compliance") {
  const SiteSummary c = summarize_site("a", arm({3, 3, 3}, {1, 1, 1}), arm({3, 3}, {0, 0}));
  CHECK(c.itt_hat() == 0.0);
  CHECK(c.v_rob_itt() == 0.0);
  CHECK(c.fs_hat() == 1.0);
  CHECK(c.v_rob_fs() == 0.0);
}

TEST_CASE("fewer than two units in an arm") {
  CHECK_THROWS_AS(summarize_site("a", arm({1}), arm({0, 0})), InputError);
  CHECK_THROWS_AS(summarize_site("a", arm({1, 2}), arm({0})), InputError);
}

TEST_CASE("arm moments against direct sums") {
  const std::vector<double> y1 = {1.5, -0.25, 3.0, 2.0, 0.5};
  const std::vector<int> d1 = {1, 0, 1, 1, 0};
  const std::vector<double> m1 = {0.2, 0.1, 0.7, 0.4, 0.0};
  const std::vector<double> y0 = {0.5, 1.0, -1.0, 0.0};
  const std::vector<int> d0 = {0, 1, 0, 0};
  const std::vector<double> m0 = {0.3, 0.2, 0.1, 0.6};
  const SiteSummary s = summarize_site("a", arm(y1, d1, {m1}), arm(y0, d0, {m0}));
  const std::vector<double> d1d(d1.begin(), d1.end()), d0d(d0.begin(), d0.end());
  CHECK(s.r2_y1() == doctest::Approx(sample_cov(y1, y1)).epsilon(1e-14));
  CHECK(s.r2_d0() == doctest::Approx(sample_cov(d0d, d0d)).epsilon(1e-14));
  CHECK(s.c_dy1() == doctest::Approx(sample_cov(d1d, y1)).epsilon(1e-14));
  CHECK(s.c_dy0() == doctest::Approx(sample_cov(d0d, y0)).epsilon(1e-14));
  CHECK(s.treated.c(kVarM0, kVarY) == doctest::Approx(sample_cov(m1, y1)).epsilon(1e-14));
  CHECK(s.itt_m_hat(0) == doctest::Approx(testing_util::mean(m1) - testing_util::mean(m0)).epsilon(1e-14));
  CHECK(s.v_rob_itt() == s.r2_y1() / 5 + s.r2_y0() / 4);

  SUBCASE("predictor moment triples") {
    const auto p1 = predictor_moments(s, PredictorKind::first_stage);
    CHECK(p1.xhat == doctest::Approx(3.0 / 5 - 1.0 / 4));
    CHECK(p1.vhat == doctest::Approx(sample_cov(d0d, d0d) / 4 + sample_cov(d1d, d1d) / 5).epsilon(1e-14));
    CHECK(p1.cov_itt == doctest::Approx(sample_cov(d0d, y0) / 4 + sample_cov(d1d, y1) / 5).epsilon(1e-14));
    const auto p2 = predictor_moments(s, PredictorKind::control_mean_outcome);
    CHECK(p2.xhat == doctest::Approx(0.125));
    CHECK(p2.vhat == doctest::Approx(sample_cov(y0, y0) / 4).epsilon(1e-14));
    CHECK(p2.cov_itt == doctest::Approx(-sample_cov(y0, y0) / 4).epsilon(1e-14));
    const auto p3 = predictor_moments(s, PredictorKind::mediator_itt, 0);
    CHECK(p3.vhat == doctest::Approx(sample_cov(m0, m0) / 4 + sample_cov(m1, m1) / 5).epsilon(1e-14));
    CHECK(p3.cov_itt == doctest::Approx(sample_cov(m0, y0) / 4 + sample_cov(m1, y1) / 5).epsilon(1e-14));
    CHECK_THROWS_AS(predictor_moments(s, PredictorKind::mediator_itt, 1), InputError);
    CHECK_THROWS_AS(predictor_moments(s, PredictorKind::second_arm_itt), InputError);
  }
  SUBCASE("cross-kind rule") {
    const Contrast fs = contrasts::first_stage(), y0c = contrasts::control_mean_outcome();
    const Contrast med = contrasts::mediator_itt(0);
    CHECK(contrast_cov(s, fs, y0c) == doctest::Approx(-sample_cov(d0d, y0) / 4).epsilon(1e-14));
    CHECK(contrast_cov(s, y0c, y0c) == doctest::Approx(sample_cov(y0, y0) / 4).epsilon(1e-14));
    CHECK(contrast_cov(s, fs, med) ==
          doctest::Approx(sample_cov(d1d, m1) / 5 + sample_cov(d0d, m0) / 4).epsilon(1e-14));
    CHECK(contrast_cov(s, fs, med) == contrast_cov(s, med, fs));
  }
}

TEST_CASE("control Y = (0, 1): control mean outcome triple") {
  const SiteSummary s = summarize_site("a", arm({2, 5}), arm({0, 1}));
  const auto p = predictor_moments(s, PredictorKind::control_mean_outcome);
  CHECK(p.xhat == 0.5);
  CHECK(p.vhat == 0.25);
  CHECK(p.cov_itt == -0.25);
}

TEST_CASE("constant take-up within arms: first-stage moments vanish") {
  const SiteSummary s = summarize_site("a", arm({2, 5, 1}, {1, 1, 1}), arm({0, 1}, {0, 0}));
  const auto p = predictor_moments(s, PredictorKind::first_stage);
  CHECK(p.vhat == 0.0);
  CHECK(p.cov_itt == 0.0);
}

TEST_CASE("mediator identical to the outcome") {
  const std::vector<double> y1 = {2, 5, 1}, y0 = {0, 1, 4};
  const SiteSummary s = summarize_site("a", arm(y1, {}, {y1}), arm(y0, {}, {y0}));
  const auto p = predictor_moments(s, PredictorKind::mediator_itt, 0);
  CHECK(p.cov_itt == s.v_rob_itt());
  CHECK(p.vhat == s.v_rob_itt());
}

TEST_CASE("second-arm triple") {
  const std::vector<double> y1 = {2, 5, 1}, y0 = {0, 1, 4}, y2 = {3, 3, 7, 1};
  const ArmUnits second = arm(y2);
  const SiteSummary s = summarize_site("a", arm(y1), arm(y0), &second);
  const auto p = predictor_moments(s, PredictorKind::second_arm_itt);
  CHECK(p.xhat == doctest::Approx(3.5 - 5.0 / 3));
  CHECK(p.vhat == doctest::Approx(sample_cov(y0, y0) / 3 + sample_cov(y2, y2) / 4).epsilon(1e-14));
  // Both estimators subtract the same control mean, so the covariance estimator is +r2_y0 / n0.
  CHECK(p.cov_itt == doctest::Approx(sample_cov(y0, y0) / 3).epsilon(1e-14));
}

TEST_CASE("affine equivariance") {
  CounterRng rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> y1(4), y0(5);
    std::vector<int> d1(4), d0(5);
    for (std::size_t i = 0; i < 4; ++i) {
      y1[i] = rng.uniform(-2, 2);
      d1[i] = rng.bernoulli(0.6);
    }
    for (std::size_t i = 0; i < 5; ++i) {
      y0[i] = rng.uniform(-2, 2);
      d0[i] = rng.bernoulli(0.2);
    }
    const double a = rng.uniform(-3, 3), b = rng.uniform(-10, 10);
    auto t1 = y1, t0 = y0;
    for (auto& v : t1) v = a * v + b;
    for (auto& v : t0) v = a * v + b;
    const SiteSummary s = summarize_site("a", arm(y1, d1), arm(y0, d0));
    const SiteSummary t = summarize_site("a", arm(t1, d1), arm(t0, d0));
    CHECK(t.itt_hat() == doctest::Approx(a * s.itt_hat()).epsilon(1e-12));
    CHECK(t.v_rob_itt() == doctest::Approx(a * a * s.v_rob_itt()).epsilon(1e-12));
    CHECK(t.fs_hat() == s.fs_hat());
    CHECK(s.r2_y1() >= 0.0);
    CHECK(s.r2_d0() >= 0.0);
    CHECK(s.treated.cov.isApprox(s.treated.cov.transpose()));
  }
}

TEST_CASE("per-site LATE undefined at a zero first stage") {
  const SiteSummary s = summarize_site("a", arm({1, 0}, {0, 0}), arm({0, 0}, {0, 0}));
  CHECK_FALSE(s.late_hat().has_value());
  const SiteSummary t = summarize_site("a", arm({1, 0}, {1, 0}), arm({0, 0}, {0, 0}));
  CHECK(*t.late_hat() == 1.0);
}

TEST_CASE("aggregates") {
  SUBCASE("one site") {
    std::vector<SiteSummary> sites = {summarize_site("a", arm({1, 0}, {1, 0}), arm({0, 0}))};
    const auto agg = aggregate(sites, Weights::equal({"a"}));
    CHECK(agg.itt == sites[0].itt_hat());
    CHECK(agg.fs == sites[0].fs_hat());
    CHECK(*agg.late == 1.0);
    CHECK(agg.n_units == 4);
  }
  SUBCASE("ratio 0.02 / 0.4") {
    std::vector<SiteSummary> sites = {
        summarize_site("a", arm({0.1, 0, 0, 0, 0}, {1, 1, 0, 0, 0}), arm({0, 0, 0}, {0, 0, 0}))};
    const auto agg = aggregate(sites, Weights::equal({"a"}));
    CHECK(agg.itt == doctest::Approx(0.02));
    CHECK(agg.fs == doctest::Approx(0.4));
    CHECK(require_late(agg) == doctest::Approx(0.05));
  }
  SUBCASE("two sites with ITT 0 and 1") {
    std::vector<SiteSummary> sites = {testing_util::site("a", {0, 0}, {0, 0}), testing_util::site("b", {1, 1}, {0, 0})};
    const auto agg = aggregate(sites, Weights::equal({"a", "b"}));
    CHECK(agg.itt == 0.5);
  }
  SUBCASE("weak first stage") {
    std::vector<SiteSummary> sites = {summarize_site("a", arm({1, 0}, {0, 0}), arm({0, 0}, {0, 0}))};
    const auto agg = aggregate(sites, Weights::equal({"a"}));
    CHECK_FALSE(agg.late.has_value());
    CHECK_THROWS_AS(require_late(agg), EstimationError);
  }
}
