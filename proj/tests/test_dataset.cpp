#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "helpers.hpp"
#include "sitehet/error.hpp"
#include "sitehet/rng.hpp"

using namespace sitehet;

namespace {

Dataset parse(const std::string& text, ColumnMap cm = {}) {
  std::istringstream in(text);
  return parse_dataset(in, cm);
}

ColumnMap arms(std::vector<std::string> a) {
  ColumnMap cm;
  cm.arms = std::move(a);
  return cm;
}

const char* kThreeSites =
    "site,arm,d,y\n"
    "a,treatment,1,1\na,treatment,0,0\na,control,0,0\na,control,0,1\n"
    "b,treatment,1,2\nb,treatment,1,1\nb,treatment,0,0\nb,control,0,0\n"
    "c,treatment,1,3\nc,treatment,0,1\nc,control,0,1\nc,control,1,0\nc,control,0,2\n";

}  // namespace

TEST_CASE("four rows, one site, two arms") {
  const Dataset ds = parse("site,arm,d,y\n1,control,0,0.5\n1,pub,1,2\n1,pub,0,1\n1,control,0,0\n",
                           arms({"control", "pub"}));
  CHECK(ds.site_count() == 1);
  CHECK(ds.records.size() == 4);
  CHECK(ds.rejected_rows.empty());
}

TEST_CASE("take-up outside {0,1} names the row") {
  std::string text = "site,arm,d,y\n";
  for (int i = 1; i <= 6; ++i) text += "a,control,0," + std::to_string(i) + "\n";
  text += "a,treatment,2,1\n";
  try {
    parse(text);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("row 7") != std::string::npos);
  }
}

TEST_CASE("ingest errors") {
  CHECK_THROWS_AS(parse(""), InputError);
  CHECK_THROWS_AS(parse("site,arm,d,y\n"), InputError);
  CHECK_THROWS_AS(parse("site,arm,d\na,control,0\n"), InputError);
  CHECK_THROWS_AS(parse("site,arm,d,y\na,control,0,abc\n"), InputError);
  CHECK_THROWS_AS(parse("site,arm,d,y\na,placebo,0,1\n"), InputError);
  CHECK_THROWS_AS(parse("site,arm,d,y\na,control,0,inf\n"), InputError);
  CHECK_THROWS_AS(parse("site,arm,d,y\na,control,0.5,1\n"), InputError);
  try {
    parse("site,arm,d,y\na,control,0,1\na,control,0,x1\n");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("'y'") != std::string::npos);
  }
}

TEST_CASE("missing cells reject the row with a diagnostic") {
  const Dataset ds = parse("site,arm,d,y\na,control,0,1\na,control,0,NA\na,treatment,,1\na,treatment,1,\"2\"\n");
  CHECK(ds.records.size() == 2);
  REQUIRE(ds.rejected_rows.size() == 2);
  CHECK(ds.rejected_rows[0].row == 2);
  CHECK(ds.rejected_rows[1].row == 3);
}

TEST_CASE("tab-delimited input and renamed columns") {
  ColumnMap cm;
  cm.site = "office";
  cm.arm = "group";
  cm.d = "took";
  cm.y = "found_job";
  cm.mediators = {"search"};
  const Dataset ds = parse("office\tgroup\ttook\tfound_job\tsearch\nx\tcontrol\t0\t1\t3.5\nx\ttreatment\t1\t0\t2\n", cm);
  REQUIRE(ds.records.size() == 2);
  CHECK(ds.mediator_names == std::vector<std::string>{"search"});
  CHECK(ds.records[0].m.size() == 1);
}

TEST_CASE("site covariates must be constant within a site") {
  ColumnMap cm;
  cm.site_covariates = {"u"};
  const Dataset ok = parse("site,arm,d,y,u\na,control,0,1,0.3\na,treatment,1,1,0.3\n", cm);
  CHECK(ok.covariates.values.at("a")[0] == 0.3);
  CHECK_THROWS_AS(parse("site,arm,d,y,u\na,control,0,1,0.3\na,treatment,1,1,0.4\n", cm), InputError);
}

TEST_CASE("three arms: other arm retained but not in focal statistics") {
  const std::string text =
      "site,arm,d,y\n"
      "a,control,0,0\na,control,0,1\na,public,1,1\na,public,0,2\na,private,1,5\na,private,1,7\na,private,0,9\n";
  const Dataset ds = parse(text, arms({"control", "public", "private"}));
  auto [f, log] = restrict_and_filter(ds, "public");
  CHECK(f.records.size() == 7);
  CHECK(log.dropped.empty());
  const auto sites = summarize_sites(f, Weights::equal(f.site_ids()));
  CHECK(sites[0].n1() == 2);
  CHECK(sites[0].n0() == 2);
  CHECK(sites[0].itt_hat() == doctest::Approx(1.0));
  CHECK_FALSE(sites[0].second.has_value());
  const auto with2 = summarize_sites(f, Weights::equal(f.site_ids()), "private");
  REQUIRE(with2[0].second.has_value());
  CHECK(with2[0].n2() == 3);
}

TEST_CASE("filtering drops thin sites and logs them") {
  const std::string text = std::string(kThreeSites);
  auto [f, log] = restrict_and_filter(parse(text), "treatment");
  CHECK(f.site_ids() == std::vector<std::string>{"a", "c"});
  REQUIRE(log.dropped.size() == 1);
  CHECK(log.dropped[0].site_id == "b");
  CHECK(log.dropped[0].n_control == 1);
  CHECK(log.retained == 2);

  SUBCASE("idempotent") {
    auto [g, log2] = restrict_and_filter(f, "treatment");
    CHECK(g.records.size() == f.records.size());
    CHECK(log2.dropped.empty());
  }
}

TEST_CASE("filter errors") {
  const Dataset ds = parse(kThreeSites);
  CHECK_THROWS_AS(restrict_and_filter(ds, "treatment", 1), InputError);
  CHECK_THROWS_AS(restrict_and_filter(ds, "nope"), InputError);
  CHECK_THROWS_AS(restrict_and_filter(ds, "treatment", 5), InputError);
}

TEST_CASE("all sites satisfy 2/2: identity") {
  const Dataset ds = parse("site,arm,d,y\na,treatment,1,1\na,treatment,0,0\na,control,0,0\na,control,0,1\n");
  auto [f, log] = restrict_and_filter(ds, "treatment");
  CHECK(f.records.size() == ds.records.size());
  CHECK(log.dropped.empty());
}

TEST_CASE("row order does not matter") {
  std::istringstream in(kThreeSites);
  std::string header, line;
  std::getline(in, header);
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  CounterRng rng(99);
  for (int rep = 0; rep < 5; ++rep) {
    rng.shuffle(rows);
    std::string text = header + "\n";
    for (const auto& r : rows) text += r + "\n";
    const auto [a, la] = restrict_and_filter(parse(text), "treatment");
    const auto [b, lb] = restrict_and_filter(parse(kThreeSites), "treatment");
    const auto sa = summarize_sites(a, Weights::equal(a.site_ids()));
    const auto sb = summarize_sites(b, Weights::equal(b.site_ids()));
    REQUIRE(sa.size() == sb.size());
    for (std::size_t s = 0; s < sa.size(); ++s) {
      CHECK(sa[s].site_id == sb[s].site_id);
      CHECK(sa[s].itt_hat() == sb[s].itt_hat());
      CHECK(sa[s].v_rob_itt() == sb[s].v_rob_itt());
      CHECK(sa[s].c_dy1() == sb[s].c_dy1());
    }
  }
}

TEST_CASE("weight schemes") {
  SUBCASE("equal, S = 4") {
    const Weights w = Weights::equal(testing_util::ids(4));
    for (double x : w.w) CHECK(x == 0.25);
  }
  SUBCASE("proportional to site size") {
    std::string text = "site,arm,d,y\n";
    for (int i = 0; i < 10; ++i) text += std::string("a,") + (i < 5 ? "treatment" : "control") + ",0,0\n";
    for (int i = 0; i < 30; ++i) text += std::string("b,") + (i < 15 ? "treatment" : "control") + ",0,0\n";
    const Dataset ds = parse(text);
    const Weights w = resolve_weights(ds, WeightScheme::from_json("proportional"));
    CHECK(w.w[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(w.w[1] == doctest::Approx(0.75).epsilon(1e-14));
  }
  SUBCASE("custom (2, 2, 4)") {
    const Dataset ds = parse(
        "site,arm,d,y\na,treatment,0,0\na,control,0,0\nb,treatment,0,0\nb,control,0,0\nc,treatment,0,0\nc,control,0,0\n");
    const Weights w = resolve_weights(ds, WeightScheme::from_json({{"scheme", "custom"}, {"custom", {{"a", 2}, {"b", 2}, {"c", 4}}}}));
    // normalize by hand: 2 / 8, 2 / 8, 4 / 8
    CHECK(w.w[0] == 2.0 / 8.0);
    CHECK(w.w[1] == 2.0 / 8.0);
    CHECK(w.w[2] == 4.0 / 8.0);
    const Weights scaled =
        resolve_weights(ds, WeightScheme::from_json({{"scheme", "custom"}, {"custom", {{"a", 2e3}, {"b", 2e3}, {"c", 4e3}}}}));
    for (std::size_t s = 0; s < 3; ++s) CHECK(scaled.w[s] == doctest::Approx(w.w[s]).epsilon(1e-15));
    CHECK_THROWS_AS(resolve_weights(ds, WeightScheme::from_json({{"scheme", "custom"}, {"custom", {{"a", 1}, {"b", 1}}}})),
                    InputError);
    CHECK_THROWS_AS(
        resolve_weights(ds, WeightScheme::from_json({{"scheme", "custom"}, {"custom", {{"a", 1}, {"b", 0}, {"c", 1}}}})),
        InputError);
  }
  SUBCASE("unit weights feed the proportional scheme") {
    ColumnMap cm;
    cm.unit_weight = "wt";
    const Dataset ds = parse(
        "site,arm,d,y,wt\na,treatment,0,0,1\na,control,0,0,1\nb,treatment,0,0,3\nb,control,0,0,3\n", cm);
    const Weights w = resolve_weights(ds, WeightScheme::from_json("proportional"));
    CHECK(w.w[0] == doctest::Approx(0.25));
    CHECK_THROWS_AS(parse("site,arm,d,y,wt\na,treatment,0,0,-1\n", cm), InputError);
  }
}

TEST_CASE("normalization identities") {
  CounterRng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t S = 2 + rng.below(50);
    std::vector<double> raw(S);
    for (auto& x : raw) x = 0.01 + 100.0 * rng.uniform();
    const Weights w = Weights::normalized(testing_util::ids(S), raw);
    double sum = 0.0, tilde = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      sum += w.w[s];
      tilde += w.tilde(s);
      CHECK(w.w[s] > 0.0);
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
    CHECK(std::abs(tilde / static_cast<double>(S) - 1.0) < 1e-12);
  }
}

TEST_CASE("column map and weight config parsing") {
  CHECK_THROWS_AS(ColumnMap::from_json({{"sight", "x"}}), InputError);
  CHECK_THROWS_AS(ColumnMap::from_json({{"arms", {"a", "b"}}, {"control_arm", "c"}}), InputError);
  CHECK_THROWS_AS(WeightScheme::from_json("heavy"), InputError);
  const ColumnMap cm = ColumnMap::from_json({{"site", "office"}, {"delimiter", "tab"}});
  CHECK(cm.site == "office");
  CHECK(cm.delimiter == '\t');
}
