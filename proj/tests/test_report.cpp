#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "sitehet/config.hpp"
#include "sitehet/error.hpp"
#include "sitehet/late.hpp"
#include "sitehet/report.hpp"

using namespace sitehet;
using nlohmann::json;

namespace {

const std::filesystem::path kFixtures = SITEHET_FIXTURE_DIR;

RunConfig load(const std::string& name) { return RunConfig::load(kFixtures / name); }

json as_json(const Report& r) { return json::parse(render(r, OutputFormat::json)); }

}  // namespace

TEST_CASE("table rounding") {
  CHECK(round_cell(0.31249999) == "0.312");
  CHECK(round_cell(-0.25) == "-0.250");
  CHECK(round_cell(0.00419) == "0.00419");
  CHECK(round_cell(0.0) == "0.000");
  CHECK(round_cell(std::numeric_limits<double>::quiet_NaN()) == "n/a");
  CHECK(round_cell(1234.56789) == "1234.568");
}

TEST_CASE("summarize reports per-site statistics") {
  const RunConfig cfg = load("linear.json");
  const Report r = run_summarize(cfg);
  CHECK(r.exit_code == 0);
  const json j = as_json(r);
  REQUIRE(j["sites"].size() == 4);
  CHECK(j["sites"][1]["itt_hat"].get<double>() == 0.5);
  CHECK(j["aggregate"]["itt"].get<double>() == 0.75);
  const std::string table = render(r, OutputFormat::table);
  CHECK(table.find("1.500") != std::string::npos);
}

TEST_CASE("eb JSON carries the library values at full precision") {
  const RunConfig cfg = load("compliance.json");
  const Prepared p = prepare(cfg);
  const EbEstimate e = eb_variance(p.sites, p.weights, {EbTargetKind::itt, 0}, cfg.alpha);
  const json j = as_json(run_eb(cfg));
  const json& t = j["targets"][0];
  CHECK(t["sigma2"].get<double>() == e.point);
  CHECK(t["se"].get<double>() == e.se);
  CHECK(t["negative_flag"].get<bool>() == e.negative_flag);
  CHECK(t["ratio"].is_null());
  CHECK(j["diagnostics"].size() == 1);
  // csv keeps full precision too
  const std::string csv = render(run_eb(cfg), OutputFormat::csv);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", e.point);
  CHECK(csv.find(buf) != std::string::npos);
}

TEST_CASE("two identical sites: negative estimate is flagged, not clipped") {
  const Report r = run_eb(load("twins.json"));
  CHECK(r.exit_code == 0);
  const json j = as_json(r);
  CHECK(std::abs(j["targets"][0]["sigma2"].get<double>() + 0.25) < 1e-12);
  CHECK(render(r, OutputFormat::table).find("withheld (negative)") != std::string::npos);
}

TEST_CASE("metareg on an exact linear fixture") {
  const Report r = run_metareg(load("linear.json"));
  CHECK(r.exit_code == 0);
  const json m = as_json(r)["models"][0];
  CHECK(std::abs(m["beta"][0].get<double>() - 0.5) < 1e-12);
  CHECK(std::abs(m["r2"].get<double>() - 1.0) < 1e-12);
  CHECK(m["gcv"]["lambda_star"].get<double>() == 0.0);
}

TEST_CASE("metareg with a constant predictor reports an error row") {
  const Report r = run_metareg(load("degenerate.json"));
  CHECK(r.exit_code == 3);
  const json j = as_json(r);
  CHECK(j["models"][0].contains("error"));
  CHECK_FALSE(j["diagnostics"].empty());
}

TEST_CASE("late under perfect compliance reproduces eb") {
  const RunConfig cfg = load("compliance.json");
  const json late = as_json(run_late(cfg))["sigma2_late"];
  const json eb = as_json(run_eb(cfg))["targets"][0];
  CHECK(std::abs(late["sigma2"].get<double>() - eb["sigma2"].get<double>()) < 1e-12);
  CHECK(std::abs(late["se"].get<double>() - eb["se"].get<double>()) < 1e-12);
  CHECK(late["late"].get<double>() == doctest::Approx(eb["estimate"].get<double>()).epsilon(1e-14));
}

TEST_CASE("late with no take-up exits with code 3") {
  const Report r = run_late(load("weak.json"));
  CHECK(r.exit_code == 3);
  CHECK(as_json(r)["sigma2_late"].contains("error"));
}

TEST_CASE("bootstrap output is reproducible") {
  const RunConfig cfg = load("compliance.json");
  CHECK(render(run_metareg(cfg), OutputFormat::json) == render(run_metareg(cfg), OutputFormat::json));
  RunConfig other = cfg;
  other.seed = cfg.seed + 1;
  CHECK(render(run_metareg(cfg), OutputFormat::json) != render(run_metareg(other), OutputFormat::json));
}

TEST_CASE("config loading") {
  CHECK_THROWS_AS(load("bad_key.json"), InputError);
  CHECK_THROWS_AS(load("does_not_exist.json"), InputError);
  CHECK_THROWS_AS(run_eb(load("empty.json")), InputError);
  CHECK_THROWS_AS(run_simulate(load("simulate_zero.json")), InputError);
  const RunConfig c = load("linear.json");
  CHECK(c.input == kFixtures / "linear.csv");
  CHECK(c.lambda.gcv);
}

TEST_CASE("emit writes the report file") {
  const auto dir = std::filesystem::temp_directory_path() / "sitehet_emit_test";
  std::filesystem::remove_all(dir);
  std::ostringstream out;
  const Report r = run_eb(load("twins.json"));
  emit(r, OutputFormat::json, dir, out);
  std::ifstream in(dir / "eb.json");
  std::stringstream file;
  file << in.rdbuf();
  CHECK(file.str() == out.str());
  std::filesystem::remove_all(dir);
}

TEST_CASE("unit weights outside the proportional scheme are flagged") {
  const auto dir = std::filesystem::temp_directory_path() / "sitehet_unit_weight";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "w.csv");
    f << "site,arm,d,y,wt\n";
    for (const char* s : {"a", "b", "c"})
      for (int i = 0; i < 4; ++i) f << s << ',' << (i < 2 ? "treatment" : "control") << ',' << (i < 2) << ',' << i << ",2\n";
  }
  const json base = {{"input", "w.csv"}, {"columns", {{"unit_weight", "wt"}}}, {"eb_targets", {"itt"}}};
  auto mentions_weight = [](const Report& r) {
    for (const auto& d : r.diagnostics)
      if (d.find("unit_weight") != std::string::npos) return true;
    return false;
  };
  CHECK(mentions_weight(run_eb(RunConfig::from_json(base, dir))));
  json prop = base;
  prop["weights"] = "proportional";
  CHECK_FALSE(mentions_weight(run_eb(RunConfig::from_json(prop, dir))));
  std::filesystem::remove_all(dir);
}
