#include "sitehet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sitehet/eb.hpp"
#include "sitehet/error.hpp"
#include "sitehet/late.hpp"
#include "sitehet/meta_regression.hpp"
#include "sitehet/simulation.hpp"

namespace sitehet {

using nlohmann::json;

namespace {

std::string full_precision(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string cell_text(const Cell& c, bool rounded) {
  if (std::holds_alternative<std::monostate>(c)) return "";
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
  const double v = std::get<double>(c);
  return rounded ? round_cell(v) : full_precision(v);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

Cell opt_cell(const std::optional<double>& v, const std::string& missing) {
  if (v) return *v;
  return missing;
}

long long ll(std::size_t v) { return static_cast<long long>(v); }

json filter_json(const FilterLog& log, const Dataset& ds) {
  json dropped = json::array();
  for (const auto& d : log.dropped)
    dropped.push_back({{"site", d.site_id}, {"n_treated", d.n_treated}, {"n_control", d.n_control}, {"reason", d.reason}});
  json rejected = json::array();
  for (const auto& r : ds.rejected_rows) rejected.push_back({{"row", r.row}, {"message", r.message}});
  return {{"retained", log.retained}, {"dropped", dropped}, {"rejected_rows", rejected}};
}

void add_filter_notes(Table& t, const Prepared& p) {
  for (const auto& d : p.log.dropped) t.notes.push_back("dropped site " + d.site_id + ": " + d.reason);
  if (!p.filtered.rejected_rows.empty())
    t.notes.push_back(std::to_string(p.filtered.rejected_rows.size()) + " row(s) rejected for missing values");
}

}  // namespace

std::string round_cell(double v) {
  if (std::isnan(v)) return "n/a";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  if (v != 0.0 && std::abs(v) < 0.01) std::snprintf(buf, sizeof buf, "%.3g", v);
  else std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string render(const Report& report, OutputFormat format) {
  std::ostringstream os;
  if (format == OutputFormat::json) {
    json j = report.data;
    j["command"] = report.command;
    j["diagnostics"] = report.diagnostics;
    j["exit_code"] = report.exit_code;
    os << j.dump(2) << '\n';
    return os.str();
  }
  bool first = true;
  for (const auto& t : report.tables) {
    if (!first) os << '\n';
    first = false;
    if (format == OutputFormat::csv) {
      os << "# " << t.title << '\n';
      for (std::size_t c = 0; c < t.header.size(); ++c) os << (c ? "," : "") << csv_escape(t.header[c]);
      os << '\n';
      for (const auto& row : t.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << csv_escape(cell_text(row[c], false));
        os << '\n';
      }
      continue;
    }
    std::vector<std::size_t> width(t.header.size(), 0);
    std::vector<std::vector<std::string>> text;
    for (std::size_t c = 0; c < t.header.size(); ++c) width[c] = t.header[c].size();
    for (const auto& row : t.rows) {
      text.emplace_back();
      // a short row ends in free text (an error message) that does not set widths
      const bool short_row = row.size() < width.size();
      for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) {
        text.back().push_back(cell_text(row[c], true));
        if (!(short_row && c + 1 == row.size())) width[c] = std::max(width[c], text.back().back().size());
      }
    }
    os << t.title << '\n';
    std::size_t total = 0;
    for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
    auto line = [&](const std::vector<std::string>& cells, const std::vector<Cell>* kinds) {
      if (kinds && cells.size() < width.size()) {
        for (std::size_t c = 0; c + 1 < cells.size(); ++c) os << cells[c] << std::string(width[c] - cells[c].size(), ' ') << "  ";
        os << cells.back() << '\n';
        return;
      }
      for (std::size_t c = 0; c < width.size(); ++c) {
        const std::string s = c < cells.size() ? cells[c] : "";
        const bool left = c == 0 || (kinds && c < kinds->size() && std::holds_alternative<std::string>((*kinds)[c]));
        if (c) os << "  ";
        if (left) os << s << std::string(width[c] - s.size(), ' ');
        else os << std::string(width[c] - s.size(), ' ') << s;
      }
      os << '\n';
    };
    line(t.header, nullptr);
    os << std::string(total, '-') << '\n';
    for (std::size_t r = 0; r < t.rows.size(); ++r) line(text[r], &t.rows[r]);
    for (const auto& n : t.notes) os << "  " << n << '\n';
  }
  if (format == OutputFormat::table) {
    for (const auto& d : report.diagnostics) os << "note: " << d << '\n';
  }
  return os.str();
}

void emit(const Report& report, OutputFormat format, const std::filesystem::path& out_dir, std::ostream& out) {
  const std::string text = render(report, format);
  out << text;
  if (out_dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw InputError("cannot create output directory '" + out_dir.string() + "': " + ec.message());
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream f(out_dir / name, std::ios::binary);
    if (!f) throw InputError("cannot write '" + (out_dir / name).string() + "'");
    f << body;
  };
  write(report.command + "." + format_extension(format), text);
  for (const auto& [name, body] : report.files) write(name, body);
}

Prepared prepare(const RunConfig& cfg) {
  if (cfg.input.empty()) throw InputError("config needs an 'input' file");
  const Dataset raw = load_dataset(cfg.input, cfg.columns);
  Prepared p;
  std::tie(p.filtered, p.log) = restrict_and_filter(raw, cfg.focal_arm, cfg.min_per_arm);
  p.weights = resolve_weights(p.filtered, cfg.weights);
  p.sites = summarize_sites(p.filtered, p.weights, cfg.second_arm);
  if (cfg.columns.unit_weight && cfg.weights.kind != WeightKind::proportional)
    p.notes.push_back("unit_weight column '" + *cfg.columns.unit_weight +
                      "' only enters proportional site weights; ignored under this weight scheme");
  return p;
}

Report run_summarize(const RunConfig& cfg) {
  const Prepared p = prepare(cfg);
  Report r;
  r.command = "summarize";
  r.diagnostics = p.notes;
  Table t;
  t.title = "Site summaries (focal arm: " + cfg.focal_arm + ")";
  t.header = {"site", "n1", "n0", "ITT", "se", "FS", "se", "LATE", "weight"};
  json sites = json::array();
  for (const auto& s : p.sites) {
    t.rows.push_back({s.site_id, static_cast<long long>(s.n1()), static_cast<long long>(s.n0()), s.itt_hat(),
                      std::sqrt(s.v_rob_itt()), s.fs_hat(), std::sqrt(s.v_rob_fs()),
                      opt_cell(s.late_hat(), "undefined"), s.w});
    json js = {{"site", s.site_id},       {"n1", s.n1()},
               {"n0", s.n0()},            {"ybar1", s.ybar1()},
               {"ybar0", s.ybar0()},      {"dbar1", s.dbar1()},
               {"dbar0", s.dbar0()},      {"r2_y1", s.r2_y1()},
               {"r2_y0", s.r2_y0()},      {"r2_d1", s.r2_d1()},
               {"r2_d0", s.r2_d0()},      {"c_dy1", s.c_dy1()},
               {"c_dy0", s.c_dy0()},      {"itt_hat", s.itt_hat()},
               {"fs_hat", s.fs_hat()},    {"v_rob_itt", s.v_rob_itt()},
               {"v_rob_fs", s.v_rob_fs()}, {"late_hat", opt(s.late_hat())},
               {"w", s.w}};
    if (s.mediator_count() > 0) {
      json m = json::array();
      for (std::size_t k = 0; k < s.mediator_count(); ++k)
        m.push_back({{"name", p.filtered.mediator_names[k]}, {"itt_m_hat", s.itt_m_hat(k)}, {"v_rob", s.v_rob_itt_m(k)}});
      js["mediators"] = m;
    }
    if (s.second) js["n2"] = s.n2();
    sites.push_back(js);
  }
  add_filter_notes(t, p);
  r.tables.push_back(t);

  const Aggregates agg = aggregate(p.sites, p.weights);
  Table a;
  a.title = "Aggregates";
  a.header = {"quantity", "estimate", "se"};
  a.rows.push_back({std::string("ITT"), agg.itt, agg.se_itt});
  a.rows.push_back({std::string("FS"), agg.fs, agg.se_fs});
  a.rows.push_back({std::string("LATE"), opt_cell(agg.late, "weak first stage"), Cell{}});
  a.rows.push_back({std::string("N"), ll(agg.n_units), Cell{}});
  a.rows.push_back({std::string("sites"), ll(p.sites.size()), Cell{}});
  r.tables.push_back(a);

  r.data = {{"focal_arm", cfg.focal_arm},
            {"sites", sites},
            {"filter", filter_json(p.log, p.filtered)},
            {"aggregate",
             {{"itt", agg.itt}, {"se_itt", agg.se_itt}, {"fs", agg.fs}, {"se_fs", agg.se_fs}, {"late", opt(agg.late)},
              {"itt_m", agg.itt_m}, {"N", agg.n_units}, {"S", p.sites.size()}}}};
  return r;
}

Report run_eb(const RunConfig& cfg) {
  const Prepared p = prepare(cfg);
  const auto targets = parse_eb_targets(cfg.eb_targets, p.filtered.mediator_names);
  Report r;
  r.command = "eb";
  r.diagnostics = p.notes;
  Table t;
  t.title = "Cross-site variance of effects (focal arm: " + cfg.focal_arm + ")";
  t.header = {"target", "estimate", "se", "sigma2", "se", "sqrt(sigma2)/estimate", "N"};
  json rows = json::array();
  for (const auto& target : targets) {
    const EbEstimate e = eb_variance(p.sites, p.weights, target, cfg.alpha);
    const std::string label = target.label(p.filtered.mediator_names);
    Cell ratio;
    if (e.negative_flag) ratio = std::string("withheld (negative)");
    else if (e.ratio) ratio = *e.ratio;
    else ratio = std::string("n/a");
    t.rows.push_back({label, e.mean, e.mean_se, e.point, e.se, ratio, ll(e.units)});
    if (e.negative_flag)
      r.diagnostics.push_back(label + ": negative variance estimate reported as is; see its confidence interval");
    rows.push_back({{"target", label},
                    {"estimate", e.mean},
                    {"estimate_se", e.mean_se},
                    {"sigma2", e.point},
                    {"se", e.se},
                    {"ci", {e.ci_lo, e.ci_hi}},
                    {"alpha", e.alpha},
                    {"ratio", opt(e.ratio)},
                    {"negative_flag", e.negative_flag},
                    {"N", e.units},
                    {"S", e.sites},
                    {"phi", vec(e.phi)}});
  }
  add_filter_notes(t, p);
  r.tables.push_back(t);
  r.data = {{"focal_arm", cfg.focal_arm}, {"targets", rows}, {"filter", filter_json(p.log, p.filtered)}};
  return r;
}

Report run_metareg(const RunConfig& cfg) {
  if (cfg.regressions.empty()) throw InputError("metareg needs 'predictors' or 'regressions' in the config");
  const Prepared p = prepare(cfg);
  std::vector<PredictorSpec> specs;
  for (const auto& j : cfg.regressions) specs.push_back(PredictorSpec::from_json(j, p.filtered.mediator_names));

  Report r;
  r.command = "metareg";
  r.diagnostics = p.notes;
  const std::string dep = cfg.dependent == Dependent::itt ? "ITT" : "FS";
  Table t;
  t.title = "Regressions of site " + dep + " on site characteristics (focal arm: " + cfg.focal_arm +
            ", lambda: " + cfg.lambda.str() + ")";
  t.header = {"model", "predictor", "beta", "se", "R2", "naive beta", "naive se", "lambda", "N"};
  if (cfg.bootstrap > 0) {
    t.header.insert(t.header.begin() + 4, {"boot se", "boot lo", "boot hi"});
  }
  json models = json::array();
  std::vector<Table> paths;
  for (std::size_t m = 0; m < specs.size(); ++m) {
    const std::string model = "(" + std::to_string(m + 1) + ")";
    json jm = {{"model", m + 1}, {"predictors", json::array()}};
    for (const auto& e : specs[m].entries) jm["predictors"].push_back(e.name);
    try {
      const Design d = build_design(p.sites, p.weights, specs[m], p.filtered.covariates, cfg.dependent);
      if (d.sites() < d.dim() + 1)
        r.diagnostics.push_back("model " + model + ": fewer sites than predictors plus one");
      double lambda = cfg.lambda.fixed;
      if (cfg.lambda.gcv) {
        const LambdaPath path = select_lambda(d, cfg.grid);
        lambda = path.lambda_star;
        Table pt;
        pt.title = "GCV path, model " + model;
        pt.header = {"lambda", "V(lambda)"};
        for (std::size_t i = 0; i < path.lambda.size(); ++i) pt.rows.push_back({path.lambda[i], path.value[i]});
        pt.notes.push_back("selected lambda = " + full_precision(lambda));
        paths.push_back(pt);
        jm["gcv"] = {{"lambda", path.lambda}, {"value", path.value}, {"lambda_star", lambda}};
      }
      const RidgeFit f = corrected_ridge(d, lambda);
      std::optional<NaiveFit> naive;
      try {
        naive = naive_regression(d);
      } catch (const EstimationError& e) {
        r.diagnostics.push_back("model " + model + " naive regression: " + e.what());
      }
      std::optional<BootstrapResult> boot;
      if (cfg.bootstrap > 0) boot = bootstrap_beta(d, cfg.bootstrap, cfg.seed, cfg.alpha, cfg.lambda, cfg.grid);
      for (std::size_t k = 0; k < d.dim(); ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        std::vector<Cell> row = {k == 0 ? model : std::string(), d.names[k], f.beta(ki), f.se(ki),
                                 k == 0 ? opt_cell(f.r2, "n/a") : Cell{}};
        if (boot) {
          row.insert(row.begin() + 4, {boot->se(ki), boot->ci_lo(ki), boot->ci_hi(ki)});
        }
        row.push_back(naive ? Cell{naive->beta(ki)} : Cell{std::string("n/a")});
        row.push_back(naive ? Cell{naive->se(ki)} : Cell{std::string("n/a")});
        row.push_back(lambda);
        row.push_back(ll(d.units));
        t.rows.push_back(row);
      }
      if (f.r2_out_of_range) r.diagnostics.push_back("model " + model + ": R2 outside [0, 1] (reported raw)");
      if (!d.dropped_sites.empty())
        r.diagnostics.push_back("model " + model + ": " + std::to_string(d.dropped_sites.size()) +
                                " site(s) without the observed predictor were dropped");
      jm["beta"] = vec(f.beta);
      jm["se"] = vec(f.se);
      jm["r2"] = opt(f.r2);
      jm["r2_out_of_range"] = f.r2_out_of_range;
      jm["lambda"] = lambda;
      jm["cond"] = f.cond;
      jm["A_hat"] = json::array();
      for (Eigen::Index i = 0; i < f.A_hat.rows(); ++i) jm["A_hat"].push_back(vec(f.A_hat.row(i).transpose()));
      jm["B_hat"] = vec(f.B_hat);
      jm["mu_hat"] = vec(f.mu_hat);
      jm["naive_beta"] = naive ? vec(naive->beta) : json(nullptr);
      jm["naive_se"] = naive ? vec(naive->se) : json(nullptr);
      jm["N"] = d.units;
      jm["S"] = d.sites();
      jm["dropped_sites"] = d.dropped_sites;
      jm["phi4"] = json::array();
      for (Eigen::Index s = 0; s < f.phi4.rows(); ++s) jm["phi4"].push_back(vec(f.phi4.row(s).transpose()));
      if (boot) {
        jm["bootstrap"] = {{"replications", boot->replications}, {"skipped", boot->skipped}, {"seed", cfg.seed},
                           {"se", vec(boot->se)}, {"ci_lo", vec(boot->ci_lo)}, {"ci_hi", vec(boot->ci_hi)},
                           {"lambdas", boot->lambdas}};
      }
    } catch (const EstimationError& e) {
      t.rows.push_back({model, std::string("error: ") + e.what()});
      jm["error"] = e.what();
      r.diagnostics.push_back("model " + model + ": " + e.what());
      r.exit_code = 3;
    }
    models.push_back(jm);
  }
  add_filter_notes(t, p);
  r.tables.push_back(t);
  for (auto& pt : paths) r.tables.push_back(std::move(pt));
  r.data = {{"focal_arm", cfg.focal_arm}, {"dependent", dep}, {"lambda_policy", cfg.lambda.str()},
            {"models", models}, {"filter", filter_json(p.log, p.filtered)}};
  return r;
}

Report run_late(const RunConfig& cfg) {
  const Prepared p = prepare(cfg);
  PredictorSpec tests = PredictorSpec::from_json(cfg.sign_tests, p.filtered.mediator_names);
  Report r;
  r.command = "late";
  r.diagnostics = p.notes;

  Table st;
  st.title = "Sign of the covariance between LATEs and site characteristics (focal arm: " + cfg.focal_arm + ")";
  st.header = {"predictor", "statistic", "se", "z", "p-value", "sigma[LATE,X]", "N"};
  json signs = json::array();
  for (const auto& x : tests.entries) {
    try {
      const SignTest s = late_cov_sign(p.sites, p.weights, x, p.filtered.covariates, cfg.alpha);
      st.rows.push_back({x.name, s.stat, s.se, s.z, s.p_value, s.sigma_late_x, ll(s.units)});
      signs.push_back({{"predictor", x.name}, {"statistic", s.stat}, {"se", s.se}, {"z", s.z}, {"p_value", s.p_value},
                       {"reject", s.reject}, {"beta_itt", s.beta_itt}, {"beta_fs", s.beta_fs}, {"late", s.late},
                       {"sigma2_x", s.sigma2_x}, {"sigma_late_x", s.sigma_late_x}, {"N", s.units}, {"S", s.sites}});
    } catch (const EstimationError& e) {
      st.rows.push_back({x.name, std::string("error: ") + e.what()});
      signs.push_back({{"predictor", x.name}, {"error", e.what()}});
      r.diagnostics.push_back("sign test on " + x.name + ": " + e.what());
      r.exit_code = 3;
    }
  }
  r.tables.push_back(st);

  Table vt;
  vt.title = "Cross-site variance of LATEs";
  vt.header = {"LATE", "se", "sigma2[LATE]", "se", "sqrt(sigma2)/LATE", "N"};
  json var;
  try {
    const LateVariance v = sigma2_late(p.sites, p.weights, cfg.alpha);
    Cell ratio;
    if (v.negative_flag) ratio = std::string("withheld (negative)");
    else if (v.ratio) ratio = *v.ratio;
    else ratio = std::string("n/a");
    vt.rows.push_back({v.late, v.late_se, v.sigma2, v.se, ratio, ll(v.units)});
    if (!v.weak_sites.empty()) {
      std::string list;
      for (const auto& s : v.weak_sites) list += (list.empty() ? "" : ", ") + s;
      vt.notes.push_back("sites with |FS| < 0.05: " + list);
    }
    vt.notes.push_back(std::string("no-skewness assumption acknowledged: ") + (cfg.assume_no_skew ? "yes" : "no"));
    var = {{"late", v.late}, {"late_se", v.late_se}, {"fs", v.fs}, {"sigma2", v.sigma2}, {"se", v.se},
           {"ci", {v.ci_lo, v.ci_hi}}, {"ratio", opt(v.ratio)}, {"negative_flag", v.negative_flag},
           {"c", {v.c1, v.c2, v.c3, v.c4}}, {"weak_sites", v.weak_sites}, {"N", v.units}, {"S", v.sites},
           {"phi6", vec(v.phi6)}};
  } catch (const EstimationError& e) {
    vt.rows.push_back({std::string("error: ") + e.what()});
    var = {{"error", e.what()}};
    r.diagnostics.push_back(std::string("variance of LATEs: ") + e.what());
    r.exit_code = 3;
  }
  add_filter_notes(vt, p);
  r.tables.push_back(vt);
  r.data = {{"focal_arm", cfg.focal_arm}, {"sign_tests", signs}, {"sigma2_late", var},
            {"assume_no_skew", cfg.assume_no_skew}, {"filter", filter_json(p.log, p.filtered)}};
  return r;
}

Report run_simulate(const RunConfig& cfg) {
  if (!cfg.simulation) throw InputError("simulate needs a 'simulation' block in the config");
  const SimulationConfig& sc = *cfg.simulation;
  const DgpConfig dgp = DgpConfig::from_json(sc.dgp);
  const Population pop = draw_population(dgp, cfg.seed);
  const SuiteConfig suite = SuiteConfig::from_json(sc.estimators, pop.mediator_names);
  SuiteConfig s = suite;
  s.alpha = cfg.alpha;
  const McSummary mc = replicate(pop, sc.replications, s, cfg.seed, sc.threads);

  Report r;
  r.command = "simulate";
  Table tt;
  tt.title = "Finite-population targets";
  tt.header = {"quantity", "value"};
  const TruthRecord& tr = pop.truth;
  tt.rows = {{std::string("ITT"), tr.itt},
             {std::string("FS"), tr.fs},
             {std::string("LATE"), tr.late},
             {std::string("sigma2[ITT]"), tr.sigma2_itt},
             {std::string("sigma2[FS]"), tr.sigma2_fs},
             {std::string("sigma2[LATE]"), tr.sigma2_late}};
  r.tables.push_back(tt);

  Table mt;
  mt.title = "Monte Carlo summary (S = " + std::to_string(dgp.sites) + ", R = " + std::to_string(sc.replications) + ")";
  mt.header = {"estimator", "truth", "mean", "bias", "sd", "mc se", "bias/mc se", "mean se", "coverage", "rejection", "failed"};
  json rows = json::array();
  for (const auto& row : mc.rows) {
    mt.rows.push_back({row.name, row.truth, row.mean, row.bias, row.sd, row.mc_se, row.z, row.mean_se, row.coverage,
                       row.rejection, static_cast<long long>(row.failed)});
    rows.push_back({{"name", row.name}, {"truth", row.truth}, {"mean", row.mean}, {"bias", row.bias}, {"sd", row.sd},
                    {"mc_se", row.mc_se}, {"z", row.z}, {"mean_se", row.mean_se}, {"coverage", row.coverage},
                    {"rejection", row.rejection}, {"used", row.used}, {"failed", row.failed}});
  }
  r.tables.push_back(mt);

  json gcv = nullptr;
  if (mc.gcv) {
    const auto& g = *mc.gcv;
    Table gt;
    gt.title = "GCV-selected ridge versus lambda = 0";
    gt.header = {"quantity", "value"};
    gt.rows = {{std::string("share with error not above lambda = 0"), g.share_not_worse},
               {std::string("share with lambda* > 0"), g.share_positive_lambda},
               {std::string("MSE at lambda*"), g.mse_star},
               {std::string("MSE at lambda = 0"), g.mse_zero},
               {std::string("mean lambda*"), g.mean_lambda}};
    r.tables.push_back(gt);
    gcv = {{"used", g.used}, {"share_not_worse", g.share_not_worse}, {"share_positive_lambda", g.share_positive_lambda},
           {"mse_star", g.mse_star}, {"mse_zero", g.mse_zero}, {"mean_lambda", g.mean_lambda}};
  }

  json sites = json::array();
  for (const auto& site : pop.sites) {
    sites.push_back({{"site", site.id}, {"n", site.n}, {"n1", site.n1}, {"itt", site.itt}, {"fs", site.fs},
                     {"late", site.late}, {"y0", site.y0}});
  }
  r.data = {{"seed", cfg.seed},
            {"replications", sc.replications},
            {"dgp", dgp.to_json()},
            {"truth",
             {{"itt", tr.itt}, {"fs", tr.fs}, {"late", tr.late}, {"sigma2_itt", tr.sigma2_itt},
              {"sigma2_fs", tr.sigma2_fs}, {"sigma2_late", tr.sigma2_late}, {"sigma2_itt_m", tr.sigma2_itt_m},
              {"sites", sites}}},
            {"rows", rows},
            {"gcv", gcv}};
  if (sc.dump_replicate) {
    std::ostringstream os;
    write_dataset_csv(draw_dataset(pop, cfg.seed, 0), os);
    r.files.emplace_back("replicate0.csv", os.str());
  }
  return r;
}

}  // namespace sitehet
