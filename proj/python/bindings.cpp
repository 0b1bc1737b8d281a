// Python module sitehet._core.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sitehet/config.hpp"
#include "sitehet/eb.hpp"
#include "sitehet/error.hpp"
#include "sitehet/meta_regression.hpp"
#include "sitehet/report.hpp"

namespace py = pybind11;
using namespace sitehet;

namespace {

std::vector<std::string> site_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t s = 0; s < n; ++s) ids.push_back("site" + std::to_string(s));
  return ids;
}

Weights make_weights(std::size_t n, const std::optional<Eigen::VectorXd>& raw) {
  if (!raw) return Weights::equal(site_ids(n));
  if (static_cast<std::size_t>(raw->size()) != n) throw InputError("weights must have one entry per site");
  return Weights::normalized(site_ids(n), std::vector<double>(raw->data(), raw->data() + raw->size()));
}

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict eb(const Eigen::VectorXd& theta, const Eigen::VectorXd& v_rob, const std::optional<Eigen::VectorXd>& weights,
            double alpha) {
  if (theta.size() != v_rob.size()) throw InputError("theta and v_rob differ in length");
  const EbEstimate e = eb_variance(theta, v_rob, make_weights(static_cast<std::size_t>(theta.size()), weights), alpha);
  py::dict out;
  out["mean"] = e.mean;
  out["mean_se"] = e.mean_se;
  out["sigma2"] = e.point;
  out["se"] = e.se;
  out["ci"] = py::make_tuple(e.ci_lo, e.ci_hi);
  out["ratio"] = e.ratio ? py::cast(*e.ratio) : py::none();
  out["negative"] = e.negative_flag;
  out["phi"] = e.phi;
  return out;
}

// x: S x K site predictors; v: S matrices K x K (estimated predictors); c: S x K.
py::dict fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& v_y,
             const std::optional<std::vector<Eigen::MatrixXd>>& v, const std::optional<Eigen::MatrixXd>& c,
             const std::optional<Eigen::VectorXd>& weights, const std::variant<double, std::string>& lam) {
  const auto S = static_cast<std::size_t>(x.rows());
  const Eigen::Index K = x.cols();
  if (y.size() != x.rows() || v_y.size() != x.rows()) throw InputError("x, y and v_y differ in number of sites");
  if (v && v->size() != S) throw InputError("v must hold one K x K matrix per site");
  if (c && (c->rows() != x.rows() || c->cols() != K)) throw InputError("c must be S x K");

  Design d;
  for (Eigen::Index k = 0; k < K; ++k) d.names.push_back("x" + std::to_string(k));
  d.site_ids = site_ids(S);
  d.weights = make_weights(S, weights);
  d.observed_only = !v && !c;
  for (std::size_t s = 0; s < S; ++s) {
    const auto i = static_cast<Eigen::Index>(s);
    d.x.push_back(x.row(i).transpose());
    if (v && ((*v)[s].rows() != K || (*v)[s].cols() != K)) throw InputError("v must hold K x K matrices");
    d.v.push_back(v ? (*v)[s] : Eigen::MatrixXd::Zero(K, K));
    d.c.push_back(c ? Eigen::VectorXd(c->row(i).transpose()) : Eigen::VectorXd::Zero(K));
  }
  d.y = y;
  d.v_y = v_y;

  py::dict out;
  double lambda = 0.0;
  if (const auto* text = std::get_if<std::string>(&lam)) {
    const LambdaPolicy policy = LambdaPolicy::parse(*text);
    if (policy.gcv) {
      const LambdaPath path = select_lambda(d);
      lambda = path.lambda_star;
      out["gcv_lambda"] = path.lambda;
      out["gcv_value"] = path.value;
    } else {
      lambda = policy.fixed;
    }
  } else {
    lambda = std::get<double>(lam);
    if (!(lambda >= 0.0)) throw InputError("lambda must be non-negative");
  }
  const RidgeFit f = corrected_ridge(d, lambda);
  out["lambda"] = f.lambda;
  out["beta"] = f.beta;
  out["se"] = f.se;
  out["sigma2_y"] = f.sigma2_y;
  out["r2"] = f.r2 ? py::cast(*f.r2) : py::none();
  out["cond"] = f.cond;
  return out;
}

py::dict run(const std::string& command, const std::string& config, std::optional<std::uint64_t> seed,
             std::optional<double> alpha, std::optional<std::string> lambda, std::optional<int> bootstrap,
             const std::string& format) {
  RunConfig cfg = RunConfig::load(config);
  if (seed) cfg.seed = *seed;
  if (alpha) cfg.alpha = *alpha;
  if (lambda) cfg.lambda = LambdaPolicy::parse(*lambda);
  if (bootstrap) cfg.bootstrap = *bootstrap;
  cfg.validate();
  const OutputFormat fmt = parse_format(format);

  Report r;
  {
    py::gil_scoped_release release;
    if (command == "summarize") r = run_summarize(cfg);
    else if (command == "eb") r = run_eb(cfg);
    else if (command == "metareg") r = run_metareg(cfg);
    else if (command == "late") r = run_late(cfg);
    else if (command == "simulate") r = run_simulate(cfg);
    else throw InputError("unknown command '" + command + "'");
  }
  py::dict out;
  out["exit_code"] = r.exit_code;
  out["data"] = to_python(r.data);
  out["diagnostics"] = r.diagnostics;
  out["text"] = render(r, fmt);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross-site heterogeneity estimators";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<EstimationError>(m, "EstimationError", PyExc_RuntimeError);

  m.def("heterogeneity_ratio", py::overload_cast<double, double>(&heterogeneity_ratio), py::arg("variance"),
        py::arg("mean"), "sqrt(variance) / mean");
  m.def("negative_share", &negative_share, py::arg("mean"), py::arg("variance"), py::arg("lo") = -1.0,
        py::arg("hi") = 1.0, "Share of a normal law truncated to [lo, hi] lying below zero");
  m.def("eb_variance", &eb, py::arg("theta"), py::arg("v_rob"), py::arg("weights") = py::none(), py::arg("alpha") = 0.05,
        "Cross-site variance of site estimates net of their sampling variances");
  m.def("ridge", &fit, py::arg("x"), py::arg("y"), py::arg("v_y"), py::arg("v") = py::none(), py::arg("c") = py::none(),
        py::arg("weights") = py::none(), py::arg("lam") = 0.0,
        "Measurement-error-corrected ridge of site effects on site predictors; lam is a number or 'gcv'");
  m.def("run", &run, py::arg("command"), py::arg("config"), py::arg("seed") = py::none(), py::arg("alpha") = py::none(),
        py::arg("lam") = py::none(), py::arg("bootstrap") = py::none(), py::arg("format") = "table",
        "Runs a subcommand on a configuration file and returns its report");
}
