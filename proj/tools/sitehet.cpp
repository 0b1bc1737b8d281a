// Command-line front end: summarize, eb, metareg, late, simulate.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sitehet/config.hpp"
#include "sitehet/error.hpp"
#include "sitehet/report.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> format;
  std::optional<double> alpha;
  std::optional<std::string> lambda;
  std::optional<int> bootstrap;
};

sitehet::RunConfig load(const Flags& f) {
  sitehet::RunConfig cfg = sitehet::RunConfig::load(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.out) cfg.out = *f.out;
  if (f.format) cfg.format = sitehet::parse_format(*f.format);
  if (f.alpha) cfg.alpha = *f.alpha;
  if (f.lambda) cfg.lambda = sitehet::LambdaPolicy::parse(*f.lambda);
  if (f.bootstrap) cfg.bootstrap = *f.bootstrap;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Treatment-effect heterogeneity across sites of multi-site randomized experiments"};
  app.require_subcommand(1);
  Flags flags;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON configuration file")->required();
    sub->add_option("--seed", flags.seed, "Master seed for simulation and bootstrap");
    sub->add_option("--out", flags.out, "Directory for output files");
    sub->add_option("--format", flags.format, "Output format")->check(CLI::IsMember({"table", "json", "csv"}));
    sub->add_option("--alpha", flags.alpha, "Significance level of confidence intervals");
    sub->add_option("--lambda", flags.lambda, "Ridge penalty: gcv or a non-negative number");
    sub->add_option("--bootstrap", flags.bootstrap, "Site-bootstrap replications (0 = off)");
  };

  struct Command {
    const char* name;
    const char* help;
    sitehet::Report (*run)(const sitehet::RunConfig&);
  };
  const Command commands[] = {
      {"summarize", "Per-site sufficient statistics", sitehet::run_summarize},
      {"eb", "Cross-site variance of ITT, FS and mediator effects", sitehet::run_eb},
      {"metareg", "Measurement-error-corrected ridge regressions of site effects", sitehet::run_metareg},
      {"late", "Covariance sign test and variance of LATEs", sitehet::run_late},
      {"simulate", "Monte Carlo study on a synthetic population of sites", sitehet::run_simulate},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (const auto& [sub, cmd] : subs) {
      if (!sub->parsed()) continue;
      const sitehet::RunConfig cfg = load(flags);
      const sitehet::Report report = cmd->run(cfg);
      sitehet::emit(report, cfg.format, cfg.out, std::cout);
      if (cfg.format != sitehet::OutputFormat::table)
        for (const auto& d : report.diagnostics) std::cerr << "sitehet: " << d << '\n';
      return report.exit_code;
    }
  } catch (const sitehet::InputError& e) {
    std::cerr << "sitehet: input error: " << e.what() << '\n';
    return 2;
  } catch (const sitehet::EstimationError& e) {
    std::cerr << "sitehet: estimation error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
