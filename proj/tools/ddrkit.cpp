#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "ddrkit/harness.hpp"

using namespace ddrkit;

namespace {

struct DgpArgs {
  std::string kind = "linear-linear";
  Index p = 50;
  std::string cov = "identity";
  double rho = 0.2;
  std::uint64_t seed = 1;

  void add(CLI::App* app) {
    app->add_option("--dgp", kind, "linear-linear | quad-quad | sim-sim");
    app->add_option("--p", p, "covariate dimension (>= 10)");
    app->add_option("--cov", cov, "identity | ar1 | cs");
    app->add_option("--rho", rho, "covariance parameter");
    app->add_option("--seed", seed, "random seed");
  }

  DgpSpec spec() const {
    DgpSpec s;
    s.dgp = parse_dgp(kind);
    s.p = p;
    s.cov = parse_cov(cov);
    s.rho = rho;
    s.seed = seed;
    return s;
  }
};

std::string vector_csv(const Vector& v, const char* name) {
  std::string s = std::string("coord,") + name + "\n";
  char buf[64];
  for (Index j = 0; j < v.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g\n", static_cast<long>(j), v(j));
    s += buf;
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Debiased doubly robust estimation with missing outcomes"};
  app.require_subcommand(1);

  DgpArgs sim_args;
  Index sim_n = 1000;
  std::string sim_out, sim_truth;
  auto* simulate = app.add_subcommand("simulate", "generate and save a dataset");
  sim_args.add(simulate);
  simulate->add_option("--n", sim_n, "rows");
  simulate->add_option("--out", sim_out, "dataset CSV")->required();
  simulate->add_option("--truth", sim_truth, "optional CSV of full y, pi and m");

  DgpArgs theta_args;
  Index draws = 200000;
  std::string theta_out;
  bool analytic = false;
  auto* theta0 = app.add_subcommand("theta0", "compute and cache the target parameter");
  theta_args.add(theta0);
  theta0->add_option("--draws", draws, "Monte-Carlo sample size");
  theta0->add_option("--out", theta_out, "cache file")->required();
  theta0->add_flag("--analytic", analytic, "print the closed form instead");

  std::string config_path;
  auto* run = app.add_subcommand("run", "run a replicated experiment");
  run->add_option("config", config_path, "JSON config")->required();

  std::string records_path, coverage_path, summary_dir;
  auto* summarize_cmd = app.add_subcommand("summarize", "summarize record files");
  summarize_cmd->add_option("--records", records_path, "records.csv")->required();
  summarize_cmd->add_option("--coverage", coverage_path, "coverage.csv");
  summarize_cmd->add_option("--out", summary_dir, "directory for summary.csv/summary.txt");

  std::string data_path, pi_spec = "linear-logit", m_spec = "linear", fit_out;
  bool with_inference = false;
  double alpha = 0.05;
  std::uint64_t fit_seed = 1;
  std::string estimator = "ddr";
  auto* fit = app.add_subcommand("fit", "fit one estimator on a saved dataset");
  fit->add_option("--data", data_path, "dataset CSV")->required();
  fit->add_option("--estimator", estimator, "ddr | cc");
  fit->add_option("--pi", pi_spec, "linear-logit | quad-logit");
  fit->add_option("--m", m_spec, "linear | quad | sim");
  fit->add_flag("--inference", with_inference, "desparsify and report intervals");
  fit->add_option("--alpha", alpha, "interval level");
  fit->add_option("--seed", fit_seed, "random seed");
  fit->add_option("--out", fit_out, "output CSV (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) {
      const DgpSpec spec = sim_args.spec();
      RngStream rng(spec.seed, 0);
      const SimulatedData sim = generate(spec, default_params(spec), sim_n, rng);
      write_file(sim_out, format_dataset(sim.observed));
      if (!sim_truth.empty()) {
        std::string s = "y_full,pi,m\n";
        char buf[128];
        for (Index i = 0; i < sim_n; ++i) {
          std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", sim.truth.y_full(i),
                        sim.truth.pi(i), sim.truth.m(i));
          s += buf;
        }
        write_file(sim_truth, s);
      }
    } else if (*theta0) {
      const DgpSpec spec = theta_args.spec();
      const DgpParams params = default_params(spec);
      if (analytic) {
        write_file(theta_out, vector_csv(population_theta0(spec, params), "theta0"));
      } else {
        cached_theta0(theta_out, spec, params, draws);
      }
    } else if (*run) {
      const ExperimentConfig config = load_config(config_path);
      const RunReport report = run_experiment(config);
      std::cout << format_summary_text(report.summary);
      if (!report.errors.empty()) {
        std::cerr << report.errors.size() << " estimator failures in "
                  << report.failed_replications << " replications\n";
      }
      if (report.over_failure_budget(config.replications)) {
        std::cerr << "more than 10% of replications failed\n";
        return 3;
      }
    } else if (*summarize_cmd) {
      const auto records = parse_records(read_file(records_path));
      const auto coverage = coverage_path.empty() ? std::vector<CoverageRecord>{}
                                                  : parse_coverage(read_file(coverage_path));
      const auto rows = summarize(records, coverage);
      if (!summary_dir.empty()) {
        std::filesystem::create_directories(summary_dir);
        write_file(summary_dir + "/summary.csv", format_summary_csv(rows));
        write_file(summary_dir + "/summary.txt", format_summary_text(rows));
      }
      std::cout << format_summary_text(rows);
    } else if (*fit) {
      const ObservedDataset data = parse_dataset(read_file(data_path));
      const RngStream root(fit_seed, 0);
      DdrOptions options;
      std::string out;
      if (estimator == "cc") {
        RngStream rng = root.child(1);
        out = vector_csv(fit_complete_case(data, options, rng).coefficients, "theta_hat");
      } else if (estimator == "ddr") {
        RngStream rng = root.child(2);
        const DdrResult res = estimate_ddr(
            data, propensity_fitter(pi_spec, Truncation{}, LambdaRule::bic()),
            outcome_fitter(m_spec, LambdaRule::cv(), BandwidthRule::RuleOfThumb), options, rng);
        if (with_inference) {
          RngStream prng = root.child(3);
          const PrecisionEstimate omega =
              precision_auto(expand_design(data.covariates(), options.basis), {}, prng);
          const InferenceResult inf = infer(data, res.preds, res.fit, omega, options.basis, alpha);
          out = "coord,theta_hat,theta_tilde,sigma_hat,ci_lower,ci_upper\n";
          char buf[256];
          for (Index j = 0; j < inf.theta_tilde.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          static_cast<long>(j), res.fit.coefficients(j), inf.theta_tilde(j),
                          inf.sigma_hat(j), inf.ci_lower(j), inf.ci_upper(j));
            out += buf;
          }
        } else {
          out = vector_csv(res.fit.coefficients, "theta_hat");
        }
      } else {
        throw Error(ErrorKind::ConfigError, "unknown estimator '" + estimator + "'");
      }
      if (fit_out.empty()) std::cout << out;
      else write_file(fit_out, out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
