#pragma once

#include <string>
#include <vector>

#include "ddrkit/inference.hpp"
#include "ddrkit/simulate.hpp"

namespace ddrkit {

/// Working nuisance models. Propensity: "linear-logit", "quad-logit".
/// Outcome: "linear", "quad", "sim".
struct NuisanceCombo {
  std::string pi_spec = "linear-logit";
  std::string m_spec = "linear";
};

enum class Theta0Method { MonteCarlo, Analytic };

struct ExperimentConfig {
  DgpSpec dgp;
  Index n = 1000;
  int replications = 1;
  std::vector<NuisanceCombo> grid{NuisanceCombo{}};
  /// Subset of "ddr", "oracle", "full", "cc".
  std::vector<std::string> estimators{"ddr"};
  bool inference = false;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  /// Directory for report files; empty keeps everything in memory.
  std::string output;

  Theta0Method theta0_method = Theta0Method::MonteCarlo;
  Index theta0_draws = 200000;
  /// Cache file for the Monte-Carlo theta0; empty means <output>/theta0.txt.
  std::string theta0_cache;

  LambdaRule lambda = LambdaRule::cv();
  LambdaRule propensity_lambda = LambdaRule::bic();
  BandwidthRule sim_bandwidth = BandwidthRule::RuleOfThumb;
  NodewiseRule nodewise;
  int repeats = 1;
  /// Write wall-clock seconds into records; off by default because it
  /// breaks byte-identical reruns.
  bool record_timing = false;
  /// 0 means DDRKIT_THREADS, then the hardware concurrency.
  int threads = 0;

  void validate() const;
};

/// Parses a JSON config; unknown keys and bad values throw ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

struct ReplicationRecord {
  int replication = 0;
  std::string estimator;
  std::string pi_spec;
  std::string m_spec;
  double l2 = 0.0;
  double l1 = 0.0;
  double seconds = 0.0;
};

struct CoverageRecord {
  int replication = 0;
  Index coord = 0;
  bool covered = false;
  double length = 0.0;
  std::string estimator;
  std::string pi_spec;
  std::string m_spec;
  /// theta0 coordinate is zero.
  bool zero = false;
};

struct ErrorRecord {
  int replication = 0;
  std::string estimator;
  std::string pi_spec;
  std::string m_spec;
  std::string kind;
  std::string message;
};

struct ClassCoverage {
  Index coordinates = 0;
  double a_covp = 0.0;
  double m_covp = 0.0;
  double mean_length = 0.0;
  double sd_across_coordinates = 0.0;
  double sd_across_replications = 0.0;
};

struct SummaryRow {
  std::string estimator;
  std::string pi_spec;
  std::string m_spec;
  int replications = 0;
  double l2_mean = 0.0;
  double l2_sd = 0.0;
  double l1_mean = 0.0;
  double l1_sd = 0.0;
  bool has_coverage = false;
  ClassCoverage zero;
  ClassCoverage nonzero;
};

struct RunReport {
  std::vector<ReplicationRecord> records;
  std::vector<CoverageRecord> coverage;
  std::vector<ErrorRecord> errors;
  int failed_replications = 0;
  Vector theta0;
  std::vector<SummaryRow> summary;

  bool over_failure_budget(int replications) const {
    return 10 * failed_replications > replications;
  }
};

/// Runs every replication (in a worker pool), scores each estimator against
/// theta0 and, when config.output is set, writes records.csv, coverage.csv,
/// errors.csv, summary.csv and summary.txt there.
RunReport run_experiment(const ExperimentConfig& config);

/// Summary per (estimator, pi_spec, m_spec), in first-appearance order.
std::vector<SummaryRow> summarize(const std::vector<ReplicationRecord>& records,
                                  const std::vector<CoverageRecord>& coverage);

std::string format_records(const std::vector<ReplicationRecord>& records);
std::string format_coverage(const std::vector<CoverageRecord>& coverage);
std::string format_errors(const std::vector<ErrorRecord>& errors);
std::string format_summary_csv(const std::vector<SummaryRow>& rows);
std::string format_summary_text(const std::vector<SummaryRow>& rows);

/// Parsers for the files written above; throw MalformedRecords.
std::vector<ReplicationRecord> parse_records(const std::string& csv);
std::vector<CoverageRecord> parse_coverage(const std::string& csv);

/// Fitters for the named working models.
PropensityFitter propensity_fitter(const std::string& spec, Truncation trunc, LambdaRule rule);
OutcomeFitter outcome_fitter(const std::string& spec, LambdaRule rule, BandwidthRule bandwidth);

/// Dataset CSV: header t,y,x1..xp; masked outcomes are written as NA.
std::string format_dataset(const ObservedDataset& data);
ObservedDataset parse_dataset(const std::string& csv);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& text);

}  // namespace ddrkit
