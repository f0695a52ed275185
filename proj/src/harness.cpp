#include "ddrkit/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace ddrkit {

namespace {

using json = nlohmann::json;

const std::vector<std::string> kPiSpecs{"linear-logit", "quad-logit"};
const std::vector<std::string> kMSpecs{"linear", "quad", "sim"};
const std::vector<std::string> kEstimators{"ddr", "oracle", "full", "cc"};
constexpr const char* kNone = "-";

std::uint64_t index_of(const std::vector<std::string>& list, const std::string& name) {
  return static_cast<std::uint64_t>(std::find(list.begin(), list.end(), name) - list.begin());
}

bool contains(const std::vector<std::string>& list, const std::string& name) {
  return std::find(list.begin(), list.end(), name) != list.end();
}

[[noreturn]] void config_error(const std::string& what) {
  throw Error(ErrorKind::ConfigError, what);
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) config_error(where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) config_error("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get(const json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    config_error("bad value for '" + std::string(key) + "' in " + where + ": " + e.what());
  }
}

template <typename T>
void maybe(const json& obj, const char* key, const std::string& where, T& out) {
  if (obj.contains(key)) out = get<T>(obj, key, where);
}

LambdaRule parse_lambda(const json& obj, LambdaRule rule, const std::string& where) {
  check_keys(obj, {"rule", "folds", "n_lambdas", "ratio", "value"}, where);
  if (obj.contains("rule")) {
    const auto name = get<std::string>(obj, "rule", where);
    if (name == "cv") rule.kind = LambdaRule::Kind::CrossValidation;
    else if (name == "bic") rule.kind = LambdaRule::Kind::Bic;
    else if (name == "fixed") rule.kind = LambdaRule::Kind::Fixed;
    else config_error("unknown lambda rule '" + name + "' in " + where);
  }
  maybe(obj, "folds", where, rule.folds);
  maybe(obj, "n_lambdas", where, rule.n_lambdas);
  maybe(obj, "ratio", where, rule.ratio);
  maybe(obj, "value", where, rule.value);
  if (rule.folds < 2 || rule.n_lambdas < 1 || !(rule.ratio > 0.0 && rule.ratio <= 1.0) ||
      rule.value < 0.0) {
    config_error("invalid lambda settings in " + where);
  }
  return rule;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (n < 4) config_error("n must be >= 4");
  if (replications < 1) config_error("replications must be >= 1");
  if (grid.empty()) config_error("nuisance grid must be nonempty");
  for (const auto& c : grid) {
    if (!contains(kPiSpecs, c.pi_spec)) config_error("unknown propensity model '" + c.pi_spec + "'");
    if (!contains(kMSpecs, c.m_spec)) config_error("unknown outcome model '" + c.m_spec + "'");
  }
  if (estimators.empty()) config_error("estimators must be nonempty");
  for (const auto& e : estimators) {
    if (!contains(kEstimators, e)) config_error("unknown estimator '" + e + "'");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) config_error("alpha must lie in (0, 1)");
  if (dgp.p < 10) config_error("dgp.p must be >= 10");
  if (!(std::abs(dgp.rho) < 1.0)) config_error("dgp.rho must satisfy |rho| < 1");
  const auto& t = dgp.truncation;
  if (!(t.lo > 0.0 && t.lo <= t.hi && t.hi < 1.0)) config_error("invalid truncation bounds");
  if (theta0_draws < 10000) config_error("theta0.draws must be >= 10000");
  if (repeats < 1) config_error("repeats must be >= 1");
  if (threads < 0) config_error("threads must be >= 0");
}

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, {"dgp", "n", "replications", "grid", "estimators", "inference", "alpha", "seed",
                    "output", "theta0", "lambda", "propensity_lambda", "sim_bandwidth", "nodewise",
                    "repeats", "record_timing", "threads"},
             "config");
  ExperimentConfig c;
  if (root.contains("dgp")) {
    const json& d = root["dgp"];
    check_keys(d, {"kind", "p", "cov", "rho", "truncation"}, "dgp");
    if (d.contains("kind")) c.dgp.dgp = parse_dgp(get<std::string>(d, "kind", "dgp"));
    maybe(d, "p", "dgp", c.dgp.p);
    if (d.contains("cov")) c.dgp.cov = parse_cov(get<std::string>(d, "cov", "dgp"));
    maybe(d, "rho", "dgp", c.dgp.rho);
    if (d.contains("truncation")) {
      const auto bounds = get<std::vector<double>>(d, "truncation", "dgp");
      if (bounds.size() != 2) config_error("dgp.truncation must be [lo, hi]");
      c.dgp.truncation = {bounds[0], bounds[1]};
    }
  }
  maybe(root, "n", "config", c.n);
  maybe(root, "replications", "config", c.replications);
  if (root.contains("grid")) {
    if (!root["grid"].is_array()) config_error("grid must be an array");
    c.grid.clear();
    for (const json& cell : root["grid"]) {
      check_keys(cell, {"pi", "m"}, "grid entry");
      c.grid.push_back({get<std::string>(cell, "pi", "grid entry"),
                        get<std::string>(cell, "m", "grid entry")});
    }
  }
  maybe(root, "estimators", "config", c.estimators);
  maybe(root, "inference", "config", c.inference);
  maybe(root, "alpha", "config", c.alpha);
  maybe(root, "seed", "config", c.seed);
  maybe(root, "output", "config", c.output);
  if (root.contains("theta0")) {
    const json& t = root["theta0"];
    check_keys(t, {"method", "draws", "cache"}, "theta0");
    if (t.contains("method")) {
      const auto m = get<std::string>(t, "method", "theta0");
      if (m == "monte-carlo") c.theta0_method = Theta0Method::MonteCarlo;
      else if (m == "analytic") c.theta0_method = Theta0Method::Analytic;
      else config_error("unknown theta0 method '" + m + "'");
    }
    maybe(t, "draws", "theta0", c.theta0_draws);
    maybe(t, "cache", "theta0", c.theta0_cache);
  }
  if (root.contains("lambda")) c.lambda = parse_lambda(root["lambda"], c.lambda, "lambda");
  if (root.contains("propensity_lambda")) {
    c.propensity_lambda =
        parse_lambda(root["propensity_lambda"], c.propensity_lambda, "propensity_lambda");
  }
  if (root.contains("sim_bandwidth")) {
    const auto b = get<std::string>(root, "sim_bandwidth", "config");
    if (b == "rule-of-thumb") c.sim_bandwidth = BandwidthRule::RuleOfThumb;
    else if (b == "lscv") c.sim_bandwidth = BandwidthRule::LeastSquaresCv;
    else config_error("unknown sim_bandwidth '" + b + "'");
  }
  if (root.contains("nodewise")) {
    const json& w = root["nodewise"];
    check_keys(w, {"scale", "lambda", "cross_validate"}, "nodewise");
    maybe(w, "scale", "nodewise", c.nodewise.scale);
    if (w.contains("lambda")) c.nodewise.lambda = get<double>(w, "lambda", "nodewise");
    maybe(w, "cross_validate", "nodewise", c.nodewise.cross_validate);
  }
  maybe(root, "repeats", "config", c.repeats);
  maybe(root, "record_timing", "config", c.record_timing);
  maybe(root, "threads", "config", c.threads);
  c.dgp.seed = c.seed;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
}

namespace {

struct ReplicationOutput {
  std::vector<ReplicationRecord> records;
  std::vector<CoverageRecord> coverage;
  std::vector<ErrorRecord> errors;
};

class Replication {
 public:
  Replication(const ExperimentConfig& c, const DgpParams& params, const Vector& theta0,
              const std::vector<bool>& zero, int r)
      : c_(c), params_(params), theta0_(theta0), zero_(zero), r_(r),
        root_(c.seed, static_cast<std::uint64_t>(r)) {
    options_.basis = BasisSpec::linear();
    options_.rule = c.lambda;
  }

  ReplicationOutput run() {
    try {
      RngStream gen = root_.child(1);
      sim_ = generate(c_.dgp, params_, c_.n, gen);
    } catch (const std::exception& e) {
      fail("data", kNone, kNone, e);
      return std::move(out_);
    }
    for (std::size_t k = 0; k < c_.grid.size() && contains(c_.estimators, "ddr"); ++k) {
      cell("ddr", c_.grid[k].pi_spec, c_.grid[k].m_spec, [&] { return ddr(c_.grid[k], k); });
    }
    if (contains(c_.estimators, "oracle")) {
      cell("oracle", kNone, kNone, [&] {
        NuisancePredictions preds;
        preds.pi_hat = sim_.truth.pi;
        preds.m_tilde = sim_.truth.m;
        RngStream rng = root_.child(200);
        SparseFit fit = fit_ddr(sim_.observed, preds, options_, rng);
        return std::make_pair(fit, std::optional<NuisancePredictions>(std::move(preds)));
      });
    }
    if (contains(c_.estimators, "full")) {
      cell("full", kNone, kNone, [&] {
        RngStream rng = root_.child(201);
        return std::make_pair(fit_full(sim_.observed, sim_.truth, options_, rng),
                              std::optional<NuisancePredictions>{});
      });
    }
    if (contains(c_.estimators, "cc")) {
      cell("cc", kNone, kNone, [&] {
        RngStream rng = root_.child(202);
        return std::make_pair(fit_complete_case(sim_.observed, options_, rng),
                              std::optional<NuisancePredictions>{});
      });
    }
    return std::move(out_);
  }

 private:
  template <typename Fn>
  void cell(const std::string& estimator, const std::string& pi, const std::string& m, Fn fn) {
    const auto start = std::chrono::steady_clock::now();
    try {
      auto [fit, preds] = fn();
      const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
      const Vector diff = fit.coefficients - theta0_;
      out_.records.push_back({r_, estimator, pi, m, diff.norm(), diff.lpNorm<1>(),
                              c_.record_timing ? dt.count() : 0.0});
      if (c_.inference && preds) coverage(estimator, pi, m, fit, *preds);
    } catch (const std::exception& e) {
      fail(estimator, pi, m, e);
    }
  }

  void coverage(const std::string& estimator, const std::string& pi, const std::string& m,
                const SparseFit& fit, const NuisancePredictions& preds) {
    const InferenceResult res =
        infer(sim_.observed, preds, fit, precision(), options_.basis, c_.alpha);
    for (Index j = 0; j < res.theta_tilde.size(); ++j) {
      const bool covered = res.ci_lower(j) <= theta0_(j) && theta0_(j) <= res.ci_upper(j);
      out_.coverage.push_back({r_, j, covered, res.ci_upper(j) - res.ci_lower(j), estimator, pi,
                               m, zero_[static_cast<std::size_t>(j)]});
    }
  }

  const PrecisionEstimate& precision() {
    if (!omega_) {
      RngStream rng = root_.child(2);
      omega_ = precision_auto(expand_design(sim_.observed.covariates(), options_.basis),
                              c_.nodewise, rng);
    }
    return *omega_;
  }

  const CrossFitPlan& plan(int rep) {
    auto it = plans_.find(rep);
    if (it == plans_.end()) {
      RngStream rng = root_.child(3).child(static_cast<std::uint64_t>(rep));
      it = plans_.emplace(rep, split(c_.n, rng)).first;
    }
    return it->second;
  }

  const PropensityModel& propensity(const std::string& spec) {
    auto it = pi_.find(spec);
    if (it == pi_.end()) {
      RngStream rng = root_.child(10 + index_of(kPiSpecs, spec));
      it = pi_.emplace(spec, propensity_fitter(spec, c_.dgp.truncation, c_.propensity_lambda)(
                                 sim_.observed, rng))
               .first;
    }
    return it->second;
  }

  const Vector& m_tilde(const NuisanceCombo& combo, int rep) {
    // Only the single-index fit depends on the propensity model.
    const bool uses_pi = combo.m_spec == "sim";
    const std::string key =
        combo.m_spec + "|" + (uses_pi ? combo.pi_spec : "") + "|" + std::to_string(rep);
    auto it = m_.find(key);
    if (it == m_.end()) {
      const std::uint64_t tag = 20 + 4 * index_of(kMSpecs, combo.m_spec) +
                                (uses_pi ? index_of(kPiSpecs, combo.pi_spec) : 0);
      RngStream rng = root_.child(tag).child(static_cast<std::uint64_t>(rep));
      it = m_.emplace(key, crossfit_outcome(sim_.observed, plan(rep), propensity(combo.pi_spec),
                                            outcome_fitter(combo.m_spec, c_.lambda,
                                                           c_.sim_bandwidth),
                                            rng))
               .first;
    }
    return it->second;
  }

  std::pair<SparseFit, std::optional<NuisancePredictions>> ddr(const NuisanceCombo& combo,
                                                               std::size_t k) {
    NuisancePredictions first;
    SparseFit fit;
    Vector sum;
    for (int rep = 0; rep < c_.repeats; ++rep) {
      NuisancePredictions preds;
      preds.pi_hat = propensity(combo.pi_spec).predict_all(sim_.observed.covariates());
      preds.m_tilde = m_tilde(combo, rep);
      preds.plan = plan(rep);
      RngStream rng = root_.child(100 + k).child(static_cast<std::uint64_t>(rep));
      SparseFit f = fit_ddr(sim_.observed, preds, options_, rng);
      if (rep == 0) {
        fit = f;
        first = std::move(preds);
        sum = f.coefficients;
      } else {
        sum += f.coefficients;
      }
    }
    if (c_.repeats > 1) fit.coefficients = sum / static_cast<double>(c_.repeats);
    return {fit, first};
  }

  void fail(const std::string& estimator, const std::string& pi, const std::string& m,
            const std::exception& e) {
    const auto* err = dynamic_cast<const Error*>(&e);
    out_.errors.push_back({r_, estimator, pi, m, err ? to_string(err->kind()) : "Exception",
                           e.what()});
  }

  const ExperimentConfig& c_;
  const DgpParams& params_;
  const Vector& theta0_;
  const std::vector<bool>& zero_;
  int r_;
  RngStream root_;
  DdrOptions options_;
  SimulatedData sim_;
  std::optional<PrecisionEstimate> omega_;
  std::map<int, CrossFitPlan> plans_;
  std::map<std::string, PropensityModel> pi_;
  std::map<std::string, Vector> m_;
  ReplicationOutput out_;
};

int worker_count(const ExperimentConfig& c) {
  int n = c.threads;
  if (n <= 0) {
    if (const char* env = std::getenv("DDRKIT_THREADS")) n = std::atoi(env);
  }
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::clamp(n, 1, c.replications);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + "\"";
}

constexpr const char* kRecordsHeader = "replication_id,estimator,pi_spec,m_spec,l2,l1,seconds";
constexpr const char* kCoverageHeader =
    "replication_id,coord,covered,length,estimator,pi_spec,m_spec,zero";

void append_records(std::string& s, const std::vector<ReplicationRecord>& records) {
  for (const auto& r : records) {
    s += std::to_string(r.replication) + "," + r.estimator + "," + r.pi_spec + "," + r.m_spec +
         "," + fmt(r.l2) + "," + fmt(r.l1) + "," + fmt(r.seconds) + "\n";
  }
}

void append_coverage(std::string& s, const std::vector<CoverageRecord>& coverage) {
  for (const auto& c : coverage) {
    s += std::to_string(c.replication) + "," + std::to_string(c.coord) + "," +
         (c.covered ? "1" : "0") + "," + fmt(c.length) + "," + c.estimator + "," + c.pi_spec +
         "," + c.m_spec + "," + (c.zero ? "1" : "0") + "\n";
  }
}

}  // namespace

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text, const std::string& header,
                                                std::size_t columns) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw Error(ErrorKind::MalformedRecords, "unexpected header: '" + line + "'");
  }
  std::vector<std::vector<std::string>> rows;
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != columns) {
      throw Error(ErrorKind::MalformedRecords,
                  "line " + std::to_string(number) + " has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(columns));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

double to_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::MalformedRecords, "not a number: '" + s + "'");
  }
}

int to_int(const std::string& s) {
  const double v = to_double(s);
  if (v != std::floor(v)) throw Error(ErrorKind::MalformedRecords, "not an integer: '" + s + "'");
  return static_cast<int>(v);
}

bool to_flag(const std::string& s) {
  if (s == "1") return true;
  if (s == "0") return false;
  throw Error(ErrorKind::MalformedRecords, "not a 0/1 flag: '" + s + "'");
}

}  // namespace

PropensityFitter propensity_fitter(const std::string& spec, Truncation trunc, LambdaRule rule) {
  if (!contains(kPiSpecs, spec)) throw Error(ErrorKind::ConfigError, "unknown propensity model '" + spec + "'");
  const BasisSpec basis = spec == "quad-logit" ? BasisSpec::quadratic() : BasisSpec::linear();
  return [basis, trunc, rule](const ObservedDataset& d, RngStream& rng) {
    return fit_propensity(d, basis, trunc, rule, rng);
  };
}

OutcomeFitter outcome_fitter(const std::string& spec, LambdaRule rule, BandwidthRule bandwidth) {
  if (!contains(kMSpecs, spec)) throw Error(ErrorKind::ConfigError, "unknown outcome model '" + spec + "'");
  if (spec == "sim") {
    SimOptions opts;
    opts.bandwidth = bandwidth;
    opts.lambda = rule;
    return [opts](const ObservedDataset& d, const PropensityModel& pi, RngStream& rng) {
      return fit_outcome_sim(d, pi, opts, rng);
    };
  }
  const BasisSpec basis = spec == "quad" ? BasisSpec::quadratic() : BasisSpec::linear();
  return [basis, rule](const ObservedDataset& d, const PropensityModel&, RngStream& rng) {
    return fit_outcome_parametric(d, basis, rule, rng);
  };
}

std::string format_dataset(const ObservedDataset& data) {
  std::string s = "t,y";
  for (Index j = 0; j < data.dims(); ++j) s += ",x" + std::to_string(j + 1);
  s += "\n";
  char buf[64];
  for (Index i = 0; i < data.rows(); ++i) {
    s += data.observed(i) ? "1," : "0,";
    if (data.observed(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", data.outcome(i));
      s += buf;
    } else {
      s += "NA";
    }
    for (Index j = 0; j < data.dims(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", data.covariates()(i, j));
      s += buf;
    }
    s += "\n";
  }
  return s;
}

ObservedDataset parse_dataset(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,y,x1", 0) != 0) {
    throw Error(ErrorKind::MalformedRecords, "dataset header must start with t,y,x1");
  }
  const auto p = static_cast<Index>(std::count(line.begin(), line.end(), ',') - 1);
  std::vector<std::uint8_t> t;
  std::vector<double> y, x;
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (static_cast<Index>(f.size()) != p + 2 || (f[0] != "0" && f[0] != "1")) {
      throw Error(ErrorKind::MalformedRecords, "bad dataset line " + std::to_string(number));
    }
    t.push_back(f[0] == "1");
    if (f[0] == "1" && f[1] == "NA") {
      throw Error(ErrorKind::MalformedRecords, "observed row without outcome at line " + std::to_string(number));
    }
    y.push_back(f[0] == "1" ? to_double(f[1]) : std::numeric_limits<double>::quiet_NaN());
    for (Index j = 0; j < p; ++j) x.push_back(to_double(f[static_cast<std::size_t>(j + 2)]));
  }
  const auto n = static_cast<Index>(t.size());
  Matrix cov(n, p);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) cov(i, j) = x[static_cast<std::size_t>(i * p + j)];
  }
  return ObservedDataset(std::move(t), Eigen::Map<Vector>(y.data(), n), std::move(cov));
}

std::string format_records(const std::vector<ReplicationRecord>& records) {
  std::string s = std::string(kRecordsHeader) + "\n";
  append_records(s, records);
  return s;
}

std::string format_coverage(const std::vector<CoverageRecord>& coverage) {
  std::string s = std::string(kCoverageHeader) + "\n";
  append_coverage(s, coverage);
  return s;
}

std::string format_errors(const std::vector<ErrorRecord>& errors) {
  std::string s = "replication_id,estimator,pi_spec,m_spec,kind,message\n";
  for (const auto& e : errors) {
    s += std::to_string(e.replication) + "," + e.estimator + "," + e.pi_spec + "," + e.m_spec +
         "," + e.kind + "," + csv_field(e.message) + "\n";
  }
  return s;
}

RunReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentConfig c = config;
  c.dgp.seed = c.seed;
  const DgpParams params = default_params(c.dgp);

  namespace fs = std::filesystem;
  if (!c.output.empty()) fs::create_directories(c.output);

  RunReport report;
  const Vector population = population_theta0(c.dgp, params);
  if (c.theta0_method == Theta0Method::Analytic) {
    report.theta0 = population;
  } else {
    std::string cache = c.theta0_cache;
    if (cache.empty() && !c.output.empty()) cache = (fs::path(c.output) / "theta0.txt").string();
    report.theta0 = cache.empty() ? compute_theta0(c.dgp, params, c.theta0_draws)
                                  : cached_theta0(cache, c.dgp, params, c.theta0_draws);
  }
  // Monte-Carlo theta0 has no exact zeros; the zero class comes from the
  // closed-form support.
  std::vector<bool> zero(static_cast<std::size_t>(population.size()));
  for (Index j = 0; j < population.size(); ++j) zero[static_cast<std::size_t>(j)] = population(j) == 0.0;

  const int workers = worker_count(c);
  std::vector<ReplicationOutput> results(static_cast<std::size_t>(c.replications));
  std::atomic<int> next{0};
  auto work = [&](int w) {
    std::ofstream shard;
    if (!c.output.empty()) {
      shard.open(fs::path(c.output) / ("records.shard" + std::to_string(w) + ".csv"));
    }
    for (int r = next++; r < c.replications; r = next++) {
      ReplicationOutput out = Replication(c, params, report.theta0, zero, r).run();
      if (shard) {
        std::string s;
        append_records(s, out.records);
        shard << s << std::flush;
      }
      results[static_cast<std::size_t>(r)] = std::move(out);
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }

  for (auto& out : results) {
    if (!out.errors.empty()) ++report.failed_replications;
    std::move(out.records.begin(), out.records.end(), std::back_inserter(report.records));
    std::move(out.coverage.begin(), out.coverage.end(), std::back_inserter(report.coverage));
    std::move(out.errors.begin(), out.errors.end(), std::back_inserter(report.errors));
  }
  report.summary = summarize(report.records, report.coverage);

  if (!c.output.empty()) {
    const fs::path dir(c.output);
    write_file((dir / "records.csv").string(), format_records(report.records));
    if (c.inference) write_file((dir / "coverage.csv").string(), format_coverage(report.coverage));
    write_file((dir / "errors.csv").string(), format_errors(report.errors));
    write_file((dir / "summary.csv").string(), format_summary_csv(report.summary));
    write_file((dir / "summary.txt").string(), format_summary_text(report.summary));
    for (int w = 0; w < workers; ++w) {
      fs::remove(dir / ("records.shard" + std::to_string(w) + ".csv"));
    }
  }
  return report;
}

std::vector<SummaryRow> summarize(const std::vector<ReplicationRecord>& records,
                                  const std::vector<CoverageRecord>& coverage) {
  using Key = std::tuple<std::string, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::pair<std::vector<double>, std::vector<double>>> errs;
  for (const auto& r : records) {
    const Key k{r.estimator, r.pi_spec, r.m_spec};
    if (!errs.count(k)) order.push_back(k);
    errs[k].first.push_back(r.l2);
    errs[k].second.push_back(r.l1);
  }
  // Per class: coordinate -> covered flags, replication -> covered flags, lengths.
  struct ClassAcc {
    std::map<Index, std::vector<double>> by_coord;
    std::map<int, std::vector<double>> by_rep;
    std::vector<double> lengths;
  };
  std::map<Key, std::pair<ClassAcc, ClassAcc>> cov;
  for (const auto& c : coverage) {
    const Key k{c.estimator, c.pi_spec, c.m_spec};
    if (!errs.count(k) && !cov.count(k)) order.push_back(k);
    ClassAcc& acc = c.zero ? cov[k].first : cov[k].second;
    acc.by_coord[c.coord].push_back(c.covered ? 1.0 : 0.0);
    acc.by_rep[c.replication].push_back(c.covered ? 1.0 : 0.0);
    acc.lengths.push_back(c.length);
  }
  auto finish = [](const ClassAcc& acc) {
    ClassCoverage out;
    std::vector<double> per_coord, per_rep;
    for (const auto& [_, v] : acc.by_coord) per_coord.push_back(mean_of(v));
    for (const auto& [_, v] : acc.by_rep) per_rep.push_back(mean_of(v));
    out.coordinates = static_cast<Index>(per_coord.size());
    out.a_covp = mean_of(per_coord);
    out.m_covp = median_of(per_coord);
    out.mean_length = mean_of(acc.lengths);
    out.sd_across_coordinates = sd_of(per_coord);
    out.sd_across_replications = sd_of(per_rep);
    return out;
  };
  std::vector<SummaryRow> rows;
  for (const Key& k : order) {
    SummaryRow row;
    std::tie(row.estimator, row.pi_spec, row.m_spec) = k;
    if (auto it = errs.find(k); it != errs.end()) {
      row.replications = static_cast<int>(it->second.first.size());
      row.l2_mean = mean_of(it->second.first);
      row.l2_sd = sd_of(it->second.first);
      row.l1_mean = mean_of(it->second.second);
      row.l1_sd = sd_of(it->second.second);
    }
    if (auto it = cov.find(k); it != cov.end()) {
      row.has_coverage = true;
      row.zero = finish(it->second.first);
      row.nonzero = finish(it->second.second);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string format_summary_csv(const std::vector<SummaryRow>& rows) {
  std::string s =
      "estimator,pi_spec,m_spec,replications,l2_mean,l2_sd,l1_mean,l1_sd,"
      "zero_acovp,zero_mcovp,zero_length,zero_covp_sd_coords,zero_covp_sd_reps,"
      "nonzero_acovp,nonzero_mcovp,nonzero_length,nonzero_covp_sd_coords,nonzero_covp_sd_reps\n";
  auto cls = [](const SummaryRow& r, const ClassCoverage& c) {
    if (!r.has_coverage || c.coordinates == 0) return std::string(",,,,");
    return fmt(c.a_covp) + "," + fmt(c.m_covp) + "," + fmt(c.mean_length) + "," +
           fmt(c.sd_across_coordinates) + "," + fmt(c.sd_across_replications);
  };
  for (const auto& r : rows) {
    s += r.estimator + "," + r.pi_spec + "," + r.m_spec + "," + std::to_string(r.replications) +
         "," + fmt(r.l2_mean) + "," + fmt(r.l2_sd) + "," + fmt(r.l1_mean) + "," + fmt(r.l1_sd) +
         "," + cls(r, r.zero) + "," + cls(r, r.nonzero) + "\n";
  }
  return s;
}

std::string format_summary_text(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  char line[256];
  os << "Average L2 error (sd) over replications\n";
  std::snprintf(line, sizeof line, "%-8s %-14s %-8s %6s  %s\n", "est", "pi_hat", "m_hat", "reps",
                "L2 mean (sd)");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-8s %-14s %-8s %6d  %.3f (%.3f)\n", r.estimator.c_str(),
                  r.pi_spec.c_str(), r.m_spec.c_str(), r.replications, r.l2_mean, r.l2_sd);
    os << line;
  }
  bool any = false;
  for (const auto& r : rows) any = any || r.has_coverage;
  if (any) {
    os << "\nCoverage: A-CovP / M-CovP / mean length [sd over coords; sd over reps]\n";
    for (const auto& r : rows) {
      if (!r.has_coverage) continue;
      for (int z = 0; z < 2; ++z) {
        const ClassCoverage& c = z == 0 ? r.zero : r.nonzero;
        if (c.coordinates == 0) continue;
        std::snprintf(line, sizeof line,
                      "%-8s %-14s %-8s %-8s %.3f / %.3f / %.3f [%.3f; %.3f]\n",
                      r.estimator.c_str(), r.pi_spec.c_str(), r.m_spec.c_str(),
                      z == 0 ? "zero" : "nonzero", c.a_covp, c.m_covp, c.mean_length,
                      c.sd_across_coordinates, c.sd_across_replications);
        os << line;
      }
    }
  }
  return os.str();
}

std::vector<ReplicationRecord> parse_records(const std::string& csv) {
  std::vector<ReplicationRecord> out;
  for (const auto& f : parse_csv(csv, kRecordsHeader, 7)) {
    ReplicationRecord r{to_int(f[0]), f[1], f[2], f[3], to_double(f[4]), to_double(f[5]),
                        to_double(f[6])};
    if (r.l2 < 0 || r.l1 < 0) throw Error(ErrorKind::MalformedRecords, "negative error metric");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<CoverageRecord> parse_coverage(const std::string& csv) {
  std::vector<CoverageRecord> out;
  for (const auto& f : parse_csv(csv, kCoverageHeader, 8)) {
    out.push_back({to_int(f[0]), static_cast<Index>(to_int(f[1])), to_flag(f[2]), to_double(f[3]),
                   f[4], f[5], f[6], to_flag(f[7])});
  }
  return out;
}

}  // namespace ddrkit
