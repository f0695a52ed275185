#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ddrkit/harness.hpp"

using namespace ddrkit;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::InvalidArgument;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.dgp.p = 12;
  c.n = 200;
  c.replications = 3;
  c.estimators = {"ddr", "oracle", "full", "cc"};
  c.grid = {{"linear-logit", "linear"}, {"quad-logit", "sim"}};
  c.inference = true;
  c.theta0_method = Theta0Method::Analytic;
  return c;
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig c = parse_config(R"({
    "dgp": {"kind": "quad-quad", "p": 50, "cov": "ar1", "rho": 0.3, "truncation": [0.05, 0.95]},
    "n": 500, "replications": 7,
    "grid": [{"pi": "quad-logit", "m": "sim"}],
    "estimators": ["ddr", "cc"], "inference": true, "alpha": 0.1, "seed": 42,
    "theta0": {"method": "analytic"},
    "lambda": {"rule": "fixed", "value": 0.03},
    "sim_bandwidth": "lscv", "nodewise": {"scale": 0.7}, "repeats": 2, "threads": 3
  })");
  CHECK(c.dgp.dgp == DgpKind::QuadQuad);
  CHECK(c.dgp.cov == CovKind::Ar1);
  CHECK(c.dgp.rho == 0.3);
  CHECK(c.dgp.truncation.lo == 0.05);
  CHECK(c.dgp.seed == 42);
  CHECK(c.n == 500);
  CHECK(c.replications == 7);
  REQUIRE(c.grid.size() == 1);
  CHECK(c.grid[0].m_spec == "sim");
  CHECK(c.estimators.size() == 2);
  CHECK(c.alpha == 0.1);
  CHECK(c.theta0_method == Theta0Method::Analytic);
  CHECK(c.lambda.kind == LambdaRule::Kind::Fixed);
  CHECK(c.lambda.value == 0.03);
  CHECK(c.sim_bandwidth == BandwidthRule::LeastSquaresCv);
  CHECK(c.nodewise.scale == 0.7);
  CHECK(c.repeats == 2);
  CHECK(c.threads == 3);
}

TEST_CASE("bad configs are rejected") {
  for (const char* text : {
           R"({"bogus": 1})",
           R"({"dgp": {"kind": "cubic"}})",
           R"({"dgp": {"shape": 1}})",
           R"({"n": -3})",
           R"({"n": "many"})",
           R"({"alpha": 1.5})",
           R"({"estimators": ["ddr", "magic"]})",
           R"({"grid": [{"pi": "probit", "m": "linear"}]})",
           R"({"replications": 0})",
           R"({"theta0": {"method": "guess"}})",
           R"(not json)",
       }) {
    CAPTURE(text);
    CHECK(kind_of([&] { parse_config(text); }) == ErrorKind::ConfigError);
  }
}

TEST_CASE("a single full-data replication yields one record") {
  ExperimentConfig c;
  c.dgp.p = 12;
  c.n = 150;
  c.estimators = {"full"};
  c.theta0_method = Theta0Method::Analytic;
  const RunReport r = run_experiment(c);
  REQUIRE(r.records.size() == 1);
  CHECK(r.records[0].estimator == "full");
  CHECK(r.records[0].pi_spec == "-");
  CHECK(r.records[0].l2 > 0.0);
  CHECK(r.records[0].l1 >= r.records[0].l2);
  CHECK(r.errors.empty());
  CHECK(r.summary.size() == 1);
}

TEST_CASE("runs are deterministic and independent of the thread count") {
  ExperimentConfig c = small_config();
  c.threads = 1;
  const RunReport a = run_experiment(c);
  const RunReport b = run_experiment(c);
  c.threads = 3;
  const RunReport d = run_experiment(c);
  CHECK(a.records.size() == 3 * 5);
  CHECK(format_records(a.records) == format_records(b.records));
  CHECK(format_records(a.records) == format_records(d.records));
  CHECK(format_coverage(a.coverage) == format_coverage(d.coverage));
  CHECK(format_summary_csv(a.summary) == format_summary_csv(d.summary));

  c.seed = 2;
  c.dgp.seed = 2;
  CHECK(format_records(run_experiment(c).records) != format_records(a.records));
}

TEST_CASE("output files are written") {
  const fs::path dir = fs::temp_directory_path() / "ddrkit_harness_test";
  fs::remove_all(dir);
  ExperimentConfig c = small_config();
  c.replications = 2;
  c.output = dir.string();
  const RunReport r = run_experiment(c);
  for (const char* f : {"records.csv", "coverage.csv", "errors.csv", "summary.csv", "summary.txt"})
    CHECK(fs::exists(dir / f));
  CHECK(read_file((dir / "records.csv").string()) == format_records(r.records));
  for (const auto& e : fs::directory_iterator(dir))
    CHECK(e.path().filename().string().find("shard") == std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("summary arithmetic") {
  std::vector<ReplicationRecord> recs{
      {0, "ddr", "linear-logit", "linear", 0.1, 0.5, 0.0},
      {1, "ddr", "linear-logit", "linear", 0.3, 0.7, 0.0},
      {0, "oracle", "-", "-", 0.2, 0.2, 0.0},
  };
  std::vector<CoverageRecord> cov;
  for (int r = 0; r < 2; ++r)
    for (Index j = 0; j < 3; ++j)
      cov.push_back({r, j, true, 0.1 * double(j + 1), "ddr", "linear-logit", "linear", j > 0});
  const auto rows = summarize(recs, cov);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].estimator == "ddr");
  CHECK(rows[0].replications == 2);
  CHECK(rows[0].l2_mean == doctest::Approx(0.2));
  CHECK(rows[0].l2_sd == doctest::Approx(std::sqrt(0.02)));
  CHECK(rows[0].l1_mean == doctest::Approx(0.6));
  REQUIRE(rows[0].has_coverage);
  CHECK(rows[0].zero.coordinates == 2);
  CHECK(rows[0].zero.a_covp == 1.0);
  CHECK(rows[0].zero.m_covp == 1.0);
  CHECK(rows[0].zero.mean_length == doctest::Approx(0.25));
  CHECK(rows[0].nonzero.coordinates == 1);
  CHECK_FALSE(rows[1].has_coverage);
  CHECK(rows[1].l2_sd == 0.0);

  // One of the two zero coordinates never covered: mean and median both 0.5.
  for (auto& c : cov)
    if (c.coord == 1) c.covered = false;
  const auto half = summarize(recs, cov);
  CHECK(half[0].zero.a_covp == doctest::Approx(0.5));
  CHECK(half[0].zero.m_covp == doctest::Approx(0.5));
  CHECK(!format_summary_text(half).empty());
}

TEST_CASE("record files round trip") {
  std::vector<ReplicationRecord> recs{{0, "ddr", "quad-logit", "sim", 0.123456789, 1.5, 0.0},
                                      {3, "cc", "-", "-", 2.0, 4.25, 0.0}};
  const auto back = parse_records(format_records(recs));
  REQUIRE(back.size() == 2);
  CHECK(back[0].m_spec == "sim");
  CHECK(back[0].l2 == doctest::Approx(0.123456789).epsilon(1e-9));
  CHECK(back[1].replication == 3);
  CHECK(format_records(back) == format_records(recs));

  std::vector<CoverageRecord> cov{{1, 4, true, 0.2, "ddr", "linear-logit", "quad", true},
                                  {1, 5, false, 0.3, "oracle", "-", "-", false}};
  CHECK(format_coverage(parse_coverage(format_coverage(cov))) == format_coverage(cov));

  CHECK(kind_of([] { parse_records("wrong,header\n1,2\n"); }) == ErrorKind::MalformedRecords);
  CHECK(kind_of([] {
          parse_records("replication_id,estimator,pi_spec,m_spec,l2,l1,seconds\n0,ddr,a,b,x,1,0\n");
        }) == ErrorKind::MalformedRecords);
  CHECK(kind_of([] { parse_records("replication_id,estimator,pi_spec,m_spec,l2,l1,seconds\n0,ddr\n"); }) ==
        ErrorKind::MalformedRecords);
}

TEST_CASE("dataset files round trip") {
  Matrix x(3, 2);
  x << 0.1, -2, 1.0 / 3.0, 4, 5, 6e-10;
  Vector y(3);
  y << 1.5, std::nan(""), -0.25;
  const ObservedDataset d({1, 0, 1}, y, x);
  const std::string text = format_dataset(d);
  CHECK(text.rfind("t,y,x1,x2\n", 0) == 0);
  CHECK(text.find("NA") != std::string::npos);
  const ObservedDataset back = parse_dataset(text);
  CHECK(back.covariates() == x);
  CHECK(back.indicators() == d.indicators());
  CHECK(back.outcome(2) == -0.25);
  CHECK_FALSE(back.observed(1));
  CHECK(kind_of([] { parse_dataset("t,y,x1\n1,NA,0\n"); }) != ErrorKind::ConfigError);
}

TEST_CASE("failure budget") {
  RunReport r;
  r.failed_replications = 10;
  CHECK_FALSE(r.over_failure_budget(100));
  r.failed_replications = 11;
  CHECK(r.over_failure_budget(100));
  r.failed_replications = 0;
  CHECK_FALSE(r.over_failure_budget(1));
}

TEST_CASE("named working models") {
  CHECK_THROWS_AS(propensity_fitter("probit", Truncation{}, LambdaRule::bic()), Error);
  CHECK_THROWS_AS(outcome_fitter("cubic", LambdaRule::cv(), BandwidthRule::RuleOfThumb), Error);
  CHECK(propensity_fitter("quad-logit", Truncation{}, LambdaRule::bic()));
  CHECK(outcome_fitter("sim", LambdaRule::cv(), BandwidthRule::RuleOfThumb));
}
