#include "ddrkit/simulate.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace ddrkit {

const char* to_string(DgpKind kind) {
  switch (kind) {
    case DgpKind::LinearLinear: return "linear-linear";
    case DgpKind::QuadQuad: return "quad-quad";
    case DgpKind::SimSim: return "sim-sim";
  }
  return "?";
}

const char* to_string(CovKind kind) {
  switch (kind) {
    case CovKind::Identity: return "identity";
    case CovKind::Ar1: return "ar1";
    case CovKind::Cs: return "cs";
  }
  return "?";
}

DgpKind parse_dgp(const std::string& name) {
  if (name == "linear-linear") return DgpKind::LinearLinear;
  if (name == "quad-quad") return DgpKind::QuadQuad;
  if (name == "sim-sim") return DgpKind::SimSim;
  throw Error(ErrorKind::ConfigError, "unknown dgp '" + name + "'");
}

CovKind parse_cov(const std::string& name) {
  if (name == "identity") return CovKind::Identity;
  if (name == "ar1") return CovKind::Ar1;
  if (name == "cs") return CovKind::Cs;
  throw Error(ErrorKind::ConfigError, "unknown covariance '" + name + "'");
}

Matrix build_covariance(CovKind kind, Index p, double rho) {
  if (p < 1) throw Error(ErrorKind::InvalidArgument, "covariance dimension must be >= 1");
  if (!(std::abs(rho) < 1.0)) throw Error(ErrorKind::InvalidArgument, "|rho| must be < 1");
  Matrix s = Matrix::Identity(p, p);
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j < p; ++j) {
      if (i == j) continue;
      if (kind == CovKind::Ar1) s(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
      if (kind == CovKind::Cs) s(i, j) = rho;
    }
  }
  return s;
}

namespace {

// Fills the leading entries of a length-p vector with runs of (value, count).
Vector pattern(Index p, std::initializer_list<std::pair<double, int>> runs) {
  Vector v = Vector::Zero(p);
  Index k = 0;
  for (const auto& [value, count] : runs) {
    for (int c = 0; c < count && k < p; ++c) v(k++) = value;
  }
  return v;
}

}  // namespace

DgpParams default_params(const DgpSpec& spec) {
  const Index p = spec.p;
  if (p < 10) throw Error(ErrorKind::InvalidArgument, "DGP dimension must be >= 10");
  DgpParams d;
  d.paper_preset = p == 50 || p == 500;
  d.alpha0 = 0.5;
  d.gamma0 = 1.0;
  d.gamma_star = pattern(p, {{1.0, 1}, {-1.0, 1}, {0.5, 2}, {-0.5, 1}});
  if (p == 500) {
    d.alpha = pattern(p, {{1.0, 3}, {-1.0, 2}, {0.5, 2}, {-0.5, 3}}) / std::sqrt(10.0);
    d.alpha_star = pattern(p, {{0.25, 2}, {-0.25, 2}});
    d.gamma = pattern(p, {{1.0, 3}, {-1.0, 2}, {0.5, 5}, {-0.5, 5}, {0.25, 2}, {-0.25, 3}});
  } else {
    d.alpha = pattern(p, {{1.0, 1}, {-1.0, 1}, {0.5, 1}, {-0.5, 1}, {0.5, 1}}) / std::sqrt(5.0);
    d.alpha_star = pattern(p, {{0.25, 1}, {-0.25, 1}});
    d.gamma = pattern(p, {{1.0, 3}, {-1.0, 2}, {0.5, 2}, {-0.5, 3}});
  }
  d.c_t = 0.2;
  d.c_y = 0.3 / std::sqrt(max_eigenvalue(build_covariance(spec.cov, p, spec.rho)));
  return d;
}

double true_propensity_raw(const DgpSpec& spec, const DgpParams& params,
                           const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const double lin = params.alpha0 + x.dot(params.alpha.transpose());
  switch (spec.dgp) {
    case DgpKind::LinearLinear: return expit(lin);
    case DgpKind::QuadQuad:
      return expit(lin + x.array().square().matrix().dot(params.alpha_star.transpose()));
    case DgpKind::SimSim: {
      const double idx = x.dot(params.alpha.transpose());
      return expit(lin + params.c_t * idx * idx);
    }
  }
  return expit(lin);
}

double true_outcome_mean(const DgpSpec& spec, const DgpParams& params,
                         const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const double idx = x.dot(params.gamma.transpose());
  switch (spec.dgp) {
    case DgpKind::LinearLinear: return params.gamma0 + idx;
    case DgpKind::QuadQuad:
      return params.gamma0 + idx +
             x.array().square().matrix().dot(params.gamma_star.transpose());
    case DgpKind::SimSim: return params.gamma0 + idx + params.c_y * idx * idx;
  }
  return params.gamma0 + idx;
}

PropensityModel true_propensity_model(const DgpSpec& spec, const DgpParams& params) {
  return PropensityModel::known(
      [spec, params](const Eigen::Ref<const Eigen::RowVectorXd>& x) {
        return true_propensity_raw(spec, params, x);
      },
      spec.truncation);
}

OutcomeModel true_outcome_model(const DgpSpec& spec, const DgpParams& params) {
  return OutcomeModel::known([spec, params](const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    return true_outcome_mean(spec, params, x);
  });
}

namespace {

struct FullDraw {
  Matrix x;
  Vector y;
  Vector pi;
  Vector m;
  std::vector<std::uint8_t> t;
  Index truncated = 0;
};

FullDraw draw(const DgpSpec& spec, const DgpParams& params, const Matrix& chol, Index n,
              RngStream& rng, bool with_treatment) {
  const Index p = spec.p;
  FullDraw out;
  out.x.resize(n, p);
  out.y.resize(n);
  out.m.resize(n);
  if (with_treatment) {
    out.pi.resize(n);
    out.t.resize(static_cast<std::size_t>(n));
  }
  Vector z(p);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) z(j) = rng.normal();
    out.x.row(i) = (chol.triangularView<Eigen::Lower>() * z).transpose();
    out.m(i) = true_outcome_mean(spec, params, out.x.row(i));
    out.y(i) = out.m(i) + rng.normal();
    if (with_treatment) {
      const double raw = true_propensity_raw(spec, params, out.x.row(i));
      const double pi = clamp_probability(raw, spec.truncation);
      if (pi != raw) ++out.truncated;
      out.pi(i) = pi;
      out.t[static_cast<std::size_t>(i)] = rng.uniform() < pi ? 1 : 0;
    }
  }
  return out;
}

}  // namespace

SimulatedData generate(const DgpSpec& spec, const DgpParams& params, Index n, RngStream& rng) {
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "generate needs n >= 2");
  const Matrix chol = cholesky(build_covariance(spec.cov, spec.p, spec.rho));
  FullDraw d = draw(spec, params, chol, n, rng, true);
  Vector stored = d.y;
  for (Index i = 0; i < n; ++i) {
    if (!d.t[static_cast<std::size_t>(i)]) stored(i) = std::numeric_limits<double>::quiet_NaN();
  }
  SimulatedData out;
  out.observed = ObservedDataset(std::move(d.t), std::move(stored), std::move(d.x));
  out.truth.y_full = std::move(d.y);
  out.truth.pi = std::move(d.pi);
  out.truth.m = std::move(d.m);
  out.truth.truncated = d.truncated;
  return out;
}

Vector compute_theta0(const DgpSpec& spec, const DgpParams& params, Index m) {
  if (m < 2) throw Error(ErrorKind::InvalidArgument, "theta0 sample size must be >= 2");
  const Matrix chol = cholesky(build_covariance(spec.cov, spec.p, spec.rho));
  const Index d = spec.p + 1;
  Matrix xtx = Matrix::Zero(d, d);
  Vector xty = Vector::Zero(d);
  const RngStream root(spec.seed, kTheta0Stream);
  constexpr Index kChunk = 10000;
  for (Index start = 0, chunk = 0; start < m; start += kChunk, ++chunk) {
    const Index rows = std::min(kChunk, m - start);
    RngStream rng = root.child(static_cast<std::uint64_t>(chunk));
    const FullDraw f = draw(spec, params, chol, rows, rng, false);
    Matrix design(rows, d);
    design.col(0).setOnes();
    design.rightCols(spec.p) = f.x;
    xtx.selfadjointView<Eigen::Lower>().rankUpdate(design.transpose());
    xty += design.transpose() * f.y;
  }
  xtx = xtx.selfadjointView<Eigen::Lower>();
  return xtx.ldlt().solve(xty);
}

Vector population_theta0(const DgpSpec& spec, const DgpParams& params) {
  const Matrix sigma = build_covariance(spec.cov, spec.p, spec.rho);
  Vector theta(spec.p + 1);
  theta.tail(spec.p) = params.gamma;
  double intercept = params.gamma0;
  if (spec.dgp == DgpKind::QuadQuad) intercept += params.gamma_star.dot(sigma.diagonal());
  if (spec.dgp == DgpKind::SimSim) intercept += params.c_y * params.gamma.dot(sigma * params.gamma);
  theta(0) = intercept;
  return theta;
}

namespace {

std::string cache_header(const DgpSpec& spec, Index m) {
  char rho[64];
  std::snprintf(rho, sizeof rho, "%.17g", spec.rho);
  std::ostringstream os;
  os << "p " << spec.p << " dgp " << to_string(spec.dgp) << " cov " << to_string(spec.cov)
     << " rho " << rho << " seed " << spec.seed << " m " << m;
  return os.str();
}

constexpr const char* kCacheMagic = "ddrkit-theta0 v1";

}  // namespace

void write_theta0_cache(const std::string& path, const DgpSpec& spec, Index m,
                        const Vector& theta) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write theta0 cache " + path);
  out << kCacheMagic << '\n' << cache_header(spec, m) << '\n';
  char buf[64];
  for (Index j = 0; j < theta.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%.17g", theta(j));
    out << buf << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing theta0 cache " + path);
}

std::optional<Vector> read_theta0_cache(const std::string& path, const DgpSpec& spec, Index m) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string magic, header;
  if (!std::getline(in, magic) || magic != kCacheMagic) return std::nullopt;
  if (!std::getline(in, header) || header != cache_header(spec, m)) return std::nullopt;
  Vector theta(spec.p + 1);
  for (Index j = 0; j < theta.size(); ++j) {
    if (!(in >> theta(j))) return std::nullopt;
  }
  return theta;
}

Vector cached_theta0(const std::string& path, const DgpSpec& spec, const DgpParams& params,
                     Index m) {
  if (auto hit = read_theta0_cache(path, spec, m)) return *hit;
  Vector theta = compute_theta0(spec, params, m);
  write_theta0_cache(path, spec, m, theta);
  return theta;
}

SparseFit fit_oracle(const ObservedDataset& data, const HiddenTruth& truth,
                     const DdrOptions& options, RngStream& rng) {
  NuisancePredictions preds;
  preds.pi_hat = truth.pi;
  preds.m_tilde = truth.m;
  return fit_ddr(data, preds, options, rng);
}

SparseFit fit_full(const ObservedDataset& data, const HiddenTruth& truth,
                   const DdrOptions& options, RngStream& rng) {
  const DesignProblem problem =
      make_problem(expand_design(data.covariates(), options.basis), truth.y_full, options.loss,
                   options.basis.include_intercept);
  return fit_with_rule(problem, options.rule, rng);
}

SparseFit fit_complete_case(const ObservedDataset& data, const DdrOptions& options,
                            RngStream& rng) {
  const std::vector<Index> rows = data.complete_rows();
  if (rows.size() < 2) throw Error(ErrorKind::InsufficientData, "fewer than 2 complete cases");
  const auto m = static_cast<Index>(rows.size());
  Matrix x(m, data.dims());
  Vector y(m);
  for (Index k = 0; k < m; ++k) {
    x.row(k) = data.covariate_row(rows[static_cast<std::size_t>(k)]);
    y(k) = data.outcome(rows[static_cast<std::size_t>(k)]);
  }
  LambdaRule rule = options.rule;
  if (rule.kind == LambdaRule::Kind::CrossValidation && m < rule.folds) rule.folds = static_cast<int>(m);
  const DesignProblem problem = make_problem(expand_design(x, options.basis), std::move(y),
                                             options.loss, options.basis.include_intercept);
  return fit_with_rule(problem, rule, rng);
}

Comparators comparator_fits(const ObservedDataset& data, const HiddenTruth& truth,
                            const DdrOptions& options, RngStream& rng) {
  RngStream a = rng.child(1), b = rng.child(2), c = rng.child(3);
  return {fit_oracle(data, truth, options, a), fit_full(data, truth, options, b),
          fit_complete_case(data, options, c)};
}

}  // namespace ddrkit
