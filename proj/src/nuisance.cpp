#include "ddrkit/nuisance.hpp"

#include <algorithm>
#include <cmath>

namespace ddrkit {

Vector expand_basis(const Eigen::Ref<const Eigen::RowVectorXd>& x, const BasisSpec& spec) {
  if (spec.degree < 1) throw Error(ErrorKind::InvalidArgument, "basis degree must be >= 1");
  const Index p = x.size();
  Vector out(spec.features(p));
  Index k = 0;
  if (spec.include_intercept) out(k++) = 1.0;
  for (int power = 1; power <= spec.degree; ++power) {
    for (Index j = 0; j < p; ++j) out(k++) = std::pow(x(j), power);
  }
  return out;
}

Matrix expand_design(const Matrix& x, const BasisSpec& spec) {
  if (spec.degree < 1) throw Error(ErrorKind::InvalidArgument, "basis degree must be >= 1");
  const Index p = x.cols();
  Matrix out(x.rows(), spec.features(p));
  Index col = 0;
  if (spec.include_intercept) out.col(col++).setOnes();
  for (int power = 1; power <= spec.degree; ++power) {
    out.middleCols(col, p) = x.array().pow(power).matrix();
    col += p;
  }
  return out;
}

double clamp_probability(double p, const Truncation& trunc) {
  return std::clamp(p, trunc.lo, trunc.hi);
}

namespace {

void check_truncation(const Truncation& t) {
  if (!(t.lo > 0.0 && t.lo <= t.hi && t.hi < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "truncation bounds must satisfy 0 < lo <= hi < 1");
  }
}

}  // namespace

PropensityModel PropensityModel::known(CovariateFunction pi, Truncation trunc) {
  check_truncation(trunc);
  PropensityModel m;
  m.kind_ = Kind::KnownFunction;
  m.fn_ = std::move(pi);
  m.trunc_ = trunc;
  return m;
}

PropensityModel PropensityModel::constant(double value, Truncation trunc) {
  check_truncation(trunc);
  PropensityModel m;
  m.kind_ = Kind::ConstantMcar;
  m.constant_ = value;
  m.trunc_ = trunc;
  return m;
}

PropensityModel PropensityModel::logistic(BasisSpec spec, Vector coefficients, Truncation trunc) {
  check_truncation(trunc);
  PropensityModel m;
  m.kind_ = Kind::LogisticBasis;
  m.spec_ = spec;
  m.coef_ = std::move(coefficients);
  m.trunc_ = trunc;
  return m;
}

double PropensityModel::raw(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  switch (kind_) {
    case Kind::KnownFunction: return fn_(x);
    case Kind::ConstantMcar: return constant_;
    case Kind::LogisticBasis: return expit(expand_basis(x, spec_).dot(coef_));
  }
  return constant_;
}

double PropensityModel::predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  return clamp_probability(raw(x), trunc_);
}

Vector PropensityModel::predict_all(const Matrix& x) const {
  Vector out(x.rows());
  if (kind_ == Kind::LogisticBasis) {
    const Vector eta = expand_design(x, spec_) * coef_;
    for (Index i = 0; i < x.rows(); ++i) out(i) = clamp_probability(expit(eta(i)), trunc_);
    return out;
  }
  for (Index i = 0; i < x.rows(); ++i) out(i) = predict(x.row(i));
  return out;
}

PropensityModel fit_propensity(const ObservedDataset& data, const BasisSpec& spec,
                               Truncation trunc, const LambdaRule& rule, RngStream& rng) {
  const Index treated = data.complete_count();
  if (treated == 0 || treated == data.rows()) {
    throw Error(ErrorKind::DegenerateTreatment, "treatment indicator is constant");
  }
  Vector t(data.rows());
  for (Index i = 0; i < data.rows(); ++i) t(i) = data.treatment(i);
  DesignProblem problem = make_problem(expand_design(data.covariates(), spec), std::move(t),
                                       LossKind::Logistic, spec.include_intercept);
  SparseFit fit = fit_with_rule(problem, rule, rng);
  return PropensityModel::logistic(spec, std::move(fit.coefficients), trunc);
}

PropensityModel fit_propensity_constant(const ObservedDataset& data, Truncation trunc) {
  const double mean = static_cast<double>(data.complete_count()) / static_cast<double>(data.rows());
  return PropensityModel::constant(mean, trunc);
}

OutcomeModel OutcomeModel::known(CovariateFunction m) {
  OutcomeModel out;
  out.kind_ = Kind::KnownFunction;
  out.fn_ = std::move(m);
  return out;
}

OutcomeModel OutcomeModel::lasso(BasisSpec spec, Vector coefficients) {
  OutcomeModel out;
  out.kind_ = Kind::LassoBasis;
  out.spec_ = spec;
  out.coef_ = std::move(coefficients);
  return out;
}

OutcomeModel OutcomeModel::single_index(Vector index, KernelSmoother smoother) {
  OutcomeModel out;
  out.kind_ = Kind::SingleIndex;
  out.coef_ = std::move(index);
  out.mean_ = smoother.response_mean();
  out.smoother_ = std::move(smoother);
  return out;
}

OutcomeModel OutcomeModel::degenerate_index(Vector index, double mean) {
  OutcomeModel out;
  out.kind_ = Kind::SingleIndex;
  out.coef_ = std::move(index);
  out.degenerate_ = true;
  out.mean_ = mean;
  return out;
}

double OutcomeModel::predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  switch (kind_) {
    case Kind::KnownFunction: return fn_(x);
    case Kind::LassoBasis: return expand_basis(x, spec_).dot(coef_);
    case Kind::SingleIndex:
      if (degenerate_) return mean_;
      return smoother_->smooth_at(x.dot(coef_.transpose()));
  }
  return mean_;
}

Vector OutcomeModel::predict_all(const Matrix& x) const {
  if (kind_ == Kind::LassoBasis) return expand_design(x, spec_) * coef_;
  Vector out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) out(i) = predict(x.row(i));
  return out;
}

namespace {

struct CompleteCases {
  Matrix x;
  Vector y;
};

CompleteCases complete_cases(const ObservedDataset& data) {
  const std::vector<Index> rows = data.complete_rows();
  CompleteCases cc;
  cc.x.resize(static_cast<Index>(rows.size()), data.dims());
  cc.y.resize(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto k = static_cast<Index>(r);
    cc.x.row(k) = data.covariate_row(rows[r]);
    cc.y(k) = data.outcome(rows[r]);
  }
  return cc;
}

// Cross-validation needs at least as many rows as folds.
LambdaRule feasible(LambdaRule rule, Index rows) {
  if (rule.kind == LambdaRule::Kind::CrossValidation && rows < rule.folds) {
    rule.folds = static_cast<int>(std::max<Index>(2, rows));
  }
  return rule;
}

}  // namespace

OutcomeModel fit_outcome_parametric(const ObservedDataset& data, const BasisSpec& spec,
                                    const LambdaRule& rule, RngStream& rng) {
  if (data.complete_count() < 2) {
    throw Error(ErrorKind::InsufficientData, "outcome model needs at least 2 complete cases");
  }
  CompleteCases cc = complete_cases(data);
  const Index m = cc.y.size();
  DesignProblem problem = make_problem(expand_design(cc.x, spec), std::move(cc.y),
                                       LossKind::Squared, spec.include_intercept);
  SparseFit fit = fit_with_rule(problem, feasible(rule, m), rng);
  return OutcomeModel::lasso(spec, std::move(fit.coefficients));
}

OutcomeModel fit_outcome_sim(const ObservedDataset& data, const PropensityModel& pi,
                             const SimOptions& options, RngStream& rng) {
  if (data.complete_count() < 10) {
    throw Error(ErrorKind::InsufficientData, "single-index model needs at least 10 complete cases");
  }
  CompleteCases cc = complete_cases(data);
  const Index m = cc.y.size();
  DesignProblem problem = make_problem(expand_design(cc.x, BasisSpec::linear()), cc.y,
                                       LossKind::Squared, true);
  if (options.ipw_index) {
    for (Index i = 0; i < m; ++i) problem.weights(i) = 1.0 / pi.predict(cc.x.row(i));
  }
  const SparseFit fit = fit_with_rule(problem, feasible(options.lambda, m), rng);
  Vector index = fit.coefficients.tail(data.dims());
  Vector scores = cc.x * index;
  // A numerically flat index (e.g. a constant response) carries no signal.
  const double spread = std::sqrt((scores.array() - scores.mean()).square().mean());
  const double y_scale = std::sqrt((cc.y.array() - cc.y.mean()).square().mean()) + std::abs(cc.y.mean());
  if ((index.array() == 0.0).all() || spread <= 1e-10 * y_scale) {
    return OutcomeModel::degenerate_index(std::move(index), cc.y.mean());
  }
  double h;
  try {
    h = options.bandwidth == BandwidthRule::LeastSquaresCv
            ? bandwidth_lscv(scores, cc.y, lscv_grid(scores))
            : bandwidth_rot(scores);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DegenerateScores) throw;
    return OutcomeModel::degenerate_index(std::move(index), cc.y.mean());
  }
  return OutcomeModel::single_index(std::move(index),
                                    KernelSmoother(std::move(scores), std::move(cc.y), h));
}

}  // namespace ddrkit
