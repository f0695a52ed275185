#include "ddrkit/inference.hpp"

#include <cmath>
#include <string>

namespace ddrkit {

namespace {

double identity_residual(const Matrix& omega, const Matrix& sigma) {
  Matrix r = omega * sigma;
  r.diagonal().array() -= 1.0;
  return r.cwiseAbs().maxCoeff();
}

Matrix drop_index(const Matrix& m, Index j) {
  const Index d = m.rows();
  Matrix out(d - 1, d - 1);
  for (Index r = 0, rr = 0; r < d; ++r) {
    if (r == j) continue;
    for (Index c = 0, cc = 0; c < d; ++c) {
      if (c == j) continue;
      out(rr, cc++) = m(r, c);
    }
    ++rr;
  }
  return out;
}

Vector drop_entry(const Vector& v, Index j) {
  Vector out(v.size() - 1);
  for (Index k = 0, kk = 0; k < v.size(); ++k) {
    if (k != j) out(kk++) = v(k);
  }
  return out;
}

}  // namespace

Matrix empirical_gram(const Matrix& design) {
  return design.transpose() * design / static_cast<double>(design.rows());
}

PrecisionEstimate precision_direct(const Matrix& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
    throw Error(ErrorKind::InvalidArgument, "precision_direct needs a square matrix");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
  const Vector& ev = eig.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  if (!(ev.minCoeff() > 0.0) || top / ev.minCoeff() > 1e12) {
    throw Error(ErrorKind::Singular, "matrix is singular or too ill-conditioned to invert");
  }
  PrecisionEstimate out;
  out.method = PrecisionMethod::DirectInverse;
  out.omega = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  out.omega = 0.5 * (out.omega + out.omega.transpose());
  out.residual = identity_residual(out.omega, sigma);
  return out;
}

PrecisionEstimate precision_nodewise(const Matrix& design, const NodewiseRule& rule,
                                     RngStream& rng) {
  const Index n = design.rows();
  const Index d = design.cols();
  if (n < 2 || d < 2) throw Error(ErrorKind::InvalidArgument, "nodewise lasso needs n, d >= 2");
  const Matrix sigma = empirical_gram(design);
  const double lambda = rule.lambda ? *rule.lambda
                                    : rule.scale * std::sqrt(std::log(static_cast<double>(d)) /
                                                             static_cast<double>(n));
  if (!(lambda >= 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda_node must be >= 0");

  PrecisionEstimate out;
  out.method = PrecisionMethod::Nodewise;
  out.lambda_node = lambda;
  out.omega = Matrix::Zero(d, d);
  out.tau2.resize(d);
  const std::vector<bool> penalized(static_cast<std::size_t>(d - 1), true);

  for (Index j = 0; j < d; ++j) {
    const Matrix G = drop_index(sigma, j);
    const Vector b = drop_entry(sigma.col(j), j);
    double lam = lambda;
    if (rule.cross_validate) {
      Matrix rest(n, d - 1);
      for (Index c = 0, cc = 0; c < d; ++c) {
        if (c != j) rest.col(cc++) = design.col(c);
      }
      const DesignProblem problem = make_problem(std::move(rest), design.col(j),
                                                 LossKind::Squared, false);
      RngStream col_rng = rng.child(static_cast<std::uint64_t>(j));
      lam = cross_validate_lambda(problem, rule.folds, lambda_path(problem, 50, 1e-3), col_rng)
                .lambda;
    }
    const Vector gamma = fit_lasso_gram(G, b, lam, penalized).coefficients;
    const double tau2 = sigma(j, j) - b.dot(gamma);
    if (!(tau2 > 1e-12)) {
      throw Error(ErrorKind::DegenerateColumn,
                  "nodewise residual variance vanished for column " + std::to_string(j));
    }
    out.tau2(j) = tau2;
    for (Index c = 0, k = 0; c < d; ++c) {
      out.omega(j, c) = c == j ? 1.0 / tau2 : -gamma(k++) / tau2;
    }
  }
  out.residual = identity_residual(out.omega, sigma);
  return out;
}

PrecisionEstimate precision_auto(const Matrix& design, const NodewiseRule& rule, RngStream& rng) {
  if (2 * design.cols() <= design.rows()) return precision_direct(empirical_gram(design));
  return precision_nodewise(design, rule, rng);
}

namespace {

struct Residualized {
  Matrix psi;
  Vector resid;
};

Residualized residualize(const ObservedDataset& data, const NuisancePredictions& preds,
                         const SparseFit& fit, const PrecisionEstimate& omega,
                         const BasisSpec& basis) {
  Residualized r;
  r.psi = expand_design(data.covariates(), basis);
  if (r.psi.cols() != fit.coefficients.size() || omega.omega.rows() != r.psi.cols()) {
    throw Error(ErrorKind::InvalidArgument, "inference inputs have inconsistent dimensions");
  }
  r.resid = pseudo_outcomes(data, preds) - r.psi * fit.coefficients;
  return r;
}

}  // namespace

Vector desparsify(const ObservedDataset& data, const NuisancePredictions& preds,
                  const SparseFit& fit, const PrecisionEstimate& omega, const BasisSpec& basis) {
  const Residualized r = residualize(data, preds, fit, omega, basis);
  const Vector score = r.psi.transpose() * r.resid / static_cast<double>(data.rows());
  return fit.coefficients + omega.omega * score;
}

Vector variance_estimates(const ObservedDataset& data, const NuisancePredictions& preds,
                          const SparseFit& fit, const PrecisionEstimate& omega,
                          const BasisSpec& basis) {
  const Residualized r = residualize(data, preds, fit, omega, basis);
  // Row i of gamma is Omega psi_i.
  const Matrix gamma = (r.psi.array().colwise() * r.resid.array()).matrix() *
                       omega.omega.transpose();
  return (gamma.array().square().colwise().sum() / static_cast<double>(data.rows()))
      .sqrt()
      .transpose();
}

InferenceResult confidence_intervals(Vector theta_tilde, Vector sigma_hat, Index n, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0,1)");
  if (n < 1 || theta_tilde.size() != sigma_hat.size()) {
    throw Error(ErrorKind::InvalidArgument, "inconsistent interval inputs");
  }
  InferenceResult out;
  const double half = normal_quantile(1.0 - alpha / 2.0) / std::sqrt(static_cast<double>(n));
  out.ci_lower = theta_tilde - half * sigma_hat;
  out.ci_upper = theta_tilde + half * sigma_hat;
  out.theta_tilde = std::move(theta_tilde);
  out.sigma_hat = std::move(sigma_hat);
  out.alpha = alpha;
  out.n = n;
  return out;
}

InferenceResult infer(const ObservedDataset& data, const NuisancePredictions& preds,
                      const SparseFit& fit, const PrecisionEstimate& omega,
                      const BasisSpec& basis, double alpha) {
  return confidence_intervals(desparsify(data, preds, fit, omega, basis),
                              variance_estimates(data, preds, fit, omega, basis), data.rows(),
                              alpha);
}

}  // namespace ddrkit
