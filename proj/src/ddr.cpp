#include "ddrkit/ddr.hpp"

#include <cmath>
#include <string>

namespace ddrkit {

std::vector<Index> CrossFitPlan::members(int k) const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < fold.size(); ++i) {
    if (fold[i] == k) out.push_back(static_cast<Index>(i));
  }
  return out;
}

CrossFitPlan split(Index n, RngStream& rng) {
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "split needs n >= 2");
  CrossFitPlan plan;
  plan.seed = rng.seed();
  plan.fold.assign(static_cast<std::size_t>(n), 2);
  const std::vector<Index> perm = rng.permutation(n);
  const Index first = (n + 1) / 2;
  for (Index k = 0; k < first; ++k) plan.fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = 1;
  return plan;
}

Vector crossfit_outcome(const ObservedDataset& data, const CrossFitPlan& plan,
                        const PropensityModel& pi, const OutcomeFitter& fitter, RngStream& rng) {
  if (plan.rows() != data.rows()) {
    throw Error(ErrorKind::InvalidArgument, "cross-fit plan does not match the data");
  }
  Vector m_tilde(data.rows());
  for (int k = 1; k <= 2; ++k) {
    const ObservedDataset train = data.subset(plan.members(k));
    if (train.complete_count() < 2) {
      throw Error(ErrorKind::InsufficientCompleteCases,
                  "fold " + std::to_string(k) + " has fewer than 2 complete cases");
    }
    RngStream fold_rng = rng.child(static_cast<std::uint64_t>(k));
    const OutcomeModel model = fitter(train, pi, fold_rng);
    for (Index i : plan.members(3 - k)) m_tilde(i) = model.predict(data.covariate_row(i));
  }
  return m_tilde;
}

NuisancePredictions predict_nuisances(const ObservedDataset& data, const PropensityModel& pi,
                                      const CrossFitPlan& plan, const OutcomeFitter& fitter,
                                      RngStream& rng) {
  NuisancePredictions preds;
  preds.pi_hat = pi.predict_all(data.covariates());
  preds.m_tilde = crossfit_outcome(data, plan, pi, fitter, rng);
  preds.plan = plan;
  return preds;
}

Vector pseudo_outcomes(const ObservedDataset& data, const NuisancePredictions& preds) {
  Vector y = preds.m_tilde;
  for (Index i = 0; i < data.rows(); ++i) {
    if (data.observed(i)) y(i) += (data.outcome(i) - preds.m_tilde(i)) / preds.pi_hat(i);
  }
  return y;
}

DesignProblem pseudo_problem(const ObservedDataset& data, const NuisancePredictions& preds,
                             const BasisSpec& basis, LossKind loss) {
  return make_problem(expand_design(data.covariates(), basis), pseudo_outcomes(data, preds), loss,
                      basis.include_intercept);
}

SparseFit fit_ddr(const ObservedDataset& data, const NuisancePredictions& preds,
                  const DdrOptions& options, RngStream& rng) {
  return fit_with_rule(pseudo_problem(data, preds, options.basis, options.loss), options.rule,
                       rng);
}

DdrResult estimate_ddr(const ObservedDataset& data, const PropensityFitter& pi_fitter,
                       const OutcomeFitter& m_fitter, const DdrOptions& options, RngStream& rng,
                       int repeats) {
  if (repeats < 1) throw Error(ErrorKind::InvalidArgument, "repeats must be >= 1");
  RngStream pi_rng = rng.child(0);
  DdrResult out{SparseFit{}, pi_fitter(data, pi_rng), NuisancePredictions{}};
  Vector sum;
  for (int r = 0; r < repeats; ++r) {
    RngStream rep = rng.child(1 + static_cast<std::uint64_t>(r));
    RngStream split_rng = rep.child(0);
    RngStream m_rng = rep.child(1);
    RngStream fit_rng = rep.child(2);
    NuisancePredictions preds =
        predict_nuisances(data, out.pi, split(data.rows(), split_rng), m_fitter, m_rng);
    SparseFit fit = fit_ddr(data, preds, options, fit_rng);
    if (r == 0) {
      out.fit = fit;
      out.preds = std::move(preds);
      sum = fit.coefficients;
    } else {
      sum += fit.coefficients;
      out.fit.converged = out.fit.converged && fit.converged;
    }
  }
  if (repeats > 1) out.fit.coefficients = sum / static_cast<double>(repeats);
  return out;
}

double ddr_loss(const ObservedDataset& data, const NuisancePredictions& preds,
                const BasisSpec& basis, const Vector& theta) {
  const Vector g = expand_design(data.covariates(), basis) * theta;
  double total = 0.0;
  for (Index i = 0; i < data.rows(); ++i) {
    const double phi = std::pow(preds.m_tilde(i) - g(i), 2);
    total += phi;
    if (data.observed(i)) {
      total += (std::pow(data.outcome(i) - g(i), 2) - phi) / preds.pi_hat(i);
    }
  }
  return total / static_cast<double>(data.rows());
}

Vector pseudo_gradient(const ObservedDataset& data, const NuisancePredictions& preds,
                       const BasisSpec& basis, const Vector& theta) {
  const Matrix psi = expand_design(data.covariates(), basis);
  const Vector resid = pseudo_outcomes(data, preds) - psi * theta;
  return psi.transpose() * resid * (-2.0 / static_cast<double>(data.rows()));
}

GradientDecomposition gradient_decomposition(const ObservedDataset& data,
                                             const NuisancePredictions& preds,
                                             const Vector& true_pi, const Vector& true_m,
                                             const Vector& theta, const BasisSpec& basis) {
  const Index n = data.rows();
  if (true_pi.size() != n || true_m.size() != n) {
    throw Error(ErrorKind::InvalidArgument, "true nuisance vectors must have one entry per row");
  }
  const Matrix psi = expand_design(data.covariates(), basis);
  const Vector g = psi * theta;
  // Row weights multiplying h = -2 Psi in each term.
  Vector w0(n), wpi(n), wm(n), wr(n);
  for (Index i = 0; i < n; ++i) {
    const double a = data.treatment(i) / preds.pi_hat(i);
    const double b = data.treatment(i) / true_pi(i);
    const double dm = preds.m_tilde(i) - true_m(i);
    const double ry = data.observed(i) ? data.outcome(i) - true_m(i) : 0.0;
    w0(i) = (true_m(i) - g(i)) + b * ry;
    wpi(i) = (a - b) * ry;
    wm(i) = (b - 1.0) * dm;
    wr(i) = (a - b) * dm;
  }
  const double scale = -2.0 / static_cast<double>(n);
  GradientDecomposition out;
  out.t0 = psi.transpose() * w0 * scale;
  out.t_pi = psi.transpose() * wpi * scale;
  out.t_m = psi.transpose() * wm * scale;
  out.r_pi_m = psi.transpose() * wr * scale;
  return out;
}

DeviationReport deviation_diagnostic(const SparseFit& fit, const Vector& theta0, double grad_inf,
                                     double kappa, LossKind loss) {
  if (!(kappa > 0.0)) throw Error(ErrorKind::InvalidArgument, "kappa must be positive");
  if (fit.coefficients.size() != theta0.size()) {
    throw Error(ErrorKind::InvalidArgument, "fit and theta0 differ in length");
  }
  DeviationReport r;
  r.lambda = loss == LossKind::Squared ? 2.0 * fit.lambda : fit.lambda;
  r.sparsity = static_cast<double>((theta0.array() != 0.0).count());
  r.lambda_condition = r.lambda >= 2.0 * grad_inf;
  const Vector diff = fit.coefficients - theta0;
  r.l2_error = diff.norm();
  r.l1_error = diff.lpNorm<1>();
  r.l2_bound = 3.0 * std::sqrt(r.sparsity) * r.lambda / kappa;
  r.l1_bound = 12.0 * r.sparsity * r.lambda / kappa;
  r.l2_holds = r.l2_error <= r.l2_bound;
  r.l1_holds = r.l1_error <= r.l1_bound;
  return r;
}

}  // namespace ddrkit
