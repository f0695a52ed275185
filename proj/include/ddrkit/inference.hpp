#pragma once

#include <optional>

#include "ddrkit/ddr.hpp"

namespace ddrkit {

enum class PrecisionMethod { DirectInverse, Nodewise };

struct PrecisionEstimate {
  Matrix omega;
  PrecisionMethod method = PrecisionMethod::DirectInverse;
  double lambda_node = 0.0;
  /// Nodewise residual variances tau_j^2; empty for the direct inverse.
  Vector tau2;
  /// max |I - Omega Sigma| entry.
  double residual = 0.0;
};

/// Psi' Psi / n.
Matrix empirical_gram(const Matrix& design);

/// Inverse via symmetric eigendecomposition. Throws Singular when the
/// condition number exceeds 1e12.
PrecisionEstimate precision_direct(const Matrix& sigma);

struct NodewiseRule {
  /// lambda_node = scale * sqrt(log d / n) unless `lambda` is set.
  double scale = 0.5;
  std::optional<double> lambda;
  /// Choose each column's lambda by cross-validation instead.
  bool cross_validate = false;
  int folds = 10;
};

/// Nodewise lasso: column j of the design regressed on the remaining
/// columns (all penalized, no added intercept). Throws DegenerateColumn
/// when a residual variance is <= 1e-12.
PrecisionEstimate precision_nodewise(const Matrix& design, const NodewiseRule& rule,
                                     RngStream& rng);

/// Direct inverse when d <= n / 2, nodewise otherwise.
PrecisionEstimate precision_auto(const Matrix& design, const NodewiseRule& rule, RngStream& rng);

struct InferenceResult {
  Vector theta_tilde;
  Vector sigma_hat;
  Vector ci_lower;
  Vector ci_upper;
  double alpha = 0.05;
  Index n = 0;
};

/// theta_hat + Omega (1/n) sum (y_tilde - Psi'theta_hat) Psi.
Vector desparsify(const ObservedDataset& data, const NuisancePredictions& preds,
                  const SparseFit& fit, const PrecisionEstimate& omega, const BasisSpec& basis);

/// sigma_j = sqrt((1/n) sum (Omega_j. psi_i)^2), psi_i = (y_tilde_i - Psi_i'theta_hat) Psi_i.
Vector variance_estimates(const ObservedDataset& data, const NuisancePredictions& preds,
                          const SparseFit& fit, const PrecisionEstimate& omega,
                          const BasisSpec& basis);

/// theta_tilde +- z_{alpha/2} sigma / sqrt(n).
InferenceResult confidence_intervals(Vector theta_tilde, Vector sigma_hat, Index n, double alpha);

/// Desparsification, variances and intervals in one call.
InferenceResult infer(const ObservedDataset& data, const NuisancePredictions& preds,
                      const SparseFit& fit, const PrecisionEstimate& omega,
                      const BasisSpec& basis, double alpha);

}  // namespace ddrkit
