#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ddrkit/nuisance.hpp"

namespace ddrkit {

/// Two-fold partition of the rows; fold[i] is 1 or 2.
struct CrossFitPlan {
  std::vector<int> fold;
  std::uint64_t seed = 0;

  Index rows() const { return static_cast<Index>(fold.size()); }
  std::vector<Index> members(int k) const;
};

/// Balanced random split: the first ceil(n/2) entries of a random permutation
/// go to fold 1.
CrossFitPlan split(Index n, RngStream& rng);

/// Trains an outcome model on a data fold. The propensity model is passed for
/// fitters that weight by it (single-index).
using OutcomeFitter =
    std::function<OutcomeModel(const ObservedDataset&, const PropensityModel&, RngStream&)>;
using PropensityFitter = std::function<PropensityModel(const ObservedDataset&, RngStream&)>;

struct NuisancePredictions {
  Vector pi_hat;
  Vector m_tilde;
  CrossFitPlan plan;
};

/// m_tilde[i] comes from the model trained on the complete cases of the fold
/// not containing i. Throws InsufficientCompleteCases when a fold has fewer
/// than two complete cases.
Vector crossfit_outcome(const ObservedDataset& data, const CrossFitPlan& plan,
                        const PropensityModel& pi, const OutcomeFitter& fitter, RngStream& rng);

/// pi_hat on every row (no splitting) plus cross-fitted m_tilde.
NuisancePredictions predict_nuisances(const ObservedDataset& data, const PropensityModel& pi,
                                      const CrossFitPlan& plan, const OutcomeFitter& fitter,
                                      RngStream& rng);

/// y_tilde = m_tilde + T / pi_hat * (Y - m_tilde).
Vector pseudo_outcomes(const ObservedDataset& data, const NuisancePredictions& preds);

struct DdrOptions {
  LossKind loss = LossKind::Squared;
  BasisSpec basis = BasisSpec::linear();
  LambdaRule rule = LambdaRule::cv();
};

/// The penalized problem on (y_tilde, Psi(X)).
DesignProblem pseudo_problem(const ObservedDataset& data, const NuisancePredictions& preds,
                             const BasisSpec& basis, LossKind loss = LossKind::Squared);

/// L1-penalized fit on the pseudo data. Nuisance predictions stay fixed
/// inside cross-validation.
SparseFit fit_ddr(const ObservedDataset& data, const NuisancePredictions& preds,
                  const DdrOptions& options, RngStream& rng);

struct DdrResult {
  SparseFit fit;
  PropensityModel pi;
  /// Predictions from the first split.
  NuisancePredictions preds;
};

/// Full pipeline: propensity on all rows, cross-fitted outcome model, DDR
/// fit. With repeats > 1 the split is redrawn and coefficients averaged.
DdrResult estimate_ddr(const ObservedDataset& data, const PropensityFitter& pi_fitter,
                       const OutcomeFitter& m_fitter, const DdrOptions& options, RngStream& rng,
                       int repeats = 1);

// The functions below use the squared loss on the (Y - Psi'theta)^2 scale,
// i.e. twice the solver's loss, so that penalties there are 2 * fit.lambda.

/// Empirical DDR loss (1/n) sum [phi + T/pi_hat (l - phi)] with
/// phi = (m_tilde - Psi'theta)^2 and l = (Y - Psi'theta)^2.
double ddr_loss(const ObservedDataset& data, const NuisancePredictions& preds,
                const BasisSpec& basis, const Vector& theta);

/// -(2/n) sum Psi (y_tilde - Psi'theta).
Vector pseudo_gradient(const ObservedDataset& data, const NuisancePredictions& preds,
                       const BasisSpec& basis, const Vector& theta);

struct GradientDecomposition {
  Vector t0;
  Vector t_pi;
  Vector t_m;
  Vector r_pi_m;
  /// t0 + t_pi - t_m - r_pi_m.
  Vector combined() const { return t0 + t_pi - t_m - r_pi_m; }
};

/// Splits the pseudo-loss gradient at theta into the leading term and the
/// three nuisance error terms, given the true pi and m at each row.
GradientDecomposition gradient_decomposition(const ObservedDataset& data,
                                             const NuisancePredictions& preds,
                                             const Vector& true_pi, const Vector& true_m,
                                             const Vector& theta, const BasisSpec& basis);

struct DeviationReport {
  double lambda = 0.0;  // loss-scale penalty
  double sparsity = 0.0;
  bool lambda_condition = false;
  double l2_error = 0.0;
  double l1_error = 0.0;
  double l2_bound = 0.0;
  double l1_bound = 0.0;
  bool l2_holds = false;
  bool l1_holds = false;
  double l2_slack() const { return l2_bound - l2_error; }
  double l1_slack() const { return l1_bound - l1_error; }
};

/// Checks ||theta_hat - theta0||_2 <= 3 sqrt(s) lambda / kappa and
/// ||.||_1 <= 12 s lambda / kappa, asserted only when lambda >= 2 * grad_inf.
/// For squared loss the penalty is taken as 2 * fit.lambda to match the
/// (Y - Psi'theta)^2 loss in which grad_inf is measured.
DeviationReport deviation_diagnostic(const SparseFit& fit, const Vector& theta0, double grad_inf,
                                     double kappa, LossKind loss = LossKind::Squared);

}  // namespace ddrkit
