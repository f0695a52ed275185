#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "ddrkit/data.hpp"
#include "ddrkit/kernel.hpp"
#include "ddrkit/solvers.hpp"

namespace ddrkit {

/// Polynomial basis {1, x_j^k : 1 <= j <= p, 1 <= k <= degree} without cross
/// terms. Feature order is [1, x_1..x_p, x_1^2..x_p^2, ...].
struct BasisSpec {
  int degree = 1;
  bool include_intercept = true;

  static BasisSpec linear(bool intercept = true) { return {1, intercept}; }
  static BasisSpec quadratic(bool intercept = true) { return {2, intercept}; }
  static BasisSpec polynomial(int degree, bool intercept = true) { return {degree, intercept}; }

  Index features(Index p) const { return (include_intercept ? 1 : 0) + p * degree; }
};

Vector expand_basis(const Eigen::Ref<const Eigen::RowVectorXd>& x, const BasisSpec& spec);
Matrix expand_design(const Matrix& x, const BasisSpec& spec);

using CovariateFunction = std::function<double(const Eigen::Ref<const Eigen::RowVectorXd>&)>;

struct Truncation {
  double lo = 0.1;
  double hi = 0.9;
};

class PropensityModel {
 public:
  enum class Kind { KnownFunction, ConstantMcar, LogisticBasis };

  static PropensityModel known(CovariateFunction pi, Truncation trunc);
  static PropensityModel constant(double value, Truncation trunc);
  static PropensityModel logistic(BasisSpec spec, Vector coefficients, Truncation trunc);

  Kind kind() const { return kind_; }
  const Truncation& truncation() const { return trunc_; }
  const Vector& coefficients() const { return coef_; }
  const BasisSpec& basis() const { return spec_; }

  /// Always inside [lo, hi].
  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  Vector predict_all(const Matrix& x) const;
  /// Prediction before clamping.
  double raw(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;

 private:
  Kind kind_ = Kind::ConstantMcar;
  Truncation trunc_;
  CovariateFunction fn_;
  double constant_ = 0.5;
  BasisSpec spec_;
  Vector coef_;
};

double clamp_probability(double p, const Truncation& trunc);

/// L1-penalized logistic regression of T on the basis, on all n rows.
/// Throws DegenerateTreatment when T is constant.
PropensityModel fit_propensity(const ObservedDataset& data, const BasisSpec& spec,
                               Truncation trunc, const LambdaRule& rule, RngStream& rng);

/// Sample mean of T, clamped.
PropensityModel fit_propensity_constant(const ObservedDataset& data, Truncation trunc);

class OutcomeModel {
 public:
  enum class Kind { KnownFunction, LassoBasis, SingleIndex };

  static OutcomeModel known(CovariateFunction m);
  static OutcomeModel lasso(BasisSpec spec, Vector coefficients);
  /// Single-index model: index direction (length p) and a smoother over the
  /// complete-case scores.
  static OutcomeModel single_index(Vector index, KernelSmoother smoother);
  /// Degenerate single-index fit: predicts the complete-case mean.
  static OutcomeModel degenerate_index(Vector index, double mean);

  Kind kind() const { return kind_; }
  const Vector& coefficients() const { return coef_; }
  const BasisSpec& basis() const { return spec_; }
  bool degenerate() const { return degenerate_; }
  const std::optional<KernelSmoother>& smoother() const { return smoother_; }

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  Vector predict_all(const Matrix& x) const;

 private:
  Kind kind_ = Kind::LassoBasis;
  CovariateFunction fn_;
  BasisSpec spec_;
  Vector coef_;
  std::optional<KernelSmoother> smoother_;
  bool degenerate_ = false;
  double mean_ = 0.0;
};

/// Penalized least squares of Y on the basis over complete cases only.
/// Throws InsufficientData with fewer than two complete cases.
OutcomeModel fit_outcome_parametric(const ObservedDataset& data, const BasisSpec& spec,
                                    const LambdaRule& rule, RngStream& rng);

enum class BandwidthRule { RuleOfThumb, LeastSquaresCv };

struct SimOptions {
  BandwidthRule bandwidth = BandwidthRule::RuleOfThumb;
  LambdaRule lambda = LambdaRule::cv();
  /// Inverse-propensity weights for the index lasso. The unweighted variant
  /// is available but is not the default.
  bool ipw_index = true;
};

/// Single-index outcome model: the index comes from a (weighted) lasso of Y
/// on (1, X) over complete cases with weights 1/pi_hat(X), then Y is smoothed
/// over the estimated scores. A zero index falls back to the complete-case
/// mean with degenerate() set. Throws InsufficientData with fewer than ten
/// complete cases.
OutcomeModel fit_outcome_sim(const ObservedDataset& data, const PropensityModel& pi,
                             const SimOptions& options, RngStream& rng);

}  // namespace ddrkit
