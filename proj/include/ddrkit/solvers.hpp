#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "ddrkit/numkit.hpp"

namespace ddrkit {

enum class LossKind { Squared, Logistic, Poisson };

/// Penalized empirical risk problem
///
///   (1/n) sum_i w_i l(y_i, x_i' theta) + lambda * sum_{j penalized} |theta_j|
///
/// Squared loss is l(u, v) = (u - v)^2 / 2, logistic is -u v + log(1 + e^v).
/// Logistic responses may be any real number. When `has_intercept` is set,
/// column 0 of the design is the constant 1 and it is left unpenalized
/// unless `penalize_intercept` is set. Columns are never standardized.
struct DesignProblem {
  Matrix design;
  Vector response;
  Vector weights;
  LossKind loss = LossKind::Squared;
  bool has_intercept = true;
  bool penalize_intercept = false;

  Index rows() const { return design.rows(); }
  Index cols() const { return design.cols(); }
  bool penalized(Index j) const { return !(has_intercept && j == 0 && !penalize_intercept); }

  /// Throws InvalidArgument when shapes or weights are inconsistent.
  void validate() const;
};

DesignProblem make_problem(Matrix design, Vector response, LossKind loss = LossKind::Squared,
                           bool has_intercept = true);

struct SparseFit {
  Vector coefficients;
  double lambda = 0.0;
  int iterations = 0;
  bool converged = false;
  double objective = 0.0;
};

struct SolverOptions {
  double tolerance = -1.0;  // <= 0 selects 1e-7 (squared) or 1e-6 (logistic)
  int max_sweeps = 10000;
  /// Called after every full sweep (squared) or majorization step (logistic).
  std::function<void(int, const Vector&)> on_sweep;
};

double soft_threshold(double z, double t);

/// Coordinate-descent lasso for the squared loss. Never throws on
/// non-convergence: returns the last iterate with converged = false.
SparseFit fit_lasso(const DesignProblem& problem, double lambda,
                    const std::optional<Vector>& init = std::nullopt,
                    const SolverOptions& options = {});

/// L1-penalized logistic regression by coordinate descent on the quadratic
/// majorizer with curvature bound 1/4. Throws Diverged when the largest
/// coefficient magnitude exceeds 1e3.
SparseFit fit_logistic_lasso(const DesignProblem& problem, double lambda,
                             const std::optional<Vector>& init = std::nullopt,
                             const SolverOptions& options = {});

/// Lasso in Gram form: minimizes 0.5 t'Gt - b't + lambda * sum_{penalized} |t_j|
/// for a positive semidefinite G. `objective` holds that quadratic value.
SparseFit fit_lasso_gram(const Matrix& G, const Vector& b, double lambda,
                         const std::vector<bool>& penalized,
                         const std::optional<Vector>& init = std::nullopt,
                         const SolverOptions& options = {});

/// Dispatches on problem.loss.
SparseFit fit_penalized(const DesignProblem& problem, double lambda,
                        const std::optional<Vector>& init = std::nullopt,
                        const SolverOptions& options = {});

/// Gradient of the unpenalized weighted empirical loss at theta.
Vector loss_gradient(const DesignProblem& problem, const Vector& theta);
/// Unpenalized weighted empirical loss (1/n) sum w_i l(y_i, x_i' theta).
double empirical_loss(const DesignProblem& problem, const Vector& theta);
double penalized_objective(const DesignProblem& problem, const Vector& theta, double lambda);

struct KktReport {
  bool satisfied = false;
  double max_violation = 0.0;
};

/// Subgradient optimality check. Default tolerance is 1e-6 for squared and
/// 1e-5 for logistic loss.
KktReport check_kkt(const DesignProblem& problem, const Vector& theta, double lambda,
                    double tolerance = -1.0);

/// Smallest lambda at which every penalized coefficient is zero.
double lambda_max(const DesignProblem& problem);

/// Geometric grid from lambda_max down to ratio * lambda_max.
std::vector<double> lambda_path(const DesignProblem& problem, int n_lambdas, double ratio);

/// Fits every lambda on the path with warm starts.
std::vector<SparseFit> fit_path(const DesignProblem& problem, const std::vector<double>& path);

struct CvResult {
  double lambda = 0.0;
  Index selected = 0;
  std::vector<double> path;
  std::vector<double> cv_loss;
};

/// Random near-equal partition of 0..n-1 into `folds` groups; entry i is the
/// fold (0-based) of row i.
std::vector<int> random_folds(Index n, int folds, RngStream& rng);

/// K-fold cross-validation of the held-out weighted loss. Ties go to the
/// largest lambda.
CvResult cross_validate_lambda(const DesignProblem& problem, int folds,
                               const std::vector<double>& path, RngStream& rng);

struct BicResult {
  double lambda = 0.0;
  Index selected = 0;
  std::vector<double> path;
  std::vector<double> bic;
  SparseFit fit;
};

/// BIC = 2 n * loss + log(n) * (number of nonzero coefficients). Path points
/// whose fit diverges are dropped. Ties go to the largest lambda.
BicResult select_lambda_bic(const DesignProblem& problem, const std::vector<double>& path);

/// How a penalty level gets chosen by the estimators built on these solvers.
struct LambdaRule {
  enum class Kind { Fixed, CrossValidation, Bic } kind = Kind::CrossValidation;
  double value = 0.0;
  int folds = 10;
  int n_lambdas = 50;
  double ratio = 1e-3;

  static LambdaRule fixed(double lambda) { return {Kind::Fixed, lambda}; }
  static LambdaRule cv(int folds = 10, int n_lambdas = 50, double ratio = 1e-3) {
    return {Kind::CrossValidation, 0.0, folds, n_lambdas, ratio};
  }
  static LambdaRule bic(int n_lambdas = 50, double ratio = 1e-3) {
    return {Kind::Bic, 0.0, 10, n_lambdas, ratio};
  }
};

/// Applies the rule and returns the final fit at the chosen lambda.
SparseFit fit_with_rule(const DesignProblem& problem, const LambdaRule& rule, RngStream& rng);

}  // namespace ddrkit
