#include "ddrkit/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ddrkit {

namespace {

constexpr double kSquaredTol = 1e-7;
constexpr double kLogisticTol = 1e-6;
constexpr double kDivergence = 1e3;

// Quadratic model 0.5 theta' G theta - b' theta; G and b are already scaled
// by 1/n and carry the observation weights.
struct Gram {
  Matrix G;
  Vector b;
};

Gram weighted_gram(const Matrix& X, const Vector& w, const Vector& y, double scale) {
  Matrix Xw = X.array().colwise() * w.array();
  Gram g;
  g.G = (Xw.transpose() * X) * scale;
  g.b = (Xw.transpose() * y) * scale;
  return g;
}

std::vector<bool> penalty_mask(const DesignProblem& p) {
  std::vector<bool> mask(static_cast<std::size_t>(p.cols()));
  for (Index j = 0; j < p.cols(); ++j) mask[static_cast<std::size_t>(j)] = p.penalized(j);
  return mask;
}

struct CdOutcome {
  int sweeps = 0;
  bool converged = false;
};

// Cyclic coordinate descent on the quadratic model. `grad` holds b - G theta
// and is kept in sync with theta.
CdOutcome coordinate_descent(const Matrix& G, const Vector& b, const std::vector<bool>& pen,
                             double lambda, Vector& theta, double tol, int max_sweeps,
                             const std::function<void(int, const Vector&)>& on_sweep = {}) {
  const Index d = G.rows();
  Vector grad = b - G * theta;
  CdOutcome out;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Index j = 0; j < d; ++j) {
      const double gjj = G(j, j);
      double updated = 0.0;
      if (gjj > 0.0) {
        const double z = grad(j) + gjj * theta(j);
        updated = pen[static_cast<std::size_t>(j)] ? soft_threshold(z, lambda) / gjj : z / gjj;
      }
      const double delta = updated - theta(j);
      if (delta != 0.0) {
        theta(j) = updated;
        grad.noalias() -= G.col(j) * delta;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    out.sweeps = sweep;
    if (on_sweep) on_sweep(sweep, theta);
    if (max_change <= tol) {
      // Also require the maintained subgradient residual to be small so that
      // late cross-coordinate drift does not leave a KKT gap.
      double gap = 0.0;
      for (Index j = 0; j < d; ++j) {
        if (G(j, j) <= 0.0) continue;
        const bool p = pen[static_cast<std::size_t>(j)];
        if (!p || theta(j) != 0.0) {
          const double target = p ? lambda * (theta(j) > 0 ? 1.0 : -1.0) : 0.0;
          gap = std::max(gap, std::abs(grad(j) - target));
        } else {
          gap = std::max(gap, std::abs(grad(j)) - lambda);
        }
      }
      if (gap <= 0.1 * tol || max_change == 0.0) {
        out.converged = true;
        return out;
      }
    }
  }
  return out;
}

double logistic_loss_value(const DesignProblem& p, const Vector& eta) {
  double total = 0.0;
  for (Index i = 0; i < p.rows(); ++i) {
    total += p.weights(i) * (-p.response(i) * eta(i) + log1pexp(eta(i)));
  }
  return total / static_cast<double>(p.rows());
}

double l1_penalty(const DesignProblem& p, const Vector& theta) {
  double s = 0.0;
  for (Index j = 0; j < theta.size(); ++j) {
    if (p.penalized(j)) s += std::abs(theta(j));
  }
  return s;
}

DesignProblem subset_rows(const DesignProblem& p, const std::vector<Index>& rows) {
  DesignProblem out;
  const auto m = static_cast<Index>(rows.size());
  out.design.resize(m, p.cols());
  out.response.resize(m);
  out.weights.resize(m);
  for (Index r = 0; r < m; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    out.design.row(r) = p.design.row(i);
    out.response(r) = p.response(i);
    out.weights(r) = p.weights(i);
  }
  out.loss = p.loss;
  out.has_intercept = p.has_intercept;
  out.penalize_intercept = p.penalize_intercept;
  return out;
}

Index select_min_largest_lambda(const std::vector<double>& losses) {
  double best = std::numeric_limits<double>::infinity();
  for (double v : losses) best = std::min(best, v);
  const double slack = 1e-12 * std::max(1.0, std::abs(best));
  for (std::size_t k = 0; k < losses.size(); ++k) {
    if (losses[k] <= best + slack) return static_cast<Index>(k);
  }
  return 0;
}

SparseFit lasso_on_gram(const DesignProblem& problem, const Gram& gram, double lambda,
                        const Vector& init, const SolverOptions& options) {
  const double tol = options.tolerance > 0 ? options.tolerance : kSquaredTol;
  SparseFit fit;
  fit.coefficients = init;
  fit.lambda = lambda;
  const CdOutcome cd = coordinate_descent(gram.G, gram.b, penalty_mask(problem), lambda,
                                          fit.coefficients, tol, options.max_sweeps,
                                          options.on_sweep);
  fit.iterations = cd.sweeps;
  fit.converged = cd.converged;
  fit.objective = penalized_objective(problem, fit.coefficients, lambda);
  return fit;
}

}  // namespace

void DesignProblem::validate() const {
  if (design.rows() < 1) throw Error(ErrorKind::InvalidArgument, "problem has no rows");
  if (response.size() != design.rows() || weights.size() != design.rows()) {
    throw Error(ErrorKind::InvalidArgument, "response/weights length does not match design rows");
  }
  for (Index i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights(i)) || weights(i) < 0.0) {
      throw Error(ErrorKind::InvalidArgument, "weights must be finite and nonnegative");
    }
  }
  if (!design.allFinite() || !response.allFinite()) {
    throw Error(ErrorKind::InvalidArgument, "design and response must be finite");
  }
  if (loss == LossKind::Poisson) {
    throw Error(ErrorKind::InvalidArgument, "Poisson loss is reserved but not implemented");
  }
}

DesignProblem make_problem(Matrix design, Vector response, LossKind loss, bool has_intercept) {
  DesignProblem p;
  p.weights = Vector::Ones(design.rows());
  p.design = std::move(design);
  p.response = std::move(response);
  p.loss = loss;
  p.has_intercept = has_intercept;
  return p;
}

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

Vector loss_gradient(const DesignProblem& problem, const Vector& theta) {
  const Vector eta = problem.design * theta;
  Vector r(problem.rows());
  for (Index i = 0; i < problem.rows(); ++i) {
    const double fitted = problem.loss == LossKind::Logistic ? expit(eta(i)) : eta(i);
    r(i) = problem.weights(i) * (fitted - problem.response(i));
  }
  return problem.design.transpose() * r / static_cast<double>(problem.rows());
}

double empirical_loss(const DesignProblem& problem, const Vector& theta) {
  const Vector eta = problem.design * theta;
  if (problem.loss == LossKind::Logistic) return logistic_loss_value(problem, eta);
  const Vector r = problem.response - eta;
  return 0.5 * (problem.weights.array() * r.array().square()).sum() /
         static_cast<double>(problem.rows());
}

double penalized_objective(const DesignProblem& problem, const Vector& theta, double lambda) {
  const double l1 = l1_penalty(problem, theta);
  return empirical_loss(problem, theta) + (l1 == 0.0 ? 0.0 : lambda * l1);
}

SparseFit fit_lasso(const DesignProblem& problem, double lambda, const std::optional<Vector>& init,
                    const SolverOptions& options) {
  problem.validate();
  if (problem.loss != LossKind::Squared) {
    throw Error(ErrorKind::InvalidArgument, "fit_lasso requires squared loss");
  }
  if (!(lambda >= 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda must be >= 0");
  const Gram gram = weighted_gram(problem.design, problem.weights, problem.response,
                                  1.0 / static_cast<double>(problem.rows()));
  const Vector start = init ? *init : Vector::Zero(problem.cols());
  return lasso_on_gram(problem, gram, lambda, start, options);
}

SparseFit fit_lasso_gram(const Matrix& G, const Vector& b, double lambda,
                         const std::vector<bool>& penalized, const std::optional<Vector>& init,
                         const SolverOptions& options) {
  if (G.rows() != G.cols() || G.rows() != b.size() ||
      static_cast<Index>(penalized.size()) != b.size()) {
    throw Error(ErrorKind::InvalidArgument, "Gram lasso: inconsistent dimensions");
  }
  if (!(lambda >= 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda must be >= 0");
  const double tol = options.tolerance > 0 ? options.tolerance : kSquaredTol;
  SparseFit fit;
  fit.lambda = lambda;
  fit.coefficients = init ? *init : Vector::Zero(b.size());
  const CdOutcome cd = coordinate_descent(G, b, penalized, lambda, fit.coefficients, tol,
                                          options.max_sweeps, options.on_sweep);
  fit.iterations = cd.sweeps;
  fit.converged = cd.converged;
  const Vector& t = fit.coefficients;
  double l1 = 0.0;
  for (Index j = 0; j < t.size(); ++j) {
    if (penalized[static_cast<std::size_t>(j)]) l1 += std::abs(t(j));
  }
  fit.objective = 0.5 * t.dot(G * t) - b.dot(t) + (l1 == 0.0 ? 0.0 : lambda * l1);
  return fit;
}

namespace {

bool separates(const DesignProblem& problem, const Vector& theta) {
  const Vector eta = problem.design * theta;
  for (Index i = 0; i < problem.rows(); ++i) {
    if (problem.weights(i) == 0.0) continue;
    const double y = problem.response(i);
    if (!((y == 1.0 && eta(i) > 0.0) || (y == 0.0 && eta(i) < 0.0))) return false;
  }
  return true;
}

}  // namespace

SparseFit fit_logistic_lasso(const DesignProblem& problem, double lambda,
                             const std::optional<Vector>& init, const SolverOptions& options) {
  problem.validate();
  if (problem.loss != LossKind::Logistic) {
    throw Error(ErrorKind::InvalidArgument, "fit_logistic_lasso requires logistic loss");
  }
  if (!(lambda >= 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda must be >= 0");
  const double tol = options.tolerance > 0 ? options.tolerance : kLogisticTol;
  const double n = static_cast<double>(problem.rows());
  const std::vector<bool> pen = penalty_mask(problem);

  // Majorizer curvature: X' W X / (4 n).
  const Matrix H = weighted_gram(problem.design, problem.weights, problem.response, 0.25 / n).G;

  SparseFit fit;
  fit.lambda = lambda;
  fit.coefficients = init ? *init : Vector::Zero(problem.cols());
  Vector& theta = fit.coefficients;
  for (int step = 1; step <= options.max_sweeps; ++step) {
    const Vector g = loss_gradient(problem, theta);
    const Vector b = H * theta - g;
    Vector next = theta;
    coordinate_descent(H, b, pen, lambda, next, 0.1 * tol, 1000);
    const double change = (next - theta).cwiseAbs().maxCoeff();
    theta = next;
    fit.iterations = step;
    if (options.on_sweep) options.on_sweep(step, theta);
    if (!theta.allFinite() || theta.cwiseAbs().maxCoeff() > kDivergence) {
      throw Error(ErrorKind::Diverged, "logistic coefficients exceeded 1e3 in magnitude");
    }
    if (change <= tol) {
      fit.converged = true;
      break;
    }
  }
  if (lambda == 0.0 && separates(problem, theta)) {
    // Perfect classification without a penalty means no finite minimizer; the
    // iterates only stopped because the gradient underflowed the tolerance.
    throw Error(ErrorKind::Diverged, "logistic data are separable at lambda = 0");
  }
  fit.objective = penalized_objective(problem, theta, lambda);
  return fit;
}

SparseFit fit_penalized(const DesignProblem& problem, double lambda,
                        const std::optional<Vector>& init, const SolverOptions& options) {
  switch (problem.loss) {
    case LossKind::Squared: return fit_lasso(problem, lambda, init, options);
    case LossKind::Logistic: return fit_logistic_lasso(problem, lambda, init, options);
    case LossKind::Poisson: break;
  }
  throw Error(ErrorKind::InvalidArgument, "Poisson loss is reserved but not implemented");
}

KktReport check_kkt(const DesignProblem& problem, const Vector& theta, double lambda,
                    double tolerance) {
  if (tolerance <= 0) tolerance = problem.loss == LossKind::Logistic ? 1e-5 : 1e-6;
  const Vector g = loss_gradient(problem, theta);
  KktReport rep;
  for (Index j = 0; j < theta.size(); ++j) {
    double v;
    if (!problem.penalized(j)) {
      v = std::abs(g(j));
    } else if (theta(j) == 0.0) {
      v = std::max(0.0, std::abs(g(j)) - lambda);
    } else {
      v = std::abs(g(j) + lambda * (theta(j) > 0 ? 1.0 : -1.0));
    }
    rep.max_violation = std::max(rep.max_violation, v);
  }
  rep.satisfied = rep.max_violation <= tolerance;
  return rep;
}

double lambda_max(const DesignProblem& problem) {
  problem.validate();
  Vector theta = Vector::Zero(problem.cols());
  bool any_unpenalized = false;
  for (Index j = 0; j < problem.cols(); ++j) any_unpenalized |= !problem.penalized(j);
  if (any_unpenalized) {
    // Fit the unpenalized block alone; an infinite penalty pins the rest at 0.
    const double inf = std::numeric_limits<double>::infinity();
    theta = fit_penalized(problem, inf).coefficients;
  }
  const Vector g = loss_gradient(problem, theta);
  double lmax = 0.0;
  for (Index j = 0; j < problem.cols(); ++j) {
    if (problem.penalized(j)) lmax = std::max(lmax, std::abs(g(j)));
  }
  // Slack so the solver's own rounding cannot leave a 1e-16 coefficient behind.
  return lmax * (1.0 + 1e-9);
}

std::vector<double> lambda_path(const DesignProblem& problem, int n_lambdas, double ratio) {
  if (n_lambdas < 2) throw Error(ErrorKind::InvalidArgument, "lambda_path needs n_lambdas >= 2");
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "lambda_path ratio must lie in (0, 1)");
  }
  const double lmax = lambda_max(problem);
  std::vector<double> path(static_cast<std::size_t>(n_lambdas));
  const double step = std::log(ratio) / static_cast<double>(n_lambdas - 1);
  for (int k = 0; k < n_lambdas; ++k) {
    path[static_cast<std::size_t>(k)] = k == n_lambdas - 1 ? ratio * lmax : lmax * std::exp(step * k);
  }
  path.front() = lmax;
  return path;
}

std::vector<SparseFit> fit_path(const DesignProblem& problem, const std::vector<double>& path) {
  std::vector<SparseFit> fits;
  fits.reserve(path.size());
  Vector warm = Vector::Zero(problem.cols());
  if (problem.loss == LossKind::Squared) {
    problem.validate();
    const Gram gram = weighted_gram(problem.design, problem.weights, problem.response,
                                    1.0 / static_cast<double>(problem.rows()));
    for (double lambda : path) {
      fits.push_back(lasso_on_gram(problem, gram, lambda, warm, {}));
      warm = fits.back().coefficients;
    }
    return fits;
  }
  for (double lambda : path) {
    fits.push_back(fit_penalized(problem, lambda, warm));
    warm = fits.back().coefficients;
  }
  return fits;
}

std::vector<int> random_folds(Index n, int folds, RngStream& rng) {
  if (folds < 2 || n < folds) {
    throw Error(ErrorKind::InvalidArgument, "random_folds needs folds >= 2 and n >= folds");
  }
  const std::vector<Index> perm = rng.permutation(n);
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) {
    fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = static_cast<int>(k % folds);
  }
  return fold;
}

CvResult cross_validate_lambda(const DesignProblem& problem, int folds,
                               const std::vector<double>& path, RngStream& rng) {
  problem.validate();
  if (path.empty()) throw Error(ErrorKind::InvalidArgument, "empty lambda path");
  CvResult out;
  out.path = path;
  out.cv_loss.assign(path.size(), 0.0);
  if (path.size() == 1) {
    out.lambda = path.front();
    return out;
  }
  const std::vector<int> fold = random_folds(problem.rows(), folds, rng);
  const std::vector<bool> pen = penalty_mask(problem);

  Gram total;
  if (problem.loss == LossKind::Squared) {
    total = weighted_gram(problem.design, problem.weights, problem.response, 1.0);
  }

  for (int k = 0; k < folds; ++k) {
    std::vector<Index> train, held;
    for (Index i = 0; i < problem.rows(); ++i) {
      (fold[static_cast<std::size_t>(i)] == k ? held : train).push_back(i);
    }
    const DesignProblem held_out = subset_rows(problem, held);
    const double n_held = static_cast<double>(held.size());

    if (problem.loss == LossKind::Squared) {
      // Training Gram = total - held-out Gram; held-out loss from its own Gram.
      const Gram g_held = weighted_gram(held_out.design, held_out.weights, held_out.response, 1.0);
      const double yy_held =
          (held_out.weights.array() * held_out.response.array().square()).sum();
      Gram g_train{total.G - g_held.G, total.b - g_held.b};
      const double scale = 1.0 / static_cast<double>(train.size());
      g_train.G *= scale;
      g_train.b *= scale;
      Vector theta = Vector::Zero(problem.cols());
      for (std::size_t l = 0; l < path.size(); ++l) {
        coordinate_descent(g_train.G, g_train.b, pen, path[l], theta, kSquaredTol, 10000);
        const double sse = yy_held - 2.0 * theta.dot(g_held.b) + theta.dot(g_held.G * theta);
        out.cv_loss[l] += 0.5 * std::max(sse, 0.0) / n_held / folds;
      }
    } else {
      const DesignProblem training = subset_rows(problem, train);
      Vector theta = Vector::Zero(problem.cols());
      for (std::size_t l = 0; l < path.size(); ++l) {
        double loss = std::numeric_limits<double>::infinity();
        try {
          theta = fit_penalized(training, path[l], theta).coefficients;
          loss = empirical_loss(held_out, theta);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::Diverged) throw;
          theta.setZero();
        }
        out.cv_loss[l] += loss / folds;
      }
    }
  }
  out.selected = select_min_largest_lambda(out.cv_loss);
  out.lambda = path[static_cast<std::size_t>(out.selected)];
  return out;
}

BicResult select_lambda_bic(const DesignProblem& problem, const std::vector<double>& path) {
  problem.validate();
  if (path.empty()) throw Error(ErrorKind::InvalidArgument, "empty lambda path");
  BicResult out;
  std::vector<SparseFit> fits;
  Vector warm = Vector::Zero(problem.cols());
  const double n = static_cast<double>(problem.rows());
  for (double lambda : path) {
    try {
      fits.push_back(fit_penalized(problem, lambda, warm));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Diverged) throw;
      break;
    }
    warm = fits.back().coefficients;
    out.path.push_back(lambda);
    const Vector& c = fits.back().coefficients;
    const auto df = static_cast<double>((c.array() != 0.0).count());
    out.bic.push_back(2.0 * n * empirical_loss(problem, c) + std::log(n) * df);
  }
  if (fits.empty()) throw Error(ErrorKind::Diverged, "every lambda on the BIC path diverged");
  out.selected = select_min_largest_lambda(out.bic);
  out.lambda = out.path[static_cast<std::size_t>(out.selected)];
  out.fit = fits[static_cast<std::size_t>(out.selected)];
  return out;
}

SparseFit fit_with_rule(const DesignProblem& problem, const LambdaRule& rule, RngStream& rng) {
  switch (rule.kind) {
    case LambdaRule::Kind::Fixed: return fit_penalized(problem, rule.value);
    case LambdaRule::Kind::Bic:
      return select_lambda_bic(problem, lambda_path(problem, rule.n_lambdas, rule.ratio)).fit;
    case LambdaRule::Kind::CrossValidation: {
      const std::vector<double> path = lambda_path(problem, rule.n_lambdas, rule.ratio);
      const CvResult cv = cross_validate_lambda(problem, rule.folds, path, rng);
      // Refit along the path down to the selected lambda so the final fit is
      // warm-started exactly like the cross-validation fits.
      std::vector<double> head(path.begin(), path.begin() + cv.selected + 1);
      return fit_path(problem, head).back();
    }
  }
  throw Error(ErrorKind::InvalidArgument, "unknown lambda rule");
}

}  // namespace ddrkit
