#include <doctest.h>

#include "ddrkit/solvers.hpp"

using namespace ddrkit;

namespace {

DesignProblem random_problem(RngStream& rng, Index n, Index p, LossKind loss = LossKind::Squared) {
  Matrix x(n, p + 1);
  x.col(0).setOnes();
  for (Index i = 0; i < n; ++i)
    for (Index j = 1; j <= p; ++j) x(i, j) = rng.normal();
  Vector beta = Vector::Zero(p + 1);
  beta(0) = 0.3;
  for (Index j = 1; j <= std::min<Index>(p, 4); ++j) beta(j) = (j % 2 ? 1.0 : -0.7);
  const Vector eta = x * beta;
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    y(i) = loss == LossKind::Squared ? eta(i) + rng.normal() : (rng.bernoulli(expit(eta(i))) ? 1.0 : 0.0);
  }
  return make_problem(std::move(x), std::move(y), loss, true);
}

// Unpenalized least squares via the normal equations.
Vector ols(const DesignProblem& p) {
  const Matrix xw = p.design.array().colwise() * p.weights.array();
  return (xw.transpose() * p.design).ldlt().solve(xw.transpose() * p.response);
}

// Unpenalized logistic regression via Newton's method.
Vector logistic_newton(const DesignProblem& p) {
  Vector theta = Vector::Zero(p.cols());
  for (int it = 0; it < 50; ++it) {
    const Vector eta = p.design * theta;
    Vector mu(eta.size()), w(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      mu(i) = expit(eta(i));
      w(i) = mu(i) * (1 - mu(i));
    }
    const Vector grad = p.design.transpose() * (mu - p.response);
    const Matrix hess = p.design.transpose() * w.asDiagonal() * p.design;
    theta -= hess.ldlt().solve(grad);
  }
  return theta;
}

}  // namespace

TEST_CASE("soft threshold") {
  CHECK(soft_threshold(3.0, 1.0) == 2.0);
  CHECK(soft_threshold(-3.0, 1.0) == -2.0);
  CHECK(soft_threshold(0.5, 1.0) == 0.0);
  CHECK(soft_threshold(-1.0, 1.0) == 0.0);
}

TEST_CASE("lasso at lambda 0 equals least squares") {
  RngStream rng(1, 0);
  const DesignProblem p = random_problem(rng, 200, 8);
  const SparseFit fit = fit_lasso(p, 0.0);
  CHECK(fit.converged);
  CHECK((fit.coefficients - ols(p)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("lasso on an orthonormal design is soft thresholding") {
  RngStream rng(2, 0);
  const Index n = 100, p = 5;
  Matrix z(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j) z(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(z);
  const Matrix q = qr.householderQ() * Matrix::Identity(n, p) * std::sqrt(static_cast<double>(n));
  Vector y(n);
  for (Index i = 0; i < n; ++i) y(i) = 2.0 * q(i, 0) - 0.4 * q(i, 1) + rng.normal();
  const DesignProblem prob = make_problem(q, y, LossKind::Squared, false);
  const double lambda = 0.3;
  const SparseFit fit = fit_lasso(prob, lambda);
  const Vector z_score = q.transpose() * y / static_cast<double>(n);
  for (Index j = 0; j < p; ++j) {
    CHECK(fit.coefficients(j) == doctest::Approx(soft_threshold(z_score(j), lambda)).epsilon(1e-9));
  }
}

TEST_CASE("lambda_max zeroes the penalized block") {
  RngStream rng(3, 0);
  for (LossKind loss : {LossKind::Squared, LossKind::Logistic}) {
    const DesignProblem p = random_problem(rng, 300, 10, loss);
    const double lmax = lambda_max(p);
    const SparseFit at = fit_penalized(p, lmax);
    CHECK(at.coefficients.tail(10).cwiseAbs().maxCoeff() == 0.0);
    CHECK(check_kkt(p, at.coefficients, lmax).satisfied);
    const SparseFit below = fit_penalized(p, 0.9 * lmax);
    CHECK(below.coefficients.tail(10).cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("converged fits satisfy KKT") {
  RngStream rng(4, 0);
  for (int rep = 0; rep < 10; ++rep) {
    for (LossKind loss : {LossKind::Squared, LossKind::Logistic}) {
      const DesignProblem p = random_problem(rng, 150 + 20 * rep, 12, loss);
      for (double frac : {0.5, 0.1, 0.02}) {
        const double lambda = frac * lambda_max(p);
        const SparseFit fit = fit_penalized(p, lambda);
        REQUIRE(fit.converged);
        const KktReport kkt = check_kkt(p, fit.coefficients, lambda);
        CHECK(kkt.satisfied);
      }
    }
  }
}

TEST_CASE("coordinate descent objective never increases") {
  RngStream rng(5, 0);
  const DesignProblem p = random_problem(rng, 120, 20);
  const double lambda = 0.05;
  double last = std::numeric_limits<double>::infinity();
  bool monotone = true;
  SolverOptions opts;
  opts.on_sweep = [&](int, const Vector& theta) {
    const double obj = penalized_objective(p, theta, lambda);
    if (obj > last + 1e-12) monotone = false;
    last = obj;
  };
  fit_lasso(p, lambda, std::nullopt, opts);
  CHECK(monotone);
}

TEST_CASE("weights rescale the penalty") {
  RngStream rng(6, 0);
  DesignProblem p = random_problem(rng, 150, 6);
  const SparseFit a = fit_lasso(p, 0.1);
  p.weights *= 3.0;
  const SparseFit b = fit_lasso(p, 0.3);
  CHECK((a.coefficients - b.coefficients).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("warm and cold starts agree") {
  RngStream rng(7, 0);
  const DesignProblem p = random_problem(rng, 200, 15);
  const SparseFit cold = fit_lasso(p, 0.02);
  Vector init = Vector::Constant(p.cols(), 0.5);
  const SparseFit warm = fit_lasso(p, 0.02, init);
  CHECK((cold.coefficients - warm.coefficients).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("Gram form matches the design form") {
  RngStream rng(8, 0);
  const DesignProblem p = random_problem(rng, 150, 7);
  const double n = static_cast<double>(p.rows());
  const Matrix g = p.design.transpose() * p.design / n;
  const Vector b = p.design.transpose() * p.response / n;
  std::vector<bool> pen(static_cast<std::size_t>(p.cols()), true);
  pen[0] = false;
  const SparseFit a = fit_lasso(p, 0.07);
  const SparseFit c = fit_lasso_gram(g, b, 0.07, pen);
  CHECK((a.coefficients - c.coefficients).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("logistic lasso at lambda 0 equals maximum likelihood") {
  RngStream rng(9, 0);
  const DesignProblem p = random_problem(rng, 400, 3, LossKind::Logistic);
  const SparseFit fit = fit_logistic_lasso(p, 0.0);
  CHECK(fit.converged);
  CHECK((fit.coefficients - logistic_newton(p)).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("logistic loss accepts real responses") {
  RngStream rng(10, 0);
  DesignProblem p = random_problem(rng, 200, 4, LossKind::Logistic);
  for (Index i = 0; i < p.rows(); ++i) p.response(i) = 0.25 + 0.5 * p.response(i);
  const SparseFit fit = fit_logistic_lasso(p, 0.01);
  CHECK(fit.converged);
  CHECK(check_kkt(p, fit.coefficients, 0.01).satisfied);
}

TEST_CASE("separable logistic data diverges") {
  Matrix x(6, 2);
  x << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
  Vector y(6);
  y << 0, 0, 0, 1, 1, 1;
  const DesignProblem p = make_problem(x, y, LossKind::Logistic, true);
  try {
    fit_logistic_lasso(p, 0.0);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Diverged);
  }
}

TEST_CASE("lambda path is geometric from lambda_max") {
  RngStream rng(11, 0);
  const DesignProblem p = random_problem(rng, 100, 5);
  const auto path = lambda_path(p, 50, 1e-3);
  REQUIRE(path.size() == 50);
  CHECK(path.front() == doctest::Approx(lambda_max(p)));
  CHECK(path.back() == doctest::Approx(1e-3 * lambda_max(p)));
  for (std::size_t k = 1; k < path.size(); ++k) {
    CHECK(path[k] / path[k - 1] == doctest::Approx(path[1] / path[0]));
  }
}

TEST_CASE("cross-validation ties go to the largest lambda") {
  // Every penalized coefficient is zero at every lambda, so all CV losses tie.
  const Index n = 40;
  Matrix x(n, 3);
  x.col(0).setOnes();
  RngStream rng(12, 0);
  for (Index i = 0; i < n; ++i) {
    x(i, 1) = rng.normal();
    x(i, 2) = rng.normal();
  }
  const DesignProblem p = make_problem(x, Vector::Constant(n, 2.0), LossKind::Squared, true);
  const std::vector<double> path{1.0, 0.5, 0.1};
  const CvResult cv = cross_validate_lambda(p, 5, path, rng);
  CHECK(cv.selected == 0);
  CHECK(cv.lambda == 1.0);
}

TEST_CASE("cross-validation is deterministic and picks a reasonable lambda") {
  RngStream base(13, 0);
  const DesignProblem p = random_problem(base, 300, 20);
  const auto path = lambda_path(p, 30, 1e-3);
  RngStream r1(99, 0), r2(99, 0);
  const CvResult a = cross_validate_lambda(p, 10, path, r1);
  const CvResult b = cross_validate_lambda(p, 10, path, r2);
  CHECK(a.selected == b.selected);
  CHECK(a.cv_loss == b.cv_loss);
  CHECK(a.selected > 0);
  CHECK(a.selected < 29);
}

TEST_CASE("random folds are balanced") {
  RngStream rng(14, 0);
  const auto folds = random_folds(103, 10, rng);
  std::vector<int> count(10, 0);
  for (int f : folds) ++count[static_cast<std::size_t>(f)];
  for (int c : count) CHECK((c == 10 || c == 11));
}

TEST_CASE("BIC selection returns a fit from the path") {
  RngStream rng(15, 0);
  const DesignProblem p = random_problem(rng, 400, 10, LossKind::Logistic);
  const auto path = lambda_path(p, 20, 1e-2);
  const BicResult r = select_lambda_bic(p, path);
  CHECK(r.lambda == path[static_cast<std::size_t>(r.selected)]);
  const SparseFit direct = fit_penalized(p, r.lambda);
  CHECK(check_kkt(p, r.fit.coefficients, r.lambda).satisfied);
  CHECK((direct.coefficients - r.fit.coefficients).cwiseAbs().maxCoeff() < 1e-4);
  const double n = 400;
  for (std::size_t k = 0; k < r.bic.size(); ++k) CHECK(r.bic[static_cast<std::size_t>(r.selected)] <= r.bic[k] + 1e-9 * n);
}

TEST_CASE("invalid problems are rejected") {
  DesignProblem p = make_problem(Matrix::Ones(4, 2), Vector::Ones(3));
  CHECK_THROWS_AS(p.validate(), Error);
  DesignProblem q = make_problem(Matrix::Ones(4, 2), Vector::Ones(4));
  q.weights(0) = -1.0;
  CHECK_THROWS_AS(q.validate(), Error);
  DesignProblem r = make_problem(Matrix::Ones(4, 2), Vector::Ones(4));
  CHECK_THROWS_AS(fit_lasso(r, -1.0), Error);
  r.loss = LossKind::Poisson;
  CHECK_THROWS_AS(fit_penalized(r, 0.1), Error);
}
