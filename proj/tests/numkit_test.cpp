#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "ddrkit/numkit.hpp"

using namespace ddrkit;

namespace {

Matrix random_spd(RngStream& rng, Index d) {
  Matrix a(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) a(i, j) = rng.normal();
  return a * a.transpose() + Matrix::Identity(d, d);
}

}  // namespace

TEST_CASE("cholesky reconstructs its input") {
  RngStream rng(7, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix s = random_spd(rng, 1 + rep % 8);
    const Matrix l = cholesky(s);
    CHECK((l * l.transpose() - s).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(l.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("cholesky rejects indefinite and asymmetric matrices") {
  Matrix s(2, 2);
  s << 1, 2, 2, 1;
  CHECK_THROWS_AS(cholesky(s), Error);
  try {
    cholesky(s);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NotPositiveDefinite);
  }
  Matrix a(2, 2);
  a << 2, 0.5, 0.1, 2;
  CHECK_THROWS_AS(cholesky(a), Error);
  CHECK_THROWS_AS(cholesky(Matrix::Zero(3, 3)), Error);
}

TEST_CASE("rng streams are deterministic and distinct") {
  RngStream a(42, 3), b(42, 3), c(42, 4), d(43, 3);
  std::vector<std::uint64_t> va, vb, vc, vd;
  for (int i = 0; i < 100; ++i) {
    va.push_back(a.next_u64());
    vb.push_back(b.next_u64());
    vc.push_back(c.next_u64());
    vd.push_back(d.next_u64());
  }
  CHECK(va == vb);
  CHECK(va != vc);
  CHECK(va != vd);

  RngStream p(1, 1);
  const RngStream k1 = p.child(5), k2 = p.child(5), k3 = p.child(6);
  RngStream x1 = k1, x2 = k2, x3 = k3;
  CHECK(x1.next_u64() == x2.next_u64());
  CHECK(x1.next_u64() != x3.next_u64());
  // Deriving a child does not advance the parent.
  RngStream q(1, 1);
  CHECK(p.next_u64() == q.next_u64());
}

TEST_CASE("rng draw helpers") {
  RngStream rng(9, 0);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);

  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(rng.below(7) < 7u);
  }
  int hits = 0;
  for (int i = 0; i < 100000; ++i) hits += rng.bernoulli(0.3);
  CHECK(std::abs(hits / 100000.0 - 0.3) < 0.01);

  const auto perm = rng.permutation(50);
  std::vector<Index> sorted(perm.begin(), perm.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<Index> expect(50);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(sorted == expect);
}

TEST_CASE("gaussian_vector has the requested covariance") {
  Matrix s(2, 2);
  s << 1.0, 0.6, 0.6, 2.0;
  const Matrix l = cholesky(s);
  RngStream rng(11, 0);
  Matrix acc = Matrix::Zero(2, 2);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Vector v = gaussian_vector(rng, l);
    acc += v * v.transpose();
  }
  acc /= n;
  CHECK((acc - s).cwiseAbs().maxCoeff() < 0.03);
}

TEST_CASE("normal quantile and cdf") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  for (double p : {1e-10, 1e-4, 0.01, 0.2, 0.4, 0.6, 0.9, 0.999, 1 - 1e-9}) {
    CHECK(std::abs(normal_cdf(normal_quantile(p)) - p) < 1e-9 * std::max(1.0, p / (1 - p)));
    CHECK(normal_quantile(p) == doctest::Approx(-normal_quantile(1 - p)).epsilon(1e-8));
  }
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5));
}

TEST_CASE("eigenvalue helpers and logistic helpers") {
  Matrix d = Vector::LinSpaced(4, 1.0, 4.0).asDiagonal();
  CHECK(min_eigenvalue(d) == doctest::Approx(1.0));
  CHECK(max_eigenvalue(d) == doctest::Approx(4.0));
  CHECK(expit(0.0) == doctest::Approx(0.5));
  CHECK(expit(800.0) == 1.0);
  CHECK(expit(-800.0) >= 0.0);
  CHECK(std::isfinite(log1pexp(800.0)));
  CHECK(log1pexp(800.0) == doctest::Approx(800.0));
  CHECK(log1pexp(0.0) == doctest::Approx(std::log(2.0)));
}
