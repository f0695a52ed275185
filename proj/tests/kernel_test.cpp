#include <doctest.h>

#include <cmath>

#include "ddrkit/kernel.hpp"

using namespace ddrkit;

namespace {

struct Instance {
  Vector w;
  Vector y;
  double h;
};

Instance random_instance(RngStream& rng) {
  const Index n = 5 + static_cast<Index>(rng.below(40));
  Instance in{Vector(n), Vector(n), 0.05 + 2.0 * rng.uniform()};
  for (Index i = 0; i < n; ++i) {
    in.w(i) = 3.0 * rng.normal();
    in.y(i) = rng.normal() * 10.0 + 4.0;
  }
  return in;
}

// Direct ratio form, written independently of the class.
double nw(const Vector& w, const Vector& y, double h, double at, Index skip = -1) {
  double num = 0, den = 0;
  for (Index i = 0; i < w.size(); ++i) {
    if (i == skip) continue;
    const double u = (w(i) - at) / h;
    const double k = std::exp(-0.5 * u * u);
    num += k * y(i);
    den += k;
  }
  return num / den;
}

}  // namespace

TEST_CASE("gaussian kernel") {
  CHECK(gaussian_kernel(0.0) == doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)));
  CHECK(gaussian_kernel(1.3) == doctest::Approx(gaussian_kernel(-1.3)));
}

TEST_CASE("smoother matches the ratio formula") {
  RngStream rng(1, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const Instance in = random_instance(rng);
    const KernelSmoother s(in.w, in.y, in.h);
    const double at = rng.normal();
    CHECK(s.smooth_at(at) == doctest::Approx(nw(in.w, in.y, in.h, at)).epsilon(1e-10));
    CHECK(s.smooth_loo(2).value ==
          doctest::Approx(nw(in.w, in.y, in.h, in.w(2), 2)).epsilon(1e-10));
  }
}

TEST_CASE("smoother stays in the convex hull and is shift invariant") {
  RngStream rng(2, 0);
  for (int rep = 0; rep < 100; ++rep) {
    const Instance in = random_instance(rng);
    const KernelSmoother s(in.w, in.y, in.h);
    const double at = 4.0 * rng.normal();
    const SmoothValue v = s.smooth(at);
    CHECK(v.value >= in.y.minCoeff() - 1e-12);
    CHECK(v.value <= in.y.maxCoeff() + 1e-12);

    const double c = 5.0 * rng.normal();
    const KernelSmoother shifted(in.w.array() + c, in.y, in.h);
    const SmoothValue vs = shifted.smooth(at + c);
    CHECK(vs.fallback == v.fallback);
    CHECK(vs.value == doctest::Approx(v.value).epsilon(1e-8));

    const KernelSmoother moved(in.w, in.y.array() + c, in.h);
    CHECK(moved.smooth_at(at) == doctest::Approx(v.value + c).epsilon(1e-8));
  }
}

TEST_CASE("constant responses are reproduced") {
  Vector w(4), y = Vector::Constant(4, 2.5);
  w << -1, 0, 0.5, 3;
  const KernelSmoother s(w, y, 0.4);
  for (double at : {-2.0, 0.1, 2.0}) CHECK(s.smooth_at(at) == doctest::Approx(2.5));
}

TEST_CASE("far from the data the smoother falls back to the mean") {
  Vector w(3), y(3);
  w << 0, 1, 2;
  y << 1, 2, 6;
  const KernelSmoother s(w, y, 0.1);
  const SmoothValue v = s.smooth(1000.0);
  CHECK(v.fallback);
  CHECK(v.value == doctest::Approx(3.0));
  CHECK_FALSE(s.smooth(1.0).fallback);
}

TEST_CASE("rule-of-thumb bandwidth") {
  Vector w(5);
  w << 1, 2, 3, 4, 5;
  const double sd = std::sqrt(2.5);
  CHECK(bandwidth_rot(w) == doctest::Approx(1.06 * sd * std::pow(5.0, -0.2)));
  CHECK_THROWS_AS(bandwidth_rot(Vector::Constant(5, 1.0)), Error);
  try {
    bandwidth_rot(Vector::Constant(1, 1.0));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateScores);
  }
}

TEST_CASE("least-squares cross-validation") {
  RngStream rng(3, 0);
  const Index n = 150;
  Vector w(n), y(n);
  for (Index i = 0; i < n; ++i) {
    w(i) = rng.normal();
    y(i) = std::sin(2.0 * w(i)) + 0.2 * rng.normal();
  }
  const auto grid = lscv_grid(w);
  REQUIRE(grid.size() == 30);
  CHECK(grid.front() == doctest::Approx(bandwidth_rot(w) / 10));
  CHECK(grid.back() == doctest::Approx(bandwidth_rot(w) * 10));
  const double h = bandwidth_lscv(w, y, grid);
  // Brute-force oracle over the same grid using the independent formula.
  double best = 1e300, best_h = 0;
  for (double g : grid) {
    double loss = 0;
    for (Index i = 0; i < n; ++i) loss += std::pow(y(i) - nw(w, y, g, w(i), i), 2);
    if (loss < best * (1 - 1e-12)) {
      best = loss;
      best_h = g;
    }
  }
  CHECK(h == doctest::Approx(best_h));

  // Constant responses give identical losses; ties go to the smallest h.
  const Vector flat = Vector::Constant(n, 1.0);
  CHECK(bandwidth_lscv(w, flat, {0.5, 0.2, 0.9}) == 0.2);
}

TEST_CASE("LSCV loss on a smooth curve has an interior minimum") {
  RngStream rng(4, 0);
  const Index n = 500;
  Vector w(n), y(n);
  for (Index i = 0; i < n; ++i) {
    w(i) = rng.normal();
    y(i) = std::sin(2.0 * w(i)) + 0.3 * rng.normal();
  }
  const auto grid = lscv_grid(w);
  const double h = bandwidth_lscv(w, y, grid);
  CHECK(h > grid.front());
  CHECK(h < grid.back());
  CHECK(lscv_loss(w, y, h) < lscv_loss(w, y, grid.front()));
  CHECK(lscv_loss(w, y, h) < lscv_loss(w, y, grid.back()));
}
