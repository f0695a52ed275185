#include "ddrkit/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ddrkit {

namespace {
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kDensityFloor = 1e-12;
}  // namespace

double gaussian_kernel(double u) { return kInvSqrt2Pi * std::exp(-0.5 * u * u); }

KernelSmoother::KernelSmoother(Vector scores, Vector responses, double bandwidth)
    : scores_(std::move(scores)), responses_(std::move(responses)), h_(bandwidth) {
  if (scores_.size() < 1 || scores_.size() != responses_.size()) {
    throw Error(ErrorKind::InvalidArgument, "smoother needs equal-length, nonempty inputs");
  }
  if (!(h_ > 0.0)) throw Error(ErrorKind::InvalidArgument, "bandwidth must be positive");
  mean_ = responses_.mean();
}

SmoothValue KernelSmoother::smooth(double w) const {
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < scores_.size(); ++i) {
    const double k = gaussian_kernel((scores_(i) - w) / h_);
    num += responses_(i) * k;
    den += k;
  }
  const double scale = 1.0 / (static_cast<double>(scores_.size()) * h_);
  if (den * scale < kDensityFloor) return {mean_, true};
  return {num / den, false};
}

SmoothValue KernelSmoother::smooth_loo(Index i) const {
  double num = 0.0, den = 0.0;
  for (Index k = 0; k < scores_.size(); ++k) {
    if (k == i) continue;
    const double kv = gaussian_kernel((scores_(k) - scores_(i)) / h_);
    num += responses_(k) * kv;
    den += kv;
  }
  const auto m = std::max<Index>(scores_.size() - 1, 1);
  if (den / (static_cast<double>(m) * h_) < kDensityFloor) return {mean_, true};
  return {num / den, false};
}

double bandwidth_rot(const Vector& scores) {
  const Index n = scores.size();
  if (n < 2 || scores.maxCoeff() == scores.minCoeff()) {
    throw Error(ErrorKind::DegenerateScores, "need at least two distinct scores");
  }
  const double mean = scores.mean();
  const double sd = std::sqrt((scores.array() - mean).square().sum() / static_cast<double>(n - 1));
  return std::max(1.06 * sd * std::pow(static_cast<double>(n), -0.2), 1e-6);
}

double lscv_loss(const Vector& scores, const Vector& responses, double h) {
  const KernelSmoother s(scores, responses, h);
  double total = 0.0;
  for (Index i = 0; i < scores.size(); ++i) {
    const double r = responses(i) - s.smooth_loo(i).value;
    total += r * r;
  }
  return total / static_cast<double>(scores.size());
}

double bandwidth_lscv(const Vector& scores, const Vector& responses,
                      const std::vector<double>& grid) {
  if (grid.empty()) throw Error(ErrorKind::InvalidArgument, "empty bandwidth grid");
  if (grid.size() == 1) return grid.front();
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  double best_h = sorted.front();
  double best = std::numeric_limits<double>::infinity();
  for (double h : sorted) {
    const double loss = lscv_loss(scores, responses, h);
    if (!std::isfinite(best) || loss < best - 1e-12 * std::max(1.0, std::abs(best))) {
      best = loss;
      best_h = h;
    }
  }
  return best_h;
}

std::vector<double> lscv_grid(const Vector& scores, int count) {
  const double h = bandwidth_rot(scores);
  std::vector<double> grid(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double t = count == 1 ? 0.0 : -1.0 + 2.0 * k / (count - 1.0);
    grid[static_cast<std::size_t>(k)] = h * std::pow(10.0, t);
  }
  return grid;
}

}  // namespace ddrkit
