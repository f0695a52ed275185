#pragma once

#include <vector>

#include "ddrkit/numkit.hpp"

namespace ddrkit {

/// Gaussian kernel density at u.
double gaussian_kernel(double u);

struct SmoothValue {
  double value = 0.0;
  /// True when the kernel density estimate fell below 1e-12 and the response
  /// mean was returned instead.
  bool fallback = false;
};

/// Ratio-form Nadaraya-Watson smoother over one-dimensional scores.
class KernelSmoother {
 public:
  KernelSmoother(Vector scores, Vector responses, double bandwidth);

  SmoothValue smooth(double w) const;
  double smooth_at(double w) const { return smooth(w).value; }

  /// Leave-one-out prediction at training point i.
  SmoothValue smooth_loo(Index i) const;

  const Vector& scores() const { return scores_; }
  const Vector& responses() const { return responses_; }
  double bandwidth() const { return h_; }
  double response_mean() const { return mean_; }

 private:
  Vector scores_;
  Vector responses_;
  double h_;
  double mean_;
};

/// 1.06 * sd(scores) * n^(-1/5), floored at 1e-6. Throws DegenerateScores
/// when fewer than two distinct scores exist.
double bandwidth_rot(const Vector& scores);

/// Leave-one-out squared prediction error of the smoother with bandwidth h.
double lscv_loss(const Vector& scores, const Vector& responses, double h);

/// Bandwidth on `grid` minimizing lscv_loss; ties go to the smallest h.
double bandwidth_lscv(const Vector& scores, const Vector& responses,
                      const std::vector<double>& grid);

/// `count` log-spaced bandwidths covering [h_rot / 10, 10 h_rot].
std::vector<double> lscv_grid(const Vector& scores, int count = 30);

}  // namespace ddrkit
