#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ddrkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class ErrorKind {
  NotPositiveDefinite,
  MaxIterations,
  Diverged,
  DegenerateTreatment,
  InsufficientData,
  InsufficientCompleteCases,
  DegenerateIndex,
  DegenerateScores,
  Singular,
  DegenerateColumn,
  InvalidArgument,
  ConfigError,
  MalformedRecords,
  Io,
};

const char* to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (and the
/// experiment harness) can tag it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Lower-triangular L with L * L^T = sigma. Throws NotPositiveDefinite when a
/// pivot falls to 1e-12 or below, or when sigma is not symmetric.
Matrix cholesky(const Matrix& sigma);

/// Seeded, splittable random stream.
///
/// The state is xoshiro256** seeded through splitmix64 from (seed, stream).
/// Equal (seed, stream) pairs give bitwise-identical sequences on every
/// platform, because no std:: distribution is involved.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// Independent child stream keyed by `tag`; the parent is not advanced.
  RngStream child(std::uint64_t tag) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer on [0, bound), bound > 0, without modulo bias.
  std::uint64_t below(std::uint64_t bound);
  double normal();
  bool bernoulli(double p);

  /// Uniformly random permutation of 0..n-1 (Fisher-Yates).
  std::vector<Index> permutation(Index n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// chol * z with z i.i.d. standard normal drawn from rng.
Vector gaussian_vector(RngStream& rng, const Matrix& chol);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Matrix& symmetric);
double max_eigenvalue(const Matrix& symmetric);

/// Standard normal quantile, accurate to about 1e-9 for p in (0, 1).
double normal_quantile(double p);
double normal_cdf(double x);

inline double expit(double v) {
  if (v >= 0) {
    const double e = std::exp(-v);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(v);
  return e / (1.0 + e);
}

/// log(1 + exp(v)) without overflow.
inline double log1pexp(double v) {
  return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

}  // namespace ddrkit
