#pragma once

#include <cstdint>
#include <vector>

#include "ddrkit/numkit.hpp"

namespace ddrkit {

/// Observed rows (T, T*Y, X). Outcomes of rows with T = 0 are masked: the
/// stored value is arbitrary (NaN by convention) and only `outcome(i)` with
/// T = 1 may read it.
class ObservedDataset {
 public:
  ObservedDataset() = default;
  ObservedDataset(std::vector<std::uint8_t> observed, Vector outcomes, Matrix covariates);

  Index rows() const { return x_.rows(); }
  Index dims() const { return x_.cols(); }

  bool observed(Index i) const { return t_[static_cast<std::size_t>(i)] != 0; }
  double treatment(Index i) const { return observed(i) ? 1.0 : 0.0; }
  /// Throws InvalidArgument when row i is masked.
  double outcome(Index i) const;
  const Matrix& covariates() const { return x_; }
  auto covariate_row(Index i) const { return x_.row(i); }

  const std::vector<std::uint8_t>& indicators() const { return t_; }
  /// Raw stored outcomes including masked entries; for serialization only.
  const Vector& stored_outcomes() const { return y_; }

  Index complete_count() const;
  std::vector<Index> complete_rows() const;
  ObservedDataset subset(const std::vector<Index>& rows) const;

 private:
  std::vector<std::uint8_t> t_;
  Vector y_;
  Matrix x_;
};

}  // namespace ddrkit
