#include "ddrkit/data.hpp"

namespace ddrkit {

ObservedDataset::ObservedDataset(std::vector<std::uint8_t> observed, Vector outcomes,
                                 Matrix covariates)
    : t_(std::move(observed)), y_(std::move(outcomes)), x_(std::move(covariates)) {
  if (static_cast<Index>(t_.size()) != x_.rows() || y_.size() != x_.rows()) {
    throw Error(ErrorKind::InvalidArgument, "dataset columns have different lengths");
  }
  if (x_.rows() < 2 || x_.cols() < 1) {
    throw Error(ErrorKind::InvalidArgument, "dataset needs n >= 2 and p >= 1");
  }
  for (auto& t : t_) t = t != 0 ? 1 : 0;
}

double ObservedDataset::outcome(Index i) const {
  if (!observed(i)) {
    throw Error(ErrorKind::InvalidArgument, "outcome of a masked row was read");
  }
  return y_(i);
}

Index ObservedDataset::complete_count() const {
  Index c = 0;
  for (auto t : t_) c += t;
  return c;
}

std::vector<Index> ObservedDataset::complete_rows() const {
  std::vector<Index> out;
  for (Index i = 0; i < rows(); ++i) {
    if (observed(i)) out.push_back(i);
  }
  return out;
}

ObservedDataset ObservedDataset::subset(const std::vector<Index>& rows) const {
  const auto m = static_cast<Index>(rows.size());
  std::vector<std::uint8_t> t(rows.size());
  Vector y(m);
  Matrix x(m, x_.cols());
  for (Index r = 0; r < m; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    t[static_cast<std::size_t>(r)] = t_[static_cast<std::size_t>(i)];
    y(r) = y_(i);
    x.row(r) = x_.row(i);
  }
  ObservedDataset out;
  out.t_ = std::move(t);
  out.y_ = std::move(y);
  out.x_ = std::move(x);
  return out;
}

}  // namespace ddrkit
