#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "ddrkit/ddr.hpp"

namespace ddrkit {

enum class DgpKind { LinearLinear, QuadQuad, SimSim };
enum class CovKind { Identity, Ar1, Cs };

const char* to_string(DgpKind kind);
const char* to_string(CovKind kind);
DgpKind parse_dgp(const std::string& name);
CovKind parse_cov(const std::string& name);

struct DgpSpec {
  DgpKind dgp = DgpKind::LinearLinear;
  Index p = 50;
  CovKind cov = CovKind::Identity;
  double rho = 0.2;
  std::uint64_t seed = 1;
  Truncation truncation;
};

struct DgpParams {
  double alpha0 = 0.5;
  Vector alpha;
  Vector alpha_star;
  double gamma0 = 1.0;
  Vector gamma;
  Vector gamma_star;
  double c_t = 0.2;
  double c_y = 0.3;
  /// False when p is not one of the published dimensions (50, 500).
  bool paper_preset = true;
};

/// Identity, AR1 (rho^|i-j|) or compound symmetry (rho 11' + (1-rho) I).
Matrix build_covariance(CovKind kind, Index p, double rho);

/// Published coefficient patterns for p = 50 and p = 500; any other p >= 10
/// reuses the p = 50 pattern, zero padded.
DgpParams default_params(const DgpSpec& spec);

/// Untruncated propensity and the regression function E[Y | X].
double true_propensity_raw(const DgpSpec& spec, const DgpParams& params,
                           const Eigen::Ref<const Eigen::RowVectorXd>& x);
double true_outcome_mean(const DgpSpec& spec, const DgpParams& params,
                         const Eigen::Ref<const Eigen::RowVectorXd>& x);

PropensityModel true_propensity_model(const DgpSpec& spec, const DgpParams& params);
OutcomeModel true_outcome_model(const DgpSpec& spec, const DgpParams& params);

/// Quantities an estimator must never see.
struct HiddenTruth {
  Vector y_full;
  /// Truncated propensity used for the draw of T.
  Vector pi;
  Vector m;
  /// Rows whose propensity was clamped.
  Index truncated = 0;
};

struct SimulatedData {
  ObservedDataset observed;
  HiddenTruth truth;
};

/// X ~ N(0, Sigma), eps ~ N(0, 1), T ~ Bernoulli(clamp(pi(X))). Masked
/// outcomes are stored as NaN.
SimulatedData generate(const DgpSpec& spec, const DgpParams& params, Index n, RngStream& rng);

/// Monte-Carlo linear projection of Y on (1, X) from m full-data draws,
/// accumulated in chunks. Draws use RngStream(spec.seed, kTheta0Stream).
Vector compute_theta0(const DgpSpec& spec, const DgpParams& params, Index m = 200000);
inline constexpr std::uint64_t kTheta0Stream = 0x7468657461ULL;

/// Closed form of the same projection under Gaussian X: the slope block is
/// gamma and the intercept absorbs the even-moment terms.
Vector population_theta0(const DgpSpec& spec, const DgpParams& params);

/// theta0 cache file (text):
///   ddrkit-theta0 v1
///   p <p> dgp <name> cov <name> rho <rho> seed <seed> m <m>
///   <d values, one per line, %.17g>
void write_theta0_cache(const std::string& path, const DgpSpec& spec, Index m, const Vector& theta);
/// Returns nothing when the file is missing or its header does not match.
std::optional<Vector> read_theta0_cache(const std::string& path, const DgpSpec& spec, Index m);
/// Reads the cache when it matches, otherwise computes and writes it.
Vector cached_theta0(const std::string& path, const DgpSpec& spec, const DgpParams& params,
                     Index m = 200000);

/// DDR with the true pi and m substituted for the nuisance predictions.
SparseFit fit_oracle(const ObservedDataset& data, const HiddenTruth& truth,
                     const DdrOptions& options, RngStream& rng);
/// Lasso on the fully observed outcomes.
SparseFit fit_full(const ObservedDataset& data, const HiddenTruth& truth,
                   const DdrOptions& options, RngStream& rng);
/// Lasso on the complete cases only.
SparseFit fit_complete_case(const ObservedDataset& data, const DdrOptions& options,
                            RngStream& rng);

struct Comparators {
  SparseFit oracle;
  SparseFit full;
  SparseFit cc;
};

Comparators comparator_fits(const ObservedDataset& data, const HiddenTruth& truth,
                            const DdrOptions& options, RngStream& rng);

}  // namespace ddrkit
