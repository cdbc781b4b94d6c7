#pragma once

#include <array>
#include <span>
#include <vector>

#include "rankloss/network.hpp"

namespace rankloss {

// Fallback noise bound when probing is off or could not certify a value.
inline constexpr double kDefaultEpsilon = 1e-3;
// A probe passes when the gap between measured and first-order predicted
// loss stays below this.
inline constexpr double kDefaultProbeTolerance = 1e-4;
// Candidate bounds, probed cumulatively from tight to loose.
inline constexpr std::array<double, 5> kProbeGrid{1e-4, 5e-4, 1e-3, 1e-2, 1e-1};

enum class ProbeAggregation { dataset_mean, per_sample_max };

// max over both signs of |loss(w +- delta) - (loss(w) +- <grad, delta>)|.
// dataset_mean probes the mean loss with the mean gradient; per_sample_max
// takes the worst sample with its own gradient. Pass a precomputed snapshot
// to amortize the gradient over many probes (dataset_mean only).
double neighborhood_discrepancy(const Network& net, const Dataset& data,
                                int layer_index, const Matrix& delta,
                                ProbeAggregation agg = ProbeAggregation::dataset_mean,
                                const GradientSnapshot* snapshot = nullptr);

// Probes the layer's own truncation noises at every compressive rank and
// returns the largest grid bound whose bucket of noises (max-abs <= bound)
// all keep the first-order gap under tolerance. Throws
// CalibrationUnavailableError when no bucket is populated or none passes.
double select_epsilon(const Network& net, const Dataset& data, int layer_index,
                      double tolerance = kDefaultProbeTolerance,
                      std::span<const double> grid = kProbeGrid);

// first = <grad, delta>, residual = measured loss change - first. The ratio
// of the two is the headroom the linear model has at this noise level.
struct SecondOrderDiagnostic {
  double first_order = 0.0;
  double residual = 0.0;
};

SecondOrderDiagnostic second_order_diagnostic(
    const Network& net, const Dataset& data, int layer_index,
    const Matrix& delta, const GradientSnapshot* snapshot = nullptr);

struct GradientStats {
  double fraction_exact_zero = 0.0;
  double fraction_below = 0.0;  // |g| < threshold
  double threshold = 1e-3;
};

GradientStats gradient_stats(const GradientSnapshot& snapshot,
                             double threshold = 1e-3);

struct EpsilonProfile {
  std::vector<double> per_layer_eps;
  std::vector<bool> fallback;  // true where probing failed and the default won
  double probe_tolerance = kDefaultProbeTolerance;
  std::vector<double> probe_grid;
};

// select_epsilon per layer; layers that cannot be certified fall back to
// kDefaultEpsilon with the flag set.
EpsilonProfile calibrate(const Network& net, const Dataset& data,
                         double tolerance = kDefaultProbeTolerance,
                         std::span<const double> grid = kProbeGrid);

// One row per (layer, populated grid bound): the worst-discrepancy truncation
// noise inside the bucket, with its first-order and residual split.
struct ProbeRecord {
  int layer = 0;
  double eps_bound = 0.0;
  double max_abs_noise = 0.0;
  double discrepancy = 0.0;
  double first_order = 0.0;
  double residual = 0.0;
};

std::vector<ProbeRecord> probe_network(const Network& net, const Dataset& data,
                                       const std::vector<int>& layer_indices,
                                       std::span<const double> grid = kProbeGrid);

}  // namespace rankloss
