#include "rankloss/calibrator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rankloss/constraints.hpp"

namespace rankloss {

namespace {

void check_layer_index(const Network& net, int layer_index, const char* who) {
  if (layer_index < 0 || layer_index >= static_cast<int>(net.layers.size()))
    throw InvalidInputError(std::string(who) + ": layer index out of range");
}

std::vector<double> sorted_grid(std::span<const double> grid) {
  if (grid.empty()) throw InvalidInputError("probe grid: empty");
  std::vector<double> g(grid.begin(), grid.end());
  std::sort(g.begin(), g.end());
  if (!(g.front() > 0.0)) throw InvalidInputError("probe grid: bounds must be positive");
  return g;
}

// One probed truncation noise with everything later stages want to know.
struct DeltaProbe {
  int rank = 0;
  double max_abs = 0.0;
  double discrepancy = 0.0;
  double first_order = 0.0;
  double residual = 0.0;
};

// Probes all compressive-rank truncation noises of one layer whose max-abs
// noise is within `limit`. base/snapshot are shared by the caller.
std::vector<DeltaProbe> probe_layer_deltas(const Network& net,
                                           const Dataset& data, int layer_index,
                                           double base,
                                           const GradientSnapshot& snapshot,
                                           double limit) {
  const Matrix& w = net.layers[layer_index].weight;
  const int kmax = max_compressive_rank(w.rows, w.cols);
  std::vector<DeltaProbe> probes;
  if (kmax < 1) return probes;
  const SvdResult dec = svd(w);
  for (int k = 1; k <= kmax; ++k) {
    const NoiseStats ns = noise(w, truncate(dec, k));
    if (ns.max_abs == 0.0 || ns.max_abs > limit) continue;
    DeltaProbe p;
    p.rank = k;
    p.max_abs = ns.max_abs;
    p.first_order = predicted_loss_delta(snapshot.layer_grads[layer_index], ns.delta);
    const double up = dataset_loss(perturb(net, layer_index, ns.delta), data);
    const double down =
        dataset_loss(perturb(net, layer_index, scale(ns.delta, -1.0)), data);
    p.residual = (up - base) - p.first_order;
    p.discrepancy = std::max(std::abs(up - (base + p.first_order)),
                             std::abs(down - (base - p.first_order)));
    probes.push_back(p);
  }
  return probes;
}

}  // namespace

double neighborhood_discrepancy(const Network& net, const Dataset& data,
                                int layer_index, const Matrix& delta,
                                ProbeAggregation agg,
                                const GradientSnapshot* snapshot) {
  check_layer_index(net, layer_index, "neighborhood_discrepancy");
  if (!delta.same_shape(net.layers[layer_index].weight))
    throw InvalidInputError("neighborhood_discrepancy: delta shape mismatch");
  require_finite(delta, "neighborhood_discrepancy delta");

  const Network up_net = perturb(net, layer_index, delta);
  const Network down_net = perturb(net, layer_index, scale(delta, -1.0));

  if (agg == ProbeAggregation::dataset_mean) {
    GradientSnapshot local;
    if (!snapshot) {
      local = gradients(net, data);
      snapshot = &local;
    }
    const double pred =
        predicted_loss_delta(snapshot->layer_grads[layer_index], delta);
    const double base = dataset_loss(net, data);
    const double up = dataset_loss(up_net, data);
    const double down = dataset_loss(down_net, data);
    return std::max(std::abs(up - (base + pred)), std::abs(down - (base - pred)));
  }

  // Worst sample, each against its own gradient.
  double worst = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const GradientSnapshot gi = sample_gradients(net, data, i);
    const double pred = predicted_loss_delta(gi.layer_grads[layer_index], delta);
    const double base = sample_loss(net, data, i);
    const double up = sample_loss(up_net, data, i);
    const double down = sample_loss(down_net, data, i);
    worst = std::max(worst, std::max(std::abs(up - (base + pred)),
                                     std::abs(down - (base - pred))));
  }
  return worst;
}

double select_epsilon(const Network& net, const Dataset& data, int layer_index,
                      double tolerance, std::span<const double> grid) {
  check_layer_index(net, layer_index, "select_epsilon");
  if (!(tolerance > 0.0) || !std::isfinite(tolerance))
    throw InvalidInputError("select_epsilon: tolerance must be positive");
  const std::vector<double> bounds = sorted_grid(grid);

  const Matrix& w = net.layers[layer_index].weight;
  if (max_compressive_rank(w.rows, w.cols) < 1)
    throw CalibrationUnavailableError(
        "select_epsilon: layer " + std::to_string(layer_index) +
        " has no compressive rank to probe");

  const GradientSnapshot snapshot = gradients(net, data);
  const double base = dataset_loss(net, data);
  const std::vector<DeltaProbe> probes =
      probe_layer_deltas(net, data, layer_index, base, snapshot, bounds.back());
  if (probes.empty())
    throw CalibrationUnavailableError(
        "select_epsilon: no truncation noise of layer " +
        std::to_string(layer_index) + " falls inside the probe grid");

  // Buckets are cumulative, so the worst discrepancy grows with the bound and
  // the passing prefix is contiguous.
  double selected = 0.0;
  for (double bound : bounds) {
    double worst = -1.0;
    for (const auto& p : probes)
      if (p.max_abs <= bound) worst = std::max(worst, p.discrepancy);
    if (worst < 0.0) continue;
    if (worst < tolerance) selected = std::max(selected, bound);
  }
  if (selected == 0.0)
    throw CalibrationUnavailableError(
        "select_epsilon: no grid bound meets the probe tolerance for layer " +
        std::to_string(layer_index));
  return selected;
}

SecondOrderDiagnostic second_order_diagnostic(const Network& net,
                                              const Dataset& data,
                                              int layer_index,
                                              const Matrix& delta,
                                              const GradientSnapshot* snapshot) {
  check_layer_index(net, layer_index, "second_order_diagnostic");
  if (!delta.same_shape(net.layers[layer_index].weight))
    throw InvalidInputError("second_order_diagnostic: delta shape mismatch");
  require_finite(delta, "second_order_diagnostic delta");
  GradientSnapshot local;
  if (!snapshot) {
    local = gradients(net, data);
    snapshot = &local;
  }
  SecondOrderDiagnostic d;
  d.first_order = predicted_loss_delta(snapshot->layer_grads[layer_index], delta);
  const double base = dataset_loss(net, data);
  const double up = dataset_loss(perturb(net, layer_index, delta), data);
  d.residual = (up - base) - d.first_order;
  return d;
}

GradientStats gradient_stats(const GradientSnapshot& snapshot, double threshold) {
  if (!(threshold > 0.0))
    throw InvalidInputError("gradient_stats: threshold must be positive");
  GradientStats st;
  st.threshold = threshold;
  std::size_t total = 0, zeros = 0, below = 0;
  for (const auto& g : snapshot.layer_grads) {
    for (double v : g.data) {
      ++total;
      if (v == 0.0) ++zeros;
      if (std::abs(v) < threshold) ++below;
    }
  }
  if (total == 0) throw InvalidInputError("gradient_stats: empty snapshot");
  st.fraction_exact_zero = static_cast<double>(zeros) / static_cast<double>(total);
  st.fraction_below = static_cast<double>(below) / static_cast<double>(total);
  return st;
}

EpsilonProfile calibrate(const Network& net, const Dataset& data,
                         double tolerance, std::span<const double> grid) {
  net.validate();
  EpsilonProfile profile;
  profile.probe_tolerance = tolerance;
  profile.probe_grid = sorted_grid(grid);
  profile.per_layer_eps.resize(net.layers.size(), kDefaultEpsilon);
  profile.fallback.resize(net.layers.size(), false);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    try {
      profile.per_layer_eps[l] =
          select_epsilon(net, data, static_cast<int>(l), tolerance, grid);
    } catch (const CalibrationUnavailableError&) {
      profile.per_layer_eps[l] = kDefaultEpsilon;
      profile.fallback[l] = true;
    }
  }
  return profile;
}

std::vector<ProbeRecord> probe_network(const Network& net, const Dataset& data,
                                       const std::vector<int>& layer_indices,
                                       std::span<const double> grid) {
  net.validate();
  const std::vector<double> bounds = sorted_grid(grid);
  for (int l : layer_indices) check_layer_index(net, l, "probe_network");

  const GradientSnapshot snapshot = gradients(net, data);
  const double base = dataset_loss(net, data);

  std::vector<ProbeRecord> records;
  for (int l : layer_indices) {
    const std::vector<DeltaProbe> probes =
        probe_layer_deltas(net, data, l, base, snapshot, bounds.back());
    for (double bound : bounds) {
      const DeltaProbe* worst = nullptr;
      for (const auto& p : probes) {
        if (p.max_abs > bound) continue;
        if (!worst || p.discrepancy > worst->discrepancy) worst = &p;
      }
      if (!worst) continue;
      ProbeRecord r;
      r.layer = l;
      r.eps_bound = bound;
      r.max_abs_noise = worst->max_abs;
      r.discrepancy = worst->discrepancy;
      r.first_order = worst->first_order;
      r.residual = worst->residual;
      records.push_back(r);
    }
  }
  return records;
}

}  // namespace rankloss
