#include "rankloss/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "rankloss/parallel.hpp"

namespace rankloss {

const char* to_string(Mode m) { return m == Mode::lossless ? "lossless" : "compact"; }

const char* to_string(EpsSource s) {
  return s == EpsSource::calibrated ? "calibrated" : "fixed";
}

const char* to_string(GradientRefresh r) {
  return r == GradientRefresh::once ? "once" : "per-layer";
}

Mode mode_from_string(const std::string& s) {
  if (s == "lossless") return Mode::lossless;
  if (s == "compact") return Mode::compact;
  throw InvalidInputError("unknown mode '" + s + "'");
}

GradientRefresh gradient_refresh_from_string(const std::string& s) {
  if (s == "once") return GradientRefresh::once;
  if (s == "per-layer") return GradientRefresh::per_layer;
  throw InvalidInputError("unknown gradient refresh '" + s + "'");
}

namespace {

void search_checks(const Network& net, const GradientSnapshot& grad,
                   int layer_index, double eps) {
  net.validate();
  if (layer_index < 0 || layer_index >= static_cast<int>(net.layers.size()))
    throw InvalidInputError("layer search: layer index out of range");
  if (grad.layer_grads.size() != net.layers.size())
    throw InvalidInputError("layer search: snapshot layer count mismatch");
  if (!grad.layer_grads[layer_index].same_shape(net.layers[layer_index].weight))
    throw InvalidInputError("layer search: gradient shape mismatch");
  if (net.layers[layer_index].decomposed)
    throw StateError("layer search: layer " + std::to_string(layer_index) +
                     " is already decomposed");
  if (!(eps > 0.0) || !std::isfinite(eps))
    throw InvalidInputError("layer search: eps must be positive");
}

// One projected gradient step: move the reconstruction along -grad as far as
// the remaining room in the eps box allows, re-truncate to the same rank, and
// keep the result only if it still satisfies the box.
FactorPair refine_pair(const FactorPair& f, const Matrix& w, const Matrix& g,
                       double eps) {
  const NoiseStats ns = noise(w, f);
  const double gmax = g.max_abs();
  if (gmax == 0.0) return f;
  const double room = eps - ns.max_abs;
  if (room <= 0.0) return f;
  const double step = std::min(room, 0.1 * eps);
  Matrix target = add(w, ns.delta);  // the current reconstruction l r^T
  const double scale_by = step / gmax;
  for (std::size_t e = 0; e < target.data.size(); ++e)
    target.data[e] -= scale_by * g.data[e];
  const FactorPair refined = truncate(svd(target), f.rank);
  if (noise(w, refined).max_abs > eps) return f;
  return refined;
}

bool improving(const ConstraintVerdict& v) {
  return v.predicted_delta < 0.0 || v.exact;
}

CandidateEntry make_entry(int layer_index, const FactorPair& f,
                          const ConstraintVerdict& v, double measured) {
  CandidateEntry e;
  e.layer_index = layer_index;
  e.rank = f.rank;
  e.factors = f;
  e.predicted_delta = v.predicted_delta;
  e.measured_loss = measured;
  e.verdict = v;
  return e;
}

}  // namespace

std::optional<CandidateEntry> lossless_layer_search(
    const Network& net, const Dataset& data, const GradientSnapshot& grad,
    int layer_index, double eps, double base_loss,
    const CompressionConfig& config, SearchDiagnostics* diag) {
  search_checks(net, grad, layer_index, eps);
  if (!std::isfinite(base_loss))
    throw InvalidInputError("lossless_layer_search: base loss not finite");

  const Matrix& w = net.layers[layer_index].weight;
  const Matrix& g = grad.layer_grads[layer_index];
  const int kmax = max_compressive_rank(w.rows, w.cols);
  SearchDiagnostics d;
  d.any_compressive_rank = kmax >= 1;
  if (kmax < 1) {
    if (diag) *diag = d;
    return std::nullopt;
  }

  const SvdResult dec = svd(w);
  struct Eval {
    FactorPair f;
    ConstraintVerdict v;
    bool admissible = false;
    double measured = 0.0;
  };
  std::vector<Eval> evals(kmax);
  const int nt = thread_cap();
#pragma omp parallel for num_threads(nt) schedule(dynamic)
  for (int k = 1; k <= kmax; ++k) {
    Eval e;
    e.f = truncate(dec, k);
    if (config.refine_factors) e.f = refine_pair(e.f, w, g, eps);
    e.v = check(w, e.f, g, eps);
    e.admissible = e.v.compressive && e.v.lossless && improving(e.v);
    if (e.admissible)
      e.measured =
          dataset_loss(with_layer_weight(net, layer_index, e.f.product()), data);
    evals[k - 1] = std::move(e);
  }

  std::optional<CandidateEntry> best;
  for (int k = 1; k <= kmax; ++k) {
    const Eval& e = evals[k - 1];
    if (!e.v.lossless) continue;
    d.any_lossless = true;
    if (!e.admissible) continue;
    d.any_improving = true;
    // Never hand back a worse model; exact swaps only move rounding dust.
    if (e.measured > base_loss && !e.v.exact) continue;
    d.any_measured_ok = true;
    if (!best) {
      best = make_entry(layer_index, e.f, e.v, e.measured);
      continue;
    }
    const double key = config.rank_by_measured ? e.measured : e.v.predicted_delta;
    const double best_key =
        config.rank_by_measured ? best->measured_loss : best->predicted_delta;
    if (key < best_key) best = make_entry(layer_index, e.f, e.v, e.measured);
  }
  if (diag) *diag = d;
  return best;
}

std::optional<CandidateEntry> compact_layer_search(
    const Network& net, const Dataset& data, const GradientSnapshot& grad,
    int layer_index, double eps, const CompressionConfig& config,
    SearchDiagnostics* diag) {
  search_checks(net, grad, layer_index, eps);

  const Matrix& w = net.layers[layer_index].weight;
  const Matrix& g = grad.layer_grads[layer_index];
  const int kmax = max_compressive_rank(w.rows, w.cols);
  SearchDiagnostics d;
  d.any_compressive_rank = kmax >= 1;
  if (kmax < 1) {
    if (diag) *diag = d;
    return std::nullopt;
  }

  const SvdResult dec = svd(w);
  struct Info {
    FactorPair f;
    ConstraintVerdict v;
  };
  std::vector<std::optional<Info>> cache(kmax + 1);
  auto info_at = [&](int k) -> const Info& {
    if (!cache[k]) {
      Info in;
      in.f = truncate(dec, k);
      if (config.refine_factors) in.f = refine_pair(in.f, w, g, eps);
      in.v = check(w, in.f, g, eps);
      cache[k] = std::move(in);
    }
    return *cache[k];
  };
  auto noise_ok = [&](int k) { return info_at(k).v.lossless; };

  auto linear_scan = [&]() -> std::optional<int> {
    for (int k = 1; k <= kmax; ++k) {
      if (!noise_ok(k)) continue;
      d.any_lossless = true;
      if (!improving(info_at(k).v)) continue;
      d.any_improving = true;
      return k;
    }
    return std::nullopt;
  };

  std::optional<int> chosen;
  if (!noise_ok(kmax)) {
    // Even the largest compressive rank violates the box, so the noise tail
    // never settles under eps; bisection has nothing to bisect.
    chosen = linear_scan();
  } else {
    d.any_lossless = true;
    int lo = 1, hi = kmax;
    while (lo < hi) {
      const int mid = lo + (hi - lo) / 2;
      if (noise_ok(mid))
        hi = mid;
      else
        lo = mid + 1;
    }
    const int kb = lo;
    // Bisection assumed the noise bound flips once. Verify a log-width window
    // below the boundary; any pass there means the assumption was wrong.
    int width = 0;
    while ((1 << width) < kmax) ++width;
    bool monotone = true;
    for (int k = std::max(1, kb - width); k < kb; ++k)
      if (noise_ok(k)) {
        monotone = false;
        break;
      }
    if (monotone) {
      for (int k = kb; k <= kmax; ++k) {
        if (!noise_ok(k)) {  // an island above the boundary: same problem
          monotone = false;
          break;
        }
        if (improving(info_at(k).v)) {
          d.any_improving = true;
          chosen = k;
          break;
        }
      }
    }
    if (!monotone) chosen = linear_scan();
  }

  if (diag) *diag = d;
  if (!chosen) return std::nullopt;
  const Info& in = info_at(*chosen);
  const double measured =
      dataset_loss(with_layer_weight(net, layer_index, in.f.product()), data);
  return make_entry(layer_index, in.f, in.v, measured);
}

std::pair<Network, CompressionReport> compress_network(
    const Network& net, const Dataset& data, const CompressionConfig& config,
    const Dataset* holdout, const EpsilonProfile* profile) {
  net.validate();
  const auto t0 = std::chrono::steady_clock::now();

  const std::size_t nl = net.layers.size();
  std::vector<double> eps(nl, config.fixed_eps);
  std::vector<bool> fallback(nl, false);
  if (config.eps_source == EpsSource::calibrated) {
    EpsilonProfile local;
    const EpsilonProfile* prof = profile;
    if (!prof) {
      local = calibrate(net, data, config.probe_tolerance);
      prof = &local;
    }
    if (prof->per_layer_eps.size() != nl)
      throw InvalidInputError("compress_network: epsilon profile layer count mismatch");
    for (std::size_t l = 0; l < nl; ++l) {
      eps[l] = prof->per_layer_eps[l];
      fallback[l] = l < prof->fallback.size() && prof->fallback[l];
    }
  } else if (!(config.fixed_eps > 0.0) || !std::isfinite(config.fixed_eps)) {
    throw InvalidInputError("compress_network: fixed eps must be positive");
  }

  CompressionReport report;
  report.config.mode = to_string(config.mode);
  report.config.eps_source = to_string(config.eps_source);
  report.config.fixed_eps = config.fixed_eps;
  report.config.probe_tolerance = config.probe_tolerance;
  report.config.gradient_refresh = to_string(config.gradient_refresh);
  report.config.rank_by_measured = config.rank_by_measured;
  report.config.refine_factors = config.refine_factors;
  report.config.seed = config.seed;

  Network work = net;
  report.calibration_before = evaluate(work, data);
  if (holdout) report.holdout_before = evaluate(work, *holdout);

  GradientSnapshot snap = gradients(work, data);
  double current = report.calibration_before.loss;

  for (std::size_t l = 0; l < nl; ++l) {
    const Layer& layer = work.layers[l];
    LayerReportEntry entry;
    entry.layer = static_cast<int>(l);
    entry.rows = layer.weight.rows;
    entry.cols = layer.weight.cols;
    entry.eps_used = eps[l];
    entry.eps_fallback = fallback[l];
    entry.loss_before = current;
    entry.params_before =
        layer.decomposed
            ? layer.factors->param_count()
            : static_cast<std::int64_t>(layer.weight.rows) * layer.weight.cols;

    if (layer.decomposed) {
      entry.skip_reason = SkipReason::already_decomposed;
      entry.params_after = entry.params_before;
      entry.loss_after = current;
      report.layers.push_back(entry);
      continue;
    }

    if (config.gradient_refresh == GradientRefresh::per_layer)
      snap = gradients(work, data);

    SearchDiagnostics diag;
    std::optional<CandidateEntry> cand;
    if (config.mode == Mode::lossless)
      cand = lossless_layer_search(work, data, snap, static_cast<int>(l), eps[l],
                                   current, config, &diag);
    else
      cand = compact_layer_search(work, data, snap, static_cast<int>(l), eps[l],
                                  config, &diag);

    if (cand) {
      work = apply_factorization(work, static_cast<int>(l), cand->factors);
      current = dataset_loss(work, data);
      entry.factorized = true;
      entry.rank = cand->rank;
      entry.max_abs_noise = cand->verdict.max_abs_noise;
      entry.fro_noise = cand->verdict.fro_noise;
      entry.predicted_delta = cand->predicted_delta;
      entry.params_after = cand->factors.param_count();
    } else {
      if (!diag.any_compressive_rank)
        entry.skip_reason = SkipReason::no_compressive_rank;
      else if (!diag.any_lossless)
        entry.skip_reason = SkipReason::lossless_violated;
      else if (!diag.any_improving)
        entry.skip_reason = SkipReason::non_negative_inner_product;
      else
        entry.skip_reason = SkipReason::measured_loss_increase;
      entry.params_after = entry.params_before;
    }
    entry.loss_after = current;
    report.layers.push_back(entry);
  }

  report.totals.original_params = net.weight_param_count();
  report.totals.compressed_params = work.weight_param_count();
  report.totals.drop_rate =
      drop_rate(report.totals.original_params, report.totals.compressed_params);
  for (const auto& entry : report.layers)
    if (entry.factorized) ++report.totals.layers_factorized;

  report.calibration_after = evaluate(work, data);
  if (holdout) report.holdout_after = evaluate(work, *holdout);

  report.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(work), std::move(report)};
}

}  // namespace rankloss
