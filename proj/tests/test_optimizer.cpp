#include <doctest.h>

#include <cmath>
#include <optional>
#include <random>

#include <rankloss/constraints.hpp>
#include <rankloss/errors.hpp>
#include <rankloss/network.hpp>
#include <rankloss/optimizer.hpp>
#include <rankloss/serialize.hpp>

using namespace rankloss;

namespace {

Matrix random_matrix(int rows, int cols, std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Matrix a(rows, cols);
  for (auto& v : a.data) v = dist(gen);
  return a;
}

// Random orthogonal-ish frame with a geometric spectrum glued in: the kind
// of weight the whole pipeline is about.
Matrix spectral_matrix(int rows, int cols, double decay, std::uint32_t seed) {
  SvdResult d = svd(random_matrix(rows, cols, seed));
  Matrix w(rows, cols);
  double s = 1.0;
  for (std::size_t t = 0; t < d.s.size(); ++t, s *= decay)
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) w(i, j) += s * d.u(i, t) * d.v(j, t);
  return w;
}

Network single_layer_net(Matrix w) {
  Layer l;
  l.weight = std::move(w);
  l.bias.assign(l.weight.rows, 0.0);
  l.activation = Activation::identity;
  Network net;
  net.loss_kind = LossKind::mean_squared_error;
  net.layers.push_back(std::move(l));
  return net;
}

Dataset random_regression(int in_dim, int out_dim, int count,
                          std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Dataset data;
  for (int i = 0; i < count; ++i) {
    std::vector<double> x(in_dim), t(out_dim);
    for (auto& v : x) v = dist(gen);
    for (auto& v : t) v = dist(gen);
    data.inputs.push_back(std::move(x));
    data.targets.push_back(std::move(t));
  }
  return data;
}

// Inputs = canonical basis, targets = c * (w e_j): keeps the loss an exact
// quadratic in the truncation noise with a gradient proportional to w.
Dataset scaled_image_data(const Matrix& w, double c) {
  Dataset data;
  for (int j = 0; j < w.cols; ++j) {
    std::vector<double> x(w.cols, 0.0);
    x[j] = 1.0;
    std::vector<double> t(w.rows);
    for (int i = 0; i < w.rows; ++i) t[i] = c * w(i, j);
    data.inputs.push_back(std::move(x));
    data.targets.push_back(std::move(t));
  }
  return data;
}

Dataset slice(const Dataset& d, std::size_t lo, std::size_t hi) {
  Dataset out;
  for (std::size_t i = lo; i < hi; ++i) {
    out.inputs.push_back(d.inputs[i]);
    if (!d.labels.empty()) out.labels.push_back(d.labels[i]);
    if (!d.targets.empty()) out.targets.push_back(d.targets[i]);
  }
  return out;
}

// The admission rule, restated from scratch on public primitives; the
// searches must never disagree with a plain scan of this.
bool admissible(const ConstraintVerdict& v) {
  return v.compressive && v.lossless && (v.predicted_delta < 0.0 || v.exact);
}

struct ScanResult {
  std::optional<int> minimal_rank;           // first admissible
  std::optional<int> best_measured_rank;     // argmin measured, survivors only
};

ScanResult exhaustive_scan(const Network& net, const Dataset& data,
                           const GradientSnapshot& grad, int layer,
                           double eps, double base_loss) {
  const Matrix& w = net.layers[layer].weight;
  const SvdResult dec = svd(w);
  const int kmax = max_compressive_rank(w.rows, w.cols);
  ScanResult out;
  double best = 0.0;
  for (int k = 1; k <= kmax; ++k) {
    const FactorPair f = truncate(dec, k);
    const ConstraintVerdict v = check(w, f, grad.layer_grads[layer], eps);
    if (!admissible(v)) continue;
    if (!out.minimal_rank) out.minimal_rank = k;
    const double measured =
        dataset_loss(with_layer_weight(net, layer, f.product()), data);
    if (measured > base_loss && !v.exact) continue;
    if (!out.best_measured_rank || measured < best) {
      out.best_measured_rank = k;
      best = measured;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("an exactly low-rank layer compresses at its true rank") {
  // 5x4 of rank 2 (kmax is also 2). Targets at 0.9 of the layer's image:
  // rank 1 predicts an improvement but measures worse (filtered), rank 2 is
  // an exact swap and wins.
  Matrix l2 = random_matrix(5, 2, 40);
  Matrix r2 = random_matrix(4, 2, 41);
  Matrix w = matmul(l2, transpose(r2));
  Network net = single_layer_net(w);
  Dataset data = scaled_image_data(w, 0.9);
  const double base = dataset_loss(net, data);
  const GradientSnapshot grad = gradients(net, data);

  SearchDiagnostics diag;
  auto got = lossless_layer_search(net, data, grad, 0, 1e6, base, {}, &diag);
  REQUIRE(got.has_value());
  CHECK(got->rank == 2);
  CHECK(got->verdict.exact);
  CHECK(diag.any_improving);
  CHECK(got->factors.param_count() < 20);
}

TEST_CASE("compact mode takes the smallest admissible rank, not the best") {
  Matrix l1 = random_matrix(5, 1, 50);
  Matrix r1 = random_matrix(4, 1, 51);
  Matrix w = matmul(l1, transpose(r1));  // exactly rank 1
  Network net = single_layer_net(w);
  Dataset data = scaled_image_data(w, 0.9);
  const GradientSnapshot grad = gradients(net, data);

  auto got = compact_layer_search(net, data, grad, 0, 1e-6, {});
  REQUIRE(got.has_value());
  CHECK(got->rank == 1);
  CHECK(got->verdict.exact);
}

TEST_CASE("zero gradient and full-rank noise admit nothing") {
  Matrix w = random_matrix(8, 6, 60);
  Network net = single_layer_net(w);
  Dataset data = scaled_image_data(w, 1.0);  // targets == image, loss == 0
  const double base = dataset_loss(net, data);
  CHECK(base == 0.0);
  const GradientSnapshot grad = gradients(net, data);
  for (const Matrix& g : grad.layer_grads) CHECK(g.max_abs() == 0.0);

  SearchDiagnostics diag;
  auto got = lossless_layer_search(net, data, grad, 0, 1e6, base, {}, &diag);
  CHECK(!got.has_value());
  CHECK(diag.any_compressive_rank);
  CHECK(diag.any_lossless);       // eps is huge
  CHECK(!diag.any_improving);     // predicted is exactly zero everywhere

  auto compact = compact_layer_search(net, data, grad, 0, 1e6, {});
  CHECK(!compact.has_value());
}

TEST_CASE("searches equal an exhaustive scan across seeded layers") {
  struct Shape {
    int rows, cols;
  };
  const Shape shapes[] = {{64, 48}, {48, 64}, {32, 32}, {24, 36}, {16, 12},
                          {8, 6},   {40, 20}, {64, 32}, {12, 16}, {30, 30}};
  const double eps_grid[] = {1e-3, 1e-2, 0.05, 0.1};
  int checked = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const Shape sh = shapes[inst % 10];
    const double eps = eps_grid[inst % 4];
    const std::uint32_t seed = 700 + static_cast<std::uint32_t>(inst);
    Network net =
        single_layer_net(spectral_matrix(sh.rows, sh.cols, 0.65, seed));
    Dataset data = random_regression(sh.cols, sh.rows, 25, seed + 1);
    const double base = dataset_loss(net, data);
    const GradientSnapshot grad = gradients(net, data);
    const ScanResult oracle = exhaustive_scan(net, data, grad, 0, eps, base);

    auto compact = compact_layer_search(net, data, grad, 0, eps, {});
    auto lossless = lossless_layer_search(net, data, grad, 0, eps, base, {});

    CAPTURE(inst);
    CAPTURE(sh.rows);
    CAPTURE(sh.cols);
    CAPTURE(eps);
    CHECK(compact.has_value() == oracle.minimal_rank.has_value());
    if (compact && oracle.minimal_rank) CHECK(compact->rank == *oracle.minimal_rank);
    CHECK(lossless.has_value() == oracle.best_measured_rank.has_value());
    if (lossless && oracle.best_measured_rank)
      CHECK(lossless->rank == *oracle.best_measured_rank);
    if (compact) ++checked;
  }
  CHECK(checked >= 8);  // the grid must actually exercise non-empty searches
}

TEST_CASE("ranking by prediction picks the steepest admissible candidate") {
  Network net = single_layer_net(spectral_matrix(32, 24, 0.6, 81));
  Dataset data = random_regression(24, 32, 25, 82);
  const double base = dataset_loss(net, data);
  const GradientSnapshot grad = gradients(net, data);

  CompressionConfig by_pred;
  by_pred.rank_by_measured = false;
  auto got = lossless_layer_search(net, data, grad, 0, 0.05, base, by_pred);
  if (got) {
    // no admissible candidate may predict lower than the winner
    const Matrix& w = net.layers[0].weight;
    const SvdResult dec = svd(w);
    for (int k = 1; k <= max_compressive_rank(32, 24); ++k) {
      const ConstraintVerdict v =
          check(w, truncate(dec, k), grad.layer_grads[0], 0.05);
      if (!admissible(v)) continue;
      CHECK(got->predicted_delta <= v.predicted_delta + 1e-15);
    }
  }
}

TEST_CASE("search input validation") {
  Network net = single_layer_net(random_matrix(6, 5, 90));
  Dataset data = random_regression(5, 6, 10, 91);
  const double base = dataset_loss(net, data);
  const GradientSnapshot grad = gradients(net, data);

  CHECK_THROWS_AS(lossless_layer_search(net, data, grad, 0, 0.0, base, {}),
                  InvalidInputError);
  CHECK_THROWS_AS(lossless_layer_search(net, data, grad, 1, 1e-3, base, {}),
                  InvalidInputError);
  CHECK_THROWS_AS(compact_layer_search(net, data, grad, -1, 1e-3, {}),
                  InvalidInputError);

  GradientSnapshot wrong;
  wrong.layer_grads.push_back(Matrix(2, 2));
  CHECK_THROWS_AS(compact_layer_search(net, data, wrong, 0, 1e-3, {}),
                  InvalidInputError);

  Network swapped = apply_factorization(
      net, 0, truncate(svd(net.layers[0].weight), 2));
  CHECK_THROWS_AS(lossless_layer_search(swapped, data, grad, 0, 1e-3, base, {}),
                  StateError);
}

TEST_CASE("compress_network on a trained fixture: lossless semantics") {
  // one draw, split into a training half and a disjoint calibration half
  const Dataset all = make_blobs(3, 800, 64, 1);
  const Dataset train = slice(all, 0, 400);
  const Dataset calib = slice(all, 400, 800);
  Network net = train_toy({64, 64, 64, 3}, train, 20, 0.05, 1).net;

  CompressionConfig cfg;
  cfg.mode = Mode::lossless;
  cfg.eps_source = EpsSource::calibrated;
  auto [compressed, report] = compress_network(net, calib, cfg);

  CHECK(report.totals.layers_factorized >= 1);
  CHECK(report.calibration_after.loss <= report.calibration_before.loss);
  CHECK(report.config.mode == "lossless");
  CHECK(report.config.eps_source == "calibrated");
  CHECK(report.config.gradient_refresh == "once");

  std::int64_t recount = 0;
  for (const auto& e : report.layers) {
    recount += e.params_after;
    if (e.factorized) {
      CHECK(static_cast<std::int64_t>(e.rank) * (e.rows + e.cols) <
            static_cast<std::int64_t>(e.rows) * e.cols);
      CHECK(e.params_after == static_cast<std::int64_t>(e.rank) * (e.rows + e.cols));
      CHECK(e.max_abs_noise <= e.eps_used);
    } else {
      CHECK(e.skip_reason != SkipReason::none);
      CHECK(e.params_after == e.params_before);
    }
  }
  CHECK(report.totals.compressed_params == recount);
  CHECK(report.totals.compressed_params < report.totals.original_params);
  CHECK(report.totals.drop_rate ==
        doctest::Approx(1.0 - static_cast<double>(report.totals.compressed_params) /
                                  static_cast<double>(report.totals.original_params))
            .epsilon(1e-12));

  // the compressed net is consistent with the report
  compressed.validate();
  CHECK(compressed.weight_param_count() == report.totals.compressed_params);
  int decomposed = 0;
  for (const auto& l : compressed.layers) decomposed += l.decomposed ? 1 : 0;
  CHECK(decomposed == report.totals.layers_factorized);

  // a second pass over the result has nothing left to do
  auto [twice, second] = compress_network(compressed, calib, cfg);
  for (std::size_t l = 0; l < second.layers.size(); ++l)
    if (compressed.layers[l].decomposed)
      CHECK(second.layers[l].skip_reason == SkipReason::already_decomposed);
  CHECK(twice.weight_param_count() <= compressed.weight_param_count());
}

TEST_CASE("compact mode never keeps more parameters than lossless") {
  const Dataset all = make_blobs(3, 800, 64, 2);
  const Dataset train = slice(all, 0, 400);
  const Dataset calib = slice(all, 400, 800);
  Network net = train_toy({64, 64, 64, 3}, train, 20, 0.05, 2).net;

  CompressionConfig lossless;
  lossless.mode = Mode::lossless;
  CompressionConfig compact;
  compact.mode = Mode::compact;

  auto [net_l, rep_l] = compress_network(net, calib, lossless);
  auto [net_c, rep_c] = compress_network(net, calib, compact);
  CHECK(rep_c.totals.compressed_params <= rep_l.totals.compressed_params);
  CHECK(rep_c.totals.drop_rate >= rep_l.totals.drop_rate);
  for (std::size_t l = 0; l < rep_c.layers.size(); ++l)
    if (rep_l.layers[l].factorized) {
      // compact admits a superset per layer, so it factorizes no later
      CHECK(rep_c.layers[l].factorized);
      CHECK(rep_c.layers[l].rank <= rep_l.layers[l].rank);
    }
}

TEST_CASE("compress_network skip reasons and holdout accounting") {
  // 2x2 layers: no rank satisfies k*(n+m) < n*m, everything is kept
  Network tiny;
  for (int i = 0; i < 2; ++i) {
    Layer l;
    l.weight = random_matrix(2, 2, 95 + static_cast<std::uint32_t>(i));
    l.bias.assign(2, 0.0);
    l.activation = i == 0 ? Activation::tanh : Activation::identity;
    tiny.layers.push_back(std::move(l));
  }
  tiny.loss_kind = LossKind::mean_squared_error;
  Dataset data = random_regression(2, 2, 12, 97);
  Dataset holdout = random_regression(2, 2, 8, 98);

  CompressionConfig cfg;
  cfg.eps_source = EpsSource::fixed;
  cfg.fixed_eps = 1e-3;
  auto [out, report] = compress_network(tiny, data, cfg, &holdout);
  CHECK(report.totals.layers_factorized == 0);
  CHECK(report.totals.drop_rate == 0.0);
  for (const auto& e : report.layers) {
    CHECK(e.skip_reason == SkipReason::no_compressive_rank);
    CHECK(e.eps_used == 1e-3);
    CHECK(!e.eps_fallback);
  }
  REQUIRE(report.holdout_before.has_value());
  REQUIRE(report.holdout_after.has_value());
  CHECK(report.holdout_before->loss == report.holdout_after->loss);
  CHECK(out.weight_param_count() == tiny.weight_param_count());

  CHECK_THROWS_AS(
      compress_network(tiny, data,
                       [] {
                         CompressionConfig c;
                         c.eps_source = EpsSource::fixed;
                         c.fixed_eps = -1.0;
                         return c;
                       }()),
      InvalidInputError);
}

TEST_CASE("lossless skip reason distinguishes noise from sign from loss") {
  // flat spectrum, tiny eps: lossless-violated
  Network flat = single_layer_net(random_matrix(10, 8, 120));
  Dataset data = random_regression(8, 10, 15, 121);
  CompressionConfig cfg;
  cfg.eps_source = EpsSource::fixed;
  cfg.fixed_eps = 1e-9;
  auto [n1, r1] = compress_network(flat, data, cfg);
  CHECK(r1.layers[0].skip_reason == SkipReason::lossless_violated);

  // zero gradient (targets == image): non-negative inner product everywhere
  Dataset atmin = scaled_image_data(flat.layers[0].weight, 1.0);
  cfg.fixed_eps = 1e6;
  auto [n2, r2] = compress_network(flat, atmin, cfg);
  CHECK(r2.layers[0].skip_reason == SkipReason::non_negative_inner_product);
}

TEST_CASE("refine_factors stays inside the box and keeps the contract") {
  const Dataset all = make_blobs(3, 600, 64, 3);
  const Dataset train = slice(all, 0, 300);
  const Dataset calib = slice(all, 300, 600);
  Network net = train_toy({64, 64, 3}, train, 20, 0.05, 3).net;

  CompressionConfig cfg;
  cfg.refine_factors = true;
  auto [out, report] = compress_network(net, calib, cfg);
  CHECK(report.config.refine_factors);
  CHECK(report.calibration_after.loss <= report.calibration_before.loss);
  for (const auto& e : report.layers)
    if (e.factorized) CHECK(e.max_abs_noise <= e.eps_used);
}

TEST_CASE("per-layer gradient refresh recomputes between layers") {
  const Dataset all = make_blobs(3, 600, 48, 4);
  const Dataset train = slice(all, 0, 300);
  const Dataset calib = slice(all, 300, 600);
  Network net = train_toy({48, 48, 48, 3}, train, 20, 0.05, 4).net;

  CompressionConfig cfg;
  cfg.gradient_refresh = GradientRefresh::per_layer;
  auto [out, report] = compress_network(net, calib, cfg);
  CHECK(report.config.gradient_refresh == "per-layer");
  CHECK(report.calibration_after.loss <= report.calibration_before.loss);
}
