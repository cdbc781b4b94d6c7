// Acceptance gate. Each criterion prints one [PASS]/[FAIL] line; the exit
// code is the number of failures. Everything here goes through the public
// headers only, and every numeric bar is checked against values recomputed
// from first principles inside this file.

#include <rankloss/calibrator.hpp>
#include <rankloss/commands.hpp>
#include <rankloss/constraints.hpp>
#include <rankloss/network.hpp>
#include <rankloss/optimizer.hpp>
#include <rankloss/reference.hpp>
#include <rankloss/report.hpp>
#include <rankloss/serialize.hpp>

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rankloss;

namespace {

int g_failures = 0;

void verdict(int index, const char* title, bool ok, const std::string& detail) {
  std::printf("[%s] %02d %s — %s\n", ok ? "PASS" : "FAIL", index, title,
              detail.c_str());
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, ...) {
  va_list ap;
  va_start(ap, f);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

Dataset slice(const Dataset& d, std::size_t lo, std::size_t hi) {
  Dataset out;
  for (std::size_t i = lo; i < hi; ++i) {
    out.inputs.push_back(d.inputs[i]);
    if (!d.labels.empty()) out.labels.push_back(d.labels[i]);
    if (!d.targets.empty()) out.targets.push_back(d.targets[i]);
  }
  return out;
}

Matrix random_matrix(int rows, int cols, std::mt19937& gen, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Matrix m(rows, cols);
  for (double& x : m.data) x = dist(gen);
  return m;
}

// Random matrix rebuilt with a geometric singular spectrum, so truncation
// tails actually reach small noise levels.
Matrix spectral_matrix(int rows, int cols, double decay, std::mt19937& gen) {
  const SvdResult dec = svd(random_matrix(rows, cols, gen));
  const int r = static_cast<int>(dec.s.size());
  Matrix out(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      double sum = 0.0;
      for (int t = 0; t < r; ++t)
        sum += std::pow(decay, t) * dec.u(i, t) * dec.v(j, t);
      out(i, j) = sum;
    }
  return out;
}

Network single_layer_net(Matrix w) {
  Layer lay;
  lay.bias.assign(static_cast<std::size_t>(w.rows), 0.0);
  lay.weight = std::move(w);
  lay.activation = Activation::identity;
  Network net;
  net.layers.push_back(std::move(lay));
  net.loss_kind = LossKind::mean_squared_error;
  return net;
}

// Regression set whose targets are a shrunk copy of the layer's own image,
// so the mean gradient points along the weight and truncations can help.
Dataset shrunk_image_data(const Matrix& w, double shrink, int samples,
                          std::mt19937& gen) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Dataset data;
  for (int n = 0; n < samples; ++n) {
    std::vector<double> x(static_cast<std::size_t>(w.cols));
    for (double& v : x) v = dist(gen);
    std::vector<double> y(static_cast<std::size_t>(w.rows), 0.0);
    for (int i = 0; i < w.rows; ++i)
      for (int j = 0; j < w.cols; ++j) y[i] += shrink * w(i, j) * x[j];
    data.inputs.push_back(std::move(x));
    data.targets.push_back(std::move(y));
  }
  return data;
}

bool admissible(const ConstraintVerdict& v) {
  return v.compressive && v.lossless && (v.predicted_delta < 0.0 || v.exact);
}

std::optional<int> linear_scan_minimal_rank(const Matrix& w,
                                            const Matrix& grad, double eps) {
  const SvdResult dec = svd(w);
  const int kmax = max_compressive_rank(w.rows, w.cols);
  for (int k = 1; k <= kmax; ++k) {
    if (admissible(check(w, truncate(dec, k), grad, eps))) return k;
  }
  return std::nullopt;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Recounts a report's totals from its own layer rows and checks the
// compressive inequality on every factorized layer.
bool consistent_report(const json& rep, std::string* why) {
  std::int64_t original = 0, compressed = 0;
  int factorized = 0;
  for (const json& lay : rep.at("layers")) {
    const std::int64_t rows = lay.at("rows").get<std::int64_t>();
    const std::int64_t cols = lay.at("cols").get<std::int64_t>();
    original += lay.at("params_before").get<std::int64_t>();
    compressed += lay.at("params_after").get<std::int64_t>();
    if (lay.at("params_before").get<std::int64_t>() != rows * cols) {
      *why = fmt("layer %d params_before != rows*cols",
                 lay.at("layer").get<int>());
      return false;
    }
    if (!lay.at("factorized").get<bool>()) {
      if (lay.at("params_after") != lay.at("params_before")) {
        *why = fmt("skipped layer %d changed params", lay.at("layer").get<int>());
        return false;
      }
      continue;
    }
    ++factorized;
    const std::int64_t k = lay.at("rank").get<std::int64_t>();
    if (!(k * (rows + cols) < rows * cols)) {
      *why = fmt("layer %d rank %lld is not compressive",
                 lay.at("layer").get<int>(), static_cast<long long>(k));
      return false;
    }
    if (lay.at("params_after").get<std::int64_t>() != k * (rows + cols)) {
      *why = fmt("layer %d params_after != k*(rows+cols)",
                 lay.at("layer").get<int>());
      return false;
    }
  }
  const json& tot = rep.at("totals");
  if (tot.at("original_params").get<std::int64_t>() != original ||
      tot.at("compressed_params").get<std::int64_t>() != compressed ||
      tot.at("layers_factorized").get<int>() != factorized) {
    *why = "totals do not match the layer-wise recount";
    return false;
  }
  const double want_drop =
      round9(static_cast<double>(original - compressed) /
             static_cast<double>(original));
  if (tot.at("drop_rate").get<double>() != want_drop) {
    *why = "drop_rate does not match the recount";
    return false;
  }
  return true;
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "rankloss_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  // Shared fixture: two 64-unit hidden layers on 3-class blobs, trained on
  // one half of the draw and calibrated on a disjoint 1000-sample half.
  const Dataset all = make_blobs(3, 2400, 64, 7);
  const Dataset train = slice(all, 0, 1000);
  const Dataset calib = slice(all, 1000, 2000);
  const Dataset holdout = slice(all, 2000, 2400);
  const Network net = train_toy({64, 64, 64, 3}, train, 20, 0.05, 7).net;

  const fs::path model_path = work / "model.json";
  const fs::path calib_path = work / "calib.csv";
  const fs::path holdout_path = work / "holdout.csv";
  save_model(net, model_path);
  save_dataset_csv(calib, calib_path);
  save_dataset_csv(holdout, holdout_path);

  // --- 1: first-order probes on the fixture ------------------------------
  // Every truncation noise with max-abs <= 1e-3, on every layer, must keep
  // the discrepancy between measured and predicted loss under 1e-4. The
  // first-order/residual split is collected here and judged in criterion 9.
  std::vector<double> ratios;
  {
    const Timer t;
    const GradientSnapshot snap = gradients(net, calib);
    double worst = 0.0;
    int probes = 0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const Matrix& w = net.layers[l].weight;
      const SvdResult dec = svd(w);
      for (int k = 1; k < static_cast<int>(dec.s.size()); ++k) {
        const NoiseStats ns = noise(w, truncate(dec, k));
        if (ns.max_abs > 1e-3) continue;
        ++probes;
        worst = std::max(
            worst, neighborhood_discrepancy(net, calib, static_cast<int>(l),
                                            ns.delta,
                                            ProbeAggregation::dataset_mean,
                                            &snap));
        const SecondOrderDiagnostic d = second_order_diagnostic(
            net, calib, static_cast<int>(l), ns.delta, &snap);
        if (d.residual != 0.0)
          ratios.push_back(std::abs(d.first_order) / std::abs(d.residual));
      }
    }
    const double sec = t.seconds();
    verdict(1, "probe discrepancy < 1e-4 at max-abs noise <= 1e-3",
            probes > 0 && worst < 1e-4 && sec < 120.0,
            fmt("worst %.3e over %d probes in %.1fs", worst, probes, sec));
  }

  // --- 2: lossless compression improves the fixture ----------------------
  json lossless_rep;
  fs::path out1 = work / "out_lossless";
  {
    const Timer t;
    CompressArgs args;
    args.model = model_path;
    args.data = calib_path.string();
    args.holdout = holdout_path.string();
    args.mode = Mode::lossless;
    args.out_dir = out1;
    const int rc = cmd_compress(args);
    const double sec = t.seconds();

    bool ok = rc == 0;
    std::string detail = fmt("exit %d", rc);
    if (ok) {
      lossless_rep = json::parse(read_file(out1 / "report.json"));
      const int factorized =
          lossless_rep.at("totals").at("layers_factorized").get<int>();
      const double before =
          lossless_rep.at("metrics").at("calibration").at("before").at("loss");
      const double after =
          lossless_rep.at("metrics").at("calibration").at("after").at("loss");
      const double h_before =
          lossless_rep.at("metrics").at("holdout").at("before").at("loss");
      const double h_after =
          lossless_rep.at("metrics").at("holdout").at("after").at("loss");
      ok = factorized >= 1 && after <= before &&
           h_after <= h_before + 1e-3 && sec < 300.0;
      detail = fmt("%d layer(s), calib %.6g -> %.6g, holdout %.6g -> %.6g, %.1fs",
                   factorized, before, after, h_before, h_after, sec);
    }
    verdict(2, "lossless run factorizes and never worsens calibration loss",
            ok, detail);
  }

  // --- 5 needs the compact run; do it now so 3 can audit every report ----
  json compact_rep;
  {
    CompressArgs args;
    args.model = model_path;
    args.data = calib_path.string();
    args.holdout = holdout_path.string();
    args.mode = Mode::compact;
    args.out_dir = work / "out_compact";
    if (cmd_compress(args) == 0)
      compact_rep = json::parse(read_file(work / "out_compact" / "report.json"));
  }

  // --- 3: compressive inequality and totals on every emitted report ------
  {
    std::string why = "report missing";
    bool ok = !lossless_rep.is_null() && !compact_rep.is_null() &&
              consistent_report(lossless_rep, &why) &&
              consistent_report(compact_rep, &why);
    verdict(3, "every factorized layer is compressive and totals recount", ok,
            ok ? "both lossless and compact reports audited" : why);
  }

  // --- 4: compact search equals the exhaustive scan ----------------------
  {
    const Timer t;
    struct Shape { int rows, cols; };
    const Shape shapes[] = {{8, 5},  {12, 9},  {16, 16}, {24, 10}, {32, 24},
                            {48, 32}, {64, 48}, {10, 64}, {7, 7},  {20, 12}};
    const double eps_grid[] = {1e-3, 1e-2, 5e-4, 1e-1};
    const double decays[] = {0.5, 0.65, 0.8};
    int agree = 0, nonempty = 0;
    std::string why;
    for (int i = 0; i < 20; ++i) {
      std::mt19937 gen(100 + static_cast<unsigned>(i));
      const Shape s = shapes[i % 10];
      const Matrix w = spectral_matrix(s.rows, s.cols, decays[i % 3], gen);
      const Network one = single_layer_net(w);
      const Dataset data = shrunk_image_data(w, 0.9, 12, gen);
      const GradientSnapshot snap = gradients(one, data);
      const double eps = eps_grid[i % 4];

      const std::optional<int> want =
          linear_scan_minimal_rank(w, snap.layer_grads[0], eps);
      const std::optional<CandidateEntry> got =
          compact_layer_search(one, data, snap, 0, eps);
      const bool match = want.has_value() == got.has_value() &&
                         (!want || *want == got->rank);
      if (match) ++agree;
      else if (why.empty())
        why = fmt("instance %d: scan %d vs search %d", i,
                  want.value_or(-1), got ? got->rank : -1);
      if (want) ++nonempty;
    }
    const double sec = t.seconds();
    verdict(4, "compact rank equals exhaustive-scan minimal rank",
            agree == 20 && nonempty >= 8 && sec < 120.0,
            why.empty()
                ? fmt("20/20 agree, %d non-empty, %.1fs", nonempty, sec)
                : why);
  }

  // --- 5: compact drops at least as many parameters ----------------------
  {
    bool ok = !lossless_rep.is_null() && !compact_rep.is_null();
    std::string detail = "missing report";
    if (ok) {
      const double d_lossless = lossless_rep.at("totals").at("drop_rate");
      const double d_compact = compact_rep.at("totals").at("drop_rate");
      ok = d_compact >= d_lossless;
      detail = fmt("compact %.6g vs lossless %.6g", d_compact, d_lossless);
    }
    verdict(5, "compact drop rate >= lossless drop rate", ok, detail);
  }

  // --- 6: truncation error matches the singular tail ---------------------
  {
    double worst = 0.0;
    int checked = 0;
    for (int i = 0; i < 50; ++i) {
      std::mt19937 gen(500 + static_cast<unsigned>(i));
      const int rows = 3 + (i % 10);
      const int cols = 3 + ((i * 7) % 10);
      const Matrix w = random_matrix(rows, cols, gen);
      const SvdResult dec = svd(w);
      const int r = static_cast<int>(dec.s.size());
      for (int k = 1; k <= r; ++k) {
        double tail = 0.0;
        for (int t = k; t < r; ++t) tail += dec.s[t] * dec.s[t];
        const double err =
            std::abs(noise(w, truncate(dec, k)).fro - std::sqrt(tail));
        worst = std::max(worst, err);
        ++checked;
      }
    }
    verdict(6, "Frobenius truncation error equals the singular tail",
            worst <= 1e-9 && checked >= 50,
            fmt("worst |gap| %.3e over %d (matrix, rank) pairs", worst, checked));
  }

  // --- 7: reverse-mode gradients match central differences ---------------
  {
    double worst_rel = 0.0;
    bool ok = true;
    std::mt19937 gen(900);
    struct Case {
      std::vector<int> arch;
      std::vector<Activation> acts;
      bool classify;
    };
    const std::vector<Case> cases = {
        {{6, 4}, {Activation::identity}, false},
        {{5, 8, 3}, {Activation::tanh, Activation::identity}, false},
        {{7, 6, 5, 4},
         {Activation::tanh, Activation::tanh, Activation::identity},
         true},
    };
    for (const Case& c : cases) {
      Network n;
      n.loss_kind = c.classify ? LossKind::softmax_cross_entropy
                               : LossKind::mean_squared_error;
      for (std::size_t l = 0; l + 1 < c.arch.size(); ++l) {
        Layer lay;
        lay.weight = random_matrix(c.arch[l + 1], c.arch[l], gen, 0.5);
        lay.bias.resize(static_cast<std::size_t>(c.arch[l + 1]));
        for (double& b : lay.bias)
          b = std::uniform_real_distribution<double>(-0.1, 0.1)(gen);
        lay.activation = c.acts[l];
        n.layers.push_back(std::move(lay));
      }
      Dataset data;
      for (int s = 0; s < 6; ++s) {
        std::vector<double> x(static_cast<std::size_t>(c.arch.front()));
        for (double& v : x)
          v = std::uniform_real_distribution<double>(-1.0, 1.0)(gen);
        data.inputs.push_back(std::move(x));
        if (c.classify) {
          data.labels.push_back(s % c.arch.back());
        } else {
          std::vector<double> y(static_cast<std::size_t>(c.arch.back()));
          for (double& v : y)
            v = std::uniform_real_distribution<double>(-1.0, 1.0)(gen);
          data.targets.push_back(std::move(y));
        }
      }
      const GradientSnapshot got = gradients(n, data);
      const GradientSnapshot fd = reference::finite_difference_gradients(n, data);
      for (std::size_t l = 0; l < n.layers.size(); ++l)
        for (std::size_t e = 0; e < got.layer_grads[l].data.size(); ++e) {
          const double a = got.layer_grads[l].data[e];
          const double f = fd.layer_grads[l].data[e];
          const double gap = std::abs(a - f);
          if (gap > std::max(1e-8, 1e-5 * std::abs(f))) ok = false;
          if (std::abs(f) > 1e-8)
            worst_rel = std::max(worst_rel, gap / std::abs(f));
        }
    }
    verdict(7, "reverse-mode gradients match finite differences", ok,
            fmt("worst relative gap %.3e across %zu nets", worst_rel,
                cases.size()));
  }

  // --- 8: first-order predictions hold on admissible candidates ----------
  {
    int total = 0, improved = 0;
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
      const Dataset draw = make_blobs(3, 800, 64, seed);
      const Dataset fit = slice(draw, 0, 400);
      const Dataset probe = slice(draw, 400, 800);
      const Network toy = train_toy({64, 64, 64, 3}, fit, 20, 0.05, seed).net;
      const EpsilonProfile prof = calibrate(toy, probe);
      const GradientSnapshot snap = gradients(toy, probe);
      const double base = dataset_loss(toy, probe);
      for (std::size_t l = 0; l < toy.layers.size(); ++l) {
        const Matrix& w = toy.layers[l].weight;
        const int kmax = max_compressive_rank(w.rows, w.cols);
        if (kmax < 1) continue;
        const SvdResult dec = svd(w);
        for (int k = 1; k <= kmax; ++k) {
          const ConstraintVerdict v =
              check(w, truncate(dec, k), snap.layer_grads[l],
                    prof.per_layer_eps[l]);
          if (!(v.predicted_delta < 0.0) || v.max_abs_noise > prof.per_layer_eps[l])
            continue;
          ++total;
          const Matrix replaced = truncate(dec, k).product();
          if (dataset_loss(with_layer_weight(toy, static_cast<int>(l),
                                             replaced),
                           probe) < base)
            ++improved;
        }
      }
    }
    const double rate = total ? static_cast<double>(improved) / total : 0.0;
    verdict(8, "measured loss falls on >= 95% of admissible candidates",
            total >= 100 && rate >= 0.95,
            fmt("%d/%d improved (%.1f%%)", improved, total, 100.0 * rate));
  }

  // --- 9: the linear term dominates at the 1e-3 noise level --------------
  {
    bool ok = !ratios.empty();
    double median = 0.0;
    if (ok) {
      std::sort(ratios.begin(), ratios.end());
      median = ratios[ratios.size() / 2];
      ok = median >= 10.0;
    }
    verdict(9, "median |first-order| / |residual| >= 10", ok,
            fmt("median %.1f over %zu probes", median, ratios.size()));
  }

  // --- 10: identical runs emit identical bytes ---------------------------
  {
    CompressArgs args;
    args.model = model_path;
    args.data = calib_path.string();
    args.holdout = holdout_path.string();
    args.mode = Mode::lossless;
    args.out_dir = work / "out_again";
    const int rc = cmd_compress(args);
    const std::string a = read_file(out1 / "report.json");
    const std::string b = read_file(work / "out_again" / "report.json");
    verdict(10, "repeated runs produce byte-identical reports",
            rc == 0 && !a.empty() && a == b,
            fmt("%zu bytes vs %zu bytes", a.size(), b.size()));
  }

  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures;
}
