// Timing harness: straight-line serial reference vs the OpenMP kernels at
// one and at all available threads, with agreement checks on the results.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "rankloss/network.hpp"
#include "rankloss/parallel.hpp"
#include "rankloss/reference.hpp"
#include "rankloss/report.hpp"
#include "rankloss/serialize.hpp"

using namespace rankloss;

namespace {

template <typename F>
double best_ms(int reps, F&& f) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

}  // namespace

int main() {
  const Dataset data = make_blobs(10, 1000, 64, 7);
  const TrainOutcome fixture = train_toy({64, 96, 96, 10}, data, 0, 0.05, 7);
  const Network& net = fixture.net;

  const int max_threads = thread_cap();
  std::printf("bench fixture: 64-96-96-10 mlp, %zu samples, %d thread(s) available\n\n",
              data.size(), max_threads);

  double loss_ref = 0.0, loss_one = 0.0, loss_all = 0.0;
  const double t_loss_ref = best_ms(3, [&] { loss_ref = reference::dataset_loss(net, data); });
  set_thread_cap(1);
  const double t_loss_one = best_ms(3, [&] { loss_one = dataset_loss(net, data); });
  set_thread_cap(max_threads);
  const double t_loss_all = best_ms(3, [&] { loss_all = dataset_loss(net, data); });

  GradientSnapshot g_ref, g_one, g_all;
  const double t_grad_ref = best_ms(3, [&] { g_ref = reference::gradients(net, data); });
  set_thread_cap(1);
  const double t_grad_one = best_ms(3, [&] { g_one = gradients(net, data); });
  set_thread_cap(max_threads);
  const double t_grad_all = best_ms(3, [&] { g_all = gradients(net, data); });

  std::vector<RankCurvePoint> curve;
  set_thread_cap(1);
  const double t_curve_one = best_ms(1, [&] { curve = rank_curve(net, data, 1, 1e-2); });
  set_thread_cap(max_threads);
  const double t_curve_all = best_ms(1, [&] { curve = rank_curve(net, data, 1, 1e-2); });
  set_thread_cap(0);

  double grad_diff = 0.0;
  for (std::size_t l = 0; l < g_ref.layer_grads.size(); ++l)
    grad_diff = std::max(grad_diff, sub(g_ref.layer_grads[l], g_all.layer_grads[l]).max_abs());

  std::printf("kernel        reference   1 thread    %d thread(s)  speedup\n", max_threads);
  std::printf("dataset_loss  %8.2fms  %8.2fms  %8.2fms     %.2fx\n",
              t_loss_ref, t_loss_one, t_loss_all, t_loss_one / t_loss_all);
  std::printf("gradients     %8.2fms  %8.2fms  %8.2fms     %.2fx\n",
              t_grad_ref, t_grad_one, t_grad_all, t_grad_one / t_grad_all);
  std::printf("rank_curve    %8s    %8.2fms  %8.2fms     %.2fx\n", "-",
              t_curve_one, t_curve_all, t_curve_one / t_curve_all);

  std::printf("\nagreement: loss |ref-omp| = %.3e (1-thread bitwise: %s), grad max diff = %.3e\n",
              std::abs(loss_ref - loss_all), loss_one == loss_all ? "yes" : "no",
              grad_diff);
  const bool ok = std::abs(loss_ref - loss_all) < 1e-12 && grad_diff < 1e-12 &&
                  loss_one == loss_all;
  std::printf("%s\n", ok ? "results agree" : "RESULTS DISAGREE");
  return ok ? 0 : 1;
}
