#include "rankloss/commands.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "rankloss/calibrator.hpp"
#include "rankloss/report.hpp"

namespace rankloss {

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " +
                        ec.message());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out.good()) throw IoError("failed while writing " + path.string());
}

nlohmann::json profile_to_json(const EpsilonProfile& profile) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["probe_tolerance"] = round9(profile.probe_tolerance);
  nlohmann::json grid = nlohmann::json::array();
  for (double g : profile.probe_grid) grid.push_back(round9(g));
  j["grid"] = grid;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < profile.per_layer_eps.size(); ++l) {
    nlohmann::json lj;
    lj["layer"] = static_cast<int>(l);
    lj["eps"] = round9(profile.per_layer_eps[l]);
    lj["fallback"] = static_cast<bool>(profile.fallback[l]);
    layers.push_back(lj);
  }
  j["layers"] = layers;
  return j;
}

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

Dataset resolve_dataset(const std::string& source, std::uint64_t seed) {
  if (const auto spec = parse_generator_spec(source))
    return make_blobs(spec->classes, spec->count, spec->dim, seed);
  return load_dataset_csv(source);
}

int cmd_train_toy(const TrainToyArgs& args) {
  if (args.arch.size() < 2)
    throw InvalidInputError("train-toy: --arch needs at least two sizes");
  ensure_dir(args.out_dir);

  const bool generated = parse_generator_spec(args.data).has_value();
  const Dataset data = resolve_dataset(args.data, args.seed);
  if (generated) save_dataset_csv(data, args.out_dir / "dataset.csv");

  const TrainOutcome outcome =
      train_toy(args.arch, data, args.steps, args.learning_rate, args.seed);
  save_model(outcome.net, args.out_dir / "model.json");

  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["arch"] = args.arch;
  meta["data"] = args.data;
  meta["steps"] = args.steps;
  meta["learning_rate"] = args.learning_rate;
  meta["seed"] = args.seed;
  meta["initial_loss"] = outcome.initial_loss;
  meta["final_loss"] = outcome.final_loss;
  write_text(args.out_dir / "train_meta.json", meta.dump(2) + "\n");

  std::cout << "trained " << args.arch.size() - 1 << " layers for " << args.steps
            << " steps\n"
            << "initial loss " << fmt9(outcome.initial_loss) << "\n"
            << "final loss   " << fmt9(outcome.final_loss) << "\n"
            << "model written to " << (args.out_dir / "model.json").string()
            << "\n";
  return 0;
}

int cmd_calibrate(const CalibrateArgs& args) {
  ensure_dir(args.out_dir);
  const Network net = load_model(args.model);
  const Dataset data = resolve_dataset(args.data, args.seed);
  const EpsilonProfile profile = calibrate(net, data, args.tolerance);
  const nlohmann::json j = profile_to_json(profile);
  write_text(args.out_dir / "epsilon_profile.json", j.dump(2) + "\n");

  if (args.json_stdout) {
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::cout << "layer  eps        source\n";
  for (std::size_t l = 0; l < profile.per_layer_eps.size(); ++l)
    std::cout << l << "      " << fmt9(profile.per_layer_eps[l]) << "   "
              << (profile.fallback[l] ? "fallback" : "calibrated") << "\n";
  return 0;
}

int cmd_compress(const CompressArgs& args) {
  ensure_dir(args.out_dir);
  if (args.report_format != "json" && args.report_format != "csv")
    throw InvalidInputError("compress: report format must be json or csv");

  const Network net = load_model(args.model);
  const Dataset data = resolve_dataset(args.data, args.seed);
  Dataset holdout_data;
  const bool has_holdout = !args.holdout.empty();
  if (has_holdout) holdout_data = resolve_dataset(args.holdout, args.seed + 1);

  CompressionConfig config;
  config.mode = args.mode;
  config.probe_tolerance = args.tolerance;
  config.gradient_refresh = args.refresh;
  config.rank_by_measured = args.rank_by_measured;
  config.refine_factors = args.refine_factors;
  config.seed = args.seed;

  EpsilonProfile profile;
  bool calibrated = false;
  if (args.eps == "calibrate") {
    config.eps_source = EpsSource::calibrated;
    profile = calibrate(net, data, args.tolerance);
    calibrated = true;
  } else {
    const char* begin = args.eps.c_str();
    char* end = nullptr;
    const double eps = std::strtod(begin, &end);
    if (end == begin || *end != '\0' || !(eps > 0.0) || !std::isfinite(eps))
      throw InvalidInputError(
          "compress: --eps must be 'calibrate' or a positive number, got '" +
          args.eps + "'");
    config.eps_source = EpsSource::fixed;
    config.fixed_eps = eps;
  }

  auto [compressed, report] = compress_network(
      net, data, config, has_holdout ? &holdout_data : nullptr,
      calibrated ? &profile : nullptr);
  report.config.model_path = args.model.string();
  report.config.data_path = args.data;
  report.config.holdout_path = args.holdout;

  save_model(compressed, args.out_dir / "compressed_model.json");
  emit_report(report, args.out_dir / "report.json", ReportFormat::json);
  if (args.report_format == "csv")
    emit_report(report, args.out_dir / "report.csv", ReportFormat::csv);
  if (calibrated)
    write_text(args.out_dir / "epsilon_profile.json",
               profile_to_json(profile).dump(2) + "\n");

  // Wall-clock time lives in a sidecar: the report itself must stay
  // byte-identical across reruns.
  nlohmann::json timing;
  timing["elapsed_seconds"] = report.elapsed_seconds;
  write_text(args.out_dir / "timing.json", timing.dump(2) + "\n");

  if (args.curves) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      if (net.layers[l].decomposed) continue;
      const double eps = calibrated ? profile.per_layer_eps[l] : config.fixed_eps;
      const auto curve = rank_curve(net, data, static_cast<int>(l), eps);
      if (curve.empty()) continue;
      std::ofstream out(args.out_dir /
                        ("curve_layer" + std::to_string(l) + ".csv"));
      if (!out) throw IoError("cannot write rank curve for layer " + std::to_string(l));
      write_rank_curve_csv(out, static_cast<int>(l), curve);
    }
  }

  if (args.json_stdout) {
    std::cout << report_to_json(report).dump(2) << "\n";
    return 0;
  }

  std::cout << "mode " << report.config.mode << ", layers factorized "
            << report.totals.layers_factorized << "/" << report.layers.size()
            << "\n";
  for (const auto& e : report.layers) {
    std::cout << "layer " << e.layer << " (" << e.rows << "x" << e.cols << "): ";
    if (e.factorized)
      std::cout << "rank " << e.rank << ", params " << e.params_before << " -> "
                << e.params_after << "\n";
    else
      std::cout << "kept (" << to_string(e.skip_reason) << ")\n";
  }
  char drop[32];
  std::snprintf(drop, sizeof(drop), "-%.2f%%",
                report.totals.drop_rate * 100.0);
  std::cout << "params " << report.totals.original_params << " -> "
            << report.totals.compressed_params << " (" << drop << ")\n"
            << "calibration loss " << fmt9(report.calibration_before.loss)
            << " -> " << fmt9(report.calibration_after.loss) << "\n";
  if (report.holdout_before && report.holdout_after)
    std::cout << "holdout loss     " << fmt9(report.holdout_before->loss)
              << " -> " << fmt9(report.holdout_after->loss) << "\n";
  if (report.totals.layers_factorized == 0)
    std::cout << "note: no layer admitted a factorization; model unchanged\n";
  return 0;
}

int cmd_probe(const ProbeArgs& args) {
  ensure_dir(args.out_dir);
  const Network net = load_model(args.model);
  const Dataset data = resolve_dataset(args.data, args.seed);

  std::vector<int> layers = args.layers;
  if (layers.empty())
    for (std::size_t l = 0; l < net.layers.size(); ++l)
      layers.push_back(static_cast<int>(l));

  const auto records = probe_network(net, data, layers);
  const GradientStats stats = gradient_stats(gradients(net, data));

  nlohmann::json j;
  j["format_version"] = 1;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records) {
    nlohmann::json rj;
    rj["layer"] = r.layer;
    rj["eps_bound"] = round9(r.eps_bound);
    rj["max_abs_noise"] = round9(r.max_abs_noise);
    rj["delta_loss"] = round9(r.discrepancy);
    rj["first_order"] = round9(r.first_order);
    rj["residual"] = round9(r.residual);
    recs.push_back(rj);
  }
  j["records"] = recs;
  j["gradient_stats"] = {
      {"fraction_exact_zero", round9(stats.fraction_exact_zero)},
      {"fraction_below_threshold", round9(stats.fraction_below)},
      {"threshold", round9(stats.threshold)},
  };
  write_text(args.out_dir / "probe.json", j.dump(2) + "\n");

  std::string csv = "layer,eps_bound,delta_loss\n";
  for (const auto& r : records)
    csv += std::to_string(r.layer) + "," + fmt9(r.eps_bound) + "," +
           fmt9(r.discrepancy) + "\n";
  write_text(args.out_dir / "probe.csv", csv);

  if (args.json_stdout) {
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::cout << "layer  eps_bound   delta_loss    first_order   residual\n";
  for (const auto& r : records)
    std::cout << r.layer << "      " << fmt9(r.eps_bound) << "      "
              << fmt9(r.discrepancy) << "  " << fmt9(r.first_order) << "  "
              << fmt9(r.residual) << "\n";
  std::cout << "gradient zeros " << fmt9(stats.fraction_exact_zero)
            << ", below " << fmt9(stats.threshold) << " "
            << fmt9(stats.fraction_below) << "\n";
  return 0;
}

int cmd_eval(const EvalArgs& args) {
  const Network net = load_model(args.model);
  const Dataset data = resolve_dataset(args.data, args.seed);
  const Metrics m = evaluate(net, data);
  if (args.json_stdout) {
    nlohmann::json j;
    j["loss"] = round9(m.loss);
    j["samples"] = m.samples;
    if (m.top1) j["top1_accuracy"] = round9(*m.top1);
    if (m.top5) j["top5_accuracy"] = round9(*m.top5);
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::cout << "loss " << fmt9(m.loss) << "\n";
  if (m.top1) std::cout << "top1_accuracy " << fmt9(*m.top1) << "\n";
  if (m.top5) std::cout << "top5_accuracy " << fmt9(*m.top5) << "\n";
  std::cout << "samples " << m.samples << "\n";
  return 0;
}

}  // namespace rankloss
