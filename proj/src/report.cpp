#include "rankloss/report.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "rankloss/constraints.hpp"
#include "rankloss/parallel.hpp"

namespace rankloss {

const char* to_string(SkipReason r) {
  switch (r) {
    case SkipReason::none: return "none";
    case SkipReason::already_decomposed: return "already-decomposed";
    case SkipReason::no_compressive_rank: return "no-compressive-rank";
    case SkipReason::lossless_violated: return "lossless-violated";
    case SkipReason::non_negative_inner_product: return "non-negative-inner-product";
    case SkipReason::measured_loss_increase: return "measured-loss-increase";
  }
  return "none";
}

SkipReason skip_reason_from_string(const std::string& s) {
  if (s == "none") return SkipReason::none;
  if (s == "already-decomposed") return SkipReason::already_decomposed;
  if (s == "no-compressive-rank") return SkipReason::no_compressive_rank;
  if (s == "lossless-violated") return SkipReason::lossless_violated;
  if (s == "non-negative-inner-product") return SkipReason::non_negative_inner_product;
  if (s == "measured-loss-increase") return SkipReason::measured_loss_increase;
  throw InvalidInputError("unknown skip reason '" + s + "'");
}

double round9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

Metrics evaluate(const Network& net, const Dataset& data) {
  Metrics m;
  m.loss = dataset_loss(net, data);
  m.samples = static_cast<std::int64_t>(data.size());
  if (net.loss_kind != LossKind::softmax_cross_entropy) return m;

  const auto outs = batch_forward(net, data);
  const std::size_t n = data.size();
  std::vector<double> hit1(n), hit5(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& out = outs[i];
    const int label = data.labels[i];
    int arg = 0;
    int above = 0;  // classes scoring strictly higher than the label
    for (std::size_t j = 0; j < out.size(); ++j) {
      if (out[j] > out[arg]) arg = static_cast<int>(j);
      if (out[j] > out[label]) ++above;
    }
    hit1[i] = arg == label ? 1.0 : 0.0;
    hit5[i] = above < 5 ? 1.0 : 0.0;
  }
  m.top1 = pairwise_sum(hit1.data(), n) / static_cast<double>(n);
  if (net.output_dim() > 5)
    m.top5 = pairwise_sum(hit5.data(), n) / static_cast<double>(n);
  return m;
}

double drop_rate(std::int64_t original_params, std::int64_t compressed_params) {
  if (original_params <= 0)
    throw InvalidInputError("drop_rate: original parameter count must be positive");
  if (compressed_params < 0 || compressed_params > original_params)
    throw InvalidInputError("drop_rate: compressed count outside [0, original]");
  return static_cast<double>(original_params - compressed_params) /
         static_cast<double>(original_params);
}

std::vector<RankCurvePoint> rank_curve(const Network& net, const Dataset& data,
                                       int layer_index, double eps) {
  net.validate();
  if (layer_index < 0 || layer_index >= static_cast<int>(net.layers.size()))
    throw InvalidInputError("rank_curve: layer index out of range");
  if (!(eps > 0.0) || !std::isfinite(eps))
    throw InvalidInputError("rank_curve: eps must be positive");

  const Matrix& w = net.layers[layer_index].weight;
  const int kmax = max_compressive_rank(w.rows, w.cols);
  std::vector<RankCurvePoint> pts(kmax > 0 ? kmax : 0);
  if (kmax < 1) return pts;

  const SvdResult dec = svd(w);
  const GradientSnapshot snap = gradients(net, data);
  const Matrix& g = snap.layer_grads[layer_index];
  const int nt = thread_cap();
#pragma omp parallel for num_threads(nt) schedule(dynamic)
  for (int k = 1; k <= kmax; ++k) {
    const FactorPair f = truncate(dec, k);
    const ConstraintVerdict v = check(w, f, g, eps);
    RankCurvePoint p;
    p.rank = k;
    p.max_abs_noise = v.max_abs_noise;
    p.measured_loss =
        dataset_loss(with_layer_weight(net, layer_index, f.product()), data);
    p.admissible =
        v.compressive && v.lossless && (v.predicted_delta < 0.0 || v.exact);
    pts[k - 1] = p;
  }
  return pts;
}

namespace {

nlohmann::json metrics_to_json(const Metrics& m) {
  nlohmann::json j;
  j["loss"] = round9(m.loss);
  j["samples"] = m.samples;
  if (m.top1) j["top1_accuracy"] = round9(*m.top1);
  if (m.top5) j["top5_accuracy"] = round9(*m.top5);
  return j;
}

Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  m.loss = j.at("loss").get<double>();
  m.samples = j.at("samples").get<std::int64_t>();
  if (j.contains("top1_accuracy")) m.top1 = j["top1_accuracy"].get<double>();
  if (j.contains("top5_accuracy")) m.top5 = j["top5_accuracy"].get<double>();
  return m;
}

}  // namespace

nlohmann::json report_to_json(const CompressionReport& report) {
  nlohmann::json j;
  j["format_version"] = 1;

  nlohmann::json cfg;
  cfg["mode"] = report.config.mode;
  cfg["eps_source"] = report.config.eps_source;
  if (report.config.eps_source == "fixed")
    cfg["fixed_eps"] = round9(report.config.fixed_eps);
  cfg["probe_tolerance"] = round9(report.config.probe_tolerance);
  cfg["gradient_refresh"] = report.config.gradient_refresh;
  cfg["rank_by_measured"] = report.config.rank_by_measured;
  cfg["refine_factors"] = report.config.refine_factors;
  cfg["seed"] = report.config.seed;
  cfg["model"] = report.config.model_path;
  cfg["data"] = report.config.data_path;
  if (!report.config.holdout_path.empty())
    cfg["holdout"] = report.config.holdout_path;
  j["config"] = cfg;

  nlohmann::json layers = nlohmann::json::array();
  for (const auto& e : report.layers) {
    nlohmann::json le;
    le["layer"] = e.layer;
    le["rows"] = e.rows;
    le["cols"] = e.cols;
    le["factorized"] = e.factorized;
    if (e.factorized) {
      le["rank"] = e.rank;
      le["max_abs_noise"] = round9(e.max_abs_noise);
      le["fro_noise"] = round9(e.fro_noise);
      le["predicted_delta"] = round9(e.predicted_delta);
    } else {
      le["skip_reason"] = to_string(e.skip_reason);
    }
    le["eps_used"] = round9(e.eps_used);
    le["eps_fallback"] = e.eps_fallback;
    le["loss_before"] = round9(e.loss_before);
    le["loss_after"] = round9(e.loss_after);
    le["params_before"] = e.params_before;
    le["params_after"] = e.params_after;
    layers.push_back(le);
  }
  j["layers"] = layers;

  nlohmann::json totals;
  totals["original_params"] = report.totals.original_params;
  totals["compressed_params"] = report.totals.compressed_params;
  totals["drop_rate"] = round9(report.totals.drop_rate);
  totals["layers_factorized"] = report.totals.layers_factorized;
  j["totals"] = totals;

  nlohmann::json metrics;
  metrics["calibration"]["before"] = metrics_to_json(report.calibration_before);
  metrics["calibration"]["after"] = metrics_to_json(report.calibration_after);
  if (report.holdout_before && report.holdout_after) {
    metrics["holdout"]["before"] = metrics_to_json(*report.holdout_before);
    metrics["holdout"]["after"] = metrics_to_json(*report.holdout_after);
  }
  j["metrics"] = metrics;
  return j;
}

CompressionReport report_from_json(const nlohmann::json& j) {
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
    throw InvalidInputError("report: unsupported format_version");
  CompressionReport r;
  const auto& cfg = j.at("config");
  r.config.mode = cfg.at("mode").get<std::string>();
  r.config.eps_source = cfg.at("eps_source").get<std::string>();
  if (cfg.contains("fixed_eps")) r.config.fixed_eps = cfg["fixed_eps"].get<double>();
  r.config.probe_tolerance = cfg.at("probe_tolerance").get<double>();
  r.config.gradient_refresh = cfg.at("gradient_refresh").get<std::string>();
  r.config.rank_by_measured = cfg.at("rank_by_measured").get<bool>();
  r.config.refine_factors = cfg.at("refine_factors").get<bool>();
  r.config.seed = cfg.at("seed").get<std::uint64_t>();
  r.config.model_path = cfg.at("model").get<std::string>();
  r.config.data_path = cfg.at("data").get<std::string>();
  if (cfg.contains("holdout")) r.config.holdout_path = cfg["holdout"].get<std::string>();

  for (const auto& le : j.at("layers")) {
    LayerReportEntry e;
    e.layer = le.at("layer").get<int>();
    e.rows = le.at("rows").get<int>();
    e.cols = le.at("cols").get<int>();
    e.factorized = le.at("factorized").get<bool>();
    if (e.factorized) {
      e.rank = le.at("rank").get<int>();
      e.max_abs_noise = le.at("max_abs_noise").get<double>();
      e.fro_noise = le.at("fro_noise").get<double>();
      e.predicted_delta = le.at("predicted_delta").get<double>();
    } else {
      e.skip_reason = skip_reason_from_string(le.at("skip_reason").get<std::string>());
    }
    e.eps_used = le.at("eps_used").get<double>();
    e.eps_fallback = le.at("eps_fallback").get<bool>();
    e.loss_before = le.at("loss_before").get<double>();
    e.loss_after = le.at("loss_after").get<double>();
    e.params_before = le.at("params_before").get<std::int64_t>();
    e.params_after = le.at("params_after").get<std::int64_t>();
    r.layers.push_back(e);
  }

  const auto& totals = j.at("totals");
  r.totals.original_params = totals.at("original_params").get<std::int64_t>();
  r.totals.compressed_params = totals.at("compressed_params").get<std::int64_t>();
  r.totals.drop_rate = totals.at("drop_rate").get<double>();
  r.totals.layers_factorized = totals.at("layers_factorized").get<int>();

  const auto& metrics = j.at("metrics");
  r.calibration_before = metrics_from_json(metrics.at("calibration").at("before"));
  r.calibration_after = metrics_from_json(metrics.at("calibration").at("after"));
  if (metrics.contains("holdout")) {
    r.holdout_before = metrics_from_json(metrics.at("holdout").at("before"));
    r.holdout_after = metrics_from_json(metrics.at("holdout").at("after"));
  }
  return r;
}

void emit_report(const CompressionReport& report,
                 const std::filesystem::path& path, ReportFormat format) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot open report file for writing: " + path.string());
  if (format == ReportFormat::json) {
    out << report_to_json(report).dump(2) << '\n';
  } else {
    out << "layer,rows,cols,factorized,rank,skip_reason,eps_used,max_abs_noise,"
           "predicted_delta,loss_before,loss_after,params_before,params_after\n";
    for (const auto& e : report.layers) {
      out << e.layer << ',' << e.rows << ',' << e.cols << ','
          << (e.factorized ? 1 : 0) << ',';
      if (e.factorized)
        out << e.rank << ",,";
      else
        out << ',' << to_string(e.skip_reason) << ',';
      out << fmt9(e.eps_used) << ',';
      if (e.factorized)
        out << fmt9(e.max_abs_noise) << ',' << fmt9(e.predicted_delta) << ',';
      else
        out << ",,";
      out << fmt9(e.loss_before) << ',' << fmt9(e.loss_after) << ','
          << e.params_before << ',' << e.params_after << '\n';
    }
  }
  if (!out.good())
    throw IoError("failed while writing report file: " + path.string());
}

void write_rank_curve_csv(std::ostream& out, int layer_index,
                          const std::vector<RankCurvePoint>& curve) {
  out << "layer,rank,loss,max_abs_noise,admissible\n";
  for (const auto& p : curve)
    out << layer_index << ',' << p.rank << ',' << fmt9(p.measured_loss) << ','
        << fmt9(p.max_abs_noise) << ',' << (p.admissible ? 1 : 0) << '\n';
}

std::vector<RankCurvePoint> read_rank_curve_csv(std::istream& in,
                                                int* layer_index) {
  std::string line;
  if (!std::getline(in, line) ||
      line != "layer,rank,loss,max_abs_noise,admissible")
    throw InvalidInputError("rank curve csv: bad header");
  std::vector<RankCurvePoint> pts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    RankCurvePoint p;
    std::getline(row, cell, ',');
    if (layer_index) *layer_index = std::atoi(cell.c_str());
    std::getline(row, cell, ',');
    p.rank = std::atoi(cell.c_str());
    std::getline(row, cell, ',');
    p.measured_loss = std::strtod(cell.c_str(), nullptr);
    std::getline(row, cell, ',');
    p.max_abs_noise = std::strtod(cell.c_str(), nullptr);
    std::getline(row, cell, ',');
    p.admissible = cell == "1";
    pts.push_back(p);
  }
  return pts;
}

}  // namespace rankloss
