#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rankloss/network.hpp"

namespace rankloss {

enum class SkipReason {
  none,
  already_decomposed,
  no_compressive_rank,
  lossless_violated,
  non_negative_inner_product,
  measured_loss_increase,
};

const char* to_string(SkipReason r);
SkipReason skip_reason_from_string(const std::string& s);

struct Metrics {
  double loss = 0.0;
  std::optional<double> top1;  // classification only
  std::optional<double> top5;  // emitted only when the class count exceeds 5
  std::int64_t samples = 0;
};

struct LayerReportEntry {
  int layer = 0;
  int rows = 0;
  int cols = 0;
  bool factorized = false;
  int rank = 0;  // valid when factorized
  SkipReason skip_reason = SkipReason::none;
  double eps_used = 0.0;
  bool eps_fallback = false;
  double max_abs_noise = 0.0;  // of the applied pair, valid when factorized
  double fro_noise = 0.0;
  double predicted_delta = 0.0;
  double loss_before = 0.0;  // working loss entering / leaving this layer
  double loss_after = 0.0;
  std::int64_t params_before = 0;
  std::int64_t params_after = 0;
};

struct ReportTotals {
  std::int64_t original_params = 0;
  std::int64_t compressed_params = 0;
  double drop_rate = 0.0;
  int layers_factorized = 0;
};

// Config echo. Input paths are included; the output directory is not, so two
// identical runs writing to different places emit byte-identical reports.
struct ReportConfig {
  std::string mode;
  std::string eps_source;  // "calibrated" | "fixed"
  double fixed_eps = 0.0;  // meaningful when eps_source == "fixed"
  double probe_tolerance = 0.0;
  std::string gradient_refresh;  // "once" | "per-layer"
  bool rank_by_measured = true;
  bool refine_factors = false;
  std::uint64_t seed = 0;
  std::string model_path;
  std::string data_path;
  std::string holdout_path;  // empty when absent
};

struct CompressionReport {
  ReportConfig config;
  std::vector<LayerReportEntry> layers;
  ReportTotals totals;
  Metrics calibration_before;
  Metrics calibration_after;
  std::optional<Metrics> holdout_before;
  std::optional<Metrics> holdout_after;
  // Wall-clock time; deliberately kept out of the serialized report (it
  // would break reproducible bytes) and written to a sidecar by the CLI.
  double elapsed_seconds = 0.0;
};

// Loss plus top-1 (and top-5 when classes > 5) for classification networks;
// loss only for regression. Ties in argmax go to the lowest class index.
Metrics evaluate(const Network& net, const Dataset& data);

// (original - compressed) / original.
double drop_rate(std::int64_t original_params, std::int64_t compressed_params);

struct RankCurvePoint {
  int rank = 0;
  double measured_loss = 0.0;
  double max_abs_noise = 0.0;
  bool admissible = false;
};

// Measured loss and admissibility at every compressive rank of one layer.
std::vector<RankCurvePoint> rank_curve(const Network& net, const Dataset& data,
                                       int layer_index, double eps);

// Floats in reports are rounded to 9 significant digits before storage so
// that emitted bytes are stable.
double round9(double v);

nlohmann::json report_to_json(const CompressionReport& report);
CompressionReport report_from_json(const nlohmann::json& j);

enum class ReportFormat { json, csv };

void emit_report(const CompressionReport& report,
                 const std::filesystem::path& path, ReportFormat format);

void write_rank_curve_csv(std::ostream& out, int layer_index,
                          const std::vector<RankCurvePoint>& curve);
std::vector<RankCurvePoint> read_rank_curve_csv(std::istream& in,
                                                int* layer_index = nullptr);

}  // namespace rankloss
