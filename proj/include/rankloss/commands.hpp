#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rankloss/optimizer.hpp"
#include "rankloss/serialize.hpp"

namespace rankloss {

// Dataset sources accept either a CSV path or a generator spec like
// "blobs:3:1000". Generated holdout sets draw from seed + 1 so they
// never coincide with the calibration draw.
Dataset resolve_dataset(const std::string& source, std::uint64_t seed);

struct TrainToyArgs {
  std::vector<int> arch;
  std::string data;
  int steps = 200;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = ".";
};

struct CalibrateArgs {
  std::filesystem::path model;
  std::string data;
  double tolerance = kDefaultProbeTolerance;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = ".";
  bool json_stdout = false;
};

struct CompressArgs {
  std::filesystem::path model;
  std::string data;
  std::string holdout;  // empty = none
  Mode mode = Mode::lossless;
  std::string eps = "calibrate";  // "calibrate" or a positive number
  double tolerance = kDefaultProbeTolerance;
  GradientRefresh refresh = GradientRefresh::once;
  bool rank_by_measured = true;
  bool refine_factors = false;
  bool curves = false;
  std::uint64_t seed = 0;
  std::string report_format = "json";  // "json" | "csv" (json always written)
  std::filesystem::path out_dir = ".";
  bool json_stdout = false;
};

struct ProbeArgs {
  std::filesystem::path model;
  std::string data;
  std::vector<int> layers;  // empty = all
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = ".";
  bool json_stdout = false;
};

struct EvalArgs {
  std::filesystem::path model;
  std::string data;
  std::uint64_t seed = 0;
  bool json_stdout = false;
};

int cmd_train_toy(const TrainToyArgs& args);
int cmd_calibrate(const CalibrateArgs& args);
int cmd_compress(const CompressArgs& args);
int cmd_probe(const ProbeArgs& args);
int cmd_eval(const EvalArgs& args);

}  // namespace rankloss
