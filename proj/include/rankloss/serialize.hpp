#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "rankloss/network.hpp"

namespace rankloss {

// Model files are JSON: format_version, loss_kind, layers with row-major
// weights, bias, activation and (for decomposed layers) the factor pair.
// Doubles round-trip exactly.
Network load_model(const std::filesystem::path& path);
void save_model(const Network& net, const std::filesystem::path& path);

// Dataset CSV: first line is exactly "# format_version: 1", then one sample
// per row, features first and the label/target in the last column. An
// all-integral last column fills both the label and the 1-d target view.
Dataset load_dataset_csv(const std::filesystem::path& path);
void save_dataset_csv(const Dataset& data, const std::filesystem::path& path);

// Seeded Gaussian blobs for toy classification runs. Deterministic for a
// given (classes, count, dim, seed); labels are assigned round-robin.
Dataset make_blobs(int classes, int count, int dim, std::uint64_t seed);

// "blobs:<classes>:<count>" with an optional ":<dim>" suffix (default 16).
struct GeneratorSpec {
  int classes = 0;
  int count = 0;
  int dim = 16;
};

std::optional<GeneratorSpec> parse_generator_spec(const std::string& spec);

}  // namespace rankloss
