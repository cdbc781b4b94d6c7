#include "rankloss/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

namespace rankloss {

namespace {

constexpr const char* kDatasetHeader = "# format_version: 1";

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_cell(const std::string& cell, const std::filesystem::path& path,
                  std::size_t line_no) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v))
    throw InvalidInputError("dataset " + path.string() + ": bad number '" +
                            cell + "' on line " + std::to_string(line_no));
  return v;
}

}  // namespace

Network load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse model file " + path.string() + ": " + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != 1)
      throw InvalidInputError("model " + path.string() +
                              ": unsupported format_version");
    Network net;
    net.loss_kind = loss_kind_from_string(j.at("loss_kind").get<std::string>());
    for (const auto& lj : j.at("layers")) {
      Layer layer;
      const int rows = lj.at("rows").get<int>();
      const int cols = lj.at("cols").get<int>();
      if (rows < 1 || cols < 1)
        throw InvalidInputError("model " + path.string() + ": bad layer shape");
      layer.weight = Matrix(rows, cols);
      const auto& wv = lj.at("weights");
      if (wv.size() != layer.weight.data.size())
        throw InvalidInputError("model " + path.string() +
                                ": weights length mismatch");
      for (std::size_t e = 0; e < layer.weight.data.size(); ++e)
        layer.weight.data[e] = wv[e].get<double>();
      const auto& bv = lj.at("bias");
      if (static_cast<int>(bv.size()) != rows)
        throw InvalidInputError("model " + path.string() + ": bias length mismatch");
      layer.bias.resize(rows);
      for (int i = 0; i < rows; ++i) layer.bias[i] = bv[i].get<double>();
      layer.activation =
          activation_from_string(lj.at("activation").get<std::string>());
      if (lj.contains("factors")) {
        const auto& fj = lj["factors"];
        FactorPair f;
        f.rank = fj.at("rank").get<int>();
        if (f.rank < 1)
          throw InvalidInputError("model " + path.string() + ": bad factor rank");
        f.l = Matrix(rows, f.rank);
        f.r = Matrix(cols, f.rank);
        const auto& lv = fj.at("l");
        const auto& rv = fj.at("r");
        if (lv.size() != f.l.data.size() || rv.size() != f.r.data.size())
          throw InvalidInputError("model " + path.string() +
                                  ": factor length mismatch");
        for (std::size_t e = 0; e < f.l.data.size(); ++e)
          f.l.data[e] = lv[e].get<double>();
        for (std::size_t e = 0; e < f.r.data.size(); ++e)
          f.r.data[e] = rv[e].get<double>();
        layer.factors = std::move(f);
        layer.decomposed = true;
      }
      net.layers.push_back(std::move(layer));
    }
    net.validate();
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInputError("model " + path.string() + ": " + e.what());
  }
}

void save_model(const Network& net, const std::filesystem::path& path) {
  net.validate();
  nlohmann::json j;
  j["format_version"] = 1;
  j["loss_kind"] = to_string(net.loss_kind);
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers) {
    nlohmann::json lj;
    lj["rows"] = layer.weight.rows;
    lj["cols"] = layer.weight.cols;
    lj["activation"] = to_string(layer.activation);
    lj["weights"] = layer.weight.data;
    lj["bias"] = layer.bias;
    if (layer.decomposed) {
      nlohmann::json fj;
      fj["rank"] = layer.factors->rank;
      fj["l"] = layer.factors->l.data;
      fj["r"] = layer.factors->r.data;
      lj["factors"] = fj;
    }
    layers.push_back(lj);
  }
  j["layers"] = layers;
  std::ofstream out(path);
  if (!out) throw IoError("cannot open model file for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out.good()) throw IoError("failed while writing model file: " + path.string());
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kDatasetHeader)
    throw InvalidInputError("dataset " + path.string() +
                            ": first line must be '" + std::string(kDatasetHeader) + "'");

  Dataset data;
  std::vector<double> last_col;
  std::size_t width = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(row, cell, ',')) values.push_back(parse_cell(cell, path, line_no));
    if (values.size() < 2)
      throw InvalidInputError("dataset " + path.string() + ": line " +
                              std::to_string(line_no) + " needs features and a label");
    if (width == 0)
      width = values.size();
    else if (values.size() != width)
      throw InvalidInputError("dataset " + path.string() + ": line " +
                              std::to_string(line_no) + " has inconsistent width");
    last_col.push_back(values.back());
    values.pop_back();
    data.inputs.push_back(std::move(values));
  }
  if (data.inputs.empty())
    throw InvalidInputError("dataset " + path.string() + ": no samples");

  bool integral = true;
  for (double v : last_col)
    if (!(v >= 0.0 && v == std::floor(v) && v <= 2147483647.0)) {
      integral = false;
      break;
    }
  if (integral)
    for (double v : last_col) data.labels.push_back(static_cast<int>(v));
  for (double v : last_col) data.targets.push_back({v});
  return data;
}

void save_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  if (data.size() == 0) throw InvalidInputError("save_dataset_csv: empty dataset");
  const bool labeled = data.labels.size() == data.size();
  if (!labeled) {
    if (data.targets.size() != data.size())
      throw InvalidInputError("save_dataset_csv: dataset has neither labels nor targets");
    for (const auto& t : data.targets)
      if (t.size() != 1)
        throw InvalidInputError("save_dataset_csv: only 1-d targets fit the format");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open dataset file for writing: " + path.string());
  out << kDatasetHeader << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.inputs[i]) out << fmt17(v) << ',';
    if (labeled)
      out << data.labels[i] << '\n';
    else
      out << fmt17(data.targets[i][0]) << '\n';
  }
  if (!out.good()) throw IoError("failed while writing dataset file: " + path.string());
}

Dataset make_blobs(int classes, int count, int dim, std::uint64_t seed) {
  if (classes < 2) throw InvalidInputError("make_blobs: need at least 2 classes");
  if (count < classes) throw InvalidInputError("make_blobs: need a sample per class");
  if (dim < 1) throw InvalidInputError("make_blobs: dim must be >= 1");

  std::mt19937_64 gen(seed);
  auto uniform = [&] { return static_cast<double>(gen() >> 11) * 0x1.0p-53; };
  // Hand-rolled Box-Muller: the standard distributions are not bit-portable
  // across library implementations, and dataset bytes should be.
  bool has_spare = false;
  double spare = 0.0;
  auto normal = [&] {
    if (has_spare) {
      has_spare = false;
      return spare;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586 * u2;
    spare = radius * std::sin(angle);
    has_spare = true;
    return radius * std::cos(angle);
  };

  std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
  for (auto& c : centers)
    for (double& v : c) v = 3.0 * normal();

  Dataset data;
  data.inputs.reserve(count);
  data.labels.reserve(count);
  data.targets.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int label = i % classes;
    std::vector<double> x(dim);
    for (int d = 0; d < dim; ++d) x[d] = centers[label][d] + 0.8 * normal();
    data.inputs.push_back(std::move(x));
    data.labels.push_back(label);
    data.targets.push_back({static_cast<double>(label)});
  }
  return data;
}

std::optional<GeneratorSpec> parse_generator_spec(const std::string& spec) {
  GeneratorSpec g;
  int consumed = 0;
  if (std::sscanf(spec.c_str(), "blobs:%d:%d%n", &g.classes, &g.count,
                  &consumed) != 2)
    return std::nullopt;
  if (g.classes <= 0 || g.count <= 0) return std::nullopt;
  const std::string rest = spec.substr(consumed);
  if (rest.empty()) return g;
  int d = 0, used = 0;
  if (std::sscanf(rest.c_str(), ":%d%n", &d, &used) == 1 &&
      static_cast<std::size_t>(used) == rest.size() && d > 0) {
    g.dim = d;
    return g;
  }
  return std::nullopt;
}

}  // namespace rankloss
