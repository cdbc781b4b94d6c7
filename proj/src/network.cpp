#include "rankloss/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>

#include "rankloss/parallel.hpp"

namespace rankloss {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

const char* to_string(LossKind k) {
  return k == LossKind::softmax_cross_entropy ? "softmax_cross_entropy"
                                              : "mean_squared_error";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidInputError("unknown activation '" + s + "'");
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "softmax_cross_entropy") return LossKind::softmax_cross_entropy;
  if (s == "mean_squared_error") return LossKind::mean_squared_error;
  throw InvalidInputError("unknown loss kind '" + s + "'");
}

int Network::input_dim() const {
  if (layers.empty()) throw StateError("network: no layers");
  return layers.front().in_dim();
}

int Network::output_dim() const {
  if (layers.empty()) throw StateError("network: no layers");
  return layers.back().out_dim();
}

std::int64_t Network::weight_param_count() const {
  std::int64_t total = 0;
  for (const auto& layer : layers) {
    if (layer.decomposed)
      total += layer.factors->param_count();
    else
      total += static_cast<std::int64_t>(layer.weight.rows) * layer.weight.cols;
  }
  return total;
}

void Network::validate() const {
  if (layers.empty()) throw InvalidInputError("network: no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Layer& layer = layers[l];
    const std::string where = "network: layer " + std::to_string(l);
    if (layer.weight.rows < 1 || layer.weight.cols < 1)
      throw InvalidInputError(where + " has an empty weight");
    if (static_cast<int>(layer.bias.size()) != layer.weight.rows)
      throw InvalidInputError(where + " bias length does not match rows");
    if (!layer.weight.all_finite())
      throw InvalidInputError(where + " has a non-finite weight entry");
    for (double b : layer.bias)
      if (!std::isfinite(b)) throw InvalidInputError(where + " has a non-finite bias");
    if (l > 0 && layers[l - 1].weight.rows != layer.weight.cols)
      throw InvalidInputError(where + " breaks the dimension chain");
    if (layer.decomposed) {
      if (!layer.factors)
        throw InvalidInputError(where + " is marked decomposed but has no factors");
      const FactorPair& f = *layer.factors;
      if (f.l.rows != layer.weight.rows || f.r.rows != layer.weight.cols ||
          f.l.cols != f.rank || f.r.cols != f.rank)
        throw InvalidInputError(where + " factor shapes do not match the weight");
    }
  }
}

namespace {

constexpr std::size_t kGradBlock = 64;

double apply_act(Activation a, double z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
  }
  return z;
}

// Derivative expressed through the activation output. relu output is zero
// exactly where its input was <= 0, so the kink at 0 maps to derivative 0.
double act_derivative(Activation a, double out) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return out > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - out * out;
  }
  return 1.0;
}

void layer_forward(const Layer& layer, const std::vector<double>& in,
                   std::vector<double>& out) {
  const Matrix& w = layer.weight;
  out.assign(w.rows, 0.0);
  for (int i = 0; i < w.rows; ++i) {
    double acc = layer.bias[i];
    const double* row = &w.data[static_cast<std::size_t>(i) * w.cols];
    for (int j = 0; j < w.cols; ++j) acc += row[j] * in[j];
    out[i] = apply_act(layer.activation, acc);
  }
}

const std::vector<double>& forward_value(const Network& net,
                                         const std::vector<double>& x,
                                         std::vector<double>& a,
                                         std::vector<double>& b) {
  const std::vector<double>* in = &x;
  std::vector<double>* out = &a;
  std::vector<double>* spare = &b;
  for (const auto& layer : net.layers) {
    layer_forward(layer, *in, *out);
    in = out;
    std::swap(out, spare);
  }
  return *in;
}

void check_compatible(const Network& net, const Dataset& data) {
  net.validate();
  const std::size_t m = data.size();
  if (m == 0) throw InvalidInputError("dataset: empty");
  const int din = net.input_dim();
  const int dout = net.output_dim();
  for (std::size_t i = 0; i < m; ++i) {
    if (static_cast<int>(data.inputs[i].size()) != din)
      throw InvalidInputError("dataset: sample " + std::to_string(i) +
                              " dimension does not match network input");
    for (double v : data.inputs[i])
      if (!std::isfinite(v))
        throw InvalidInputError("dataset: non-finite feature in sample " +
                                std::to_string(i));
  }
  if (net.loss_kind == LossKind::softmax_cross_entropy) {
    if (data.labels.size() != m)
      throw InvalidInputError("dataset: class labels required for cross-entropy");
    for (std::size_t i = 0; i < m; ++i)
      if (data.labels[i] < 0 || data.labels[i] >= dout)
        throw InvalidInputError("dataset: label out of range in sample " +
                                std::to_string(i));
  } else {
    if (data.targets.size() != m)
      throw InvalidInputError("dataset: targets required for mean squared error");
    for (std::size_t i = 0; i < m; ++i) {
      if (static_cast<int>(data.targets[i].size()) != dout)
        throw InvalidInputError("dataset: target dimension mismatch in sample " +
                                std::to_string(i));
      for (double v : data.targets[i])
        if (!std::isfinite(v))
          throw InvalidInputError("dataset: non-finite target in sample " +
                                  std::to_string(i));
    }
  }
}

double loss_from_output(const Network& net, const Dataset& data, std::size_t i,
                        const std::vector<double>& out) {
  if (net.loss_kind == LossKind::softmax_cross_entropy) {
    double shift = out[0];
    for (double v : out) shift = std::max(shift, v);
    double sumexp = 0.0;
    for (double v : out) sumexp += std::exp(v - shift);
    return std::log(sumexp) + shift - out[data.labels[i]];
  }
  const auto& t = data.targets[i];
  double acc = 0.0;
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double d = out[j] - t[j];
    acc += d * d;
  }
  return acc;
}

void output_gradient(const Network& net, const Dataset& data, std::size_t i,
                     const std::vector<double>& out, std::vector<double>& g) {
  g.assign(out.size(), 0.0);
  if (net.loss_kind == LossKind::softmax_cross_entropy) {
    double shift = out[0];
    for (double v : out) shift = std::max(shift, v);
    double sumexp = 0.0;
    for (double v : out) sumexp += std::exp(v - shift);
    for (std::size_t j = 0; j < out.size(); ++j)
      g[j] = std::exp(out[j] - shift) / sumexp;
    g[data.labels[i]] -= 1.0;
  } else {
    const auto& t = data.targets[i];
    for (std::size_t j = 0; j < out.size(); ++j) g[j] = 2.0 * (out[j] - t[j]);
  }
}

struct FullGradient {
  std::vector<Matrix> w;
  std::vector<std::vector<double>> b;
};

FullGradient zero_gradient(const Network& net) {
  FullGradient g;
  g.w.reserve(net.layers.size());
  g.b.reserve(net.layers.size());
  for (const auto& layer : net.layers) {
    g.w.emplace_back(layer.weight.rows, layer.weight.cols, 0.0);
    g.b.emplace_back(layer.bias.size(), 0.0);
  }
  return g;
}

void accumulate_sample(const Network& net, const Dataset& data, std::size_t i,
                       FullGradient& grad,
                       std::vector<std::vector<double>>& acts,
                       std::vector<double>& ga, std::vector<double>& gz) {
  acts.resize(net.layers.size() + 1);
  acts[0] = data.inputs[i];
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    layer_forward(net.layers[l], acts[l], acts[l + 1]);

  output_gradient(net, data, i, acts.back(), ga);
  for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
    const Layer& layer = net.layers[l];
    const auto& out = acts[l + 1];
    const auto& in = acts[l];
    gz.assign(out.size(), 0.0);
    for (std::size_t j = 0; j < out.size(); ++j)
      gz[j] = ga[j] * act_derivative(layer.activation, out[j]);

    Matrix& gw = grad.w[l];
    for (int r = 0; r < gw.rows; ++r) {
      const double gzr = gz[r];
      grad.b[l][r] += gzr;
      if (gzr == 0.0) continue;
      double* row = &gw.data[static_cast<std::size_t>(r) * gw.cols];
      for (int c = 0; c < gw.cols; ++c) row[c] += gzr * in[c];
    }
    if (l > 0) {
      const Matrix& w = layer.weight;
      ga.assign(in.size(), 0.0);
      for (int r = 0; r < w.rows; ++r) {
        const double gzr = gz[r];
        if (gzr == 0.0) continue;
        const double* row = &w.data[static_cast<std::size_t>(r) * w.cols];
        for (int c = 0; c < w.cols; ++c) ga[c] += gzr * row[c];
      }
    }
  }
}

// Block-parallel mean gradient. Blocks have a fixed size and are folded in
// index order, so the floating-point result does not depend on thread count.
FullGradient mean_full_gradient(const Network& net, const Dataset& data) {
  check_compatible(net, data);
  const std::size_t m = data.size();
  const std::size_t nblocks = (m + kGradBlock - 1) / kGradBlock;
  std::vector<FullGradient> partials(nblocks);
  const int nt = thread_cap();
#pragma omp parallel for num_threads(nt) schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(nblocks); ++bi) {
    FullGradient acc = zero_gradient(net);
    std::vector<std::vector<double>> acts;
    std::vector<double> ga, gz;
    const std::size_t lo = static_cast<std::size_t>(bi) * kGradBlock;
    const std::size_t hi = std::min(m, lo + kGradBlock);
    for (std::size_t i = lo; i < hi; ++i)
      accumulate_sample(net, data, i, acc, acts, ga, gz);
    partials[bi] = std::move(acc);
  }

  FullGradient total = zero_gradient(net);
  for (std::size_t bi = 0; bi < nblocks; ++bi) {
    for (std::size_t l = 0; l < total.w.size(); ++l) {
      auto& dst = total.w[l].data;
      const auto& src = partials[bi].w[l].data;
      for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
      for (std::size_t e = 0; e < total.b[l].size(); ++e)
        total.b[l][e] += partials[bi].b[l][e];
    }
  }
  const double inv = 1.0 / static_cast<double>(m);
  for (std::size_t l = 0; l < total.w.size(); ++l) {
    for (double& v : total.w[l].data) v *= inv;
    for (double& v : total.b[l]) v *= inv;
  }
  return total;
}

double unit_uniform(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;  // [0, 1)
}

// Random orientation, geometric singular spectrum. Plain uniform fills give
// toy nets an essentially flat spectrum, which no truncation can compress;
// trained production layers concentrate energy in a few directions, and the
// fixtures should live in that regime.
Matrix spectral_init(int rows, int cols, std::mt19937_64& gen) {
  Matrix g(rows, cols);
  for (double& x : g.data) x = 2.0 * unit_uniform(gen) - 1.0;
  const SvdResult d = svd(g);
  const int r = static_cast<int>(d.s.size());
  const double lim = std::sqrt(6.0 / (rows + cols));
  const double target_energy = rows * cols * lim * lim / 3.0;
  constexpr double kDecay = 0.65;
  double geom = 0.0, power = 1.0;
  for (int i = 0; i < r; ++i) {
    geom += power * power;
    power *= kDecay;
  }
  double s = std::sqrt(target_energy / geom);
  Matrix w(rows, cols, 0.0);
  for (int k = 0; k < r; ++k) {
    for (int i = 0; i < rows; ++i) {
      const double us = d.u(i, k) * s;
      if (us == 0.0) continue;
      for (int j = 0; j < cols; ++j) w(i, j) += us * d.v(j, k);
    }
    s *= kDecay;
  }
  return w;
}

}  // namespace

std::vector<double> forward(const Network& net, const std::vector<double>& x) {
  net.validate();
  if (static_cast<int>(x.size()) != net.input_dim())
    throw InvalidInputError("forward: input dimension mismatch");
  for (double v : x)
    if (!std::isfinite(v)) throw InvalidInputError("forward: non-finite input");
  std::vector<double> a, b;
  return forward_value(net, x, a, b);
}

std::vector<std::vector<double>> batch_forward(const Network& net,
                                               const Dataset& data) {
  net.validate();
  const std::size_t m = data.size();
  if (m == 0) throw InvalidInputError("dataset: empty");
  const int din = net.input_dim();
  for (std::size_t i = 0; i < m; ++i) {
    if (static_cast<int>(data.inputs[i].size()) != din)
      throw InvalidInputError("dataset: sample " + std::to_string(i) +
                              " dimension does not match network input");
    for (double v : data.inputs[i])
      if (!std::isfinite(v))
        throw InvalidInputError("dataset: non-finite feature in sample " +
                                std::to_string(i));
  }
  std::vector<std::vector<double>> outs(m);
  const int nt = thread_cap();
#pragma omp parallel for num_threads(nt) schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    std::vector<double> a, b;
    outs[i] = forward_value(net, data.inputs[i], a, b);
  }
  return outs;
}

double sample_loss(const Network& net, const Dataset& data, std::size_t index) {
  check_compatible(net, data);
  if (index >= data.size())
    throw InvalidInputError("sample_loss: index out of range");
  std::vector<double> a, b;
  const auto& out = forward_value(net, data.inputs[index], a, b);
  return loss_from_output(net, data, index, out);
}

double dataset_loss(const Network& net, const Dataset& data) {
  check_compatible(net, data);
  const std::size_t m = data.size();
  std::vector<double> per_sample(m);
  const int nt = thread_cap();
#pragma omp parallel for num_threads(nt) schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    std::vector<double> a, b;
    const auto& out = forward_value(net, data.inputs[i], a, b);
    per_sample[i] = loss_from_output(net, data, i, out);
  }
  return pairwise_sum(per_sample.data(), m) / static_cast<double>(m);
}

GradientSnapshot gradients(const Network& net, const Dataset& data) {
  FullGradient g = mean_full_gradient(net, data);
  GradientSnapshot snap;
  snap.layer_grads = std::move(g.w);
  return snap;
}

GradientSnapshot sample_gradients(const Network& net, const Dataset& data,
                                  std::size_t index) {
  check_compatible(net, data);
  if (index >= data.size())
    throw InvalidInputError("sample_gradients: index out of range");
  FullGradient acc = zero_gradient(net);
  std::vector<std::vector<double>> acts;
  std::vector<double> ga, gz;
  accumulate_sample(net, data, index, acc, acts, ga, gz);
  GradientSnapshot snap;
  snap.layer_grads = std::move(acc.w);
  return snap;
}

Network perturb(const Network& net, int layer_index, const Matrix& delta) {
  net.validate();
  if (layer_index < 0 || layer_index >= static_cast<int>(net.layers.size()))
    throw InvalidInputError("perturb: layer index out of range");
  if (!delta.same_shape(net.layers[layer_index].weight))
    throw InvalidInputError("perturb: delta shape does not match weight");
  require_finite(delta, "perturb delta");
  Network out = net;
  Matrix& w = out.layers[layer_index].weight;
  for (std::size_t e = 0; e < w.data.size(); ++e) w.data[e] += delta.data[e];
  return out;
}

Network apply_factorization(const Network& net, int layer_index,
                            const FactorPair& f) {
  net.validate();
  if (layer_index < 0 || layer_index >= static_cast<int>(net.layers.size()))
    throw InvalidInputError("apply_factorization: layer index out of range");
  const Layer& layer = net.layers[layer_index];
  if (layer.decomposed)
    throw StateError("apply_factorization: layer " + std::to_string(layer_index) +
                     " is already decomposed");
  Matrix p = f.product();
  if (!p.same_shape(layer.weight))
    throw InvalidInputError(
        "apply_factorization: factor product shape does not match weight");
  Network out = net;
  out.layers[layer_index].weight = std::move(p);
  out.layers[layer_index].decomposed = true;
  out.layers[layer_index].factors = f;
  return out;
}

Network with_layer_weight(const Network& net, int layer_index, Matrix weight) {
  if (layer_index < 0 || layer_index >= static_cast<int>(net.layers.size()))
    throw InvalidInputError("with_layer_weight: layer index out of range");
  if (!weight.same_shape(net.layers[layer_index].weight))
    throw InvalidInputError("with_layer_weight: shape mismatch");
  Network out = net;
  out.layers[layer_index].weight = std::move(weight);
  return out;
}

TrainOutcome train_toy(const std::vector<int>& arch, const Dataset& data,
                       int steps, double learning_rate, std::uint64_t seed) {
  if (arch.size() < 2) throw InvalidInputError("train_toy: arch needs >= 2 sizes");
  for (int d : arch)
    if (d < 1) throw InvalidInputError("train_toy: arch sizes must be >= 1");
  if (steps < 0) throw InvalidInputError("train_toy: negative step count");
  if (learning_rate <= 0.0 || !std::isfinite(learning_rate))
    throw InvalidInputError("train_toy: learning rate must be positive");

  Network net;
  // Labels win when a dataset carries both views (a CSV with an integral
  // last column fills both).
  if (!data.labels.empty())
    net.loss_kind = LossKind::softmax_cross_entropy;
  else if (!data.targets.empty())
    net.loss_kind = LossKind::mean_squared_error;
  else
    throw InvalidInputError("train_toy: dataset has neither labels nor targets");

  std::mt19937_64 gen(seed);
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    Layer layer;
    layer.weight = spectral_init(arch[l + 1], arch[l], gen);
    layer.bias.assign(arch[l + 1], 0.0);
    layer.activation =
        (l + 2 == arch.size()) ? Activation::identity : Activation::tanh;
    net.layers.push_back(std::move(layer));
  }
  check_compatible(net, data);

  TrainOutcome out;
  out.initial_loss = dataset_loss(net, data);
  for (int step = 0; step < steps; ++step) {
    const FullGradient g = mean_full_gradient(net, data);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      Matrix& w = net.layers[l].weight;
      for (std::size_t e = 0; e < w.data.size(); ++e)
        w.data[e] -= learning_rate * g.w[l].data[e];
      for (std::size_t e = 0; e < net.layers[l].bias.size(); ++e)
        net.layers[l].bias[e] -= learning_rate * g.b[l][e];
      if (!w.all_finite())
        throw TrainingError("train_toy: diverged at step " + std::to_string(step));
    }
  }
  out.final_loss = dataset_loss(net, data);
  if (!std::isfinite(out.final_loss))
    throw TrainingError("train_toy: final loss is not finite");
  out.net = std::move(net);
  return out;
}

}  // namespace rankloss
