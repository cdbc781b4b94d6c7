#include "rankloss/reference.hpp"

#include <cmath>
#include <cstddef>

namespace rankloss::reference {

namespace {

std::vector<double> layer_out(const Layer& layer, const std::vector<double>& in) {
  std::vector<double> out(layer.weight.rows, 0.0);
  for (int i = 0; i < layer.weight.rows; ++i) {
    double z = layer.bias[i];
    for (int j = 0; j < layer.weight.cols; ++j) z += layer.weight(i, j) * in[j];
    switch (layer.activation) {
      case Activation::identity: out[i] = z; break;
      case Activation::relu: out[i] = z > 0.0 ? z : 0.0; break;
      case Activation::tanh: out[i] = std::tanh(z); break;
    }
  }
  return out;
}

double one_loss(const Network& net, const Dataset& data, std::size_t i) {
  std::vector<double> a = data.inputs[i];
  for (const auto& layer : net.layers) a = layer_out(layer, a);
  if (net.loss_kind == LossKind::softmax_cross_entropy) {
    double shift = a[0];
    for (double v : a) shift = std::max(shift, v);
    double sumexp = 0.0;
    for (double v : a) sumexp += std::exp(v - shift);
    return std::log(sumexp) + shift - a[data.labels[i]];
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - data.targets[i][j];
    acc += d * d;
  }
  return acc;
}

}  // namespace

std::vector<double> forward(const Network& net, const std::vector<double>& x) {
  std::vector<double> a = x;
  for (const auto& layer : net.layers) a = layer_out(layer, a);
  return a;
}

double dataset_loss(const Network& net, const Dataset& data) {
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) acc += one_loss(net, data, i);
  return acc / static_cast<double>(data.size());
}

GradientSnapshot gradients(const Network& net, const Dataset& data) {
  const std::size_t nl = net.layers.size();
  GradientSnapshot snap;
  for (const auto& layer : net.layers)
    snap.layer_grads.emplace_back(layer.weight.rows, layer.weight.cols, 0.0);

  for (std::size_t s = 0; s < data.size(); ++s) {
    std::vector<std::vector<double>> acts(nl + 1);
    acts[0] = data.inputs[s];
    for (std::size_t l = 0; l < nl; ++l) acts[l + 1] = layer_out(net.layers[l], acts[l]);

    const auto& out = acts[nl];
    std::vector<double> ga(out.size(), 0.0);
    if (net.loss_kind == LossKind::softmax_cross_entropy) {
      double shift = out[0];
      for (double v : out) shift = std::max(shift, v);
      double sumexp = 0.0;
      for (double v : out) sumexp += std::exp(v - shift);
      for (std::size_t j = 0; j < out.size(); ++j)
        ga[j] = std::exp(out[j] - shift) / sumexp;
      ga[data.labels[s]] -= 1.0;
    } else {
      for (std::size_t j = 0; j < out.size(); ++j)
        ga[j] = 2.0 * (out[j] - data.targets[s][j]);
    }

    for (int l = static_cast<int>(nl) - 1; l >= 0; --l) {
      const Layer& layer = net.layers[l];
      std::vector<double> gz(acts[l + 1].size(), 0.0);
      for (std::size_t j = 0; j < gz.size(); ++j) {
        double d = 1.0;
        if (layer.activation == Activation::relu)
          d = acts[l + 1][j] > 0.0 ? 1.0 : 0.0;
        else if (layer.activation == Activation::tanh)
          d = 1.0 - acts[l + 1][j] * acts[l + 1][j];
        gz[j] = ga[j] * d;
      }
      for (int i = 0; i < layer.weight.rows; ++i)
        for (int j = 0; j < layer.weight.cols; ++j)
          snap.layer_grads[l](i, j) += gz[i] * acts[l][j];
      if (l > 0) {
        ga.assign(acts[l].size(), 0.0);
        for (int i = 0; i < layer.weight.rows; ++i)
          for (int j = 0; j < layer.weight.cols; ++j)
            ga[j] += gz[i] * layer.weight(i, j);
      }
    }
  }
  for (auto& g : snap.layer_grads)
    for (double& v : g.data) v /= static_cast<double>(data.size());
  return snap;
}

GradientSnapshot finite_difference_gradients(const Network& net,
                                             const Dataset& data, double step) {
  GradientSnapshot snap;
  Network work = net;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Matrix g(net.layers[l].weight.rows, net.layers[l].weight.cols, 0.0);
    for (std::size_t e = 0; e < g.data.size(); ++e) {
      const double saved = work.layers[l].weight.data[e];
      work.layers[l].weight.data[e] = saved + step;
      const double up = reference::dataset_loss(work, data);
      work.layers[l].weight.data[e] = saved - step;
      const double down = reference::dataset_loss(work, data);
      work.layers[l].weight.data[e] = saved;
      g.data[e] = (up - down) / (2.0 * step);
    }
    snap.layer_grads.push_back(std::move(g));
  }
  return snap;
}

}  // namespace rankloss::reference
