#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rankloss/matrix.hpp"
#include "rankloss/svd.hpp"

namespace rankloss {

enum class Activation { identity, relu, tanh };
enum class LossKind { softmax_cross_entropy, mean_squared_error };

const char* to_string(Activation a);
const char* to_string(LossKind k);
Activation activation_from_string(const std::string& s);
LossKind loss_kind_from_string(const std::string& s);

// One dense layer, y = act(W x + b) with W of shape d_out x d_in. Once a
// layer is decomposed the stored weight equals factors->product() and the
// pair is what a deployment would keep; the dense weight stays around so the
// rest of the toolkit keeps operating on plain matrices.
struct Layer {
  Matrix weight;
  std::vector<double> bias;
  Activation activation = Activation::identity;
  bool decomposed = false;
  std::optional<FactorPair> factors;

  int out_dim() const { return weight.rows; }
  int in_dim() const { return weight.cols; }
};

struct Network {
  std::vector<Layer> layers;
  LossKind loss_kind = LossKind::softmax_cross_entropy;

  int input_dim() const;
  int output_dim() const;
  // Weight parameters only (N*M dense, k*(N+M) once decomposed); biases are
  // never factorized and drop out of compression accounting.
  std::int64_t weight_param_count() const;
  void validate() const;
};

// Calibration or evaluation set. `labels` carries class indices for
// cross-entropy networks, `targets` carries regression vectors for mean
// squared error; a loaded CSV may fill both views when the last column is
// integral.
struct Dataset {
  std::vector<std::vector<double>> inputs;
  std::vector<int> labels;
  std::vector<std::vector<double>> targets;

  std::size_t size() const { return inputs.size(); }
};

struct GradientSnapshot {
  std::vector<Matrix> layer_grads;  // one per layer, shaped like its weight
};

std::vector<double> forward(const Network& net, const std::vector<double>& x);

// Outputs for every sample; validates once, then runs samples in parallel.
std::vector<std::vector<double>> batch_forward(const Network& net,
                                               const Dataset& data);

double sample_loss(const Network& net, const Dataset& data, std::size_t index);

// Mean per-sample loss. Parallel over samples; the reduction is a fixed
// pairwise tree, so the value is independent of thread count.
double dataset_loss(const Network& net, const Dataset& data);

// Mean weight gradient via reverse-mode accumulation. Samples are grouped
// into fixed blocks of 64 that are folded in index order, which keeps the
// result bit-identical across thread counts.
GradientSnapshot gradients(const Network& net, const Dataset& data);

// Weight gradient of a single sample (used by per-sample probing).
GradientSnapshot sample_gradients(const Network& net, const Dataset& data,
                                  std::size_t index);

// Copy of net with delta added onto one layer's weight.
Network perturb(const Network& net, int layer_index, const Matrix& delta);

// Copy of net with one layer's weight replaced by f.product() and the pair
// recorded. Refuses to decompose a layer twice.
Network apply_factorization(const Network& net, int layer_index,
                            const FactorPair& f);

// Copy of net with one layer's weight replaced outright (candidate probing).
Network with_layer_weight(const Network& net, int layer_index, Matrix weight);

struct TrainOutcome {
  Network net;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Deterministic full-batch gradient descent for building fixtures: tanh
// hidden layers, identity output, loss picked from the dataset (labels ->
// softmax cross-entropy, targets -> mean squared error). The seeded init
// reshapes each weight's spectrum to a geometric decay, giving toy nets the
// kind of spectral redundancy that makes truncation interesting at all.
TrainOutcome train_toy(const std::vector<int>& arch, const Dataset& data,
                       int steps, double learning_rate, std::uint64_t seed);

}  // namespace rankloss
