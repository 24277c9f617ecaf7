#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "vreid/tensor.hpp"

namespace vreid::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Fully connected stack: Linear -> [BatchNorm] -> ReLU on every hidden layer,
/// plain Linear on the output layer.
struct MlpConfig {
  std::vector<std::size_t> layer_dims;  // input dim, then each layer's output dim
  bool hidden_normalization = true;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t num_layers() const { return layer_dims.size() - 1; }
};

void validate(const MlpConfig& cfg);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
};

struct NormLayer {
  Vector scale;
  Vector shift;
  Vector running_mean;
  Vector running_var;
};

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kNormMomentum = 0.9;

struct MlpParams {
  std::vector<DenseLayer> dense;
  std::vector<NormLayer> norm;  // one per hidden layer when normalization is on
  // Bumped by every optimizer step; a forward cache from an older generation is stale.
  std::uint64_t generation = 0;
};

/// He-style uniform init: W ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
MlpParams init_mlp(const MlpConfig& cfg, std::uint64_t seed);
MlpParams zero_mlp(const MlpConfig& cfg);

enum class Mode { Train, Eval };

struct LayerCache {
  Matrix input;       // n x in
  Matrix normalized;  // x-hat of the batch norm (hidden layers with normalization)
  Vector inv_std;
  Matrix pre_activation;  // input to ReLU (hidden layers)
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::uint64_t generation = 0;
  bool valid = false;
};

/// Eval-mode forward over a batch (rows are samples). Uses running statistics,
/// so each row's output is independent of the rest of the batch.
Matrix forward_eval(const MlpParams& params, const MlpConfig& cfg, const Matrix& batch);
FeatureVector forward(const MlpParams& params, const MlpConfig& cfg, const FeatureVector& x);

/// Train-mode forward with batch statistics; fills `cache` for backward and,
/// when requested, folds the batch statistics into the running estimates.
Matrix forward_train(MlpParams& params, const MlpConfig& cfg, const Matrix& batch, ForwardCache& cache,
                     bool update_running_stats = true);

struct MlpGrads {
  std::vector<DenseLayer> dense;  // weight/bias gradients
  std::vector<Vector> norm_scale;
  std::vector<Vector> norm_shift;
  Matrix input;  // dL/d(batch)
};

MlpGrads backward(const MlpParams& params, const MlpConfig& cfg, const ForwardCache& cache,
                  const Matrix& upstream);

/// Visit trainable tensors in a fixed order (weights, biases, norm scale, norm shift).
void for_each_trainable(MlpParams& params, const std::function<void(std::span<double>)>& fn);
void for_each_trainable(MlpGrads& grads, const std::function<void(std::span<double>)>& fn);
std::size_t parameter_count(const MlpParams& params);

Matrix to_batch(std::span<const FeatureVector> rows);
FeatureVector row_vector(const Matrix& m, Eigen::Index row);

}  // namespace vreid::nn
