#pragma once

#include <cstdint>
#include <vector>

#include "vreid/nn.hpp"

namespace vreid::nn {

struct AdamConfig {
  double base_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay_factor = 0.1;  // lr multiplier applied every `decay_every` epochs
  int decay_every = 15;
};

struct AdamState {
  AdamConfig config;
  std::vector<Vector> first_moment;
  std::vector<Vector> second_moment;
  std::uint64_t step = 0;
  int epoch = 0;  // set by the trainer; drives the step-decay schedule

  /// base_lr * decay_factor^(epoch / decay_every)
  double learning_rate() const;
};

AdamState make_adam(const MlpParams& params, const AdamConfig& config = {});

/// Bias-corrected Adam update. Bumps params.generation.
void adam_step(MlpParams& params, MlpGrads& grads, AdamState& state);

}  // namespace vreid::nn
