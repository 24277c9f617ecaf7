#include "vreid/optim.hpp"

#include <cmath>

#include "vreid/error.hpp"

namespace vreid::nn {

double AdamState::learning_rate() const {
  const int decays = config.decay_every > 0 ? epoch / config.decay_every : 0;
  return config.base_lr * std::pow(config.decay_factor, decays);
}

AdamState make_adam(const MlpParams& params, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  MlpParams shape = params;
  for_each_trainable(shape, [&](std::span<double> t) {
    s.first_moment.push_back(Vector::Zero(static_cast<Eigen::Index>(t.size())));
    s.second_moment.push_back(Vector::Zero(static_cast<Eigen::Index>(t.size())));
  });
  return s;
}

void adam_step(MlpParams& params, MlpGrads& grads, AdamState& state) {
  std::vector<std::span<double>> p, g;
  for_each_trainable(params, [&](std::span<double> t) { p.push_back(t); });
  for_each_trainable(grads, [&](std::span<double> t) { g.push_back(t); });
  require(p.size() == g.size() && p.size() == state.first_moment.size(), ErrorCode::ShapeMismatch,
          "parameter/gradient/state tensor counts differ");
  for (std::size_t k = 0; k < p.size(); ++k) {
    require(p[k].size() == g[k].size() && static_cast<Eigen::Index>(p[k].size()) == state.first_moment[k].size(),
            ErrorCode::ShapeMismatch, "tensor " + std::to_string(k) + " shape differs");
  }

  ++state.step;
  const auto& c = state.config;
  const double lr = state.learning_rate();
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      const double grad = g[k][i];
      const auto ii = static_cast<Eigen::Index>(i);
      m[ii] = c.beta1 * m[ii] + (1.0 - c.beta1) * grad;
      v[ii] = c.beta2 * v[ii] + (1.0 - c.beta2) * grad * grad;
      const double m_hat = m[ii] / correction1;
      const double v_hat = v[ii] / correction2;
      p[k][i] -= lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
  ++params.generation;
}

}  // namespace vreid::nn
