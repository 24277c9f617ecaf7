#include "vreid/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vreid/losses.hpp"
#include "vreid/nn.hpp"
#include "vreid/rng.hpp"

namespace vreid::nn {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace {

struct Accumulator {
  GradCheckResult result;
  void add(double analytic, double numeric, double floor) {
    ++result.coordinates;
    result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic, numeric, floor));
  }
};

std::vector<bool> relu_pattern(const ForwardCache& cache) {
  std::vector<bool> pattern;
  for (const auto& l : cache.layers) {
    for (Eigen::Index k = 0; k < l.pre_activation.size(); ++k) pattern.push_back(l.pre_activation.data()[k] > 0.0);
  }
  return pattern;
}

FeatureVector random_vector(Rng& rng, std::size_t dim, double scale = 1.0) {
  FeatureVector v(dim);
  for (auto& x : v.data) x = scale * rng.normal();
  return v;
}

void check_mlp(const GradCheckOptions& opt, Accumulator& acc) {
  Rng rng(opt.seed);
  for (int t = 0; t < opt.trials; ++t) {
    MlpConfig cfg;
    const std::size_t layers = 1 + rng.index(3);
    for (std::size_t l = 0; l <= layers; ++l) cfg.layer_dims.push_back(2 + rng.index(5));
    cfg.hidden_normalization = rng.uniform() < 0.7;
    MlpParams params = init_mlp(cfg, rng.next_u64());
    for (auto& d : params.dense)
      for (Eigen::Index k = 0; k < d.bias.size(); ++k) d.bias[k] = 0.1 * rng.normal();
    for (auto& n : params.norm) {
      for (Eigen::Index k = 0; k < n.scale.size(); ++k) {
        n.scale[k] = 1.0 + 0.3 * rng.normal();
        n.shift[k] = 0.2 * rng.normal();
      }
    }
    const auto rows = static_cast<Eigen::Index>(3 + rng.index(4));
    Matrix input(rows, static_cast<Eigen::Index>(cfg.input_dim()));
    for (Eigen::Index k = 0; k < input.size(); ++k) input.data()[k] = rng.normal();
    Matrix weights(rows, static_cast<Eigen::Index>(cfg.output_dim()));
    for (Eigen::Index k = 0; k < weights.size(); ++k) weights.data()[k] = rng.normal();

    ForwardCache cache;
    forward_train(params, cfg, input, cache, false);
    const auto base_pattern = relu_pattern(cache);
    MlpGrads grads = backward(params, cfg, cache, weights);

    auto loss_at = [&](MlpParams& p, const Matrix& x, bool& same_pattern) {
      ForwardCache c;
      const Matrix y = forward_train(p, cfg, x, c, false);
      same_pattern = relu_pattern(c) == base_pattern;
      return (y.array() * weights.array()).sum();
    };

    std::vector<std::span<double>> analytic;
    for_each_trainable(grads, [&](std::span<double> s) { analytic.push_back(s); });
    std::size_t tensor = 0;
    for_each_trainable(params, [&](std::span<double> values) {
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        bool same_plus = false, same_minus = false;
        values[i] = saved + opt.step;
        const double up = loss_at(params, input, same_plus);
        values[i] = saved - opt.step;
        const double down = loss_at(params, input, same_minus);
        values[i] = saved;
        if (!same_plus || !same_minus) {
          ++acc.result.skipped_kinks;
          continue;
        }
        acc.add(analytic[tensor][i], (up - down) / (2.0 * opt.step), opt.denominator_floor);
      }
      ++tensor;
    });
    for (Eigen::Index k = 0; k < input.size(); ++k) {
      Matrix x = input;
      bool same_plus = false, same_minus = false;
      x.data()[k] = input.data()[k] + opt.step;
      const double up = loss_at(params, x, same_plus);
      x.data()[k] = input.data()[k] - opt.step;
      const double down = loss_at(params, x, same_minus);
      if (!same_plus || !same_minus) {
        ++acc.result.skipped_kinks;
        continue;
      }
      acc.add(grads.input.data()[k], (up - down) / (2.0 * opt.step), opt.denominator_floor);
    }
  }
}

void check_cross_entropy(const GradCheckOptions& opt, Accumulator& acc) {
  Rng rng(opt.seed + 1);
  for (int t = 0; t < opt.trials; ++t) {
    FeatureVector logits = random_vector(rng, 2 + rng.index(9), 2.0);
    const std::size_t label = rng.index(logits.dim());
    const auto analytic = cross_entropy_loss(logits, label);
    for (std::size_t k = 0; k < logits.dim(); ++k) {
      FeatureVector up = logits, down = logits;
      up[k] += opt.step;
      down[k] -= opt.step;
      const double numeric =
          (cross_entropy_loss(up, label).loss - cross_entropy_loss(down, label).loss) / (2.0 * opt.step);
      acc.add(analytic.grad[k], numeric, opt.denominator_floor);
    }
  }
}

void check_triplet(const GradCheckOptions& opt, Accumulator& acc) {
  Rng rng(opt.seed + 2);
  const double margin = 0.3;
  for (int t = 0; t < opt.trials; ++t) {
    const std::size_t dim = 2 + rng.index(7);
    const FeatureVector a = random_vector(rng, dim);
    const FeatureVector p = random_vector(rng, dim);
    const FeatureVector n = random_vector(rng, dim);
    const auto analytic = triplet_loss(a, p, n, margin);
    const FeatureVector* grads[3] = {&analytic.grad_anchor, &analytic.grad_positive, &analytic.grad_negative};
    for (int which = 0; which < 3; ++which) {
      for (std::size_t k = 0; k < dim; ++k) {
        FeatureVector up[3] = {a, p, n}, down[3] = {a, p, n};
        up[which][k] += opt.step;
        down[which][k] -= opt.step;
        const auto lu = triplet_loss(up[0], up[1], up[2], margin);
        const auto ld = triplet_loss(down[0], down[1], down[2], margin);
        if (lu.active != analytic.active || ld.active != analytic.active) {
          ++acc.result.skipped_kinks;
          continue;
        }
        acc.add((*grads[which])[k], (lu.loss - ld.loss) / (2.0 * opt.step), opt.denominator_floor);
      }
    }
  }
}

void check_l2(const GradCheckOptions& opt, Accumulator& acc) {
  Rng rng(opt.seed + 3);
  for (int t = 0; t < opt.trials; ++t) {
    const std::size_t dim = 1 + rng.index(8);
    FeatureVector pred, target;
    do {
      pred = random_vector(rng, dim);
      target = random_vector(rng, dim);
    } while (l2_regression_loss(pred, target).loss <= 1e-3);
    const auto analytic = l2_regression_loss(pred, target);
    for (std::size_t k = 0; k < dim; ++k) {
      FeatureVector up = pred, down = pred;
      up[k] += opt.step;
      down[k] -= opt.step;
      const double numeric =
          (l2_regression_loss(up, target).loss - l2_regression_loss(down, target).loss) / (2.0 * opt.step);
      acc.add(analytic.grad[k], numeric, opt.denominator_floor);
    }
  }
}

}  // namespace

std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& options) {
  std::vector<GradCheckResult> out;
  auto run = [&](const char* name, void (*fn)(const GradCheckOptions&, Accumulator&)) {
    Accumulator acc;
    acc.result.name = name;
    acc.result.trials = options.trials;
    fn(options, acc);
    acc.result.passed = acc.result.max_relative_error <= options.tolerance;
    out.push_back(acc.result);
  };
  run("mlp_forward_backward", check_mlp);
  run("cross_entropy", check_cross_entropy);
  run("triplet", check_triplet);
  run("l2_regression", check_l2);
  return out;
}

}  // namespace vreid::nn
