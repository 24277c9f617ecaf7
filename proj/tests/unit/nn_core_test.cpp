#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "expect_error.hpp"
#include "oracles.hpp"
#include "vreid/checkpoint.hpp"
#include "vreid/fmap_io.hpp"
#include "vreid/gradcheck.hpp"
#include "vreid/losses.hpp"
#include "vreid/nn.hpp"
#include "vreid/optim.hpp"

using namespace vreid;
using namespace vreid::nn;

namespace {

// Perturbs running statistics so the eval path exercises every normalization term.
void randomize_norm(MlpParams& p, Rng& rng) {
  for (auto& n : p.norm) {
    for (Eigen::Index i = 0; i < n.scale.size(); ++i) {
      n.scale(i) = rng.uniform(0.5, 1.5);
      n.shift(i) = rng.normal() * 0.1;
      n.running_mean(i) = rng.normal() * 0.2;
      n.running_var(i) = rng.uniform(0.5, 2.0);
    }
  }
}

TEST(Mlp, InitShapesAndBounds) {
  MlpConfig cfg{{6, 5, 4, 3}, true};
  const auto p = init_mlp(cfg, 9);
  ASSERT_EQ(p.dense.size(), 3u);
  ASSERT_EQ(p.norm.size(), 2u);
  EXPECT_EQ(p.dense[0].weight.rows(), 5);
  EXPECT_EQ(p.dense[0].weight.cols(), 6);
  const double bound = std::sqrt(6.0 / 6.0);
  EXPECT_LE(p.dense[0].weight.cwiseAbs().maxCoeff(), bound);
  EXPECT_EQ(p.dense[1].bias.squaredNorm(), 0.0);
  EXPECT_EQ(parameter_count(p), 6u * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3 + 2 * (5 + 4));
  // Same seed, same parameters.
  const auto q = init_mlp(cfg, 9);
  EXPECT_EQ(p.dense[2].weight, q.dense[2].weight);
}

TEST(Mlp, EvalForwardMatchesScalarOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    MlpConfig cfg;
    cfg.layer_dims = {1 + rng.index(8)};
    const std::size_t layers = 1 + rng.index(3);
    for (std::size_t l = 0; l < layers; ++l) cfg.layer_dims.push_back(1 + rng.index(8));
    cfg.hidden_normalization = trial % 2 == 0;
    auto p = init_mlp(cfg, trial);
    randomize_norm(p, rng);
    const auto x = oracle::random_vector(rng, cfg.input_dim());
    const auto got = forward(p, cfg, x);
    const auto want = oracle::mlp_forward(p, cfg, x.data);
    ASSERT_EQ(got.dim(), want.size());
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-10);
  }
}

TEST(Mlp, EvalRowsAreIndependentOfBatch) {
  Rng rng(12);
  MlpConfig cfg{{5, 7, 3}, true};
  auto p = init_mlp(cfg, 1);
  randomize_norm(p, rng);
  std::vector<FeatureVector> rows;
  for (int i = 0; i < 6; ++i) rows.push_back(oracle::random_vector(rng, 5));
  const Matrix out = forward_eval(p, cfg, to_batch(rows));
  for (int i = 0; i < 6; ++i) {
    const auto single = forward(p, cfg, rows[i]);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(out(i, k), single[k], 1e-12);
  }
}

TEST(Mlp, TrainForwardUpdatesRunningStats) {
  Rng rng(13);
  MlpConfig cfg{{3, 4, 2}, true};
  auto p = init_mlp(cfg, 2);
  std::vector<FeatureVector> rows;
  for (int i = 0; i < 8; ++i) rows.push_back(oracle::random_vector(rng, 3));
  const Matrix batch = to_batch(rows);
  const Matrix z = (batch * p.dense[0].weight.transpose()).rowwise() + p.dense[0].bias.transpose();
  const Vector mean = z.colwise().mean();
  ForwardCache cache;
  forward_train(p, cfg, batch, cache);
  EXPECT_TRUE(cache.valid);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(p.norm[0].running_mean(k), (1.0 - kNormMomentum) * mean(k), 1e-12);

  auto frozen = init_mlp(cfg, 2);
  ForwardCache c2;
  forward_train(frozen, cfg, batch, c2, false);
  EXPECT_EQ(frozen.norm[0].running_mean.squaredNorm(), 0.0);
}

TEST(Mlp, Errors) {
  MlpConfig cfg{{3, 2}, false};
  auto p = init_mlp(cfg, 0);
  EXPECT_VREID_ERROR(forward(p, cfg, FeatureVector(4)), ErrorCode::DimMismatch);
  EXPECT_VREID_ERROR(validate(MlpConfig{{3}, true}), ErrorCode::BadConfig);
  EXPECT_VREID_ERROR(validate(MlpConfig{{3, 0}, true}), ErrorCode::BadConfig);

  auto huge = p;
  huge.dense[0].weight.setConstant(1e308);
  EXPECT_VREID_ERROR(forward(huge, cfg, FeatureVector{1e308, 1e308, 1e308}), ErrorCode::NonFiniteActivation);

  ForwardCache cache;
  EXPECT_VREID_ERROR(backward(p, cfg, cache, Matrix::Zero(1, 2)), ErrorCode::StaleCache);
  const Matrix batch = Matrix::Random(4, 3);
  const Matrix out = forward_train(p, cfg, batch, cache);
  auto grads = backward(p, cfg, cache, Matrix::Ones(4, 2));
  auto adam = make_adam(p);
  adam_step(p, grads, adam);
  EXPECT_VREID_ERROR(backward(p, cfg, cache, Matrix::Ones(4, 2)), ErrorCode::StaleCache);
}

TEST(Mlp, BackwardMatchesFiniteDifferenceOnInput) {
  Rng rng(14);
  MlpConfig cfg{{4, 6, 3}, true};
  auto p = init_mlp(cfg, 5);
  Matrix batch(5, 4);
  for (Eigen::Index i = 0; i < batch.size(); ++i) batch.data()[i] = rng.normal();
  const Matrix up = Matrix::Random(5, 3);
  ForwardCache cache;
  auto q = p;
  forward_train(q, cfg, batch, cache, false);
  const auto g = backward(q, cfg, cache, up);
  const double h = 1e-6;
  for (Eigen::Index r = 0; r < 5; ++r)
    for (Eigen::Index c = 0; c < 4; ++c) {
      Matrix plus = batch, minus = batch;
      plus(r, c) += h;
      minus(r, c) -= h;
      ForwardCache tmp;
      auto a = p, b = p;
      const double fp = (forward_train(a, cfg, plus, tmp, false).array() * up.array()).sum();
      const double fm = (forward_train(b, cfg, minus, tmp, false).array() * up.array()).sum();
      EXPECT_NEAR(g.input(r, c), (fp - fm) / (2 * h), 1e-5);
    }
}

TEST(Losses, CrossEntropyMatchesLogSumExp) {
  Rng rng(15);
  // Frozen: equal logits give ln(n).
  EXPECT_NEAR(cross_entropy_loss(FeatureVector{0.0, 0.0}, 1).loss, std::log(2.0), 1e-15);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(10);
    auto logits = oracle::random_vector(rng, n, 5.0);
    const std::size_t label = rng.index(n);
    const auto lg = cross_entropy_loss(logits, label);
    EXPECT_NEAR(lg.loss, oracle::log_sum_exp_ce(logits.data, label), 1e-12);
    double s = 0;
    for (double g : lg.grad.data) s += g;
    EXPECT_NEAR(s, 0.0, 1e-12);  // softmax minus one-hot sums to zero
  }
  // Large logits stay finite.
  EXPECT_NEAR(cross_entropy_loss(FeatureVector{1000.0, 0.0}, 1).loss, 1000.0, 1e-9);
  EXPECT_VREID_ERROR(cross_entropy_loss(FeatureVector{1.0}, 1), ErrorCode::LabelOutOfRange);
}

TEST(Losses, TripletFrozenValues) {
  const FeatureVector a{0, 0}, p{3, 4}, n{0, 1};
  const auto t = triplet_loss(a, p, n, 0.3);
  EXPECT_TRUE(t.active);
  EXPECT_NEAR(t.loss, 5.0 - 1.0 + 0.3, 1e-15);
  // d|a-p|/da = (a-p)/|a-p|, d(-|a-n|)/da = -(a-n)/|a-n|
  EXPECT_NEAR(t.grad_anchor[0], -0.6 - 0.0, 1e-15);
  EXPECT_NEAR(t.grad_anchor[1], -0.8 + 1.0, 1e-15);
  const auto inactive = triplet_loss(a, n, p, 0.3);
  EXPECT_FALSE(inactive.active);
  EXPECT_EQ(inactive.loss, 0.0);
}

TEST(Losses, L2Regression) {
  const auto r = l2_regression_loss(FeatureVector{3, 0}, FeatureVector{0, 4});
  EXPECT_NEAR(r.loss, 5.0, 1e-15);
  EXPECT_NEAR(r.grad[0], 0.6, 1e-15);
  EXPECT_NEAR(r.grad[1], -0.8, 1e-15);
  const auto z = l2_regression_loss(FeatureVector{1, 1}, FeatureVector{1, 1});
  EXPECT_EQ(z.loss, 0.0);
  EXPECT_EQ(z.grad[0], 0.0);
}

TEST(Losses, WeightValidation) {
  EXPECT_VREID_ERROR(validate(ReidLossWeights{-0.1, 0.9, 0.3}), ErrorCode::BadConfig);
  EXPECT_VREID_ERROR(validate(ReidLossWeights{0.1, 0.9, 0.0}), ErrorCode::BadConfig);
  EXPECT_NO_THROW(validate(ReidLossWeights{}));
}

TEST(Losses, BatchHardMatchesBruteForce) {
  Rng rng(16);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 4 + rng.index(10);
    Matrix e(n, 3);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.index(3);
    const auto triplets = batch_hard_triplets(e, labels);
    std::size_t expected_count = 0;
    for (std::size_t a = 0; a < n; ++a) {
      double far = -1, near = std::numeric_limits<double>::infinity();
      std::size_t fp = n, nn_ = n;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == a) continue;
        const double d = (e.row(a) - e.row(j)).norm();
        if (labels[j] == labels[a] && d > far) far = d, fp = j;
        if (labels[j] != labels[a] && d < near) near = d, nn_ = j;
      }
      if (fp == n || nn_ == n) continue;
      ASSERT_LT(expected_count, triplets.size());
      const auto& t = triplets[expected_count++];
      EXPECT_EQ(t.anchor, a);
      EXPECT_EQ(t.positive, fp);
      EXPECT_EQ(t.negative, nn_);
    }
    EXPECT_EQ(triplets.size(), expected_count);
  }
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  MlpConfig cfg{{2, 1}, false};
  auto p = zero_mlp(cfg);
  MlpGrads g;
  g.dense = {DenseLayer{Matrix::Constant(1, 2, 0.5), Vector::Constant(1, -2.0)}};
  auto state = make_adam(p, AdamConfig{0.01});
  adam_step(p, g, state);
  // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
  EXPECT_NEAR(p.dense[0].weight(0, 0), -0.01, 1e-9);
  EXPECT_NEAR(p.dense[0].bias(0), 0.01, 1e-9);
  EXPECT_EQ(p.generation, 1u);
}

TEST(Adam, StepDecaySchedule) {
  AdamState s;
  s.config.base_lr = 1e-3;
  s.epoch = 14;
  EXPECT_DOUBLE_EQ(s.learning_rate(), 1e-3);
  s.epoch = 15;
  EXPECT_NEAR(s.learning_rate(), 1e-4, 1e-18);
  s.epoch = 44;
  EXPECT_NEAR(s.learning_rate(), 1e-5, 1e-18);
}

TEST(Checkpoint, RoundTripIsExact) {
  oracle::TempDir dir("ckpt");
  Rng rng(17);
  Checkpoint c;
  c.config = MlpConfig{{4, 3, 2}, true};
  c.params = init_mlp(c.config, 3);
  randomize_norm(c.params, rng);
  c.epoch = 7;
  c.seed = 99;
  c.extra = {{"kind", "test"}};
  save_checkpoint(dir / "m.ckpt", c);
  const auto back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.config.layer_dims, c.config.layer_dims);
  EXPECT_EQ(back.epoch, 7);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.extra["kind"], "test");
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(back.params.dense[l].weight, c.params.dense[l].weight);
    EXPECT_EQ(back.params.dense[l].bias, c.params.dense[l].bias);
  }
  EXPECT_EQ(back.params.norm[0].running_var, c.params.norm[0].running_var);
  // Re-saving the loaded checkpoint reproduces the bytes.
  save_checkpoint(dir / "again.ckpt", back);
  EXPECT_EQ(oracle::file_hash(dir / "m.ckpt"), oracle::file_hash(dir / "again.ckpt"));
}

TEST(Checkpoint, RejectsCorruptFiles) {
  oracle::TempDir dir("ckptbad");
  Checkpoint c;
  c.config = MlpConfig{{2, 2}, false};
  c.params = init_mlp(c.config, 1);
  save_checkpoint(dir / "m.ckpt", c);
  auto bytes = read_file_bytes(dir / "m.ckpt");
  bytes.resize(bytes.size() - 3);
  write_file_bytes(dir / "cut.ckpt", bytes);
  EXPECT_VREID_ERROR(load_checkpoint(dir / "cut.ckpt"), ErrorCode::TruncatedPayload);
  bytes[0] = 'Z';
  write_file_bytes(dir / "magic.ckpt", bytes);
  EXPECT_VREID_ERROR(load_checkpoint(dir / "magic.ckpt"), ErrorCode::BadMagic);
}

TEST(GradCheck, AllComponentsPass) {
  GradCheckOptions o;
  o.trials = 10;
  const auto results = run_gradient_checks(o);
  ASSERT_FALSE(results.empty());
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed) << r.name << " max rel " << r.max_relative_error;
    EXPECT_GT(r.coordinates, 0u) << r.name;
  }
  EXPECT_NEAR(relative_error(1.0, 1.001, 1e-6), 0.001 / 1.001, 1e-15);
  EXPECT_NEAR(relative_error(0.0, 1e-9, 1e-6), 1e-3, 1e-15);
}

}  // namespace
