#include "vreid/nn.hpp"

#include <cmath>

#include "vreid/error.hpp"
#include "vreid/rng.hpp"

namespace vreid::nn {

void validate(const MlpConfig& cfg) {
  require(cfg.layer_dims.size() >= 2, ErrorCode::BadConfig, "MLP needs an input and at least one layer");
  for (auto d : cfg.layer_dims) require(d >= 1, ErrorCode::BadConfig, "MLP dims must be >= 1");
}

namespace {

MlpParams allocate(const MlpConfig& cfg) {
  validate(cfg);
  MlpParams p;
  const std::size_t layers = cfg.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    const auto in = static_cast<Eigen::Index>(cfg.layer_dims[l]);
    const auto out = static_cast<Eigen::Index>(cfg.layer_dims[l + 1]);
    p.dense.push_back({Matrix::Zero(out, in), Vector::Zero(out)});
    if (cfg.hidden_normalization && l + 1 < layers) {
      p.norm.push_back({Vector::Ones(out), Vector::Zero(out), Vector::Zero(out), Vector::Ones(out)});
    }
  }
  return p;
}

bool is_hidden(const MlpConfig& cfg, std::size_t layer) { return layer + 1 < cfg.num_layers(); }

void check_finite(const Matrix& m, std::size_t layer) {
  require(m.allFinite(), ErrorCode::NonFiniteActivation,
          "non-finite activation at layer " + std::to_string(layer));
}

void check_shapes(const MlpParams& params, const MlpConfig& cfg) {
  require(params.dense.size() == cfg.num_layers(), ErrorCode::ShapeMismatch, "params/config layer count");
  require(params.norm.size() == (cfg.hidden_normalization ? cfg.num_layers() - 1 : 0), ErrorCode::ShapeMismatch,
          "params/config normalization layer count");
}

}  // namespace

MlpParams init_mlp(const MlpConfig& cfg, std::uint64_t seed) {
  MlpParams p = allocate(cfg);
  Rng rng(seed);
  for (auto& layer : p.dense) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.cols()));
    // column-major fill order is part of the determinism contract
    for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = rng.uniform(-bound, bound);
  }
  return p;
}

MlpParams zero_mlp(const MlpConfig& cfg) { return allocate(cfg); }

Matrix forward_eval(const MlpParams& params, const MlpConfig& cfg, const Matrix& batch) {
  check_shapes(params, cfg);
  require(static_cast<std::size_t>(batch.cols()) == cfg.input_dim(), ErrorCode::DimMismatch,
          "input dim " + std::to_string(batch.cols()) + ", expected " + std::to_string(cfg.input_dim()));
  Matrix x = batch;
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
    const auto& d = params.dense[l];
    Matrix z = x * d.weight.transpose();
    z.rowwise() += d.bias.transpose();
    if (is_hidden(cfg, l)) {
      if (cfg.hidden_normalization) {
        const auto& n = params.norm[l];
        const Vector inv_std = (n.running_var.array() + kNormEpsilon).rsqrt();
        z = ((z.rowwise() - n.running_mean.transpose()).array().rowwise() *
             (inv_std.array() * n.scale.array()).transpose())
                .rowwise() +
            n.shift.transpose().array();
      }
      z = z.cwiseMax(0.0);
    }
    check_finite(z, l);
    x = std::move(z);
  }
  return x;
}

FeatureVector forward(const MlpParams& params, const MlpConfig& cfg, const FeatureVector& x) {
  require(x.dim() == cfg.input_dim(), ErrorCode::DimMismatch,
          "input dim " + std::to_string(x.dim()) + ", expected " + std::to_string(cfg.input_dim()));
  const Matrix out = forward_eval(params, cfg, Eigen::Map<const Matrix>(x.data.data(), 1, x.dim()));
  return row_vector(out, 0);
}

Matrix forward_train(MlpParams& params, const MlpConfig& cfg, const Matrix& batch, ForwardCache& cache,
                     bool update_running_stats) {
  check_shapes(params, cfg);
  require(static_cast<std::size_t>(batch.cols()) == cfg.input_dim(), ErrorCode::DimMismatch,
          "input dim " + std::to_string(batch.cols()) + ", expected " + std::to_string(cfg.input_dim()));
  const double n = static_cast<double>(batch.rows());
  cache.layers.assign(cfg.num_layers(), {});
  cache.valid = false;
  Matrix x = batch;
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
    auto& lc = cache.layers[l];
    const auto& d = params.dense[l];
    lc.input = x;
    Matrix z = x * d.weight.transpose();
    z.rowwise() += d.bias.transpose();
    if (is_hidden(cfg, l)) {
      if (cfg.hidden_normalization) {
        auto& norm = params.norm[l];
        const Vector mean = z.colwise().mean().transpose();
        const Matrix centered = z.rowwise() - mean.transpose();
        const Vector var = (centered.array().square().colwise().sum() / n).transpose();
        lc.inv_std = (var.array() + kNormEpsilon).rsqrt();
        lc.normalized = centered.array().rowwise() * lc.inv_std.transpose().array();
        z = (lc.normalized.array().rowwise() * norm.scale.transpose().array()).rowwise() +
            norm.shift.transpose().array();
        if (update_running_stats) {
          const double unbias = n > 1 ? n / (n - 1.0) : 1.0;
          norm.running_mean = kNormMomentum * norm.running_mean + (1.0 - kNormMomentum) * mean;
          norm.running_var = kNormMomentum * norm.running_var + (1.0 - kNormMomentum) * unbias * var;
        }
      }
      lc.pre_activation = z;
      z = z.cwiseMax(0.0);
    }
    check_finite(z, l);
    x = std::move(z);
  }
  cache.generation = params.generation;
  cache.valid = true;
  return x;
}

MlpGrads backward(const MlpParams& params, const MlpConfig& cfg, const ForwardCache& cache,
                  const Matrix& upstream) {
  require(cache.valid && cache.generation == params.generation && cache.layers.size() == cfg.num_layers(),
          ErrorCode::StaleCache, "backward needs a train-mode forward over the current parameters");
  const auto rows = cache.layers.front().input.rows();
  require(upstream.rows() == rows && static_cast<std::size_t>(upstream.cols()) == cfg.output_dim(),
          ErrorCode::DimMismatch, "upstream gradient shape");
  const double n = static_cast<double>(rows);

  MlpGrads g;
  g.dense.resize(cfg.num_layers());
  if (cfg.hidden_normalization) {
    g.norm_scale.resize(cfg.num_layers() - 1);
    g.norm_shift.resize(cfg.num_layers() - 1);
  }
  Matrix grad = upstream;
  for (std::size_t l = cfg.num_layers(); l-- > 0;) {
    const auto& lc = cache.layers[l];
    if (is_hidden(cfg, l)) {
      grad = (lc.pre_activation.array() > 0.0).select(grad, 0.0);
      if (cfg.hidden_normalization) {
        const auto& norm = params.norm[l];
        g.norm_scale[l] = (grad.array() * lc.normalized.array()).colwise().sum().transpose();
        g.norm_shift[l] = grad.colwise().sum().transpose();
        const Matrix dxhat = grad.array().rowwise() * norm.scale.transpose().array();
        const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
        const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * lc.normalized.array()).colwise().sum();
        Matrix dz = (n * dxhat).rowwise() - sum_dxhat;
        dz -= (lc.normalized.array().rowwise() * sum_dxhat_xhat.array()).matrix();
        grad = (dz.array().rowwise() * (lc.inv_std.transpose().array() / n)).matrix();
      }
    }
    g.dense[l].weight = grad.transpose() * lc.input;
    g.dense[l].bias = grad.colwise().sum().transpose();
    grad = grad * params.dense[l].weight;
  }
  g.input = std::move(grad);
  return g;
}

void for_each_trainable(MlpParams& params, const std::function<void(std::span<double>)>& fn) {
  for (auto& d : params.dense) {
    fn({d.weight.data(), static_cast<std::size_t>(d.weight.size())});
    fn({d.bias.data(), static_cast<std::size_t>(d.bias.size())});
  }
  for (auto& n : params.norm) {
    fn({n.scale.data(), static_cast<std::size_t>(n.scale.size())});
    fn({n.shift.data(), static_cast<std::size_t>(n.shift.size())});
  }
}

void for_each_trainable(MlpGrads& grads, const std::function<void(std::span<double>)>& fn) {
  for (auto& d : grads.dense) {
    fn({d.weight.data(), static_cast<std::size_t>(d.weight.size())});
    fn({d.bias.data(), static_cast<std::size_t>(d.bias.size())});
  }
  for (std::size_t k = 0; k < grads.norm_scale.size(); ++k) {
    fn({grads.norm_scale[k].data(), static_cast<std::size_t>(grads.norm_scale[k].size())});
    fn({grads.norm_shift[k].data(), static_cast<std::size_t>(grads.norm_shift[k].size())});
  }
}

std::size_t parameter_count(const MlpParams& params) {
  std::size_t total = 0;
  for (const auto& d : params.dense) total += static_cast<std::size_t>(d.weight.size() + d.bias.size());
  for (const auto& n : params.norm) total += static_cast<std::size_t>(n.scale.size() + n.shift.size());
  return total;
}

Matrix to_batch(std::span<const FeatureVector> rows) {
  require(!rows.empty(), ErrorCode::EmptyList, "empty batch");
  const auto dim = rows.front().dim();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].dim() == dim, ErrorCode::DimMismatch, "ragged batch");
    for (std::size_t k = 0; k < dim; ++k) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
  }
  return m;
}

FeatureVector row_vector(const Matrix& m, Eigen::Index row) {
  FeatureVector v(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index k = 0; k < m.cols(); ++k) v[static_cast<std::size_t>(k)] = m(row, k);
  return v;
}

}  // namespace vreid::nn
