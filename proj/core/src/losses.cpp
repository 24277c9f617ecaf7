#include "vreid/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vreid/error.hpp"
#include "vreid/tensor_ops.hpp"

namespace vreid::nn {

LossGrad cross_entropy_loss(const FeatureVector& logits, std::size_t label) {
  require(label < logits.dim(), ErrorCode::LabelOutOfRange,
          "label " + std::to_string(label) + " with " + std::to_string(logits.dim()) + " classes");
  const double max_logit = *std::max_element(logits.data.begin(), logits.data.end());
  double sum = 0.0;
  for (double z : logits.data) sum += std::exp(z - max_logit);
  const double log_sum_exp = max_logit + std::log(sum);
  LossGrad out;
  out.loss = log_sum_exp - logits[label];
  out.grad = FeatureVector(logits.dim());
  for (std::size_t k = 0; k < logits.dim(); ++k) out.grad[k] = std::exp(logits[k] - log_sum_exp);
  out.grad[label] -= 1.0;
  return out;
}

TripletLoss triplet_loss(const FeatureVector& anchor, const FeatureVector& positive,
                         const FeatureVector& negative, double margin) {
  require(anchor.dim() == positive.dim() && anchor.dim() == negative.dim(), ErrorCode::DimMismatch,
          "triplet dims differ");
  const std::size_t dim = anchor.dim();
  const double d_pos = l2_distance(anchor, positive);
  const double d_neg = l2_distance(anchor, negative);
  TripletLoss out;
  out.grad_anchor = FeatureVector(dim);
  out.grad_positive = FeatureVector(dim);
  out.grad_negative = FeatureVector(dim);
  const double hinge = d_pos - d_neg + margin;
  if (hinge <= 0.0) return out;
  out.loss = hinge;
  out.active = true;
  for (std::size_t k = 0; k < dim; ++k) {
    const double up = d_pos > 0.0 ? (anchor[k] - positive[k]) / d_pos : 0.0;
    const double un = d_neg > 0.0 ? (anchor[k] - negative[k]) / d_neg : 0.0;
    out.grad_anchor[k] = up - un;
    out.grad_positive[k] = -up;
    out.grad_negative[k] = un;
  }
  return out;
}

LossGrad l2_regression_loss(const FeatureVector& pred, const FeatureVector& target) {
  require(pred.dim() == target.dim(), ErrorCode::DimMismatch, "regression dims differ");
  LossGrad out;
  out.loss = l2_distance(pred, target);
  out.grad = FeatureVector(pred.dim());
  if (out.loss > 0.0) {
    for (std::size_t k = 0; k < pred.dim(); ++k) out.grad[k] = (pred[k] - target[k]) / out.loss;
  }
  return out;
}

void validate(const ReidLossWeights& w) {
  require(w.alpha1 >= 0.0 && w.alpha2 >= 0.0 && w.alpha1 + w.alpha2 > 0.0, ErrorCode::BadConfig,
          "loss weights must be non-negative with a positive sum");
  require(w.triplet_margin > 0.0, ErrorCode::BadConfig, "triplet margin must be positive");
}

std::vector<TripletIndex> batch_hard_triplets(const Matrix& embeddings, std::span<const std::size_t> labels) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  require(labels.size() == n, ErrorCode::DimMismatch, "one label per embedding row");
  Matrix dist(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (embeddings.row(static_cast<Eigen::Index>(i)) - embeddings.row(static_cast<Eigen::Index>(j))).norm();
    }
  }
  std::vector<TripletIndex> out;
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t best_pos = n, best_neg = n;
    double far_pos = -1.0, near_neg = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double d = dist(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j));
      if (labels[j] == labels[a]) {
        if (d > far_pos) far_pos = d, best_pos = j;
      } else if (d < near_neg) {
        near_neg = d, best_neg = j;
      }
    }
    if (best_pos < n && best_neg < n) out.push_back({a, best_pos, best_neg});
  }
  return out;
}

}  // namespace vreid::nn
