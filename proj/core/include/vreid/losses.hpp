#pragma once

#include <span>
#include <vector>

#include "vreid/nn.hpp"
#include "vreid/tensor.hpp"

namespace vreid::nn {

struct LossGrad {
  double loss = 0.0;
  FeatureVector grad;
};

/// Softmax cross-entropy, computed through log-sum-exp.
LossGrad cross_entropy_loss(const FeatureVector& logits, std::size_t label);

struct TripletLoss {
  double loss = 0.0;
  FeatureVector grad_anchor;
  FeatureVector grad_positive;
  FeatureVector grad_negative;
  bool active = false;
};

/// max(0, |a-p| - |a-n| + margin) with Euclidean (non-squared) distances.
/// The gradient of |u| at u = 0 is taken as zero.
TripletLoss triplet_loss(const FeatureVector& anchor, const FeatureVector& positive,
                         const FeatureVector& negative, double margin);

/// |pred - target|; gradient residual/|residual|, or zero at zero residual.
LossGrad l2_regression_loss(const FeatureVector& pred, const FeatureVector& target);

struct ReidLossWeights {
  double alpha1 = 0.1;  // cross-entropy weight
  double alpha2 = 0.9;  // triplet weight
  double triplet_margin = 0.3;
};

void validate(const ReidLossWeights& w);

struct TripletIndex {
  std::size_t anchor, positive, negative;
};

/// Batch-hard mining: for each anchor with at least one positive and one
/// negative in the batch, pick the farthest positive and the nearest negative.
/// Ties resolve to the lowest row index.
std::vector<TripletIndex> batch_hard_triplets(const Matrix& embeddings, std::span<const std::size_t> labels);

}  // namespace vreid::nn
