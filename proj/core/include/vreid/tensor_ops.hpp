#pragma once

#include <span>

#include "vreid/tensor.hpp"

namespace vreid {

/// Per-channel mean of `maps` over the positions where `mask` is 1.
/// Throws EmptyMask when the mask selects nothing.
FeatureVector masked_gap(const FeatureMaps& maps, const BinaryMask& mask);

/// Plain global average pooling over every position.
FeatureVector global_average_pool(const FeatureMaps& maps);

FeatureVector concat(std::span<const FeatureVector> vectors);

// Half-pixel alignment: output sample (i, j) sits at source coordinate
// ((i + 0.5) * in_h / out_h - 0.5, (j + 0.5) * in_w / out_w - 0.5), clamped to
// the source grid. Output is a convex combination of source values.
ProbabilityMatrix upsample_bilinear(const ProbabilityMatrix& p, std::size_t out_h, std::size_t out_w);

/// Output cell (i, j) copies source cell (floor((i + 0.5) * in_h / out_h), ...).
BinaryMask upsample_nearest_mask(const BinaryMask& m, std::size_t out_h, std::size_t out_w);

double l2_distance(std::span<const double> a, std::span<const double> b);
inline double l2_distance(const FeatureVector& a, const FeatureVector& b) {
  return l2_distance(a.view(), b.view());
}

double l2_norm(std::span<const double> v);

}  // namespace vreid
