#include <algorithm>
#include <cmath>

#include "vreid/error.hpp"
#include "vreid/tensor.hpp"
#include "vreid/tensor_ops.hpp"

namespace vreid {

std::string_view layer_name(LayerTag tag) noexcept {
  switch (tag) {
    case LayerTag::Pool4: return "pool4";
    case LayerTag::Pool5: return "pool5";
    case LayerTag::Fc: return "fc";
  }
  return "pool5";
}

std::optional<LayerTag> parse_layer(std::string_view name) noexcept {
  if (name == "pool4") return LayerTag::Pool4;
  if (name == "pool5") return LayerTag::Pool5;
  if (name == "fc") return LayerTag::Fc;
  return std::nullopt;
}

std::size_t BinaryMask::popcount() const noexcept {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  require(a.height == b.height && a.width == b.width, ErrorCode::ShapeMismatch, "mask_iou shapes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    const bool x = a.data[k] != 0, y = b.data[k] != 0;
    inter += (x && y);
    uni += (x || y);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

FeatureVector masked_gap(const FeatureMaps& maps, const BinaryMask& mask) {
  require(mask.height == maps.height && mask.width == maps.width, ErrorCode::ShapeMismatch,
          "mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) + " vs maps " +
              std::to_string(maps.height) + "x" + std::to_string(maps.width));
  FeatureVector out(maps.channels);
  std::size_t count = 0;
  for (std::size_t p = 0; p < maps.positions(); ++p) {
    if (mask.data[p] == 0) continue;
    ++count;
    const auto x = maps.position(p);
    for (std::size_t k = 0; k < maps.channels; ++k) out[k] += static_cast<double>(x[k]);
  }
  require(count > 0, ErrorCode::EmptyMask, "mask selects no positions");
  for (auto& v : out.data) v /= static_cast<double>(count);
  return out;
}

FeatureVector global_average_pool(const FeatureMaps& maps) {
  return masked_gap(maps, BinaryMask(maps.height, maps.width, 1));
}

FeatureVector concat(std::span<const FeatureVector> vectors) {
  require(!vectors.empty(), ErrorCode::EmptyList, "concat of zero vectors");
  FeatureVector out;
  for (const auto& v : vectors) out.data.insert(out.data.end(), v.data.begin(), v.data.end());
  return out;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

Tap bilinear_tap(std::size_t out_index, std::size_t in_size, std::size_t out_size) {
  double src = (static_cast<double>(out_index) + 0.5) * static_cast<double>(in_size) /
                   static_cast<double>(out_size) -
               0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
  const auto lo = static_cast<std::size_t>(std::floor(src));
  const std::size_t hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace

ProbabilityMatrix upsample_bilinear(const ProbabilityMatrix& p, std::size_t out_h, std::size_t out_w) {
  require(out_h >= 1 && out_w >= 1, ErrorCode::ZeroTargetSize, "bilinear target must be at least 1x1");
  require(p.height >= 1 && p.width >= 1, ErrorCode::ShapeMismatch, "empty probability matrix");
  ProbabilityMatrix out(out_h, out_w);
  std::vector<Tap> cols(out_w);
  for (std::size_t j = 0; j < out_w; ++j) cols[j] = bilinear_tap(j, p.width, out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const Tap r = bilinear_tap(i, p.height, out_h);
    for (std::size_t j = 0; j < out_w; ++j) {
      const Tap& c = cols[j];
      const double top = (1.0 - c.frac) * p(r.lo, c.lo) + c.frac * p(r.lo, c.hi);
      const double bottom = (1.0 - c.frac) * p(r.hi, c.lo) + c.frac * p(r.hi, c.hi);
      out(i, j) = (1.0 - r.frac) * top + r.frac * bottom;
    }
  }
  return out;
}

BinaryMask upsample_nearest_mask(const BinaryMask& m, std::size_t out_h, std::size_t out_w) {
  require(out_h >= 1 && out_w >= 1, ErrorCode::ZeroTargetSize, "nearest target must be at least 1x1");
  require(out_h >= m.height && out_w >= m.width, ErrorCode::ShapeMismatch,
          "nearest upsampling target smaller than source");
  BinaryMask out(out_h, out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    // floor((i + 0.5) * in / out) == floor((2i + 1) * in / (2 out))
    const std::size_t src_i = std::min((2 * i + 1) * m.height / (2 * out_h), m.height - 1);
    for (std::size_t j = 0; j < out_w; ++j) {
      const std::size_t src_j = std::min((2 * j + 1) * m.width / (2 * out_w), m.width - 1);
      out(i, j) = m(src_i, src_j) ? 1 : 0;
    }
  }
  return out;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::DimMismatch,
          "l2_distance dims " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace vreid
