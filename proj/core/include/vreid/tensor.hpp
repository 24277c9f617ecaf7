#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vreid {

enum class LayerTag { Pool4, Pool5, Fc };

std::string_view layer_name(LayerTag tag) noexcept;
std::optional<LayerTag> parse_layer(std::string_view name) noexcept;

/// h x w grid of c-dimensional activations, stored position-major / channel-minor.
struct FeatureMaps {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;
  LayerTag layer = LayerTag::Pool5;

  FeatureMaps() = default;
  FeatureMaps(std::size_t h, std::size_t w, std::size_t c, LayerTag tag = LayerTag::Pool5)
      : height(h), width(w), channels(c), data(h * w * c, 0.0f), layer(tag) {}

  std::size_t positions() const noexcept { return height * width; }

  std::span<const float> at(std::size_t i, std::size_t j) const {
    return {data.data() + (i * width + j) * channels, channels};
  }
  std::span<float> at(std::size_t i, std::size_t j) {
    return {data.data() + (i * width + j) * channels, channels};
  }
  std::span<const float> position(std::size_t p) const {
    return {data.data() + p * channels, channels};
  }
};

struct FeatureVector {
  std::vector<double> data;

  FeatureVector() = default;
  explicit FeatureVector(std::size_t dim, double fill = 0.0) : data(dim, fill) {}
  FeatureVector(std::initializer_list<double> values) : data(values) {}
  explicit FeatureVector(std::vector<double> values) : data(std::move(values)) {}

  std::size_t dim() const noexcept { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  std::span<const double> view() const noexcept { return data; }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Per-position semantic occurrence probability, entries in [0, 1].
struct ProbabilityMatrix {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  ProbabilityMatrix() = default;
  ProbabilityMatrix(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), data(h * w, fill) {}

  double operator()(std::size_t i, std::size_t j) const { return data[i * width + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * width + j]; }
};

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), data(h * w, fill) {}

  std::uint8_t operator()(std::size_t i, std::size_t j) const { return data[i * width + j]; }
  std::uint8_t& operator()(std::size_t i, std::size_t j) { return data[i * width + j]; }

  std::size_t popcount() const noexcept;
  bool empty_support() const noexcept { return popcount() == 0; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Intersection-over-union; defined as 1 when both masks are empty.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

}  // namespace vreid
