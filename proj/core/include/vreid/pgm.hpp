#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vreid/tensor.hpp"

namespace vreid {

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Binary PGM (P5), maxval 255.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

/// Probability -> byte with round-half-up: floor(255 * p + 0.5), p clamped to [0, 1].
std::uint8_t probability_to_byte(double p) noexcept;

BinaryMask mask_from_image(const GrayImage& image);
GrayImage image_from_mask(const BinaryMask& mask);

}  // namespace vreid
