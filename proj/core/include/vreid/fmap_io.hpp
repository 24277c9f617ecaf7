#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "vreid/tensor.hpp"

namespace vreid {

// FMAP layout (all integers little-endian):
//   "FMAP" | version u8 | h u32 | w u32 | c u32 | h*w*c values, position-major
// version 0x01 carries f32 values (feature maps); version 0x02 carries f64
// values and is used for checkpoint parameter blocks.
inline constexpr std::uint8_t kFmapVersionF32 = 0x01;
inline constexpr std::uint8_t kFmapVersionF64 = 0x02;

/// The FMAP header does not record the layer; callers supply it.
FeatureMaps load_feature_maps(const std::filesystem::path& path, LayerTag layer = LayerTag::Pool5);
void store_feature_maps(const std::filesystem::path& path, const FeatureMaps& maps);

std::vector<std::uint8_t> encode_feature_maps(const FeatureMaps& maps);
FeatureMaps decode_feature_maps(std::span<const std::uint8_t> bytes, LayerTag layer = LayerTag::Pool5);

struct F64Block {
  std::uint32_t h = 0, w = 0, c = 0;
  std::vector<double> values;
};

void write_f64_block(std::ostream& out, const F64Block& block);
/// Reads one block; throws TruncatedPayload / BadMagic on malformed input.
F64Block read_f64_block(std::istream& in);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace vreid
