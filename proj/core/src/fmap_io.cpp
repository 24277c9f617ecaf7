#include "vreid/fmap_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "vreid/error.hpp"

namespace vreid {
namespace {

constexpr char kMagic[4] = {'F', 'M', 'A', 'P'};
constexpr std::size_t kHeaderSize = 4 + 1 + 12;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

void check_header(std::span<const std::uint8_t> bytes, std::uint8_t version) {
  require(bytes.size() >= 5 && std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::BadMagic,
          "missing FMAP magic");
  require(bytes[4] == version, ErrorCode::BadMagic,
          "unsupported FMAP version " + std::to_string(static_cast<int>(bytes[4])));
  require(bytes.size() >= kHeaderSize, ErrorCode::TruncatedPayload, "FMAP header truncated");
}

}  // namespace

std::vector<std::uint8_t> encode_feature_maps(const FeatureMaps& maps) {
  require(maps.data.size() == maps.height * maps.width * maps.channels, ErrorCode::ShapeMismatch,
          "feature map data length does not match h*w*c");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(kHeaderSize + 4 * maps.data.size());
  out.push_back(kFmapVersionF32);
  put_u32(out, static_cast<std::uint32_t>(maps.height));
  put_u32(out, static_cast<std::uint32_t>(maps.width));
  put_u32(out, static_cast<std::uint32_t>(maps.channels));
  for (float v : maps.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

FeatureMaps decode_feature_maps(std::span<const std::uint8_t> bytes, LayerTag layer) {
  check_header(bytes, kFmapVersionF32);
  const std::uint32_t h = get_u32(bytes.data() + 5);
  const std::uint32_t w = get_u32(bytes.data() + 9);
  const std::uint32_t c = get_u32(bytes.data() + 13);
  require(h >= 1 && w >= 1 && c >= 1, ErrorCode::ShapeMismatch, "FMAP dims must be positive");
  const std::uint64_t count = static_cast<std::uint64_t>(h) * w * c;
  require(bytes.size() - kHeaderSize == count * 4, ErrorCode::TruncatedPayload,
          "declared " + std::to_string(count) + " values, payload holds " +
              std::to_string((bytes.size() - kHeaderSize) / 4.0));
  FeatureMaps maps(h, w, c, layer);
  const std::uint8_t* p = bytes.data() + kHeaderSize;
  for (std::size_t k = 0; k < count; ++k, p += 4) {
    const float v = std::bit_cast<float>(get_u32(p));
    require(std::isfinite(v), ErrorCode::NonFiniteValue, "non-finite value at index " + std::to_string(k));
    maps.data[k] = v;
  }
  require(layer != LayerTag::Fc || (h == 1 && w == 1), ErrorCode::ShapeMismatch, "fc maps must be 1x1");
  return maps;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::MissingFile, path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed: " + path.string());
}

FeatureMaps load_feature_maps(const std::filesystem::path& path, LayerTag layer) {
  require(std::filesystem::exists(path), ErrorCode::MissingFile, path.string());
  const auto bytes = read_file_bytes(path);
  try {
    return decode_feature_maps(bytes, layer);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void store_feature_maps(const std::filesystem::path& path, const FeatureMaps& maps) {
  write_file_bytes(path, encode_feature_maps(maps));
}

void write_f64_block(std::ostream& out, const F64Block& block) {
  require(block.values.size() == static_cast<std::size_t>(block.h) * block.w * block.c,
          ErrorCode::ShapeMismatch, "block length does not match h*w*c");
  std::vector<std::uint8_t> bytes(kMagic, kMagic + 4);
  bytes.push_back(kFmapVersionF64);
  put_u32(bytes, block.h);
  put_u32(bytes, block.w);
  put_u32(bytes, block.c);
  for (double v : block.values) put_u64(bytes, std::bit_cast<std::uint64_t>(v));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

F64Block read_f64_block(std::istream& in) {
  std::uint8_t header[kHeaderSize];
  in.read(reinterpret_cast<char*>(header), kHeaderSize);
  require(in.gcount() == static_cast<std::streamsize>(kHeaderSize), ErrorCode::TruncatedPayload,
          "parameter block header truncated");
  check_header(std::span<const std::uint8_t>(header, kHeaderSize), kFmapVersionF64);
  F64Block block{get_u32(header + 5), get_u32(header + 9), get_u32(header + 13), {}};
  const std::size_t count = static_cast<std::size_t>(block.h) * block.w * block.c;
  std::vector<std::uint8_t> payload(count * 8);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  require(in.gcount() == static_cast<std::streamsize>(payload.size()), ErrorCode::TruncatedPayload,
          "parameter block payload truncated");
  block.values.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    block.values[k] = std::bit_cast<double>(get_u64(payload.data() + 8 * k));
    require(std::isfinite(block.values[k]), ErrorCode::NonFiniteValue, "non-finite parameter");
  }
  return block;
}

}  // namespace vreid
