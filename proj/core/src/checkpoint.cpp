#include "vreid/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "vreid/error.hpp"
#include "vreid/fmap_io.hpp"

namespace vreid::nn {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'V', 'C', 'K', 'P'};
constexpr std::uint8_t kVersion = 0x01;

F64Block block_of(const Matrix& m) {
  F64Block b{static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), 1, {}};
  b.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) b.values.push_back(m(r, c));
  return b;
}

F64Block block_of(const Vector& v) {
  return {static_cast<std::uint32_t>(v.size()), 1, 1, std::vector<double>(v.data(), v.data() + v.size())};
}

void fill(Matrix& m, const F64Block& b) {
  require(b.h == m.rows() && b.w == m.cols() && b.c == 1, ErrorCode::ShapeMismatch, "checkpoint matrix block shape");
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = b.values[k++];
}

void fill(Vector& v, const F64Block& b) {
  require(b.h == v.size() && b.w == 1 && b.c == 1, ErrorCode::ShapeMismatch, "checkpoint vector block shape");
  for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = b.values[static_cast<std::size_t>(k)];
}

}  // namespace

json config_to_json(const MlpConfig& cfg) {
  return {{"layer_dims", cfg.layer_dims}, {"hidden_normalization", cfg.hidden_normalization}};
}

MlpConfig config_from_json(const json& j) {
  MlpConfig cfg;
  try {
    cfg.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    cfg.hidden_normalization = j.at("hidden_normalization").get<bool>();
  } catch (const json::exception& e) {
    fail(ErrorCode::BadConfig, std::string("MLP config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::vector<F64Block> blocks;
  for (const auto& d : ckpt.params.dense) {
    blocks.push_back(block_of(d.weight));
    blocks.push_back(block_of(d.bias));
  }
  for (const auto& n : ckpt.params.norm) {
    blocks.push_back(block_of(n.scale));
    blocks.push_back(block_of(n.shift));
    blocks.push_back(block_of(n.running_mean));
    blocks.push_back(block_of(n.running_var));
  }
  const json header = {{"format", "vreid-checkpoint"},
                       {"config", config_to_json(ckpt.config)},
                       {"epoch", ckpt.epoch},
                       {"seed", ckpt.seed},
                       {"blocks", blocks.size()},
                       {"extra", ckpt.extra}};
  const std::string text = header.dump();

  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int b = 0; b < 4; ++b) out.put(static_cast<char>((len >> (8 * b)) & 0xff));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& b : blocks) write_f64_block(out, b);
  const std::string bytes = out.str();
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::MissingFile, path.string());
  std::ifstream in(path, std::ios::binary);
  char magic[5] = {};
  in.read(magic, 5);
  require(in.gcount() == 5 && std::memcmp(magic, kMagic, 4) == 0 && static_cast<std::uint8_t>(magic[4]) == kVersion,
          ErrorCode::BadMagic, path.string() + " is not a checkpoint");
  unsigned char len_bytes[4];
  in.read(reinterpret_cast<char*>(len_bytes), 4);
  require(in.gcount() == 4, ErrorCode::TruncatedPayload, "checkpoint header length");
  const std::uint32_t len = len_bytes[0] | (len_bytes[1] << 8) | (len_bytes[2] << 16) |
                            (static_cast<std::uint32_t>(len_bytes[3]) << 24);
  std::string text(len, '\0');
  in.read(text.data(), len);
  require(in.gcount() == static_cast<std::streamsize>(len), ErrorCode::TruncatedPayload, "checkpoint header");

  Checkpoint ckpt;
  json header;
  try {
    header = json::parse(text);
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.extra = header.value("extra", json::object());
  } catch (const json::exception& e) {
    fail(ErrorCode::BadConfig, path.string() + ": " + e.what());
  }
  ckpt.config = config_from_json(header.at("config"));
  ckpt.params = zero_mlp(ckpt.config);
  for (auto& d : ckpt.params.dense) {
    fill(d.weight, read_f64_block(in));
    fill(d.bias, read_f64_block(in));
  }
  for (auto& n : ckpt.params.norm) {
    fill(n.scale, read_f64_block(in));
    fill(n.shift, read_f64_block(in));
    fill(n.running_mean, read_f64_block(in));
    fill(n.running_var, read_f64_block(in));
  }
  return ckpt;
}

}  // namespace vreid::nn
