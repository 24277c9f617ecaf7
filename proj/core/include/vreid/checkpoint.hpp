#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "vreid/nn.hpp"

namespace vreid::nn {

// Checkpoint file:
//   "VCKP" | version u8 (0x01) | header_len u32 LE | JSON header | parameter blocks
// The JSON header holds {config, epoch, seed, blocks, extra}. Each parameter
// tensor follows as an FMAP f64 block (version 0x02) in for_each order:
// dense weight (out x in x 1), dense bias (out x 1 x 1) per layer, then
// scale, shift, running mean, running variance per normalization layer.
struct Checkpoint {
  MlpConfig config;
  MlpParams params;
  int epoch = 0;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json config_to_json(const MlpConfig& cfg);
MlpConfig config_from_json(const nlohmann::json& j);

}  // namespace vreid::nn
