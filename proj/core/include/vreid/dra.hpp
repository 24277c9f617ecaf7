#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vreid/checkpoint.hpp"
#include "vreid/losses.hpp"
#include "vreid/manifest.hpp"
#include "vreid/nn.hpp"
#include "vreid/optim.hpp"
#include "vreid/prototype_bank.hpp"

namespace vreid::dra {

/// Region order of the pre-fusion vector.
inline constexpr std::array<Semantic, 3> kRegions = {Semantic::Sticker, Semantic::Light, Semantic::Grille};

using RegionPrototypes = std::array<SemanticPrototype, 3>;

/// Pulls the sticker / light / grille prototypes out of a labeled pool5 bank.
RegionPrototypes select_region_prototypes(const PrototypeBank& bank5);

struct DiscriminativeFeature {
  FeatureVector pre_fusion;        // 3c: masked GAP per region, concatenated in kRegions order
  std::array<bool, 3> absent{};    // region mask was empty; its block is zero
};

DiscriminativeFeature extract_discriminative(const FeatureMaps& maps5, const RegionPrototypes& prototypes);

struct FusionConfig {
  std::vector<std::size_t> hidden_dims = {1024, 768, 512};
  std::size_t output_dim = 256;
  bool hidden_normalization = true;
};

nn::MlpConfig fusion_mlp_config(std::size_t channels, const FusionConfig& cfg);

struct DraModel {
  nn::MlpConfig fusion_cfg;
  nn::MlpParams fusion;
  RegionPrototypes prototypes;
  // Train-time only: linear classifier over f_d.
  nn::MlpConfig head_cfg;
  nn::MlpParams head;
};

DraModel make_model(const RegionPrototypes& prototypes, const FusionConfig& cfg, std::size_t num_classes,
                    std::uint64_t seed);

/// Eval-mode forward of the fusion net: f_d.
FeatureVector fuse(const DraModel& model, const FeatureVector& pre_fusion);

/// extract_discriminative + fuse.
FeatureVector describe(const DraModel& model, const FeatureMaps& maps5, std::array<bool, 3>* absent = nullptr);

struct TrainConfig {
  FusionConfig fusion;
  nn::ReidLossWeights weights;
  int epochs = 45;
  std::size_t batch = 64;
  std::size_t images_per_id = 4;  // K; P = batch / K identities per batch
  std::uint64_t seed = 0;
  nn::AdamConfig adam;
};

struct TrainResult {
  DraModel model;
  std::vector<double> loss_history;  // mean alpha1*CE + alpha2*triplet per epoch
};

/// Trains on precomputed pre-fusion vectors. Batches are P identities x K
/// images; triplets are batch-hard mined on f_d.
TrainResult train_fusion(std::span<const FeatureVector> pre_fusion, std::span<const std::string> vehicle_ids,
                         const RegionPrototypes& prototypes, const TrainConfig& cfg);

/// Extracts pre-fusion features for every record, then trains.
TrainResult train_fusion(const Manifest& manifest, const PrototypeBank& bank5, const TrainConfig& cfg);

void save_model(const std::filesystem::path& path, const DraModel& model, int epoch, std::uint64_t seed);
DraModel load_model(const std::filesystem::path& path);

}  // namespace vreid::dra
