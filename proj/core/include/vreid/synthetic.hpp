#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vreid/manifest.hpp"
#include "vreid/ovg.hpp"
#include "vreid/prototype_bank.hpp"

namespace vreid::synth {

struct SynthConfig {
  std::size_t n_vehicles = 20;
  std::size_t images_per_vehicle = 8;
  double front_fraction = 0.5;
  std::size_t h4 = 14, w4 = 14, c4 = 64;
  std::size_t h5 = 7, w5 = 7, c5 = 64;
  double noise_sigma = 0.05;
  double identity_strength = 0.5;
  std::size_t identity_dim = 8;       // rank of the per-vehicle latent
  double distractor_strength = 0.0;   // per-image clutter on seat and background positions
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& cfg);
nlohmann::json config_to_json(const SynthConfig& cfg);
SynthConfig config_from_json(const nlohmann::json& j);

/// Fixed layout on a 7x7 reference grid scaled to (h, w): sticker top-left,
/// light top-right, grille center, seat bottom-left (back views only),
/// background elsewhere. Throws RegionOverflow when a region rounds to nothing.
BinaryMask planted_mask(Viewpoint view, Semantic semantic, std::size_t h, std::size_t w);

struct GroundTruth {
  SynthConfig config;
  std::map<LayerTag, std::map<Semantic, FeatureVector>> signatures;
  Eigen::MatrixXd identity_map;  // back-view latent = identity_map * front-view latent
  std::map<std::string, Viewpoint> viewpoints;  // image id -> planted view
};

/// Writes out_dir/{manifest.jsonl, maps/*.fmap, masks/*.pgm, gt.json}.
/// The output is a pure function of the config.
Manifest gen_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir);

/// The in-memory part of the generator, for tests: the ground truth and one
/// image's maps.
GroundTruth make_ground_truth(const SynthConfig& cfg);
std::pair<FeatureMaps, FeatureMaps> render_image(const SynthConfig& cfg, std::size_t vehicle, std::size_t image);
Viewpoint planted_viewpoint(const SynthConfig& cfg, std::size_t vehicle, std::size_t image);
std::string image_id(std::size_t vehicle, std::size_t image);
std::string vehicle_id(std::size_t vehicle);

nlohmann::json ground_truth_to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const nlohmann::json& j);
GroundTruth load_ground_truth(const std::filesystem::path& path);

/// Mean IoU between the bank's indication masks and the planted masks, per labeled semantic.
std::map<Semantic, double> score_localization(const PrototypeBank& bank, const Manifest& corpus);

/// Fraction of images whose viewpoint tag matches the planted view.
double score_viewpoint(const ovg::ViewpointDiscriminators& disc, const Manifest& corpus);

/// Cluster -> semantic assignment against the planted signatures of the bank's layer.
std::map<std::size_t, Semantic> assign_from_ground_truth(const PrototypeBank& bank, const GroundTruth& gt);

}  // namespace vreid::synth
