#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vreid/manifest.hpp"
#include "vreid/nn.hpp"
#include "vreid/optim.hpp"
#include "vreid/prototype_bank.hpp"

namespace vreid::ovg {

/// Sticker and light prototypes of both layers.
struct ViewpointPrototypes {
  SemanticPrototype sticker4, light4, sticker5, light5;
};

ViewpointPrototypes select_viewpoint_prototypes(const PrototypeBank& bank4, const PrototypeBank& bank5);

struct ViewpointFeature {
  FeatureVector f_v;             // [sticker block | light block], pool4 channels each
  std::array<bool, 2> absent{};  // region intersection was empty
};

/// Region masks from both layers, intersected on the pool4 grid (pool5 mask
/// nearest-upsampled), then masked GAP over pool4.
ViewpointFeature viewpoint_feature(const FeatureMaps& maps4, const FeatureMaps& maps5,
                                   const ViewpointPrototypes& prototypes);

std::vector<ViewpointFeature> viewpoint_features(const Manifest& manifest, const ViewpointPrototypes& prototypes);

struct DiscriminatorProvenance {
  std::uint64_t seed = 0;
  std::string subset_hash;
  std::string labeling_rule = "front = cluster with larger sticker-block norm";
  std::size_t images = 0;
};

struct ViewpointDiscriminators {
  FeatureVector front_center;
  FeatureVector back_center;
  ViewpointPrototypes prototypes;
  DiscriminatorProvenance provenance;
};

struct DiscriminatorOptions {
  bool spectral = false;  // k-means by default
  // Rejects clusterings that did not split the views: relative center
  // separation below `min_separation`, or a sticker-norm ratio (smaller over
  // larger) above `max_sticker_ratio`.
  double min_separation = 1e-6;
  double max_sticker_ratio = 0.5;
};

ViewpointDiscriminators build_discriminators(std::span<const FeatureVector> features,
                                             const ViewpointPrototypes& prototypes, std::uint64_t seed,
                                             const DiscriminatorOptions& options = {});

ViewpointDiscriminators build_discriminators(const Manifest& subset, const PrototypeBank& bank4,
                                             const PrototypeBank& bank5, std::uint64_t seed,
                                             const DiscriminatorOptions& options = {});

/// Nearest center by Euclidean distance; an exact tie goes to back.
Viewpoint classify_viewpoint(const FeatureVector& f_v, const ViewpointDiscriminators& disc);

std::vector<Viewpoint> classify_manifest(const Manifest& manifest, const ViewpointDiscriminators& disc);

enum class EmbedSource { Fc, GapPool5 };

std::string_view embed_source_name(EmbedSource s) noexcept;
std::optional<EmbedSource> parse_embed_source(std::string_view s) noexcept;

/// f_o: the stored fc vector, or GAP over pool5.
FeatureVector embed(const FeatureMaps& maps, EmbedSource source);
FeatureVector embed(const Manifest& manifest, const ImageRecord& record, EmbedSource source);

/// Mean embedding of the same-vehicle images tagged with the opposite view;
/// nullopt when there are none. `tags` and `embeddings` are per manifest record.
std::optional<FeatureVector> real_orthogonal(const Manifest& manifest, std::size_t index,
                                             std::span<const Viewpoint> tags,
                                             std::span<const FeatureVector> embeddings);

/// Same, computing tags and embeddings of the record's vehicle group on demand.
std::optional<FeatureVector> extract_real_orthogonal(const ImageRecord& record, const Manifest& manifest,
                                                     const ViewpointDiscriminators& disc, EmbedSource source);

struct GeneratorConfig {
  std::vector<std::size_t> hidden_dims = {2048, 4096, 2048};
  std::optional<std::size_t> output_dim;  // D_emb; defaults to the embedding dim
  bool hidden_normalization = true;
  EmbedSource source = EmbedSource::GapPool5;
};

struct OvgModel {
  EmbedSource embed_source = EmbedSource::GapPool5;
  nn::MlpConfig generator_cfg;
  nn::MlpParams generator;
};

OvgModel make_generator(std::size_t embed_dim, const GeneratorConfig& cfg, std::uint64_t seed);

/// f_g = G(f_o), eval mode.
FeatureVector generate_orthogonal(const OvgModel& model, const FeatureVector& f_o);

struct GeneratorTrainConfig {
  GeneratorConfig generator;
  int epochs = 50;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  nn::AdamConfig adam;
};

struct GeneratorTrainResult {
  OvgModel model;
  std::vector<double> loss_history;  // mean |G(f_o) - f̂_g| per epoch
  std::size_t pairs = 0;
};

GeneratorTrainResult train_generator(std::span<const FeatureVector> inputs, std::span<const FeatureVector> targets,
                                     const GeneratorTrainConfig& cfg);

/// Pairs every record that has an opposite-view sibling with its f̂_g, then trains.
GeneratorTrainResult train_generator(const Manifest& manifest, const ViewpointDiscriminators& disc,
                                     const GeneratorTrainConfig& cfg);

nlohmann::json discriminators_to_json(const ViewpointDiscriminators& disc);
ViewpointDiscriminators discriminators_from_json(const nlohmann::json& j);
void save_discriminators(const std::filesystem::path& path, const ViewpointDiscriminators& disc);
ViewpointDiscriminators load_discriminators(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const OvgModel& model, int epoch, std::uint64_t seed);
OvgModel load_model(const std::filesystem::path& path);

}  // namespace vreid::ovg
