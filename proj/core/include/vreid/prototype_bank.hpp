#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vreid/clustering.hpp"
#include "vreid/manifest.hpp"
#include "vreid/tensor.hpp"

namespace vreid {

enum class Semantic { Sticker, Light, Grille, Seat, Background, Unlabeled };

inline constexpr std::array<Semantic, 5> kNamedSemantics = {Semantic::Sticker, Semantic::Light, Semantic::Grille,
                                                            Semantic::Seat, Semantic::Background};

std::string_view semantic_name(Semantic s) noexcept;
std::optional<Semantic> parse_semantic(std::string_view name) noexcept;

/// Binarization threshold a semantic gets when it is labeled: 0.05 for the
/// inspection sticker (suppresses faint responses on back views), 0 otherwise.
double default_threshold(Semantic s) noexcept;

struct SemanticPrototype {
  FeatureVector vector;
  LayerTag layer = LayerTag::Pool5;
  Semantic label = Semantic::Unlabeled;
  double threshold = 0.0;
  std::size_t cluster = 0;
};

struct BankProvenance {
  std::string manifest_hash;
  std::size_t sample_size = 0;  // images drawn
  std::size_t feature_count = 0;  // positions in the feature set
  std::size_t clustered_points = 0;
  std::uint64_t seed = 0;
  double gamma = 0.0;
};

struct PrototypeBank {
  LayerTag layer = LayerTag::Pool5;
  std::vector<SemanticPrototype> prototypes;
  BankProvenance provenance;

  const SemanticPrototype* find(Semantic s) const;
  /// Throws MissingLabeledPrototype when no prototype carries `s`.
  const SemanticPrototype& get(Semantic s) const;
};

/// Checks prototype invariants: nonzero vectors, thresholds in [0, 1),
/// matching layer, at most one prototype per named semantic.
void validate_bank(const PrototypeBank& bank);

/// Every h*w position feature of up to `sample_size` images (seeded draw
/// without replacement, kept in manifest order).
std::vector<FeatureVector> build_feature_set(const Manifest& manifest, LayerTag layer, std::size_t sample_size,
                                             std::uint64_t seed, std::size_t* images_used = nullptr);

struct PrototypeOptions {
  std::size_t clusters = 5;
  SpectralOptions spectral;
};

PrototypeBank generate_prototypes(std::span<const FeatureVector> feature_set, LayerTag layer, std::uint64_t seed,
                                  const PrototypeOptions& options = {});

/// p_ij = max(cos(d_r, x_ij), 0); all-zero positions get 0.
ProbabilityMatrix probability_matrix(const FeatureMaps& maps, const SemanticPrototype& proto);

/// 1 where p > threshold. threshold = 0 is the plain sign function.
BinaryMask indication_matrix(const ProbabilityMatrix& p, double threshold);

/// Convenience: indication_matrix(probability_matrix(maps, proto), proto.threshold).
BinaryMask locate(const FeatureMaps& maps, const SemanticPrototype& proto);

BinaryMask intersect_masks(const BinaryMask& a, const BinaryMask& b);

/// Bilinear-upsampled probabilities scaled to bytes, written as binary PGM.
void render_heatmap(const ProbabilityMatrix& p, std::size_t image_h, std::size_t image_w,
                    const std::filesystem::path& out);

/// Attach labels by cluster index; clusters not mentioned become unlabeled.
/// Thresholds reset to default_threshold of the new label.
PrototypeBank label_prototypes(const PrototypeBank& bank, const std::map<std::size_t, Semantic>& assignments);

/// Injective cluster -> semantic assignment maximizing total cosine similarity
/// to reference signatures (exhaustive search).
std::map<std::size_t, Semantic> match_to_signatures(const PrototypeBank& bank,
                                                    const std::map<Semantic, FeatureVector>& signatures);

nlohmann::json bank_to_json(const PrototypeBank& bank);
PrototypeBank bank_from_json(const nlohmann::json& j);
void save_bank(const std::filesystem::path& path, const PrototypeBank& bank);
PrototypeBank load_bank(const std::filesystem::path& path);

nlohmann::json prototype_to_json(const SemanticPrototype& p);
SemanticPrototype prototype_from_json(const nlohmann::json& j);

std::string manifest_fingerprint(const Manifest& manifest);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace vreid
