#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vreid/dra.hpp"
#include "vreid/manifest.hpp"
#include "vreid/ovg.hpp"

namespace vreid::retrieval {

struct IdentityDescriptor {
  std::string image_id;
  std::string vehicle_id;
  FeatureVector f_front;
  FeatureVector f_back;
  FeatureVector f_disc;
  Viewpoint tag = Viewpoint::Back;
  std::array<bool, 3> absent{};  // DRA region flags
};

/// Everything needed to describe an image.
struct Pipeline {
  dra::DraModel dra;
  ovg::OvgModel ovg;
  ovg::ViewpointDiscriminators disc;
};

/// The real embedding fills the slot of the tagged view; the generated one fills the other.
IdentityDescriptor assemble_descriptor(const FeatureMaps& maps4, const FeatureMaps& maps5, const FeatureVector& f_o,
                                       const Pipeline& pipeline);
IdentityDescriptor assemble_descriptor(const Manifest& manifest, const ImageRecord& record, const Pipeline& pipeline);
std::vector<IdentityDescriptor> assemble_descriptors(const Manifest& manifest, const Pipeline& pipeline);

struct DistanceWeights {
  double w1 = 0.1;   // view-feature weight
  double w2 = 0.65;  // discriminative-feature weight
};

/// w1 * (|f_f^q - f_f^c| + |f_b^q - f_b^c|) + w2 * |f_d^q - f_d^c|
double pairwise_distance(const IdentityDescriptor& q, const IdentityDescriptor& c, const DistanceWeights& w);

/// Rows are queries. Parallel over rows.
Eigen::MatrixXd distance_matrix(std::span<const IdentityDescriptor> queries,
                                std::span<const IdentityDescriptor> gallery, const DistanceWeights& w);
/// Plain Euclidean distances between vectors.
Eigen::MatrixXd distance_matrix(std::span<const FeatureVector> queries, std::span<const FeatureVector> gallery);

struct RankingSet {
  Eigen::MatrixXd distances;  // queries x gallery
  std::vector<std::string> query_labels;
  std::vector<std::string> gallery_labels;
  std::vector<std::vector<std::size_t>> excluded;  // per query: gallery indices left out of its ranking
};

/// Gallery indices ascending by distance; ties keep gallery order.
std::vector<std::size_t> ranked_gallery(const RankingSet& set, std::size_t query);

/// curve[k-1] = fraction of queries with a same-label item in their top k.
std::vector<double> cmc(const RankingSet& set, std::size_t max_rank);

double average_precision(const RankingSet& set, std::size_t query);
std::vector<double> average_precisions(const RankingSet& set);
double mean_average_precision(const RankingSet& set);

/// Excludes gallery items sharing an image id with the query.
RankingSet make_ranking_set(Eigen::MatrixXd distances, std::span<const std::string> query_labels,
                            std::span<const std::string> gallery_labels,
                            std::span<const std::string> query_image_ids = {},
                            std::span<const std::string> gallery_image_ids = {});

enum class Protocol { Full, Sampled };

std::string_view protocol_name(Protocol p) noexcept;
std::optional<Protocol> parse_protocol(std::string_view s) noexcept;

struct EvalOptions {
  DistanceWeights weights;
  Protocol protocol = Protocol::Full;
  std::uint64_t seed = 0;  // gallery sampling
  std::size_t max_rank = 20;
  bool exclude_self = true;
};

struct EvalReport {
  double mean_ap = 0.0;
  std::vector<double> cmc;  // index k-1 holds rank k
  std::vector<std::string> query_ids;
  std::vector<double> query_ap;
  std::vector<std::string> gallery_ids;
  Eigen::MatrixXd distances;
  EvalOptions options;
};

/// Sampled protocol keeps one seeded image per gallery vehicle and drops
/// queries that were picked for the gallery.
EvalReport evaluate(std::span<const IdentityDescriptor> queries, std::span<const IdentityDescriptor> gallery,
                    const EvalOptions& options);
EvalReport evaluate(const Manifest& query_manifest, const Manifest& gallery_manifest, const Pipeline& pipeline,
                    const EvalOptions& options);

nlohmann::json report_to_json(const EvalReport& report);
void save_report(const std::filesystem::path& path, const EvalReport& report);
void save_cmc_csv(const std::filesystem::path& path, const std::vector<double>& cmc);
void save_distance_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace vreid::retrieval
