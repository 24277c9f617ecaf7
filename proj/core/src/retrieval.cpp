#include "vreid/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include "vreid/error.hpp"
#include "vreid/fmap_io.hpp"
#include "vreid/rng.hpp"
#include "vreid/tensor_ops.hpp"
#include "vreid/util.hpp"

namespace vreid::retrieval {

using nlohmann::json;

IdentityDescriptor assemble_descriptor(const FeatureMaps& maps4, const FeatureMaps& maps5, const FeatureVector& f_o,
                                       const Pipeline& pipeline) {
  IdentityDescriptor d;
  const auto vf = ovg::viewpoint_feature(maps4, maps5, pipeline.disc.prototypes);
  d.tag = ovg::classify_viewpoint(vf.f_v, pipeline.disc);
  FeatureVector f_g = ovg::generate_orthogonal(pipeline.ovg, f_o);
  require(f_g.dim() == f_o.dim(), ErrorCode::DimMismatch, "generated and real embeddings must share a dim");
  if (d.tag == Viewpoint::Front) {
    d.f_front = f_o;
    d.f_back = std::move(f_g);
  } else {
    d.f_back = f_o;
    d.f_front = std::move(f_g);
  }
  d.f_disc = dra::describe(pipeline.dra, maps5, &d.absent);
  return d;
}

IdentityDescriptor assemble_descriptor(const Manifest& manifest, const ImageRecord& record, const Pipeline& pipeline) {
  const FeatureMaps maps4 = manifest.load_layer(record, LayerTag::Pool4);
  const FeatureMaps maps5 = manifest.load_layer(record, LayerTag::Pool5);
  const FeatureVector f_o = pipeline.ovg.embed_source == ovg::EmbedSource::GapPool5
                                ? ovg::embed(maps5, ovg::EmbedSource::GapPool5)
                                : ovg::embed(manifest, record, pipeline.ovg.embed_source);
  auto d = assemble_descriptor(maps4, maps5, f_o, pipeline);
  d.image_id = record.image_id;
  d.vehicle_id = record.vehicle_id;
  return d;
}

std::vector<IdentityDescriptor> assemble_descriptors(const Manifest& manifest, const Pipeline& pipeline) {
  std::vector<IdentityDescriptor> out(manifest.records.size());
  parallel_for(manifest.records.size(),
               [&](std::size_t i) { out[i] = assemble_descriptor(manifest, manifest.records[i], pipeline); });
  return out;
}

double pairwise_distance(const IdentityDescriptor& q, const IdentityDescriptor& c, const DistanceWeights& w) {
  require(w.w1 >= 0.0 && w.w2 >= 0.0, ErrorCode::NegativeWeight, "distance weights must be >= 0");
  return w.w1 * (l2_distance(q.f_front, c.f_front) + l2_distance(q.f_back, c.f_back)) +
         w.w2 * l2_distance(q.f_disc, c.f_disc);
}

Eigen::MatrixXd distance_matrix(std::span<const IdentityDescriptor> queries,
                                std::span<const IdentityDescriptor> gallery, const DistanceWeights& w) {
  require(w.w1 >= 0.0 && w.w2 >= 0.0, ErrorCode::NegativeWeight, "distance weights must be >= 0");
  Eigen::MatrixXd d(static_cast<Eigen::Index>(queries.size()), static_cast<Eigen::Index>(gallery.size()));
  parallel_for(queries.size(), [&](std::size_t i) {
    for (std::size_t j = 0; j < gallery.size(); ++j)
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pairwise_distance(queries[i], gallery[j], w);
  });
  return d;
}

Eigen::MatrixXd distance_matrix(std::span<const FeatureVector> queries, std::span<const FeatureVector> gallery) {
  Eigen::MatrixXd d(static_cast<Eigen::Index>(queries.size()), static_cast<Eigen::Index>(gallery.size()));
  parallel_for(queries.size(), [&](std::size_t i) {
    for (std::size_t j = 0; j < gallery.size(); ++j)
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = l2_distance(queries[i], gallery[j]);
  });
  return d;
}

std::vector<std::size_t> ranked_gallery(const RankingSet& set, std::size_t query) {
  const auto cols = static_cast<std::size_t>(set.distances.cols());
  std::vector<bool> skip(cols, false);
  if (query < set.excluded.size())
    for (auto g : set.excluded[query])
      if (g < cols) skip[g] = true;
  std::vector<std::size_t> order;
  for (std::size_t g = 0; g < cols; ++g)
    if (!skip[g]) order.push_back(g);
  const auto row = static_cast<Eigen::Index>(query);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return set.distances(row, static_cast<Eigen::Index>(a)) < set.distances(row, static_cast<Eigen::Index>(b));
  });
  return order;
}

namespace {

void check_set(const RankingSet& set) {
  require(static_cast<std::size_t>(set.distances.rows()) == set.query_labels.size() &&
              static_cast<std::size_t>(set.distances.cols()) == set.gallery_labels.size(),
          ErrorCode::DimMismatch, "distance matrix does not match the label lists");
  require(!set.gallery_labels.empty(), ErrorCode::EmptyGallery, "gallery is empty");
}

// 1-based ranks of same-label items in the query's ranked list.
std::vector<std::size_t> hit_ranks(const RankingSet& set, std::size_t q) {
  const auto order = ranked_gallery(set, q);
  require(!order.empty(), ErrorCode::EmptyGallery, "every gallery item is excluded for query " + std::to_string(q));
  std::vector<std::size_t> hits;
  for (std::size_t r = 0; r < order.size(); ++r)
    if (set.gallery_labels[order[r]] == set.query_labels[q]) hits.push_back(r + 1);
  require(!hits.empty(), ErrorCode::QueryWithoutMatch,
          "query " + std::to_string(q) + " (" + set.query_labels[q] + ") has no match in the gallery");
  return hits;
}

}  // namespace

std::vector<double> cmc(const RankingSet& set, std::size_t max_rank) {
  check_set(set);
  std::vector<double> curve(max_rank, 0.0);
  const std::size_t nq = set.query_labels.size();
  for (std::size_t q = 0; q < nq; ++q) {
    const std::size_t first = hit_ranks(set, q).front();
    for (std::size_t k = first; k <= max_rank; ++k) curve[k - 1] += 1.0;
  }
  if (nq > 0)
    for (auto& v : curve) v /= static_cast<double>(nq);
  return curve;
}

double average_precision(const RankingSet& set, std::size_t query) {
  check_set(set);
  const auto hits = hit_ranks(set, query);
  double sum = 0.0;
  for (std::size_t i = 0; i < hits.size(); ++i) sum += static_cast<double>(i + 1) / static_cast<double>(hits[i]);
  return sum / static_cast<double>(hits.size());
}

std::vector<double> average_precisions(const RankingSet& set) {
  std::vector<double> out(set.query_labels.size());
  for (std::size_t q = 0; q < out.size(); ++q) out[q] = average_precision(set, q);
  return out;
}

double mean_average_precision(const RankingSet& set) {
  check_set(set);
  const auto aps = average_precisions(set);
  if (aps.empty()) return 0.0;
  return std::accumulate(aps.begin(), aps.end(), 0.0) / static_cast<double>(aps.size());
}

RankingSet make_ranking_set(Eigen::MatrixXd distances, std::span<const std::string> query_labels,
                            std::span<const std::string> gallery_labels,
                            std::span<const std::string> query_image_ids,
                            std::span<const std::string> gallery_image_ids) {
  RankingSet set;
  set.distances = std::move(distances);
  set.query_labels.assign(query_labels.begin(), query_labels.end());
  set.gallery_labels.assign(gallery_labels.begin(), gallery_labels.end());
  set.excluded.resize(query_labels.size());
  if (!query_image_ids.empty() && !gallery_image_ids.empty()) {
    std::map<std::string_view, std::vector<std::size_t>> by_id;
    for (std::size_t g = 0; g < gallery_image_ids.size(); ++g) by_id[gallery_image_ids[g]].push_back(g);
    for (std::size_t q = 0; q < query_image_ids.size(); ++q) {
      const auto it = by_id.find(query_image_ids[q]);
      if (it != by_id.end()) set.excluded[q] = it->second;
    }
  }
  return set;
}

std::string_view protocol_name(Protocol p) noexcept { return p == Protocol::Full ? "full" : "sampled"; }

std::optional<Protocol> parse_protocol(std::string_view s) noexcept {
  if (s == "full") return Protocol::Full;
  if (s == "sampled") return Protocol::Sampled;
  return std::nullopt;
}

EvalReport evaluate(std::span<const IdentityDescriptor> queries, std::span<const IdentityDescriptor> gallery,
                    const EvalOptions& options) {
  require(!gallery.empty(), ErrorCode::EmptyGallery, "gallery is empty");
  std::vector<IdentityDescriptor> g_kept(gallery.begin(), gallery.end());
  std::vector<IdentityDescriptor> q_kept(queries.begin(), queries.end());
  if (options.protocol == Protocol::Sampled) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < gallery.size(); ++i) groups[gallery[i].vehicle_id].push_back(i);
    Rng rng(Rng::derive(options.seed, 0x9a11));
    std::vector<std::size_t> picked;
    for (const auto& [id, members] : groups) picked.push_back(members[rng.index(members.size())]);
    std::sort(picked.begin(), picked.end());
    g_kept.clear();
    std::set<std::string> picked_ids;
    for (auto i : picked) {
      g_kept.push_back(gallery[i]);
      picked_ids.insert(gallery[i].image_id);
    }
    q_kept.clear();
    for (const auto& q : queries)
      if (!picked_ids.count(q.image_id)) q_kept.push_back(q);
  }

  EvalReport report;
  report.options = options;
  std::vector<std::string> ql, gl, qi, gi;
  for (const auto& q : q_kept) {
    ql.push_back(q.vehicle_id);
    qi.push_back(q.image_id);
  }
  for (const auto& g : g_kept) {
    gl.push_back(g.vehicle_id);
    gi.push_back(g.image_id);
  }
  report.distances = distance_matrix(q_kept, g_kept, options.weights);
  const RankingSet set = options.exclude_self ? make_ranking_set(report.distances, ql, gl, qi, gi)
                                              : make_ranking_set(report.distances, ql, gl);
  report.query_ap = average_precisions(set);
  report.mean_ap = mean_average_precision(set);
  report.cmc = cmc(set, std::min(options.max_rank, g_kept.size()));
  report.query_ids = std::move(qi);
  report.gallery_ids = std::move(gi);
  return report;
}

EvalReport evaluate(const Manifest& query_manifest, const Manifest& gallery_manifest, const Pipeline& pipeline,
                    const EvalOptions& options) {
  const auto queries = assemble_descriptors(query_manifest, pipeline);
  // Descriptors are a pure function of the image, so shared records are computed once.
  std::map<std::string, std::size_t> known;
  for (std::size_t i = 0; i < query_manifest.records.size(); ++i) known[query_manifest.records[i].image_id] = i;
  std::vector<IdentityDescriptor> gallery(gallery_manifest.records.size());
  parallel_for(gallery.size(), [&](std::size_t i) {
    const auto& r = gallery_manifest.records[i];
    const auto it = known.find(r.image_id);
    const bool same_file = it != known.end() && query_manifest.resolve(query_manifest.records[it->second].layer_paths.at(LayerTag::Pool5)) ==
                                                    gallery_manifest.resolve(r.layer_paths.at(LayerTag::Pool5));
    gallery[i] = same_file ? queries[it->second] : assemble_descriptor(gallery_manifest, r, pipeline);
  });
  return evaluate(queries, gallery, options);
}

json report_to_json(const EvalReport& report) {
  json cmc_json = json::object();
  for (std::size_t k = 0; k < report.cmc.size(); ++k) cmc_json[std::to_string(k + 1)] = report.cmc[k];
  json per_query = json::array();
  for (std::size_t q = 0; q < report.query_ids.size(); ++q)
    per_query.push_back({{"image_id", report.query_ids[q]}, {"ap", report.query_ap[q]}});
  const auto& o = report.options;
  return {{"mAP", report.mean_ap},
          {"cmc", cmc_json},
          {"queries", report.query_ids.size()},
          {"gallery", report.gallery_ids.size()},
          {"per_query", per_query},
          {"config",
           {{"w1", o.weights.w1},
            {"w2", o.weights.w2},
            {"protocol", std::string(protocol_name(o.protocol))},
            {"seed", o.seed},
            {"max_rank", o.max_rank},
            {"exclude_self", o.exclude_self}}}};
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void save_report(const std::filesystem::path& path, const EvalReport& report) {
  write_text(path, report_to_json(report).dump(2) + "\n");
}

void save_cmc_csv(const std::filesystem::path& path, const std::vector<double>& curve) {
  std::string text = "rank,value\n";
  for (std::size_t k = 0; k < curve.size(); ++k) text += std::to_string(k + 1) + "," + num(curve[k]) + "\n";
  write_text(path, text);
}

void save_distance_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::string text = "query";
  for (const auto& g : report.gallery_ids) text += "," + g;
  text += "\n";
  for (Eigen::Index q = 0; q < report.distances.rows(); ++q) {
    text += report.query_ids[static_cast<std::size_t>(q)];
    for (Eigen::Index g = 0; g < report.distances.cols(); ++g) text += "," + num(report.distances(q, g));
    text += "\n";
  }
  write_text(path, text);
}

}  // namespace vreid::retrieval
