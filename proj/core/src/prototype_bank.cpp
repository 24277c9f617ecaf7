#include "vreid/prototype_bank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "vreid/error.hpp"
#include "vreid/fmap_io.hpp"
#include "vreid/pgm.hpp"
#include "vreid/rng.hpp"
#include "vreid/tensor_ops.hpp"
#include "vreid/util.hpp"

namespace vreid {

using nlohmann::json;

std::string_view semantic_name(Semantic s) noexcept {
  switch (s) {
    case Semantic::Sticker: return "sticker";
    case Semantic::Light: return "light";
    case Semantic::Grille: return "grille";
    case Semantic::Seat: return "seat";
    case Semantic::Background: return "background";
    case Semantic::Unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

std::optional<Semantic> parse_semantic(std::string_view name) noexcept {
  for (auto s : kNamedSemantics)
    if (semantic_name(s) == name) return s;
  if (name == "unlabeled") return Semantic::Unlabeled;
  return std::nullopt;
}

double default_threshold(Semantic s) noexcept { return s == Semantic::Sticker ? 0.05 : 0.0; }

const SemanticPrototype* PrototypeBank::find(Semantic s) const {
  for (const auto& p : prototypes)
    if (p.label == s) return &p;
  return nullptr;
}

const SemanticPrototype& PrototypeBank::get(Semantic s) const {
  const auto* p = find(s);
  require(p != nullptr, ErrorCode::MissingLabeledPrototype,
          std::string(layer_name(layer)) + " bank has no " + std::string(semantic_name(s)) + " prototype");
  return *p;
}

void validate_bank(const PrototypeBank& bank) {
  std::set<Semantic> seen;
  for (const auto& p : bank.prototypes) {
    require(l2_norm(p.vector.view()) > 0.0, ErrorCode::BadConfig, "prototype vector is zero");
    require(p.threshold >= 0.0 && p.threshold < 1.0, ErrorCode::BadThreshold, "threshold outside [0, 1)");
    require(p.layer == bank.layer, ErrorCode::LayerMismatch, "prototype layer differs from bank layer");
    if (p.label != Semantic::Unlabeled) {
      require(seen.insert(p.label).second, ErrorCode::DuplicateLabel,
              "two prototypes labeled " + std::string(semantic_name(p.label)));
    }
  }
}

std::vector<FeatureVector> build_feature_set(const Manifest& manifest, LayerTag layer, std::size_t sample_size,
                                             std::uint64_t seed, std::size_t* images_used) {
  require(!manifest.records.empty(), ErrorCode::EmptyManifest, "feature set from an empty manifest");
  require(sample_size >= 1, ErrorCode::BadConfig, "sample size must be >= 1");
  const std::size_t n = manifest.records.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (sample_size < n) {
    Rng rng(seed);
    for (std::size_t i = 0; i < sample_size; ++i) std::swap(order[i], order[i + rng.index(n - i)]);
    order.resize(sample_size);
    std::sort(order.begin(), order.end());
  }
  if (images_used) *images_used = order.size();

  std::vector<FeatureMaps> maps(order.size());
  parallel_for(order.size(), [&](std::size_t i) { maps[i] = manifest.load_layer(manifest.records[order[i]], layer); });
  std::vector<FeatureVector> set;
  for (const auto& m : maps) {
    for (std::size_t p = 0; p < m.positions(); ++p) {
      const auto x = m.position(p);
      set.emplace_back(std::vector<double>(x.begin(), x.end()));
    }
  }
  return set;
}

PrototypeBank generate_prototypes(std::span<const FeatureVector> feature_set, LayerTag layer, std::uint64_t seed,
                                  const PrototypeOptions& options) {
  const SpectralResult sr = spectral_cluster(feature_set, options.clusters, seed, options.spectral);
  PrototypeBank bank;
  bank.layer = layer;
  for (std::size_t c = 0; c < sr.clusters.centers.size(); ++c) {
    bank.prototypes.push_back({sr.clusters.centers[c], layer, Semantic::Unlabeled, 0.0, c});
  }
  bank.provenance.seed = seed;
  bank.provenance.gamma = sr.gamma;
  bank.provenance.feature_count = feature_set.size();
  bank.provenance.clustered_points = sr.sample.size();
  validate_bank(bank);
  return bank;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::DimMismatch, "cosine dims differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

ProbabilityMatrix probability_matrix(const FeatureMaps& maps, const SemanticPrototype& proto) {
  require(maps.layer == proto.layer, ErrorCode::LayerMismatch,
          "maps are " + std::string(layer_name(maps.layer)) + ", prototype is " + std::string(layer_name(proto.layer)));
  require(maps.channels == proto.vector.dim(), ErrorCode::DimMismatch,
          "maps have " + std::to_string(maps.channels) + " channels, prototype " + std::to_string(proto.vector.dim()));
  const double proto_norm = l2_norm(proto.vector.view());
  require(proto_norm > 0.0, ErrorCode::BadConfig, "zero prototype");
  ProbabilityMatrix p(maps.height, maps.width);
  for (std::size_t pos = 0; pos < maps.positions(); ++pos) {
    const auto x = maps.position(pos);
    double dot = 0.0, xx = 0.0;
    for (std::size_t k = 0; k < maps.channels; ++k) {
      const double v = static_cast<double>(x[k]);
      dot += proto.vector[k] * v;
      xx += v * v;
    }
    if (xx == 0.0) continue;
    const double cosine = dot / (proto_norm * std::sqrt(xx));
    p.data[pos] = std::clamp(cosine, 0.0, 1.0);
  }
  return p;
}

BinaryMask indication_matrix(const ProbabilityMatrix& p, double threshold) {
  require(threshold >= 0.0 && threshold < 1.0, ErrorCode::BadThreshold,
          "threshold " + std::to_string(threshold) + " outside [0, 1)");
  BinaryMask m(p.height, p.width);
  for (std::size_t k = 0; k < p.data.size(); ++k) m.data[k] = p.data[k] > threshold ? 1 : 0;
  return m;
}

BinaryMask locate(const FeatureMaps& maps, const SemanticPrototype& proto) {
  return indication_matrix(probability_matrix(maps, proto), proto.threshold);
}

BinaryMask intersect_masks(const BinaryMask& a, const BinaryMask& b) {
  require(a.height == b.height && a.width == b.width, ErrorCode::ShapeMismatch, "intersect_masks shapes differ");
  BinaryMask out(a.height, a.width);
  for (std::size_t k = 0; k < a.data.size(); ++k) out.data[k] = (a.data[k] && b.data[k]) ? 1 : 0;
  return out;
}

void render_heatmap(const ProbabilityMatrix& p, std::size_t image_h, std::size_t image_w,
                    const std::filesystem::path& out) {
  const ProbabilityMatrix up = upsample_bilinear(p, image_h, image_w);
  GrayImage img{image_h, image_w, std::vector<std::uint8_t>(up.data.size())};
  for (std::size_t k = 0; k < up.data.size(); ++k) img.pixels[k] = probability_to_byte(up.data[k]);
  write_pgm(out, img);
}

PrototypeBank label_prototypes(const PrototypeBank& bank, const std::map<std::size_t, Semantic>& assignments) {
  std::set<Semantic> used;
  for (const auto& [cluster, sem] : assignments) {
    if (sem == Semantic::Unlabeled) continue;
    require(used.insert(sem).second, ErrorCode::DuplicateLabel,
            std::string(semantic_name(sem)) + " assigned to more than one cluster");
  }
  PrototypeBank out = bank;
  for (auto& p : out.prototypes) {
    const auto it = assignments.find(p.cluster);
    p.label = it == assignments.end() ? Semantic::Unlabeled : it->second;
    p.threshold = default_threshold(p.label);
  }
  for (const auto& [cluster, sem] : assignments) {
    const bool known = std::any_of(out.prototypes.begin(), out.prototypes.end(),
                                   [&](const auto& p) { return p.cluster == cluster; });
    require(known, ErrorCode::MissingPrototype, "no cluster " + std::to_string(cluster) + " in bank");
  }
  validate_bank(out);
  return out;
}

std::map<std::size_t, Semantic> match_to_signatures(const PrototypeBank& bank,
                                                    const std::map<Semantic, FeatureVector>& signatures) {
  std::vector<Semantic> sems;
  for (const auto& [s, v] : signatures) sems.push_back(s);
  const std::size_t k = bank.prototypes.size();
  std::vector<std::vector<double>> score(k, std::vector<double>(sems.size()));
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t s = 0; s < sems.size(); ++s)
      score[c][s] = cosine_similarity(bank.prototypes[c].vector.view(), signatures.at(sems[s]).view());

  // Depth-first over semantics; each picks an unused cluster or stays unassigned
  // when there are more semantics than clusters.
  std::vector<int> current(sems.size(), -1), best_assign;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<bool> used(k, false);
  const std::size_t assignable = std::min(k, sems.size());
  auto search = [&](auto&& self, std::size_t s, std::size_t placed, double total) -> void {
    if (s == sems.size()) {
      if (placed == assignable && total > best) {
        best = total;
        best_assign = current;
      }
      return;
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (used[c]) continue;
      used[c] = true;
      current[s] = static_cast<int>(c);
      self(self, s + 1, placed + 1, total + score[c][s]);
      used[c] = false;
      current[s] = -1;
    }
    if (sems.size() - s > assignable - placed) self(self, s + 1, placed, total);
  };
  search(search, 0, 0, 0.0);

  std::map<std::size_t, Semantic> out;
  for (std::size_t s = 0; s < sems.size(); ++s)
    if (best_assign[s] >= 0) out[bank.prototypes[static_cast<std::size_t>(best_assign[s])].cluster] = sems[s];
  return out;
}

json prototype_to_json(const SemanticPrototype& p) {
  return {{"cluster", p.cluster},
          {"layer", std::string(layer_name(p.layer))},
          {"label", std::string(semantic_name(p.label))},
          {"threshold", p.threshold},
          {"center", p.vector.data}};
}

SemanticPrototype prototype_from_json(const json& j) {
  try {
    SemanticPrototype p;
    p.cluster = j.at("cluster").get<std::size_t>();
    const auto layer = parse_layer(j.at("layer").get<std::string>());
    const auto label = parse_semantic(j.at("label").get<std::string>());
    require(layer.has_value(), ErrorCode::BadConfig, "unknown prototype layer");
    require(label.has_value(), ErrorCode::BadConfig, "unknown prototype label");
    p.layer = *layer;
    p.label = *label;
    p.threshold = j.at("threshold").get<double>();
    p.vector = FeatureVector(j.at("center").get<std::vector<double>>());
    return p;
  } catch (const json::exception& e) {
    fail(ErrorCode::BadConfig, std::string("prototype: ") + e.what());
  }
}

json bank_to_json(const PrototypeBank& bank) {
  json protos = json::array();
  for (const auto& p : bank.prototypes) protos.push_back(prototype_to_json(p));
  const auto& pv = bank.provenance;
  return {{"layer", std::string(layer_name(bank.layer))},
          {"gamma", pv.gamma},
          {"seed", pv.seed},
          {"provenance",
           {{"manifest_hash", pv.manifest_hash},
            {"sample_size", pv.sample_size},
            {"feature_count", pv.feature_count},
            {"clustered_points", pv.clustered_points}}},
          {"prototypes", protos}};
}

PrototypeBank bank_from_json(const json& j) {
  PrototypeBank bank;
  try {
    const auto layer = parse_layer(j.at("layer").get<std::string>());
    require(layer.has_value(), ErrorCode::BadConfig, "unknown bank layer");
    bank.layer = *layer;
    bank.provenance.gamma = j.at("gamma").get<double>();
    bank.provenance.seed = j.at("seed").get<std::uint64_t>();
    const auto& pv = j.at("provenance");
    bank.provenance.manifest_hash = pv.value("manifest_hash", "");
    bank.provenance.sample_size = pv.value("sample_size", std::size_t{0});
    bank.provenance.feature_count = pv.value("feature_count", std::size_t{0});
    bank.provenance.clustered_points = pv.value("clustered_points", std::size_t{0});
    for (const auto& p : j.at("prototypes")) bank.prototypes.push_back(prototype_from_json(p));
  } catch (const json::exception& e) {
    fail(ErrorCode::BadConfig, std::string("prototype bank: ") + e.what());
  }
  validate_bank(bank);
  return bank;
}

void save_bank(const std::filesystem::path& path, const PrototypeBank& bank) {
  const std::string text = bank_to_json(bank).dump(2) + "\n";
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

PrototypeBank load_bank(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return bank_from_json(json::parse(bytes.begin(), bytes.end()));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::BadConfig, path.string() + ": " + e.what());
  }
}

std::string manifest_fingerprint(const Manifest& manifest) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& r : manifest.records) {
    h = fnv1a64(r.image_id, h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(r.vehicle_id, h);
    for (const auto& [tag, rel] : r.layer_paths) {
      h = fnv1a64(layer_name(tag), h);
      h = fnv1a64(rel, h);
    }
    h = fnv1a64("\x1e", h);
  }
  return hex64(h);
}

}  // namespace vreid
