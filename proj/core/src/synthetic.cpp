#include "vreid/synthetic.hpp"

#include <cmath>

#include "vreid/error.hpp"
#include "vreid/fmap_io.hpp"
#include "vreid/pgm.hpp"
#include "vreid/rng.hpp"
#include "vreid/util.hpp"

namespace vreid::synth {

using nlohmann::json;

namespace {

// Stream ids for Rng::derive; each piece of the world draws from its own stream
// so that, e.g., changing the distractor strength leaves signatures untouched.
enum Stream : std::uint64_t {
  kSignatures = 1,
  kProjections = 2,
  kIdentityMap = 3,
  kViewPhase = 4,
  kVehicleBase = 1ULL << 20,
  kImageBase = 1ULL << 40,
};

constexpr std::array<Semantic, 3> kIdentityRegions = {Semantic::Sticker, Semantic::Light, Semantic::Grille};

struct Rect {
  std::size_t r0, r1, c0, c1;  // on the 7x7 reference grid
};

std::optional<Rect> layout(Viewpoint view, Semantic s) {
  switch (s) {
    case Semantic::Sticker:
      if (view == Viewpoint::Front) return Rect{0, 2, 0, 2};
      return std::nullopt;
    case Semantic::Light:
      return Rect{0, 2, 5, 7};
    case Semantic::Grille:
      if (view == Viewpoint::Front) return Rect{2, 5, 2, 5};
      return std::nullopt;
    case Semantic::Seat:
      if (view == Viewpoint::Back) return Rect{5, 7, 0, 2};
      return std::nullopt;
    default:
      return std::nullopt;
  }
}

Eigen::MatrixXd gaussian(Rng& rng, std::size_t rows, std::size_t cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.normal();
  return m;
}

Eigen::MatrixXd orthonormal_columns(const Eigen::MatrixXd& m) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  return qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), m.cols());
}

struct LayerWorld {
  std::size_t h = 0, w = 0, c = 0;
  std::map<Semantic, Eigen::VectorXd> signatures;
  Eigen::MatrixXd signature_basis;                   // c x 5, orthonormal
  std::map<Semantic, Eigen::MatrixXd> projections;   // c x q per identity region
  std::map<Viewpoint, std::map<Semantic, BinaryMask>> masks;
};

struct World {
  SynthConfig cfg;
  std::map<LayerTag, LayerWorld> layers;
  Eigen::MatrixXd identity_map;  // q x q
  double view_phase = 0.0;
};

LayerWorld make_layer(const SynthConfig& cfg, LayerTag tag, std::size_t h, std::size_t w, std::size_t c) {
  LayerWorld lw;
  lw.h = h;
  lw.w = w;
  lw.c = c;
  const std::uint64_t layer_stream = static_cast<std::uint64_t>(tag) * 16;

  // Regular simplex on a random orthonormal frame: pairwise cosine exactly -1/4.
  Rng sig_rng(Rng::derive(cfg.seed, kSignatures + layer_stream));
  lw.signature_basis = orthonormal_columns(gaussian(sig_rng, c, 5));
  for (std::size_t k = 0; k < kNamedSemantics.size(); ++k) {
    Eigen::VectorXd u = Eigen::VectorXd::Constant(5, -0.2);
    u[static_cast<Eigen::Index>(k)] += 1.0;
    u.normalize();
    lw.signatures[kNamedSemantics[k]] = lw.signature_basis * u;
  }

  Rng proj_rng(Rng::derive(cfg.seed, kProjections + layer_stream));
  const auto& b = lw.signature_basis;
  for (auto s : kIdentityRegions) {
    Eigen::MatrixXd g = gaussian(proj_rng, c, cfg.identity_dim);
    g -= b * (b.transpose() * g);
    lw.projections[s] = orthonormal_columns(g);
  }

  for (auto view : {Viewpoint::Front, Viewpoint::Back})
    for (auto s : kNamedSemantics) lw.masks[view][s] = planted_mask(view, s, h, w);
  return lw;
}

World make_world(const SynthConfig& cfg) {
  validate(cfg);
  World world;
  world.cfg = cfg;
  world.layers[LayerTag::Pool4] = make_layer(cfg, LayerTag::Pool4, cfg.h4, cfg.w4, cfg.c4);
  world.layers[LayerTag::Pool5] = make_layer(cfg, LayerTag::Pool5, cfg.h5, cfg.w5, cfg.c5);

  // U diag(s) V^T with s in [0.5, 1.5]: condition number at most 3.
  const std::size_t q = cfg.identity_dim;
  Rng map_rng(Rng::derive(cfg.seed, kIdentityMap));
  const Eigen::MatrixXd u = orthonormal_columns(gaussian(map_rng, q, q));
  const Eigen::MatrixXd v = orthonormal_columns(gaussian(map_rng, q, q));
  Eigen::VectorXd s(static_cast<Eigen::Index>(q));
  for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = map_rng.uniform(0.5, 1.5);
  world.identity_map = u * s.asDiagonal() * v.transpose();

  world.view_phase = Rng(Rng::derive(cfg.seed, kViewPhase)).uniform();
  return world;
}

Eigen::VectorXd vehicle_latent(const SynthConfig& cfg, std::size_t vehicle) {
  Rng rng(Rng::derive(cfg.seed, kVehicleBase + vehicle));
  Eigen::VectorXd z(static_cast<Eigen::Index>(cfg.identity_dim));
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return z / std::sqrt(static_cast<double>(cfg.identity_dim));
}

Viewpoint view_of(const SynthConfig& cfg, double phase, std::size_t vehicle, std::size_t image) {
  // Bresenham spacing: the running front count tracks front_fraction within one image.
  const double g = static_cast<double>(vehicle * cfg.images_per_vehicle + image);
  const double f = cfg.front_fraction;
  return std::floor((g + 1.0) * f + phase) > std::floor(g * f + phase) ? Viewpoint::Front : Viewpoint::Back;
}

FeatureMaps render_layer(const World& world, LayerTag tag, Viewpoint view, const Eigen::VectorXd& z, Rng& rng) {
  const auto& cfg = world.cfg;
  const LayerWorld& lw = world.layers.at(tag);
  FeatureMaps maps(lw.h, lw.w, lw.c, tag);

  std::map<Semantic, Eigen::VectorXd> fill;
  for (const auto& [s, mask] : lw.masks.at(view)) {
    Eigen::VectorXd base = lw.signatures.at(s);
    if (lw.projections.count(s) && !mask.empty_support()) {
      const Eigen::VectorXd latent = view == Viewpoint::Front ? z : Eigen::VectorXd(world.identity_map * z);
      base += cfg.identity_strength * lw.projections.at(s) * latent;
    }
    fill[s] = base;
  }
  Eigen::VectorXd distractor = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lw.c));
  if (cfg.distractor_strength > 0.0) {
    for (Eigen::Index k = 0; k < distractor.size(); ++k) distractor[k] = rng.normal();
    const auto& b = lw.signature_basis;
    distractor -= b * (b.transpose() * distractor);
    distractor *= cfg.distractor_strength / distractor.norm();
  }

  for (const auto& [s, mask] : lw.masks.at(view)) {
    const bool cluttered = s == Semantic::Seat || s == Semantic::Background;
    for (std::size_t p = 0; p < mask.data.size(); ++p) {
      if (!mask.data[p]) continue;
      float* out = maps.data.data() + p * lw.c;
      for (std::size_t k = 0; k < lw.c; ++k) {
        double v = fill[s][static_cast<Eigen::Index>(k)];
        if (cluttered) v += distractor[static_cast<Eigen::Index>(k)];
        if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * rng.normal();
        out[k] = static_cast<float>(v);
      }
    }
  }
  return maps;
}

std::pair<FeatureMaps, FeatureMaps> render(const World& world, std::size_t vehicle, std::size_t image) {
  const auto& cfg = world.cfg;
  const Eigen::VectorXd z = vehicle_latent(cfg, vehicle);
  const Viewpoint view = view_of(cfg, world.view_phase, vehicle, image);
  Rng rng(Rng::derive(cfg.seed, kImageBase + vehicle * cfg.images_per_vehicle + image));
  FeatureMaps m4 = render_layer(world, LayerTag::Pool4, view, z, rng);
  FeatureMaps m5 = render_layer(world, LayerTag::Pool5, view, z, rng);
  return {std::move(m4), std::move(m5)};
}

std::string mask_file(Viewpoint view, LayerTag tag, Semantic s) {
  return "masks/" + std::string(viewpoint_name(view)) + "_" + std::string(layer_name(tag)) + "_" +
         std::string(semantic_name(s)) + ".pgm";
}

std::string mask_key(LayerTag tag, Semantic s) {
  return std::string(layer_name(tag)) + "/" + std::string(semantic_name(s));
}

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

void validate(const SynthConfig& cfg) {
  require(cfg.n_vehicles >= 1 && cfg.images_per_vehicle >= 1, ErrorCode::BadConfig, "need at least one image");
  require(cfg.front_fraction > 0.0 && cfg.front_fraction < 1.0, ErrorCode::BadConfig, "front_fraction must be in (0, 1)");
  require(cfg.noise_sigma >= 0.0 && std::isfinite(cfg.noise_sigma), ErrorCode::BadConfig, "noise_sigma must be >= 0");
  require(cfg.identity_strength >= 0.0 && std::isfinite(cfg.identity_strength), ErrorCode::BadConfig,
          "identity_strength must be >= 0");
  require(cfg.distractor_strength >= 0.0 && std::isfinite(cfg.distractor_strength), ErrorCode::BadConfig,
          "distractor_strength must be >= 0");
  require(cfg.identity_dim >= 1, ErrorCode::BadConfig, "identity_dim must be >= 1");
  for (auto c : {cfg.c4, cfg.c5})
    require(c >= 5 + cfg.identity_dim, ErrorCode::BadConfig,
            "channels must leave room for 5 signatures plus the identity subspace (>= " +
                std::to_string(5 + cfg.identity_dim) + ")");
  require(cfg.h4 >= cfg.h5 && cfg.w4 >= cfg.w5, ErrorCode::BadConfig, "pool4 grid must be at least the pool5 grid");
}

json config_to_json(const SynthConfig& cfg) {
  return {{"n_vehicles", cfg.n_vehicles},
          {"images_per_vehicle", cfg.images_per_vehicle},
          {"front_fraction", cfg.front_fraction},
          {"pool4", {cfg.h4, cfg.w4, cfg.c4}},
          {"pool5", {cfg.h5, cfg.w5, cfg.c5}},
          {"noise_sigma", cfg.noise_sigma},
          {"identity_strength", cfg.identity_strength},
          {"identity_dim", cfg.identity_dim},
          {"distractor_strength", cfg.distractor_strength},
          {"seed", cfg.seed}};
}

SynthConfig config_from_json(const json& j) {
  SynthConfig cfg;
  try {
    cfg.n_vehicles = j.at("n_vehicles").get<std::size_t>();
    cfg.images_per_vehicle = j.at("images_per_vehicle").get<std::size_t>();
    cfg.front_fraction = j.at("front_fraction").get<double>();
    const auto p4 = j.at("pool4").get<std::vector<std::size_t>>();
    const auto p5 = j.at("pool5").get<std::vector<std::size_t>>();
    require(p4.size() == 3 && p5.size() == 3, ErrorCode::BadConfig, "layer dims are [h, w, c]");
    cfg.h4 = p4[0], cfg.w4 = p4[1], cfg.c4 = p4[2];
    cfg.h5 = p5[0], cfg.w5 = p5[1], cfg.c5 = p5[2];
    cfg.noise_sigma = j.at("noise_sigma").get<double>();
    cfg.identity_strength = j.at("identity_strength").get<double>();
    cfg.identity_dim = j.at("identity_dim").get<std::size_t>();
    cfg.distractor_strength = j.at("distractor_strength").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::BadConfig, std::string("synthetic config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

BinaryMask planted_mask(Viewpoint view, Semantic semantic, std::size_t h, std::size_t w) {
  require(h >= 1 && w >= 1, ErrorCode::RegionOverflow, "empty grid");
  require(semantic != Semantic::Unlabeled, ErrorCode::BadConfig, "no planted region for unlabeled");
  BinaryMask mask(h, w);
  if (semantic == Semantic::Background) {
    mask = BinaryMask(h, w, 1);
    for (auto s : kNamedSemantics) {
      if (s == Semantic::Background || !layout(view, s)) continue;
      const BinaryMask m = planted_mask(view, s, h, w);
      for (std::size_t p = 0; p < mask.data.size(); ++p) mask.data[p] &= static_cast<std::uint8_t>(!m.data[p]);
    }
    return mask;
  }
  const auto rect = layout(view, semantic);
  if (!rect) return mask;
  const std::size_t r0 = rect->r0 * h / 7, r1 = rect->r1 * h / 7;
  const std::size_t c0 = rect->c0 * w / 7, c1 = rect->c1 * w / 7;
  require(r1 > r0 && c1 > c0, ErrorCode::RegionOverflow,
          std::string(semantic_name(semantic)) + " region vanishes on a " + std::to_string(h) + "x" +
              std::to_string(w) + " grid");
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = c0; j < c1; ++j) mask(i, j) = 1;
  return mask;
}

std::string image_id(std::size_t vehicle, std::size_t image) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "v%04zu_i%03zu", vehicle, image);
  return buf;
}

std::string vehicle_id(std::size_t vehicle) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "v%04zu", vehicle);
  return buf;
}

Viewpoint planted_viewpoint(const SynthConfig& cfg, std::size_t vehicle, std::size_t image) {
  return view_of(cfg, Rng(Rng::derive(cfg.seed, kViewPhase)).uniform(), vehicle, image);
}

std::pair<FeatureMaps, FeatureMaps> render_image(const SynthConfig& cfg, std::size_t vehicle, std::size_t image) {
  return render(make_world(cfg), vehicle, image);
}

GroundTruth make_ground_truth(const SynthConfig& cfg) {
  const World world = make_world(cfg);
  GroundTruth gt;
  gt.config = cfg;
  for (const auto& [tag, lw] : world.layers)
    for (const auto& [s, v] : lw.signatures) gt.signatures[tag][s] = FeatureVector(std::vector<double>(v.data(), v.data() + v.size()));
  gt.identity_map = world.identity_map;
  for (std::size_t v = 0; v < cfg.n_vehicles; ++v)
    for (std::size_t i = 0; i < cfg.images_per_vehicle; ++i)
      gt.viewpoints[image_id(v, i)] = view_of(cfg, world.view_phase, v, i);
  return gt;
}

json ground_truth_to_json(const GroundTruth& gt) {
  json sigs = json::object();
  for (const auto& [tag, per] : gt.signatures) {
    json layer = json::object();
    for (const auto& [s, v] : per) layer[std::string(semantic_name(s))] = v.data;
    sigs[std::string(layer_name(tag))] = layer;
  }
  json map = json::array();
  for (Eigen::Index i = 0; i < gt.identity_map.rows(); ++i) map.push_back(vec_json(gt.identity_map.row(i).transpose()));
  json views = json::object();
  for (const auto& [id, v] : gt.viewpoints) views[id] = std::string(viewpoint_name(v));
  return {{"config", config_to_json(gt.config)}, {"signatures", sigs}, {"identity_map", map}, {"viewpoints", views}};
}

GroundTruth ground_truth_from_json(const json& j) {
  GroundTruth gt;
  try {
    gt.config = config_from_json(j.at("config"));
    for (const auto& [layer, per] : j.at("signatures").items()) {
      const auto tag = parse_layer(layer);
      require(tag.has_value(), ErrorCode::MissingGroundTruth, "unknown layer " + layer);
      for (const auto& [name, v] : per.items()) {
        const auto s = parse_semantic(name);
        require(s.has_value(), ErrorCode::MissingGroundTruth, "unknown semantic " + name);
        gt.signatures[*tag][*s] = FeatureVector(v.get<std::vector<double>>());
      }
    }
    const auto& rows = j.at("identity_map");
    const auto q = static_cast<Eigen::Index>(rows.size());
    gt.identity_map.resize(q, q);
    for (Eigen::Index i = 0; i < q; ++i) {
      const auto row = rows.at(static_cast<std::size_t>(i)).get<std::vector<double>>();
      require(static_cast<Eigen::Index>(row.size()) == q, ErrorCode::MissingGroundTruth, "identity map is not square");
      for (Eigen::Index k = 0; k < q; ++k) gt.identity_map(i, k) = row[static_cast<std::size_t>(k)];
    }
    for (const auto& [id, v] : j.at("viewpoints").items()) {
      const auto view = parse_viewpoint(v.get<std::string>());
      require(view.has_value(), ErrorCode::MissingGroundTruth, "bad viewpoint for " + id);
      gt.viewpoints[id] = *view;
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::MissingGroundTruth, std::string("ground truth: ") + e.what());
  }
  return gt;
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::MissingGroundTruth, path.string() + " does not exist");
  const auto bytes = read_file_bytes(path);
  try {
    return ground_truth_from_json(json::parse(bytes.begin(), bytes.end()));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::MissingGroundTruth, path.string() + ": " + e.what());
  }
}

Manifest gen_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  const World world = make_world(cfg);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "maps", ec);
  require(!ec, ErrorCode::IoError, "cannot create " + (out_dir / "maps").string() + ": " + ec.message());
  std::filesystem::create_directories(out_dir / "masks", ec);
  require(!ec, ErrorCode::IoError, "cannot create " + (out_dir / "masks").string() + ": " + ec.message());

  for (const auto& [tag, lw] : world.layers)
    for (const auto& [view, per] : lw.masks)
      for (const auto& [s, mask] : per) write_pgm(out_dir / mask_file(view, tag, s), image_from_mask(mask));

  const std::size_t total = cfg.n_vehicles * cfg.images_per_vehicle;
  Manifest manifest;
  manifest.split = Split::Train;
  manifest.base_dir = out_dir;
  manifest.records.resize(total);
  parallel_for(total, [&](std::size_t g) {
    const std::size_t v = g / cfg.images_per_vehicle, i = g % cfg.images_per_vehicle;
    const auto [m4, m5] = render(world, v, i);
    ImageRecord r;
    r.image_id = image_id(v, i);
    r.vehicle_id = vehicle_id(v);
    r.layer_paths[LayerTag::Pool4] = "maps/" + r.image_id + "_pool4.fmap";
    r.layer_paths[LayerTag::Pool5] = "maps/" + r.image_id + "_pool5.fmap";
    store_feature_maps(out_dir / r.layer_paths[LayerTag::Pool4], m4);
    store_feature_maps(out_dir / r.layer_paths[LayerTag::Pool5], m5);
    const Viewpoint view = view_of(cfg, world.view_phase, v, i);
    r.gt_viewpoint = view;
    for (auto tag : {LayerTag::Pool4, LayerTag::Pool5})
      for (auto s : kNamedSemantics) r.gt_masks[mask_key(tag, s)] = mask_file(view, tag, s);
    manifest.records[g] = std::move(r);
  });
  save_manifest(out_dir / "manifest.jsonl", manifest);
  write_text(out_dir / "gt.json", ground_truth_to_json(make_ground_truth(cfg)).dump(2) + "\n");
  return load_manifest(out_dir / "manifest.jsonl");
}

std::map<Semantic, double> score_localization(const PrototypeBank& bank, const Manifest& corpus) {
  require(!corpus.records.empty(), ErrorCode::EmptyManifest, "corpus is empty");
  std::vector<const SemanticPrototype*> labeled;
  for (const auto& p : bank.prototypes)
    if (p.label != Semantic::Unlabeled) labeled.push_back(&p);
  // Images where both masks are empty say nothing about localization and are skipped.
  std::vector<std::vector<double>> iou(corpus.records.size(), std::vector<double>(labeled.size(), -1.0));
  parallel_for(corpus.records.size(), [&](std::size_t i) {
    const auto& r = corpus.records[i];
    const FeatureMaps maps = corpus.load_layer(r, bank.layer);
    for (std::size_t k = 0; k < labeled.size(); ++k) {
      const BinaryMask truth = corpus.load_gt_mask(r, mask_key(bank.layer, labeled[k]->label));
      const BinaryMask found = locate(maps, *labeled[k]);
      require(truth.height == found.height && truth.width == found.width, ErrorCode::ShapeMismatch,
              "ground-truth mask size differs from the feature grid for " + r.image_id);
      if (!truth.empty_support() || !found.empty_support()) iou[i][k] = mask_iou(found, truth);
    }
  });
  std::map<Semantic, double> out;
  for (std::size_t k = 0; k < labeled.size(); ++k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& row : iou)
      if (row[k] >= 0.0) {
        sum += row[k];
        ++n;
      }
    out[labeled[k]->label] = n ? sum / static_cast<double>(n) : 1.0;
  }
  return out;
}

double score_viewpoint(const ovg::ViewpointDiscriminators& disc, const Manifest& corpus) {
  require(!corpus.records.empty(), ErrorCode::EmptyManifest, "corpus is empty");
  for (const auto& r : corpus.records)
    require(r.gt_viewpoint.has_value(), ErrorCode::MissingGroundTruth, r.image_id + " has no gt_viewpoint");
  const auto tags = ovg::classify_manifest(corpus, disc);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < tags.size(); ++i) correct += tags[i] == *corpus.records[i].gt_viewpoint;
  return static_cast<double>(correct) / static_cast<double>(tags.size());
}

std::map<std::size_t, Semantic> assign_from_ground_truth(const PrototypeBank& bank, const GroundTruth& gt) {
  const auto it = gt.signatures.find(bank.layer);
  require(it != gt.signatures.end(), ErrorCode::MissingGroundTruth,
          "ground truth has no signatures for " + std::string(layer_name(bank.layer)));
  return match_to_signatures(bank, it->second);
}

}  // namespace vreid::synth
