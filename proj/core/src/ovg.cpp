#include "vreid/ovg.hpp"

#include <algorithm>
#include <cmath>

#include "vreid/checkpoint.hpp"
#include "vreid/clustering.hpp"
#include "vreid/error.hpp"
#include "vreid/fmap_io.hpp"
#include "vreid/losses.hpp"
#include "vreid/rng.hpp"
#include "vreid/tensor_ops.hpp"
#include "vreid/util.hpp"

namespace vreid::ovg {

using nlohmann::json;

ViewpointPrototypes select_viewpoint_prototypes(const PrototypeBank& bank4, const PrototypeBank& bank5) {
  require(bank4.layer == LayerTag::Pool4, ErrorCode::LayerMismatch, "first bank must be pool4");
  require(bank5.layer == LayerTag::Pool5, ErrorCode::LayerMismatch, "second bank must be pool5");
  return {bank4.get(Semantic::Sticker), bank4.get(Semantic::Light), bank5.get(Semantic::Sticker),
          bank5.get(Semantic::Light)};
}

ViewpointFeature viewpoint_feature(const FeatureMaps& maps4, const FeatureMaps& maps5,
                                   const ViewpointPrototypes& prototypes) {
  require(maps4.layer == LayerTag::Pool4, ErrorCode::LayerMismatch, "viewpoint feature needs pool4 maps");
  require(maps5.layer == LayerTag::Pool5, ErrorCode::LayerMismatch, "viewpoint feature needs pool5 maps");
  const std::array<std::pair<const SemanticPrototype*, const SemanticPrototype*>, 2> regions = {
      std::pair{&prototypes.sticker4, &prototypes.sticker5}, std::pair{&prototypes.light4, &prototypes.light5}};

  ViewpointFeature out;
  std::vector<FeatureVector> blocks;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const BinaryMask m4 = locate(maps4, *regions[r].first);
    const BinaryMask m5 = upsample_nearest_mask(locate(maps5, *regions[r].second), maps4.height, maps4.width);
    const BinaryMask inter = intersect_masks(m4, m5);
    if (inter.empty_support()) {
      out.absent[r] = true;
      blocks.emplace_back(maps4.channels);
    } else {
      blocks.push_back(masked_gap(maps4, inter));
    }
  }
  out.f_v = concat(blocks);
  return out;
}

std::vector<ViewpointFeature> viewpoint_features(const Manifest& manifest, const ViewpointPrototypes& prototypes) {
  std::vector<ViewpointFeature> out(manifest.records.size());
  parallel_for(manifest.records.size(), [&](std::size_t i) {
    const auto& r = manifest.records[i];
    out[i] = viewpoint_feature(manifest.load_layer(r, LayerTag::Pool4), manifest.load_layer(r, LayerTag::Pool5),
                               prototypes);
  });
  return out;
}

namespace {

double block_norm(const FeatureVector& v, std::size_t begin, std::size_t len) {
  return l2_norm(v.view().subspan(begin, len));
}

}  // namespace

ViewpointDiscriminators build_discriminators(std::span<const FeatureVector> features,
                                             const ViewpointPrototypes& prototypes, std::uint64_t seed,
                                             const DiscriminatorOptions& options) {
  require(features.size() >= 2, ErrorCode::TooFewPoints, "need at least two images to build discriminators");
  const std::size_t dim = features[0].dim();
  require(dim % 2 == 0, ErrorCode::DimMismatch, "viewpoint features have two equal blocks");
  for (const auto& f : features) require(f.dim() == dim, ErrorCode::DimMismatch, "viewpoint feature dims differ");

  ClusterResult clusters;
  if (options.spectral) {
    clusters = spectral_cluster(features, 2, seed).clusters;
  } else {
    clusters = kmeans(features, 2, seed);
  }
  const FeatureVector& a = clusters.centers[0];
  const FeatureVector& b = clusters.centers[1];

  const double scale = std::max({l2_norm(a.view()), l2_norm(b.view()), 1e-12});
  require(l2_distance(a, b) > options.min_separation * scale, ErrorCode::DegenerateClusters,
          "viewpoint cluster centers coincide; the subset likely holds a single viewpoint");
  const double sa = block_norm(a, 0, dim / 2);
  const double sb = block_norm(b, 0, dim / 2);
  const double hi = std::max(sa, sb);
  require(hi > 0.0 && std::min(sa, sb) / hi <= options.max_sticker_ratio, ErrorCode::DegenerateClusters,
          "sticker evidence does not separate the clusters (norms " + std::to_string(sa) + ", " +
              std::to_string(sb) + "); the subset likely holds a single viewpoint");

  ViewpointDiscriminators disc;
  disc.front_center = sa >= sb ? a : b;
  disc.back_center = sa >= sb ? b : a;
  disc.prototypes = prototypes;
  disc.provenance.seed = seed;
  disc.provenance.images = features.size();
  return disc;
}

ViewpointDiscriminators build_discriminators(const Manifest& subset, const PrototypeBank& bank4,
                                             const PrototypeBank& bank5, std::uint64_t seed,
                                             const DiscriminatorOptions& options) {
  const auto prototypes = select_viewpoint_prototypes(bank4, bank5);
  std::vector<FeatureVector> features;
  for (auto& vf : viewpoint_features(subset, prototypes)) features.push_back(std::move(vf.f_v));
  auto disc = build_discriminators(features, prototypes, seed, options);
  disc.provenance.subset_hash = manifest_fingerprint(subset);
  return disc;
}

Viewpoint classify_viewpoint(const FeatureVector& f_v, const ViewpointDiscriminators& disc) {
  require(f_v.dim() == disc.front_center.dim() && f_v.dim() == disc.back_center.dim(), ErrorCode::DimMismatch,
          "viewpoint feature dim does not match the discriminators");
  return l2_distance(f_v, disc.front_center) < l2_distance(f_v, disc.back_center) ? Viewpoint::Front
                                                                                   : Viewpoint::Back;
}

std::vector<Viewpoint> classify_manifest(const Manifest& manifest, const ViewpointDiscriminators& disc) {
  const auto features = viewpoint_features(manifest, disc.prototypes);
  std::vector<Viewpoint> tags;
  tags.reserve(features.size());
  for (const auto& f : features) tags.push_back(classify_viewpoint(f.f_v, disc));
  return tags;
}

std::string_view embed_source_name(EmbedSource s) noexcept { return s == EmbedSource::Fc ? "fc" : "gap_pool5"; }

std::optional<EmbedSource> parse_embed_source(std::string_view s) noexcept {
  if (s == "fc") return EmbedSource::Fc;
  if (s == "gap_pool5") return EmbedSource::GapPool5;
  return std::nullopt;
}

FeatureVector embed(const FeatureMaps& maps, EmbedSource source) {
  const LayerTag want = source == EmbedSource::Fc ? LayerTag::Fc : LayerTag::Pool5;
  require(maps.layer == want, ErrorCode::LayerMismatch,
          "embed source " + std::string(embed_source_name(source)) + " got " + std::string(layer_name(maps.layer)));
  return global_average_pool(maps);  // fc maps are 1x1, so this is the stored vector
}

FeatureVector embed(const Manifest& manifest, const ImageRecord& record, EmbedSource source) {
  const LayerTag want = source == EmbedSource::Fc ? LayerTag::Fc : LayerTag::Pool5;
  require(record.has_layer(want), ErrorCode::MissingLayer,
          record.image_id + " has no " + std::string(layer_name(want)) + " layer");
  return embed(manifest.load_layer(record, want), source);
}

std::optional<FeatureVector> real_orthogonal(const Manifest& manifest, std::size_t index,
                                             std::span<const Viewpoint> tags,
                                             std::span<const FeatureVector> embeddings) {
  require(tags.size() == manifest.records.size() && embeddings.size() == manifest.records.size(),
          ErrorCode::DimMismatch, "one tag and embedding per record");
  const auto& self = manifest.records.at(index);
  const Viewpoint opposite = tags[index] == Viewpoint::Front ? Viewpoint::Back : Viewpoint::Front;
  std::optional<FeatureVector> sum;
  std::size_t count = 0;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (i == index || tags[i] != opposite || manifest.records[i].vehicle_id != self.vehicle_id) continue;
    if (!sum) sum = FeatureVector(embeddings[i].dim());
    require(embeddings[i].dim() == sum->dim(), ErrorCode::DimMismatch, "embedding dims differ");
    for (std::size_t k = 0; k < sum->dim(); ++k) (*sum)[k] += embeddings[i][k];
    ++count;
  }
  if (sum)
    for (auto& x : sum->data) x /= static_cast<double>(count);
  return sum;
}

std::optional<FeatureVector> extract_real_orthogonal(const ImageRecord& record, const Manifest& manifest,
                                                     const ViewpointDiscriminators& disc, EmbedSource source) {
  const auto groups = manifest.by_vehicle();
  const auto it = groups.find(record.vehicle_id);
  require(it != groups.end(), ErrorCode::UnknownVehicle, "vehicle " + record.vehicle_id + " is not in the manifest");
  Manifest group = manifest.subset(it->second);
  // The record may or may not be part of the manifest; tag it alongside its siblings.
  std::size_t self = group.records.size();
  for (std::size_t i = 0; i < group.records.size(); ++i)
    if (group.records[i].image_id == record.image_id) self = i;
  if (self == group.records.size()) group.records.push_back(record);

  const auto tags = classify_manifest(group, disc);
  std::vector<FeatureVector> embeddings(group.records.size());
  parallel_for(group.records.size(),
               [&](std::size_t i) { embeddings[i] = embed(group, group.records[i], source); });
  return real_orthogonal(group, self, tags, embeddings);
}

OvgModel make_generator(std::size_t embed_dim, const GeneratorConfig& cfg, std::uint64_t seed) {
  OvgModel model;
  model.embed_source = cfg.source;
  model.generator_cfg.layer_dims.push_back(embed_dim);
  model.generator_cfg.layer_dims.insert(model.generator_cfg.layer_dims.end(), cfg.hidden_dims.begin(),
                                        cfg.hidden_dims.end());
  model.generator_cfg.layer_dims.push_back(cfg.output_dim.value_or(embed_dim));
  model.generator_cfg.hidden_normalization = cfg.hidden_normalization;
  nn::validate(model.generator_cfg);
  model.generator = nn::init_mlp(model.generator_cfg, Rng::derive(seed, 1));
  return model;
}

FeatureVector generate_orthogonal(const OvgModel& model, const FeatureVector& f_o) {
  return nn::forward(model.generator, model.generator_cfg, f_o);
}

GeneratorTrainResult train_generator(std::span<const FeatureVector> inputs, std::span<const FeatureVector> targets,
                                     const GeneratorTrainConfig& cfg) {
  require(inputs.size() == targets.size(), ErrorCode::DimMismatch, "one target per input");
  require(!inputs.empty(), ErrorCode::NoTrainingPairs, "no (f_o, real orthogonal) pairs to train on");
  require(cfg.epochs >= 0, ErrorCode::BadConfig, "epochs must be >= 0");
  require(cfg.batch >= 1, ErrorCode::BadConfig, "batch must be >= 1");
  const std::size_t out_dim = cfg.generator.output_dim.value_or(inputs[0].dim());
  for (const auto& t : targets)
    require(t.dim() == out_dim, ErrorCode::DimMismatch, "target dim must equal the generator output dim");

  GeneratorTrainResult result;
  result.pairs = inputs.size();
  result.model = make_generator(inputs[0].dim(), cfg.generator, cfg.seed);
  auto& model = result.model;
  nn::AdamState opt = nn::make_adam(model.generator, cfg.adam);
  Rng rng(Rng::derive(cfg.seed, 2));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.epoch = epoch;
    std::vector<std::size_t> order(inputs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    // A trailing batch of one would normalize to a constant; fold it into the previous batch.
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch) batches.emplace_back(s, std::min(order.size(), s + cfg.batch));
    if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }

    double total = 0.0;
    for (const auto& [b, e] : batches) {
      std::vector<FeatureVector> xs, ys;
      for (std::size_t i = b; i < e; ++i) {
        xs.push_back(inputs[order[i]]);
        ys.push_back(targets[order[i]]);
      }
      const auto n = static_cast<double>(xs.size());
      nn::ForwardCache cache;
      const nn::Matrix pred = nn::forward_train(model.generator, model.generator_cfg, nn::to_batch(xs), cache);
      nn::Matrix upstream(pred.rows(), pred.cols());
      for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        const auto lg = nn::l2_regression_loss(nn::row_vector(pred, i), ys[static_cast<std::size_t>(i)]);
        total += lg.loss;
        for (Eigen::Index k = 0; k < pred.cols(); ++k) upstream(i, k) = lg.grad[static_cast<std::size_t>(k)] / n;
      }
      nn::MlpGrads grads = nn::backward(model.generator, model.generator_cfg, cache, upstream);
      nn::adam_step(model.generator, grads, opt);
    }
    result.loss_history.push_back(total / static_cast<double>(inputs.size()));
  }
  return result;
}

GeneratorTrainResult train_generator(const Manifest& manifest, const ViewpointDiscriminators& disc,
                                     const GeneratorTrainConfig& cfg) {
  const auto tags = classify_manifest(manifest, disc);
  std::vector<FeatureVector> embeddings(manifest.records.size());
  parallel_for(manifest.records.size(), [&](std::size_t i) {
    embeddings[i] = embed(manifest, manifest.records[i], cfg.generator.source);
  });
  std::vector<FeatureVector> inputs, targets;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (auto t = real_orthogonal(manifest, i, tags, embeddings)) {
      inputs.push_back(embeddings[i]);
      targets.push_back(std::move(*t));
    }
  }
  return train_generator(inputs, targets, cfg);
}

json discriminators_to_json(const ViewpointDiscriminators& disc) {
  const auto& p = disc.prototypes;
  return {{"front_center", disc.front_center.data},
          {"back_center", disc.back_center.data},
          {"prototypes",
           {{"pool4", {prototype_to_json(p.sticker4), prototype_to_json(p.light4)}},
            {"pool5", {prototype_to_json(p.sticker5), prototype_to_json(p.light5)}}}},
          {"provenance",
           {{"seed", disc.provenance.seed},
            {"subset_hash", disc.provenance.subset_hash},
            {"labeling_rule", disc.provenance.labeling_rule},
            {"images", disc.provenance.images}}}};
}

ViewpointDiscriminators discriminators_from_json(const json& j) {
  ViewpointDiscriminators disc;
  try {
    disc.front_center = FeatureVector(j.at("front_center").get<std::vector<double>>());
    disc.back_center = FeatureVector(j.at("back_center").get<std::vector<double>>());
    const auto& p = j.at("prototypes");
    disc.prototypes.sticker4 = prototype_from_json(p.at("pool4").at(0));
    disc.prototypes.light4 = prototype_from_json(p.at("pool4").at(1));
    disc.prototypes.sticker5 = prototype_from_json(p.at("pool5").at(0));
    disc.prototypes.light5 = prototype_from_json(p.at("pool5").at(1));
    const auto& pv = j.at("provenance");
    disc.provenance.seed = pv.at("seed").get<std::uint64_t>();
    disc.provenance.subset_hash = pv.value("subset_hash", "");
    disc.provenance.labeling_rule = pv.value("labeling_rule", disc.provenance.labeling_rule);
    disc.provenance.images = pv.value("images", std::size_t{0});
  } catch (const json::exception& e) {
    fail(ErrorCode::BadConfig, std::string("discriminators: ") + e.what());
  }
  require(disc.front_center.dim() == disc.back_center.dim() && disc.front_center.dim() > 0, ErrorCode::DimMismatch,
          "discriminator centers must share a nonzero dim");
  require(!(disc.front_center == disc.back_center), ErrorCode::DegenerateClusters, "discriminator centers coincide");
  const auto& p = disc.prototypes;
  require(p.sticker4.label == Semantic::Sticker && p.sticker5.label == Semantic::Sticker &&
              p.light4.label == Semantic::Light && p.light5.label == Semantic::Light,
          ErrorCode::MissingLabeledPrototype, "discriminators need sticker and light prototypes");
  return disc;
}

void save_discriminators(const std::filesystem::path& path, const ViewpointDiscriminators& disc) {
  const std::string text = discriminators_to_json(disc).dump(2) + "\n";
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

ViewpointDiscriminators load_discriminators(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return discriminators_from_json(json::parse(bytes.begin(), bytes.end()));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::BadConfig, path.string() + ": " + e.what());
  }
}

void save_model(const std::filesystem::path& path, const OvgModel& model, int epoch, std::uint64_t seed) {
  nn::Checkpoint ckpt;
  ckpt.config = model.generator_cfg;
  ckpt.params = model.generator;
  ckpt.epoch = epoch;
  ckpt.seed = seed;
  ckpt.extra = {{"kind", "ovg"}, {"embed_source", std::string(embed_source_name(model.embed_source))}};
  nn::save_checkpoint(path, ckpt);
}

OvgModel load_model(const std::filesystem::path& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  require(ckpt.extra.value("kind", "") == "ovg", ErrorCode::BadConfig, path.string() + " is not an OVG checkpoint");
  const auto source = parse_embed_source(ckpt.extra.value("embed_source", ""));
  require(source.has_value(), ErrorCode::BadConfig, "unknown embed source in " + path.string());
  OvgModel model;
  model.embed_source = *source;
  model.generator_cfg = ckpt.config;
  model.generator = ckpt.params;
  return model;
}

}  // namespace vreid::ovg
