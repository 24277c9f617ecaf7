#include "vreid/dra.hpp"

#include <algorithm>
#include <map>

#include "vreid/error.hpp"
#include "vreid/rng.hpp"
#include "vreid/tensor_ops.hpp"
#include "vreid/util.hpp"

namespace vreid::dra {

RegionPrototypes select_region_prototypes(const PrototypeBank& bank5) {
  require(bank5.layer == LayerTag::Pool5, ErrorCode::LayerMismatch, "discriminative regions use the pool5 bank");
  RegionPrototypes out;
  for (std::size_t r = 0; r < kRegions.size(); ++r) {
    const auto* p = bank5.find(kRegions[r]);
    require(p != nullptr, ErrorCode::MissingPrototype,
            "pool5 bank has no " + std::string(semantic_name(kRegions[r])) + " prototype");
    out[r] = *p;
  }
  return out;
}

namespace {

void check_prototypes(const RegionPrototypes& prototypes) {
  for (std::size_t r = 0; r < kRegions.size(); ++r) {
    require(prototypes[r].label == kRegions[r], ErrorCode::MissingPrototype,
            "region " + std::to_string(r) + " prototype must be " + std::string(semantic_name(kRegions[r])));
  }
}

}  // namespace

DiscriminativeFeature extract_discriminative(const FeatureMaps& maps5, const RegionPrototypes& prototypes) {
  check_prototypes(prototypes);
  require(maps5.layer == LayerTag::Pool5, ErrorCode::LayerMismatch, "discriminative features come from pool5");
  DiscriminativeFeature out;
  std::vector<FeatureVector> blocks;
  for (std::size_t r = 0; r < kRegions.size(); ++r) {
    const BinaryMask mask = locate(maps5, prototypes[r]);
    if (mask.empty_support()) {
      out.absent[r] = true;
      blocks.emplace_back(maps5.channels);
    } else {
      blocks.push_back(masked_gap(maps5, mask));
    }
  }
  out.pre_fusion = concat(blocks);
  return out;
}

nn::MlpConfig fusion_mlp_config(std::size_t channels, const FusionConfig& cfg) {
  nn::MlpConfig m;
  m.layer_dims.push_back(3 * channels);
  m.layer_dims.insert(m.layer_dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  m.layer_dims.push_back(cfg.output_dim);
  m.hidden_normalization = cfg.hidden_normalization;
  nn::validate(m);
  return m;
}

DraModel make_model(const RegionPrototypes& prototypes, const FusionConfig& cfg, std::size_t num_classes,
                    std::uint64_t seed) {
  check_prototypes(prototypes);
  DraModel model;
  model.prototypes = prototypes;
  model.fusion_cfg = fusion_mlp_config(prototypes[0].vector.dim(), cfg);
  model.fusion = nn::init_mlp(model.fusion_cfg, Rng::derive(seed, 1));
  if (num_classes > 0) {
    model.head_cfg = {{cfg.output_dim, num_classes}, false};
    model.head = nn::init_mlp(model.head_cfg, Rng::derive(seed, 2));
  }
  return model;
}

FeatureVector fuse(const DraModel& model, const FeatureVector& pre_fusion) {
  return nn::forward(model.fusion, model.fusion_cfg, pre_fusion);
}

FeatureVector describe(const DraModel& model, const FeatureMaps& maps5, std::array<bool, 3>* absent) {
  const auto d = extract_discriminative(maps5, model.prototypes);
  if (absent) *absent = d.absent;
  return fuse(model, d.pre_fusion);
}

TrainResult train_fusion(std::span<const FeatureVector> pre_fusion, std::span<const std::string> vehicle_ids,
                         const RegionPrototypes& prototypes, const TrainConfig& cfg) {
  require(pre_fusion.size() == vehicle_ids.size(), ErrorCode::DimMismatch, "one vehicle id per feature");
  require(cfg.images_per_id >= 2, ErrorCode::BadConfig, "batch-hard mining needs >= 2 images per identity");
  require(cfg.epochs >= 0, ErrorCode::BadConfig, "epochs must be >= 0");
  nn::validate(cfg.weights);

  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < vehicle_ids.size(); ++i) groups[vehicle_ids[i]].push_back(i);
  std::map<std::string, std::size_t> class_of;
  std::vector<std::string> eligible;
  for (const auto& [id, members] : groups) {
    class_of.emplace(id, class_of.size());
    if (members.size() >= 2) eligible.push_back(id);
  }
  require(eligible.size() >= 2, ErrorCode::DegenerateDataset,
          "need at least two vehicle ids with two or more images, have " + std::to_string(eligible.size()));

  TrainResult result;
  result.model = make_model(prototypes, cfg.fusion, class_of.size(), cfg.seed);
  auto& model = result.model;
  nn::AdamState fusion_opt = nn::make_adam(model.fusion, cfg.adam);
  nn::AdamState head_opt = nn::make_adam(model.head, cfg.adam);
  Rng rng(Rng::derive(cfg.seed, 3));
  const std::size_t ids_per_batch = std::max<std::size_t>(2, cfg.batch / cfg.images_per_id);
  const auto& w = cfg.weights;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    fusion_opt.epoch = head_opt.epoch = epoch;
    std::vector<std::string> ids = eligible;
    rng.shuffle(ids);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < ids.size(); start += ids_per_batch) {
      const std::size_t end = std::min(ids.size(), start + ids_per_batch);
      std::vector<std::size_t> rows;
      std::vector<std::size_t> labels;
      for (std::size_t b = start; b < end; ++b) {
        std::vector<std::size_t> members = groups.at(ids[b]);
        if (members.size() >= cfg.images_per_id) {
          for (std::size_t i = 0; i < cfg.images_per_id; ++i)
            std::swap(members[i], members[i + rng.index(members.size() - i)]);
          members.resize(cfg.images_per_id);
        } else {
          while (members.size() < cfg.images_per_id) members.push_back(members[rng.index(members.size())]);
        }
        for (auto m : members) {
          rows.push_back(m);
          labels.push_back(class_of.at(ids[b]));
        }
      }
      std::vector<FeatureVector> batch_rows;
      for (auto r : rows) batch_rows.push_back(pre_fusion[r]);
      const nn::Matrix x = nn::to_batch(batch_rows);
      const auto n = static_cast<double>(rows.size());

      nn::ForwardCache fusion_cache, head_cache;
      const nn::Matrix features = nn::forward_train(model.fusion, model.fusion_cfg, x, fusion_cache);
      const nn::Matrix logits = nn::forward_train(model.head, model.head_cfg, features, head_cache);

      nn::Matrix d_logits(logits.rows(), logits.cols());
      double ce = 0.0;
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const auto lg = nn::cross_entropy_loss(nn::row_vector(logits, i), labels[static_cast<std::size_t>(i)]);
        ce += lg.loss;
        for (Eigen::Index k = 0; k < logits.cols(); ++k)
          d_logits(i, k) = w.alpha1 * lg.grad[static_cast<std::size_t>(k)] / n;
      }
      ce /= n;

      nn::MlpGrads head_grads = nn::backward(model.head, model.head_cfg, head_cache, d_logits);
      nn::Matrix d_features = head_grads.input;

      const auto triplets = nn::batch_hard_triplets(features, labels);
      double tri = 0.0;
      if (!triplets.empty()) {
        const double scale = w.alpha2 / static_cast<double>(triplets.size());
        for (const auto& t : triplets) {
          const auto tl = nn::triplet_loss(nn::row_vector(features, static_cast<Eigen::Index>(t.anchor)),
                                           nn::row_vector(features, static_cast<Eigen::Index>(t.positive)),
                                           nn::row_vector(features, static_cast<Eigen::Index>(t.negative)),
                                           w.triplet_margin);
          tri += tl.loss;
          if (!tl.active) continue;
          for (Eigen::Index k = 0; k < features.cols(); ++k) {
            const auto kk = static_cast<std::size_t>(k);
            d_features(static_cast<Eigen::Index>(t.anchor), k) += scale * tl.grad_anchor[kk];
            d_features(static_cast<Eigen::Index>(t.positive), k) += scale * tl.grad_positive[kk];
            d_features(static_cast<Eigen::Index>(t.negative), k) += scale * tl.grad_negative[kk];
          }
        }
        tri /= static_cast<double>(triplets.size());
      }

      nn::MlpGrads fusion_grads = nn::backward(model.fusion, model.fusion_cfg, fusion_cache, d_features);
      nn::adam_step(model.head, head_grads, head_opt);
      nn::adam_step(model.fusion, fusion_grads, fusion_opt);

      epoch_loss += w.alpha1 * ce + w.alpha2 * tri;
      ++batches;
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(batches));
  }
  return result;
}

TrainResult train_fusion(const Manifest& manifest, const PrototypeBank& bank5, const TrainConfig& cfg) {
  const RegionPrototypes prototypes = select_region_prototypes(bank5);
  std::vector<FeatureVector> features(manifest.records.size());
  parallel_for(manifest.records.size(), [&](std::size_t i) {
    features[i] =
        extract_discriminative(manifest.load_layer(manifest.records[i], LayerTag::Pool5), prototypes).pre_fusion;
  });
  std::vector<std::string> ids;
  for (const auto& r : manifest.records) ids.push_back(r.vehicle_id);
  return train_fusion(features, ids, prototypes, cfg);
}

void save_model(const std::filesystem::path& path, const DraModel& model, int epoch, std::uint64_t seed) {
  nn::Checkpoint ckpt;
  ckpt.config = model.fusion_cfg;
  ckpt.params = model.fusion;
  ckpt.epoch = epoch;
  ckpt.seed = seed;
  nlohmann::json protos = nlohmann::json::array();
  for (const auto& p : model.prototypes) protos.push_back(prototype_to_json(p));
  ckpt.extra = {{"kind", "dra"}, {"prototypes", protos}};
  nn::save_checkpoint(path, ckpt);
}

DraModel load_model(const std::filesystem::path& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  require(ckpt.extra.value("kind", "") == "dra", ErrorCode::BadConfig, path.string() + " is not a DRA checkpoint");
  DraModel model;
  model.fusion_cfg = ckpt.config;
  model.fusion = ckpt.params;
  const auto& protos = ckpt.extra.at("prototypes");
  require(protos.size() == 3, ErrorCode::MissingPrototype, "DRA checkpoint needs three region prototypes");
  for (std::size_t r = 0; r < 3; ++r) model.prototypes[r] = prototype_from_json(protos[r]);
  check_prototypes(model.prototypes);
  require(model.fusion_cfg.input_dim() == 3 * model.prototypes[0].vector.dim(), ErrorCode::DimMismatch,
          "fusion input does not match prototype dims");
  return model;
}

}  // namespace vreid::dra
