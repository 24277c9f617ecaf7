#include <cmath>

#include <gtest/gtest.h>

#include "expect_error.hpp"
#include "oracles.hpp"
#include "vreid/synthetic.hpp"
#include "vreid/tensor_ops.hpp"

using namespace vreid;
using namespace vreid::synth;

namespace {

SynthConfig small_config(std::uint64_t seed = 5) {
  SynthConfig cfg;
  cfg.n_vehicles = 4;
  cfg.images_per_vehicle = 4;
  cfg.c4 = 24;
  cfg.c5 = 24;
  cfg.identity_dim = 6;
  cfg.seed = seed;
  return cfg;
}

TEST(Synth, ConfigValidation) {
  EXPECT_NO_THROW(validate(SynthConfig{}));
  auto cfg = small_config();
  cfg.front_fraction = 1.0;
  EXPECT_VREID_ERROR(validate(cfg), ErrorCode::BadConfig);
  cfg = small_config();
  cfg.c5 = 5 + cfg.identity_dim - 1;
  EXPECT_VREID_ERROR(validate(cfg), ErrorCode::BadConfig);
  cfg = small_config();
  cfg.h4 = 5;
  EXPECT_VREID_ERROR(validate(cfg), ErrorCode::BadConfig);
  cfg = small_config();
  cfg.noise_sigma = -1;
  EXPECT_VREID_ERROR(validate(cfg), ErrorCode::BadConfig);

  const auto j = config_to_json(small_config(9));
  const auto back = config_from_json(j);
  EXPECT_EQ(config_to_json(back), j);
}

TEST(Synth, PlantedMasksPartitionTheGrid) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{7, 7}, {14, 14}, {9, 12}}) {
    for (auto view : {Viewpoint::Front, Viewpoint::Back}) {
      std::vector<int> cover(h * w, 0);
      for (auto s : kNamedSemantics) {
        const auto m = planted_mask(view, s, h, w);
        for (std::size_t k = 0; k < m.data.size(); ++k) cover[k] += m.data[k];
      }
      for (int c : cover) EXPECT_EQ(c, 1);
    }
    EXPECT_TRUE(planted_mask(Viewpoint::Back, Semantic::Sticker, h, w).empty_support());
    EXPECT_TRUE(planted_mask(Viewpoint::Back, Semantic::Grille, h, w).empty_support());
    EXPECT_TRUE(planted_mask(Viewpoint::Front, Semantic::Seat, h, w).empty_support());
    EXPECT_FALSE(planted_mask(Viewpoint::Back, Semantic::Light, h, w).empty_support());
  }
  // On the reference grid the sticker is the 2x2 top-left block.
  const auto sticker = planted_mask(Viewpoint::Front, Semantic::Sticker, 7, 7);
  EXPECT_EQ(sticker.popcount(), 4u);
  EXPECT_EQ(sticker(1, 1), 1);
  EXPECT_VREID_ERROR(planted_mask(Viewpoint::Front, Semantic::Sticker, 3, 3), ErrorCode::RegionOverflow);
}

TEST(Synth, SignaturesAreNearlyOrthogonalAndUnit) {
  const auto gt = make_ground_truth(SynthConfig{});
  for (const auto& [layer, sigs] : gt.signatures) {
    ASSERT_EQ(sigs.size(), 5u);
    for (const auto& [a, va] : sigs) {
      EXPECT_NEAR(l2_norm(va.view()), 1.0, 1e-9);
      for (const auto& [b, vb] : sigs)
        if (a != b) {
          EXPECT_LE(std::abs(cosine_similarity(va.view(), vb.view())), 0.3);
        }
    }
  }
  // The back-view identity map is well conditioned.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gt.identity_map);
  const auto s = svd.singularValues();
  EXPECT_LE(s(0) / s(s.size() - 1), 3.0 + 1e-9);
}

TEST(Synth, ViewpointsBalancedPerVehicle) {
  const SynthConfig cfg;
  for (std::size_t v = 0; v < cfg.n_vehicles; ++v) {
    std::size_t fronts = 0;
    for (std::size_t i = 0; i < cfg.images_per_vehicle; ++i)
      fronts += planted_viewpoint(cfg, v, i) == Viewpoint::Front;
    EXPECT_EQ(fronts, cfg.images_per_vehicle / 2);
  }
}

TEST(Synth, RenderedRegionsCarryTheirSignature) {
  const auto cfg = small_config();
  const auto gt = make_ground_truth(cfg);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto view = planted_viewpoint(cfg, 1, i);
    const auto [m4, m5] = render_image(cfg, 1, i);
    EXPECT_EQ(m5.height, cfg.h5);
    EXPECT_EQ(m4.channels, cfg.c4);
    for (auto s : kNamedSemantics) {
      const auto mask = planted_mask(view, s, cfg.h5, cfg.w5);
      if (mask.empty_support()) continue;
      const auto mean = masked_gap(m5, mask);
      EXPECT_GT(cosine_similarity(mean.view(), gt.signatures.at(LayerTag::Pool5).at(s).view()), 0.7)
          << semantic_name(s);
    }
  }
}

TEST(Synth, CorpusIsDeterministicAndComplete) {
  oracle::TempDir a("synth_a"), b("synth_b"), c("synth_c");
  const auto cfg = small_config();
  const auto m = gen_corpus(cfg, a.path());
  gen_corpus(cfg, b.path());
  EXPECT_EQ(oracle::tree_hash(a.path()), oracle::tree_hash(b.path()));
  gen_corpus(small_config(6), c.path());
  EXPECT_NE(oracle::tree_hash(a.path()), oracle::tree_hash(c.path()));

  ASSERT_EQ(m.records.size(), 16u);
  EXPECT_EQ(m.split, Split::Train);
  const auto& r = m.records[5];
  EXPECT_EQ(r.image_id, image_id(1, 1));
  EXPECT_EQ(r.vehicle_id, vehicle_id(1));
  EXPECT_TRUE(r.has_layer(LayerTag::Pool4));
  EXPECT_TRUE(r.has_layer(LayerTag::Pool5));
  ASSERT_TRUE(r.gt_viewpoint.has_value());
  EXPECT_EQ(*r.gt_viewpoint, planted_viewpoint(cfg, 1, 1));
  const auto mask = m.load_gt_mask(r, "pool5/light");
  EXPECT_EQ(mask, planted_mask(*r.gt_viewpoint, Semantic::Light, cfg.h5, cfg.w5));
  const auto maps = m.load_layer(r, LayerTag::Pool5);
  EXPECT_EQ(maps.data, render_image(cfg, 1, 1).second.data);

  const auto gt = load_ground_truth(a / "gt.json");
  EXPECT_EQ(gt.viewpoints.size(), 16u);
  EXPECT_TRUE(gt.identity_map.isApprox(make_ground_truth(cfg).identity_map, 1e-15));
  EXPECT_VREID_ERROR(load_ground_truth(a / "nope.json"), ErrorCode::MissingGroundTruth);
}

TEST(Synth, GroundTruthPrototypesLocalizePerfectly) {
  oracle::TempDir dir("synth_loc");
  const auto cfg = small_config();
  const auto m = gen_corpus(cfg, dir.path());
  const auto gt = load_ground_truth(dir / "gt.json");
  const auto set = build_feature_set(m, LayerTag::Pool5, 8, 1);
  const auto bank = generate_prototypes(set, LayerTag::Pool5, 2);
  const auto labeled = label_prototypes(bank, assign_from_ground_truth(bank, gt));
  for (const auto& [sem, iou] : score_localization(labeled, m)) EXPECT_GT(iou, 0.95) << semantic_name(sem);
}

TEST(Synth, ViewpointScoringNeedsGroundTruth) {
  Manifest m;
  ImageRecord r;
  r.image_id = "x";
  r.vehicle_id = "y";
  m.records.push_back(r);
  ovg::ViewpointDiscriminators disc;
  EXPECT_VREID_ERROR(score_viewpoint(disc, m), ErrorCode::MissingGroundTruth);
}

}  // namespace
