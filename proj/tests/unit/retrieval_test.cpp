#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "expect_error.hpp"
#include "fixtures.hpp"
#include "vreid/retrieval.hpp"

using namespace vreid;
using namespace vreid::retrieval;

namespace {

IdentityDescriptor random_descriptor(Rng& rng, std::size_t dim_o, std::size_t dim_d, const std::string& vehicle,
                                     const std::string& image) {
  IdentityDescriptor d;
  d.vehicle_id = vehicle;
  d.image_id = image;
  d.f_front = oracle::random_vector(rng, dim_o);
  d.f_back = oracle::random_vector(rng, dim_o);
  d.f_disc = oracle::random_vector(rng, dim_d);
  return d;
}

TEST(Distance, FrozenValue) {
  IdentityDescriptor q, c;
  q.f_front = FeatureVector{0.0, 0.0};
  c.f_front = FeatureVector{3.0, 4.0};  // 5
  q.f_back = FeatureVector{1.0};
  c.f_back = FeatureVector{-1.0};  // 2
  q.f_disc = FeatureVector{0.0, 0.0, 0.0};
  c.f_disc = FeatureVector{1.0, 2.0, 2.0};  // 3
  // 0.1 * (5 + 2) + 0.65 * 3
  EXPECT_NEAR(pairwise_distance(q, c, DistanceWeights{}), 2.65, 1e-15);
  EXPECT_NEAR(pairwise_distance(q, c, DistanceWeights{0.25, 0.5}), 0.25 * 7 + 1.5, 1e-15);
  EXPECT_VREID_ERROR(pairwise_distance(q, c, DistanceWeights{-0.1, 0.5}), ErrorCode::NegativeWeight);
}

TEST(Distance, MetricPropertiesOnRandomTriples) {
  Rng rng(61);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_descriptor(rng, 4, 3, "a", "1");
    const auto b = random_descriptor(rng, 4, 3, "b", "2");
    const auto c = random_descriptor(rng, 4, 3, "c", "3");
    const DistanceWeights w{rng.uniform(0, 2), rng.uniform(0, 2)};
    const double ab = pairwise_distance(a, b, w), ba = pairwise_distance(b, a, w);
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_GE(ab, 0.0);
    EXPECT_EQ(pairwise_distance(a, a, w), 0.0);
    EXPECT_LE(pairwise_distance(a, c, w), ab + pairwise_distance(b, c, w) + 1e-9);
  }
}

TEST(Distance, MatrixMatchesPairwise) {
  Rng rng(62);
  std::vector<IdentityDescriptor> q, g;
  for (int i = 0; i < 5; ++i) q.push_back(random_descriptor(rng, 3, 2, "v", "q" + std::to_string(i)));
  for (int i = 0; i < 7; ++i) g.push_back(random_descriptor(rng, 3, 2, "v", "g" + std::to_string(i)));
  const DistanceWeights w{0.3, 0.7};
  const auto d = distance_matrix(q, g, w);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) EXPECT_EQ(d(i, j), pairwise_distance(q[i], g[j], w));

  std::vector<FeatureVector> vq, vg;
  for (const auto& x : q) vq.push_back(x.f_disc);
  for (const auto& x : g) vg.push_back(x.f_disc);
  const auto e = distance_matrix(vq, vg);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) EXPECT_NEAR(e(i, j), oracle::euclid(vq[i].data, vg[j].data), 1e-12);
}

TEST(Ranking, FrozenAveragePrecision) {
  // Matches at ranks 1 and 3: (1/1 + 2/3) / 2 = 5/6.
  Eigen::MatrixXd d(1, 4);
  d << 0.1, 0.2, 0.3, 0.4;
  const std::vector<std::string> ql = {"x"}, gl = {"x", "y", "x", "z"};
  const auto set = make_ranking_set(d, ql, gl);
  EXPECT_NEAR(average_precision(set, 0), 5.0 / 6.0, 1e-15);
  const auto curve = cmc(set, 4);
  EXPECT_EQ(curve, (std::vector<double>{1, 1, 1, 1}));
}

TEST(Ranking, TiesKeepGalleryOrder) {
  Eigen::MatrixXd d(1, 4);
  d << 0.5, 0.1, 0.5, 0.1;
  const std::vector<std::string> ql = {"x"}, gl = {"a", "b", "x", "c"};
  const auto set = make_ranking_set(d, ql, gl);
  EXPECT_EQ(ranked_gallery(set, 0), (std::vector<std::size_t>{1, 3, 0, 2}));
  EXPECT_NEAR(average_precision(set, 0), 0.25, 1e-15);
  EXPECT_EQ(cmc(set, 4), (std::vector<double>{0, 0, 0, 1}));
}

// Random instances with ties, exclusions and duplicate labels against the counting oracle.
TEST(Ranking, MatchesBruteForceOracle) {
  Rng rng(63);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t nq = 1 + rng.index(8), ng = 2 + rng.index(30);
    Eigen::MatrixXd d(nq, ng);
    for (Eigen::Index k = 0; k < d.size(); ++k) d.data()[k] = static_cast<double>(rng.index(6));  // many ties
    std::vector<std::string> gl(ng), gi(ng), ql(nq), qi(nq);
    for (std::size_t j = 0; j < ng; ++j) {
      gl[j] = "v" + std::to_string(rng.index(4));
      gi[j] = "g" + std::to_string(j);
    }
    for (std::size_t i = 0; i < nq; ++i) {
      // Each query shares a label with some non-excluded gallery item.
      const std::size_t anchor = rng.index(ng);
      ql[i] = gl[anchor];
      qi[i] = "g" + std::to_string((anchor + 1 + rng.index(ng - 1)) % ng);  // one excluded item
    }
    const auto set = make_ranking_set(d, ql, gl, qi, gi);
    const std::size_t max_rank = ng;
    const auto curve = cmc(set, max_rank);
    double map = 0;
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<double> row(ng);
      std::vector<bool> excluded(ng), relevant(ng);
      for (std::size_t j = 0; j < ng; ++j) {
        row[j] = d(i, j);
        excluded[j] = gi[j] == qi[i];
        relevant[j] = gl[j] == ql[i];
      }
      const double ap = oracle::brute_average_precision(row, excluded, relevant);
      EXPECT_NEAR(average_precision(set, i), ap, 1e-12);
      map += ap;
    }
    EXPECT_NEAR(mean_average_precision(set), map / nq, 1e-12);
    for (std::size_t k = 1; k <= max_rank; ++k) {
      double hits = 0;
      for (std::size_t i = 0; i < nq; ++i) {
        std::vector<double> row(ng);
        std::vector<bool> excluded(ng), relevant(ng);
        for (std::size_t j = 0; j < ng; ++j) {
          row[j] = d(i, j);
          excluded[j] = gi[j] == qi[i];
          relevant[j] = gl[j] == ql[i];
        }
        hits += oracle::brute_hit_at(row, excluded, relevant, k);
      }
      EXPECT_NEAR(curve[k - 1], hits / nq, 1e-12);
    }
  }
}

TEST(Ranking, Errors) {
  Eigen::MatrixXd d(1, 2);
  d << 1, 2;
  const std::vector<std::string> ql = {"x"}, gl = {"a", "b"};
  EXPECT_VREID_ERROR(average_precision(make_ranking_set(d, ql, gl), 0), ErrorCode::QueryWithoutMatch);
  const std::vector<std::string> same = {"x"}, gx = {"x", "x"}, gi = {"x", "x"};
  EXPECT_VREID_ERROR(average_precision(make_ranking_set(d, same, gx, same, gi), 0), ErrorCode::EmptyGallery);
}

TEST(Evaluate, SampledProtocolKeepsOneImagePerVehicle) {
  Rng rng(64);
  std::vector<IdentityDescriptor> all;
  for (int v = 0; v < 5; ++v)
    for (int i = 0; i < 4; ++i)
      all.push_back(random_descriptor(rng, 3, 3, "v" + std::to_string(v), "v" + std::to_string(v) + "_" +
                                                                               std::to_string(i)));
  EvalOptions o;
  o.protocol = Protocol::Sampled;
  o.seed = 3;
  const auto r = evaluate(all, all, o);
  EXPECT_EQ(r.gallery_ids.size(), 5u);
  EXPECT_EQ(r.query_ids.size(), 15u);
  std::set<std::string> vehicles;
  for (const auto& id : r.gallery_ids) vehicles.insert(id.substr(0, 2));
  EXPECT_EQ(vehicles.size(), 5u);
  for (const auto& q : r.query_ids)
    EXPECT_EQ(std::count(r.gallery_ids.begin(), r.gallery_ids.end(), q), 0);
  EXPECT_EQ(r.cmc.size(), 5u);
  const auto again = evaluate(all, all, o);
  EXPECT_EQ(again.gallery_ids, r.gallery_ids);
  EXPECT_EQ(again.mean_ap, r.mean_ap);

  o.protocol = Protocol::Full;
  const auto full = evaluate(all, all, o);
  EXPECT_EQ(full.query_ids.size(), 20u);
  EXPECT_EQ(full.cmc.size(), 20u);
  EXPECT_EQ(parse_protocol(protocol_name(Protocol::Sampled)), Protocol::Sampled);
}

TEST(Evaluate, ReportFiles) {
  oracle::TempDir dir("report");
  Rng rng(65);
  std::vector<IdentityDescriptor> all;
  for (int i = 0; i < 6; ++i)
    all.push_back(random_descriptor(rng, 2, 2, "v" + std::to_string(i % 3), "i" + std::to_string(i)));
  const auto r = evaluate(all, all, EvalOptions{});
  const auto j = report_to_json(r);
  EXPECT_EQ(j["mAP"].get<double>(), r.mean_ap);
  EXPECT_EQ(j["cmc"]["1"].get<double>(), r.cmc[0]);
  EXPECT_EQ(j["config"]["w2"].get<double>(), 0.65);
  EXPECT_EQ(j["per_query"].size(), 6u);
  save_cmc_csv(dir / "cmc.csv", r.cmc);
  std::ifstream in(dir / "cmc.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "rank,value");
  EXPECT_EQ(first.substr(0, 2), "1,");
}

TEST(Descriptor, RealEmbeddingFillsTaggedSlot) {
  auto world = fixture::make_world(fixture::small_config(66), "desc");
  const auto disc = ovg::build_discriminators(world.manifest, world.bank4, world.bank5, 2);
  dra::FusionConfig fc;
  fc.hidden_dims = {16};
  fc.output_dim = 8;
  Pipeline p{dra::make_model(dra::select_region_prototypes(world.bank5), fc, 6, 1),
             ovg::make_generator(24, ovg::GeneratorConfig{{16}, std::nullopt, true, ovg::EmbedSource::GapPool5}, 1),
             disc};
  const auto& m = world.manifest;
  const auto descs = assemble_descriptors(m, p);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& d = descs[i];
    const auto f_o = ovg::embed(m, m.records[i], ovg::EmbedSource::GapPool5);
    const auto f_g = ovg::generate_orthogonal(p.ovg, f_o);
    EXPECT_EQ(d.tag, *m.records[i].gt_viewpoint);
    EXPECT_EQ(d.tag == Viewpoint::Front ? d.f_front : d.f_back, f_o);
    EXPECT_EQ(d.tag == Viewpoint::Front ? d.f_back : d.f_front, f_g);
    EXPECT_EQ(d.f_disc.dim(), 8u);
    EXPECT_EQ(d.image_id, m.records[i].image_id);
  }
  // Manifest-level evaluation equals descriptor-level evaluation.
  const auto a = evaluate(m, m, p, EvalOptions{});
  const auto b = evaluate(descs, descs, EvalOptions{});
  EXPECT_EQ(a.mean_ap, b.mean_ap);
  EXPECT_EQ(a.cmc, b.cmc);
}

}  // namespace
