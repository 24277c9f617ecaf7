// Acceptance suite. Usage: acceptance <path-to-vreid-binary>
// Prints one PASS/FAIL line per criterion and exits nonzero when any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "vreid/clustering.hpp"
#include "vreid/dra.hpp"
#include "vreid/gradcheck.hpp"
#include "vreid/ovg.hpp"
#include "vreid/prototype_bank.hpp"
#include "vreid/retrieval.hpp"
#include "vreid/synthetic.hpp"
#include "vreid/tensor_ops.hpp"

using namespace vreid;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> body;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

// ---- shared corpora

struct Split {
  Manifest train, test;
  synth::GroundTruth gt;
};

Split split_by_vehicle(const Manifest& m, const synth::GroundTruth& gt, std::size_t n_train) {
  std::vector<std::size_t> tr, te;
  std::size_t k = 0;
  for (const auto& [id, idx] : m.by_vehicle()) {
    for (auto i : idx) (k < n_train ? tr : te).push_back(i);
    ++k;
  }
  return {m.subset(tr), m.subset(te), gt};
}

PrototypeBank labeled_bank(const Manifest& m, const synth::GroundTruth& gt, LayerTag layer, std::size_t sample,
                           std::uint64_t seed) {
  const auto fs = build_feature_set(m, layer, sample, seed);
  const auto bank = generate_prototypes(fs, layer, seed + 2);
  // GT signatures only name the clusters; the clusters themselves are unsupervised.
  return label_prototypes(bank, synth::assign_from_ground_truth(bank, gt));
}

struct Trained {
  Split split;
  PrototypeBank bank4, bank5;
  ovg::ViewpointDiscriminators disc;
};

Trained prepare(const fs::path& dir, std::size_t vehicles, std::uint64_t seed, double distractor) {
  synth::SynthConfig cfg;
  cfg.n_vehicles = vehicles;
  cfg.seed = seed;
  cfg.distractor_strength = distractor;
  const auto m = synth::gen_corpus(cfg, dir);
  const auto gt = synth::load_ground_truth(dir / "gt.json");
  Trained t{split_by_vehicle(m, gt, vehicles / 2), {}, {}, {}};
  t.bank4 = labeled_bank(t.split.train, gt, LayerTag::Pool4, 40, 1);
  t.bank5 = labeled_bank(t.split.train, gt, LayerTag::Pool5, 40, 1);
  t.disc = ovg::build_discriminators(t.split.train, t.bank4, t.bank5, 5);
  return t;
}

// ---- 1: probability and indication matrices

// x entries are small integers and alpha = m * 2^e, so alpha * x is exact in
// float storage; the check then isolates the operator from storage rounding.
Outcome probability_suite() {
  Rng rng(101);
  double worst = 0.0;
  std::size_t bad_range = 0, bad_mask = 0;
  const double taus[] = {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99};
  for (int n = 0; n < 10000; ++n) {
    const std::size_t c = 1 + rng.index(64);
    FeatureMaps x(1, 1, c), xs(1, 1, c);
    const double alpha = static_cast<double>(1 + rng.index(4096)) * std::ldexp(1.0, static_cast<int>(rng.index(41)) - 20);
    for (std::size_t k = 0; k < c; ++k) {
      const auto v = static_cast<float>(static_cast<int>(rng.index(2001)) - 1000);
      x.data[k] = v;
      xs.data[k] = static_cast<float>(alpha * v);
    }
    SemanticPrototype d, ds;
    d.vector = oracle::random_vector(rng, c);
    const double beta = std::exp(rng.uniform(-20.0, 20.0));
    ds.vector = d.vector;
    for (auto& v : ds.vector.data) v *= beta;
    const auto p = probability_matrix(x, d);
    const auto ps = probability_matrix(xs, ds);
    const double v = p.data[0];
    if (!(v >= 0.0 && v <= 1.0)) ++bad_range;
    worst = std::max(worst, std::abs(v - ps.data[0]));
    BinaryMask prev;
    for (std::size_t t = 0; t < std::size(taus); ++t) {
      const auto mask = indication_matrix(p, taus[t]);
      if (mask.data[0] > 1) ++bad_mask;
      if (t > 0 && mask.data[0] > prev.data[0]) ++bad_mask;  // must shrink as tau grows
      prev = mask;
    }
  }
  return {bad_range == 0 && bad_mask == 0 && worst <= 1e-9,
          "out_of_range=" + std::to_string(bad_range) + " mask_violations=" + std::to_string(bad_mask) +
              " max_scale_dev=" + sci(worst)};
}

// ---- 2: gradients

Outcome gradient_suite() {
  nn::GradCheckOptions o;
  o.trials = 100;
  o.tolerance = 1e-3;
  const auto results = nn::run_gradient_checks(o);
  bool ok = !results.empty();
  std::string detail;
  for (const auto& r : results) {
    ok = ok && r.passed && r.max_relative_error <= 1e-3;
    detail += r.name + "=" + sci(r.max_relative_error) + "/" + std::to_string(r.trials) + " ";
  }
  return {ok, detail};
}

// ---- 3: clustering

std::vector<std::size_t> planted_truth(const Manifest& m, LayerTag layer) {
  std::vector<std::size_t> truth;
  const Semantic order[] = {Semantic::Sticker, Semantic::Light, Semantic::Grille, Semantic::Seat};
  for (const auto& r : m.records) {
    const auto maps = m.load_layer(r, layer);
    std::vector<std::size_t> cell(maps.positions(), static_cast<std::size_t>(Semantic::Background));
    for (auto s : order) {
      const auto mask = synth::planted_mask(*r.gt_viewpoint, s, maps.height, maps.width);
      for (std::size_t p = 0; p < cell.size(); ++p)
        if (mask.data[p] && cell[p] == static_cast<std::size_t>(Semantic::Background))
          cell[p] = static_cast<std::size_t>(s);
    }
    truth.insert(truth.end(), cell.begin(), cell.end());
  }
  return truth;
}

Outcome clustering_suite(const fs::path& dir) {
  Rng rng(303);
  int missed = 0;
  const int instances = 1000;
  for (int n = 0; n < instances; ++n) {
    std::vector<std::vector<double>> pts(6, std::vector<double>(2));
    std::vector<FeatureVector> fv;
    for (auto& p : pts) {
      for (auto& v : p) v = rng.uniform(-1.0, 1.0);
      fv.emplace_back(p);
    }
    const double best = oracle::best_two_partition_inertia(pts);
    if (kmeans(fv, 2, static_cast<std::uint64_t>(n)).inertia > best + 1e-9) ++missed;
  }

  std::vector<FeatureVector> blobs;
  std::vector<std::size_t> blob_truth;
  for (std::size_t b = 0; b < 5; ++b)
    for (int i = 0; i < 40; ++i) {
      FeatureVector p(3);
      for (std::size_t k = 0; k < 3; ++k) p[k] = (k == b % 3 ? 10.0 * (1.0 + b / 3) : 0.0) + 0.3 * rng.normal();
      blobs.push_back(p);
      blob_truth.push_back(b);
    }
  const auto sr = spectral_cluster(blobs, 5, 7);
  const double blob_purity = cluster_purity(sr.clusters.labels, blob_truth);

  synth::SynthConfig cfg;
  cfg.seed = 7;
  const auto m = synth::gen_corpus(cfg, dir);
  double proto_purity = 1.0;
  std::string per_layer;
  for (LayerTag layer : {LayerTag::Pool4, LayerTag::Pool5}) {
    const auto features = build_feature_set(m, layer, m.records.size(), 1);
    const auto res = spectral_cluster(features, 5, 3);
    const double pur = cluster_purity(res.clusters.labels, planted_truth(m, layer));
    proto_purity = std::min(proto_purity, pur);
    per_layer += std::string(layer_name(layer)) + "=" + fmt(pur) + " ";
  }
  return {missed == 0 && blob_purity == 1.0 && proto_purity >= 0.95,
          "kmeans_missed=" + std::to_string(missed) + "/" + std::to_string(instances) +
              " blob_purity=" + fmt(blob_purity) + " prototype_purity " + per_layer};
}

// ---- 4: viewpoint

Outcome viewpoint_suite(const fs::path& dir) {
  const auto t = prepare(dir, 20, 7, 0.0);
  const double acc = synth::score_viewpoint(t.disc, t.split.test);
  return {acc >= 0.95, "test_accuracy=" + fmt(acc) + " test_images=" + std::to_string(t.split.test.records.size())};
}

// ---- 5: ranking metrics

Outcome ranking_suite() {
  Rng rng(505);
  int mismatches = 0;
  for (int n = 0; n < 30; ++n) {
    const std::size_t total = 4 + rng.index(47);  // at most 50 images
    const std::size_t nq = 1 + rng.index(total / 2), ng = total - nq;
    retrieval::RankingSet set;
    set.distances.resize(static_cast<Eigen::Index>(nq), static_cast<Eigen::Index>(ng));
    // Every identity appears in the gallery, so each query has a match.
    const std::size_t ids = 1 + rng.index(std::min<std::size_t>(5, ng));
    for (std::size_t i = 0; i < nq; ++i) set.query_labels.push_back(std::to_string(rng.index(ids)));
    for (std::size_t j = 0; j < ng; ++j) set.gallery_labels.push_back(std::to_string(j < ids ? j : rng.index(ids)));
    set.excluded.resize(nq);
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t j = 0; j < ng; ++j) {
        // coarse values force ties
        set.distances(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            static_cast<double>(rng.index(8)) * 0.25;
        const bool keeps_match = set.gallery_labels[j] == set.query_labels[i] && j < ids;
        if (!keeps_match && rng.uniform() < 0.1) set.excluded[i].push_back(j);
      }
    }
    const std::size_t max_rank = ng;
    const auto curve = retrieval::cmc(set, max_rank);
    const auto aps = retrieval::average_precisions(set);
    std::vector<std::size_t> hits(max_rank, 0);
    std::vector<double> want_ap;
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<double> dist(ng);
      std::vector<bool> excl(ng, false), rel(ng);
      for (std::size_t j = 0; j < ng; ++j) {
        dist[j] = set.distances(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        rel[j] = set.gallery_labels[j] == set.query_labels[i];
      }
      for (auto j : set.excluded[i]) excl[j] = true;
      want_ap.push_back(oracle::brute_average_precision(dist, excl, rel));
      for (std::size_t k = 1; k <= max_rank; ++k) hits[k - 1] += oracle::brute_hit_at(dist, excl, rel, k);
    }
    if (aps != want_ap) ++mismatches;
    for (std::size_t k = 0; k < max_rank; ++k)
      if (curve[k] != static_cast<double>(hits[k]) / static_cast<double>(nq)) {
        ++mismatches;
        break;
      }
    double sum = 0.0;
    for (double a : want_ap) sum += a;
    if (retrieval::mean_average_precision(set) != sum / static_cast<double>(nq)) ++mismatches;
  }
  return {mismatches == 0, "instances=30 mismatches=" + std::to_string(mismatches)};
}

// ---- 6 / 7: retrieval direction

std::vector<std::string> labels_of(const std::vector<retrieval::IdentityDescriptor>& v) {
  std::vector<std::string> out;
  for (const auto& d : v) out.push_back(d.vehicle_id);
  return out;
}

Outcome orthogonal_view_suite(const fs::path& dir) {
  const auto t = prepare(dir, 100, 11, 0.0);
  ovg::GeneratorTrainConfig gc;
  gc.generator.hidden_dims = {256, 256, 256};
  gc.batch = 16;
  gc.epochs = 50;
  gc.seed = 3;
  const auto gen = ovg::train_generator(t.split.train, t.disc, gc);
  // w2 = 0 below, so an untrained fusion net leaves the distance untouched.
  dra::FusionConfig fc;
  fc.hidden_dims = {16};
  fc.output_dim = 8;
  const retrieval::Pipeline pl{dra::make_model(dra::select_region_prototypes(t.bank5), fc, 2, 1), gen.model, t.disc};
  const auto desc = retrieval::assemble_descriptors(t.split.test, pl);
  std::vector<retrieval::IdentityDescriptor> queries, gallery;
  for (std::size_t i = 0; i < desc.size(); ++i)
    (*t.split.test.records[i].gt_viewpoint == Viewpoint::Front ? queries : gallery).push_back(desc[i]);

  std::vector<FeatureVector> q_real, g_real;
  for (const auto& d : queries) q_real.push_back(d.tag == Viewpoint::Front ? d.f_front : d.f_back);
  for (const auto& d : gallery) g_real.push_back(d.tag == Viewpoint::Front ? d.f_front : d.f_back);
  const auto base_set =
      retrieval::make_ranking_set(retrieval::distance_matrix(q_real, g_real), labels_of(queries), labels_of(gallery));
  const double base = retrieval::mean_average_precision(base_set);
  retrieval::EvalOptions o;
  o.weights = {0.1, 0.0};
  const double full = retrieval::evaluate(queries, gallery, o).mean_ap;
  return {full - base >= 0.10, "f_o_only_mAP=" + fmt(base) + " combined_mAP=" + fmt(full) +
                                   " gain=" + fmt(full - base) + " queries=" + std::to_string(queries.size()) +
                                   " gallery=" + std::to_string(gallery.size())};
}

Outcome discriminative_region_suite(const fs::path& dir) {
  const auto t = prepare(dir, 100, 11, 0.5);
  dra::TrainConfig dc;
  dc.fusion.hidden_dims = {256, 256, 256};
  dc.fusion.output_dim = 64;
  dc.epochs = 45;
  dc.batch = 16;
  dc.seed = 4;
  const auto protos = dra::select_region_prototypes(t.bank5);

  // Baseline: the same network and losses fed the whole-image average in
  // every region slot, i.e. a global feature trained for re-identification.
  auto global_input = [](const FeatureMaps& maps) {
    const auto g = global_average_pool(maps);
    const FeatureVector parts[] = {g, g, g};
    return concat(parts);
  };
  std::vector<FeatureVector> g_train, r_train;
  std::vector<std::string> train_ids;
  for (const auto& r : t.split.train.records) {
    const auto maps = t.split.train.load_layer(r, LayerTag::Pool5);
    g_train.push_back(global_input(maps));
    r_train.push_back(dra::extract_discriminative(maps, protos).pre_fusion);
    train_ids.push_back(r.vehicle_id);
  }
  const auto region_model = dra::train_fusion(r_train, train_ids, protos, dc).model;
  const auto global_model = dra::train_fusion(g_train, train_ids, protos, dc).model;

  std::vector<FeatureVector> gap, glob, fd;
  std::vector<std::string> ids, labels;
  for (const auto& r : t.split.test.records) {
    const auto maps = t.split.test.load_layer(r, LayerTag::Pool5);
    gap.push_back(global_average_pool(maps));
    glob.push_back(dra::fuse(global_model, global_input(maps)));
    fd.push_back(dra::describe(region_model, maps));
    ids.push_back(r.image_id);
    labels.push_back(r.vehicle_id);
  }
  auto map_of = [&](const std::vector<FeatureVector>& f) {
    return retrieval::mean_average_precision(
        retrieval::make_ranking_set(retrieval::distance_matrix(f, f), labels, labels, ids, ids));
  };
  const double m_gap = map_of(gap), m_glob = map_of(glob), m_fd = map_of(fd);
  return {m_fd > m_glob && m_fd > m_gap, "gap_mAP=" + fmt(m_gap) + " global_trained_mAP=" + fmt(m_glob) +
                                             " f_d_mAP=" + fmt(m_fd)};
}

// ---- 8: combined distance

Outcome distance_suite() {
  Rng rng(808);
  auto random_desc = [&](std::size_t i) {
    retrieval::IdentityDescriptor d;
    d.image_id = "i" + std::to_string(i);
    d.vehicle_id = "v" + std::to_string(i % 7);
    d.f_front = oracle::random_vector(rng, 8);
    d.f_back = oracle::random_vector(rng, 8);
    d.f_disc = oracle::random_vector(rng, 5);
    return d;
  };
  std::size_t violations = 0;
  for (int n = 0; n < 1000; ++n) {
    const retrieval::DistanceWeights w{rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)};
    const auto a = random_desc(0), b = random_desc(1), c = random_desc(2);
    const double ab = retrieval::pairwise_distance(a, b, w), ba = retrieval::pairwise_distance(b, a, w);
    const double bc = retrieval::pairwise_distance(b, c, w), ac = retrieval::pairwise_distance(a, c, w);
    if (std::abs(ab - ba) > 1e-9) ++violations;
    if (ab < 0 || bc < 0 || ac < 0) ++violations;
    if (ac > ab + bc + 1e-9) ++violations;
    if (retrieval::pairwise_distance(a, a, w) != 0.0) ++violations;
  }
  std::size_t reorders = 0;
  for (int n = 0; n < 50; ++n) {
    std::vector<retrieval::IdentityDescriptor> q, g;
    for (std::size_t i = 0; i < 5; ++i) q.push_back(random_desc(i));
    for (std::size_t i = 0; i < 30; ++i) g.push_back(random_desc(i));
    const retrieval::DistanceWeights w{rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0)};
    const double s = std::exp(rng.uniform(-5.0, 5.0));
    const retrieval::DistanceWeights ws{w.w1 * s, w.w2 * s};
    retrieval::RankingSet a, b;
    a.distances = retrieval::distance_matrix(q, g, w);
    b.distances = retrieval::distance_matrix(q, g, ws);
    for (auto* set : {&a, &b}) {
      set->query_labels = labels_of(q);
      set->gallery_labels = labels_of(g);
      set->excluded.resize(q.size());
    }
    for (std::size_t i = 0; i < q.size(); ++i)
      if (retrieval::ranked_gallery(a, i) != retrieval::ranked_gallery(b, i)) ++reorders;
  }
  return {violations == 0 && reorders == 0,
          "metric_violations=" + std::to_string(violations) + " ranking_changes=" + std::to_string(reorders)};
}

// ---- 9: CLI determinism

Outcome determinism_suite(const std::string& vreid, const fs::path& dir) {
  struct Stage {
    std::string out;
    std::string args;
  };
  const std::string d = dir.string();
  const std::string manifest = d + "/corpus/manifest.jsonl";
  const std::string p = d + "/protos", disc = d + "/vp/discriminators.json";
  const std::vector<Stage> stages = {
      {"corpus", "gen-synthetic --seed 7 --out " + d + "/corpus"},
      {"protos", "gen-prototypes --manifest " + manifest + " --layer pool4 --seed 1 --out " + p},
      {"protos", "gen-prototypes --manifest " + manifest + " --layer pool5 --seed 1 --out " + p},
      {"protos", "label-protos --bank " + p + "/bank_pool4.json --auto-from-gt " + d + "/corpus/gt.json --out " + p},
      {"protos", "label-protos --bank " + p + "/bank_pool5.json --auto-from-gt " + d + "/corpus/gt.json --out " + p},
      {"loc", "localize --manifest " + manifest + " --bank " + p + "/labeled_pool5.json --semantic light --out-dir " +
                  d + "/loc"},
      {"vp", "build-viewpoint --manifest " + manifest + " --bank4 " + p + "/labeled_pool4.json --bank5 " + p +
                 "/labeled_pool5.json --out " + d + "/vp"},
      {"vp", "classify-viewpoint --manifest " + manifest + " --disc " + disc + " --out " + d + "/vp"},
      {"dra", "train-fusion --manifest " + manifest + " --bank " + p +
                  "/labeled_pool5.json --hidden 64 --output-dim 32 --epochs 5 --batch 16 --seed 4 --out " + d +
                  "/dra"},
      {"ovg", "train-generator --manifest " + manifest + " --disc " + disc +
                  " --hidden 64 --epochs 5 --batch 16 --seed 3 --out " + d + "/ovg"},
      {"eval", "evaluate --query " + manifest + " --gallery " + manifest + " --models " + d + "/dra/dra.ckpt " + d +
                   "/ovg/ovg.ckpt " + disc + " --dump-distances --out " + d + "/eval"},
      {"gc", "grad-check --trials 10 --out " + d + "/gc"},
  };
  std::size_t differing = 0, failed = 0;
  std::string first_bad;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const fs::path out = dir / st.out;
    const std::string cmd = "\"" + vreid + "\" " + st.args + " --log-level off";
    // A stage may add files to a directory shared with an earlier stage, so
    // hash the whole directory before and after the rerun.
    const fs::path keep = dir / (st.out + ".before");
    fs::remove_all(keep);
    if (fs::exists(out)) fs::copy(out, keep, fs::copy_options::recursive);
    if (std::system(cmd.c_str()) != 0) {
      ++failed;
      if (first_bad.empty()) first_bad = st.args.substr(0, st.args.find(' '));
      continue;
    }
    const auto first = oracle::tree_hash(out);
    fs::rename(out, dir / (st.out + ".first"));
    if (fs::exists(keep)) fs::rename(keep, out);
    const int rc = std::system(cmd.c_str());
    const auto second = oracle::tree_hash(out);
    fs::remove_all(dir / (st.out + ".first"));
    if (rc != 0 || first != second) {
      ++differing;
      if (first_bad.empty()) first_bad = st.args.substr(0, st.args.find(' '));
    }
  }
  return {differing == 0 && failed == 0, "stages=" + std::to_string(stages.size()) + " failed=" +
                                             std::to_string(failed) + " nondeterministic=" + std::to_string(differing) +
                                             (first_bad.empty() ? "" : " first_bad=" + first_bad)};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <vreid-binary>\n";
    return 2;
  }
  const std::string vreid = fs::absolute(argv[1]).string();
  oracle::TempDir work("acceptance");

  const std::vector<Criterion> criteria = {
      {1, "probability and indication matrices", 5, probability_suite},
      {2, "analytic gradients", 60, gradient_suite},
      {3, "clustering", 60, [&] { return clustering_suite(work / "c3"); }},
      {4, "viewpoint discrimination", 120, [&] { return viewpoint_suite(work / "c4"); }},
      {5, "CMC and mAP", 30, ranking_suite},
      {6, "orthogonal view generation helps cross-view retrieval", 300,
       [&] { return orthogonal_view_suite(work / "c6"); }},
      {7, "discriminative regions beat the global feature", 300,
       [&] { return discriminative_region_suite(work / "c7"); }},
      {8, "combined distance", 5, distance_suite},
      {9, "CLI determinism", 300, [&] { return determinism_suite(vreid, work / "c9"); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.body();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = out.ok && in_time;
    if (!pass) ++failures;
    std::printf("%s [%d] %s: %s (%.2fs of %.0fs%s)\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                out.detail.c_str(), secs, c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
