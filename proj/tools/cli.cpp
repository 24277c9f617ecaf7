#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "vreid/dra.hpp"
#include "vreid/error.hpp"
#include "vreid/fmap_io.hpp"
#include "vreid/gradcheck.hpp"
#include "vreid/manifest.hpp"
#include "vreid/ovg.hpp"
#include "vreid/pgm.hpp"
#include "vreid/prototype_bank.hpp"
#include "vreid/retrieval.hpp"
#include "vreid/rng.hpp"
#include "vreid/synthetic.hpp"
#include "vreid/util.hpp"

namespace vreid::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string log_level = "info";
  unsigned threads = 0;
};

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Every run leaves <out>/<command>.config.json behind. No timestamps, so
// identical flags give identical bytes.
void echo_config(const Globals& g, const std::string& command, json flags) {
  json j = {{"command", command},
            {"seed", g.seed},
            {"threads", g.threads},
            {"log_level", g.log_level},
            {"flags", std::move(flags)}};
  write_json(fs::path(g.out) / (command + ".config.json"), j);
}

void need_file(const std::string& path, const char* what) {
  require(fs::is_regular_file(path), ErrorCode::MissingFile, std::string(what) + " not found: " + path);
}

LayerTag layer_arg(const std::string& name) {
  const auto tag = parse_layer(name);
  require(tag.has_value() && *tag != LayerTag::Fc, ErrorCode::BadConfig, "layer must be pool4 or pool5");
  return *tag;
}

void save_loss_csv(const fs::path& path, const std::vector<double>& history) {
  std::string text = "epoch,loss\n";
  for (std::size_t e = 0; e < history.size(); ++e) text += fmt::format("{},{:.17g}\n", e, history[e]);
  write_text(path, text);
}

// ---- gen-synthetic

struct GenSyntheticArgs {
  synth::SynthConfig cfg;
  std::vector<std::size_t> pool4 = {14, 14, 64};
  std::vector<std::size_t> pool5 = {7, 7, 64};
};

void gen_synthetic(const Globals& g, GenSyntheticArgs a) {
  a.cfg.h4 = a.pool4[0], a.cfg.w4 = a.pool4[1], a.cfg.c4 = a.pool4[2];
  a.cfg.h5 = a.pool5[0], a.cfg.w5 = a.pool5[1], a.cfg.c5 = a.pool5[2];
  a.cfg.seed = g.seed;
  synth::validate(a.cfg);
  const auto manifest = synth::gen_corpus(a.cfg, g.out);
  spdlog::info("wrote {} images for {} vehicles to {}", manifest.records.size(), a.cfg.n_vehicles, g.out);
  echo_config(g, "gen-synthetic", synth::config_to_json(a.cfg));
}

// ---- gen-prototypes

struct GenPrototypesArgs {
  std::string manifest;
  std::string layer = "pool5";
  std::size_t clusters = 5;
  std::optional<double> gamma;
  std::size_t sample = 40;
  std::size_t max_points = 2000;
};

void gen_prototypes(const Globals& g, const GenPrototypesArgs& a) {
  need_file(a.manifest, "manifest");
  const LayerTag layer = layer_arg(a.layer);
  const Manifest manifest = load_manifest(a.manifest);
  std::size_t used = 0;
  const auto features = build_feature_set(manifest, layer, a.sample, Rng::derive(g.seed, 1), &used);
  PrototypeOptions opts;
  opts.clusters = a.clusters;
  opts.spectral.gamma = a.gamma;
  opts.spectral.max_points = a.max_points;
  spdlog::info("clustering {} {} features from {} images", features.size(), a.layer, used);
  PrototypeBank bank = generate_prototypes(features, layer, g.seed, opts);
  bank.provenance.manifest_hash = manifest_fingerprint(manifest);
  bank.provenance.sample_size = used;
  const fs::path out = fs::path(g.out) / ("bank_" + a.layer + ".json");
  save_bank(out, bank);
  spdlog::info("wrote {} prototypes to {} (gamma {:.6g})", bank.prototypes.size(), out.string(), bank.provenance.gamma);
  json flags = {{"manifest", a.manifest}, {"layer", a.layer}, {"clusters", a.clusters}, {"sample", a.sample},
                {"max_points", a.max_points}};
  flags["gamma"] = a.gamma ? json(*a.gamma) : json("median-heuristic");
  echo_config(g, "gen-prototypes", flags);
}

// ---- label-protos

struct LabelArgs {
  std::string bank;
  std::vector<std::string> assign;
  std::string auto_from_gt;
};

void label_protos(const Globals& g, const LabelArgs& a) {
  need_file(a.bank, "bank");
  const PrototypeBank bank = load_bank(a.bank);
  std::map<std::size_t, Semantic> assignments;
  if (!a.auto_from_gt.empty()) {
    need_file(a.auto_from_gt, "ground truth");
    assignments = synth::assign_from_ground_truth(bank, synth::load_ground_truth(a.auto_from_gt));
  }
  for (const auto& item : a.assign) {
    const auto eq = item.find('=');
    require(eq != std::string::npos, ErrorCode::BadConfig, "--assign expects semantic=cluster, got " + item);
    const auto sem = parse_semantic(item.substr(0, eq));
    require(sem.has_value() && *sem != Semantic::Unlabeled, ErrorCode::BadConfig, "unknown semantic in " + item);
    std::size_t cluster = 0;
    try {
      cluster = std::stoul(item.substr(eq + 1));
    } catch (const std::exception&) {
      fail(ErrorCode::BadConfig, "bad cluster index in " + item);
    }
    require(cluster < bank.prototypes.size(), ErrorCode::BadConfig, "cluster index out of range in " + item);
    assignments[cluster] = *sem;
  }
  require(!assignments.empty(), ErrorCode::BadConfig, "nothing to assign: pass --assign or --auto-from-gt");
  const PrototypeBank labeled = label_prototypes(bank, assignments);
  const fs::path out = fs::path(g.out) / ("labeled_" + std::string(layer_name(bank.layer)) + ".json");
  save_bank(out, labeled);
  json applied = json::object();
  for (const auto& [c, s] : assignments) {
    applied[std::string(semantic_name(s))] = c;
    spdlog::info("cluster {} -> {}", c, semantic_name(s));
  }
  echo_config(g, "label-protos", {{"bank", a.bank}, {"assign", a.assign}, {"auto_from_gt", a.auto_from_gt},
                                  {"applied", applied}});
}

// ---- localize

struct LocalizeArgs {
  std::string manifest;
  std::string bank;
  std::string semantic = "sticker";
  std::size_t scale = 16;
};

void localize(const Globals& g, const LocalizeArgs& a) {
  need_file(a.manifest, "manifest");
  need_file(a.bank, "bank");
  const Manifest manifest = load_manifest(a.manifest);
  const PrototypeBank bank = load_bank(a.bank);
  const auto sem = parse_semantic(a.semantic);
  require(sem.has_value(), ErrorCode::BadConfig, "unknown semantic " + a.semantic);
  const SemanticPrototype& proto = bank.get(*sem);
  require(a.scale >= 1, ErrorCode::BadConfig, "--scale must be >= 1");

  json summary = json::object();
  std::vector<std::size_t> counts(manifest.records.size());
  parallel_for(manifest.records.size(), [&](std::size_t i) {
    const auto& r = manifest.records[i];
    const FeatureMaps maps = manifest.load_layer(r, bank.layer);
    const ProbabilityMatrix p = probability_matrix(maps, proto);
    const BinaryMask mask = indication_matrix(p, proto.threshold);
    const fs::path stem = fs::path(g.out) / (r.image_id + "_" + a.semantic);
    render_heatmap(p, maps.height * a.scale, maps.width * a.scale, stem.string() + "_heat.pgm");
    write_pgm(stem.string() + "_mask.pgm", image_from_mask(mask));
    counts[i] = mask.popcount();
  });
  for (std::size_t i = 0; i < counts.size(); ++i) summary[manifest.records[i].image_id] = counts[i];
  write_json(fs::path(g.out) / ("localize_" + a.semantic + ".json"), summary);
  spdlog::info("localized {} in {} images", a.semantic, manifest.records.size());
  echo_config(g, "localize",
              {{"manifest", a.manifest}, {"bank", a.bank}, {"semantic", a.semantic}, {"scale", a.scale}});
}

// ---- build-viewpoint / classify-viewpoint

struct BuildViewpointArgs {
  std::string manifest;
  std::string bank4;
  std::string bank5;
  bool spectral = false;
};

void build_viewpoint(const Globals& g, const BuildViewpointArgs& a) {
  need_file(a.manifest, "manifest");
  need_file(a.bank4, "pool4 bank");
  need_file(a.bank5, "pool5 bank");
  const Manifest manifest = load_manifest(a.manifest);
  ovg::DiscriminatorOptions opts;
  opts.spectral = a.spectral;
  const auto disc = ovg::build_discriminators(manifest, load_bank(a.bank4), load_bank(a.bank5), g.seed, opts);
  ovg::save_discriminators(fs::path(g.out) / "discriminators.json", disc);
  spdlog::info("viewpoint discriminators from {} images", disc.provenance.images);
  echo_config(g, "build-viewpoint", {{"manifest", a.manifest},
                                     {"bank4", a.bank4},
                                     {"bank5", a.bank5},
                                     {"clustering", a.spectral ? "spectral" : "kmeans"},
                                     {"k", 2}});
}

struct ClassifyArgs {
  std::string manifest;
  std::string disc;
};

void classify_viewpoint(const Globals& g, const ClassifyArgs& a) {
  need_file(a.manifest, "manifest");
  need_file(a.disc, "discriminators");
  const Manifest manifest = load_manifest(a.manifest);
  const auto disc = ovg::load_discriminators(a.disc);
  const auto tags = ovg::classify_manifest(manifest, disc);
  std::string csv = "image_id,viewpoint\n";
  std::size_t fronts = 0, labeled = 0, correct = 0;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const auto& r = manifest.records[i];
    csv += r.image_id + "," + std::string(viewpoint_name(tags[i])) + "\n";
    fronts += tags[i] == Viewpoint::Front;
    if (r.gt_viewpoint) {
      ++labeled;
      correct += *r.gt_viewpoint == tags[i];
    }
  }
  write_text(fs::path(g.out) / "viewpoints.csv", csv);
  json summary = {{"images", tags.size()}, {"front", fronts}, {"back", tags.size() - fronts}};
  if (labeled == tags.size() && labeled > 0) {
    const double acc = static_cast<double>(correct) / static_cast<double>(labeled);
    summary["accuracy"] = acc;
    spdlog::info("viewpoint accuracy {:.4f} over {} images", acc, labeled);
  }
  write_json(fs::path(g.out) / "viewpoint_summary.json", summary);
  echo_config(g, "classify-viewpoint", {{"manifest", a.manifest}, {"disc", a.disc}});
}

// ---- train-fusion

struct TrainFusionArgs {
  std::string manifest;
  std::string bank;
  dra::TrainConfig cfg;
  std::vector<std::size_t> hidden = {1024, 768, 512};
};

void train_fusion(const Globals& g, TrainFusionArgs a) {
  need_file(a.manifest, "manifest");
  need_file(a.bank, "pool5 bank");
  a.cfg.seed = g.seed;
  a.cfg.fusion.hidden_dims = a.hidden;
  const Manifest manifest = load_manifest(a.manifest);
  const auto result = dra::train_fusion(manifest, load_bank(a.bank), a.cfg);
  dra::save_model(fs::path(g.out) / "dra.ckpt", result.model, a.cfg.epochs, g.seed);
  save_loss_csv(fs::path(g.out) / "dra_loss.csv", result.loss_history);
  if (!result.loss_history.empty())
    spdlog::info("fusion loss {:.5f} -> {:.5f}", result.loss_history.front(), result.loss_history.back());
  const auto& c = a.cfg;
  echo_config(g, "train-fusion", {{"manifest", a.manifest},
                                  {"bank", a.bank},
                                  {"alpha1", c.weights.alpha1},
                                  {"alpha2", c.weights.alpha2},
                                  {"margin", c.weights.triplet_margin},
                                  {"epochs", c.epochs},
                                  {"batch", c.batch},
                                  {"images_per_id", c.images_per_id},
                                  {"hidden", c.fusion.hidden_dims},
                                  {"output_dim", c.fusion.output_dim},
                                  {"lr", c.adam.base_lr},
                                  {"lr_decay", c.adam.decay_factor},
                                  {"lr_decay_every", c.adam.decay_every}});
}

// ---- train-generator

struct TrainGeneratorArgs {
  std::string manifest;
  std::string disc;
  std::vector<std::string> banks;
  ovg::GeneratorTrainConfig cfg;
  std::vector<std::size_t> hidden = {2048, 4096, 2048};
  std::size_t output_dim = 0;
  std::string source = "gap_pool5";
};

void train_generator(const Globals& g, TrainGeneratorArgs a) {
  need_file(a.manifest, "manifest");
  need_file(a.disc, "discriminators");
  for (const auto& b : a.banks) need_file(b, "bank");
  a.cfg.seed = g.seed;
  a.cfg.generator.hidden_dims = a.hidden;
  if (a.output_dim > 0) a.cfg.generator.output_dim = a.output_dim;
  const auto source = ovg::parse_embed_source(a.source);
  require(source.has_value(), ErrorCode::BadConfig, "unknown embed source " + a.source);
  a.cfg.generator.source = *source;

  const Manifest manifest = load_manifest(a.manifest);
  auto disc = ovg::load_discriminators(a.disc);
  if (!a.banks.empty()) disc.prototypes = ovg::select_viewpoint_prototypes(load_bank(a.banks[0]), load_bank(a.banks[1]));
  const auto result = ovg::train_generator(manifest, disc, a.cfg);
  ovg::save_model(fs::path(g.out) / "ovg.ckpt", result.model, a.cfg.epochs, g.seed);
  save_loss_csv(fs::path(g.out) / "ovg_loss.csv", result.loss_history);
  spdlog::info("generator trained on {} pairs", result.pairs);
  if (!result.loss_history.empty())
    spdlog::info("generator loss {:.5f} -> {:.5f}", result.loss_history.front(), result.loss_history.back());
  const auto& c = a.cfg;
  echo_config(g, "train-generator", {{"manifest", a.manifest},
                                     {"disc", a.disc},
                                     {"banks", a.banks},
                                     {"epochs", c.epochs},
                                     {"batch", c.batch},
                                     {"hidden", c.generator.hidden_dims},
                                     {"output_dim", result.model.generator_cfg.output_dim()},
                                     {"source", a.source},
                                     {"lr", c.adam.base_lr},
                                     {"lr_decay", c.adam.decay_factor},
                                     {"lr_decay_every", c.adam.decay_every}});
}

// ---- evaluate

struct EvaluateArgs {
  std::string query;
  std::string gallery;
  std::vector<std::string> models;
  std::string dra, ovg, disc;
  retrieval::EvalOptions options;
  std::string protocol = "full";
  bool keep_self = false;
  bool dump_distances = false;
};

void evaluate(const Globals& g, EvaluateArgs a) {
  if (!a.models.empty()) {
    a.dra = a.models[0];
    a.ovg = a.models[1];
    a.disc = a.models[2];
  }
  require(!a.dra.empty() && !a.ovg.empty() && !a.disc.empty(), ErrorCode::BadConfig,
          "evaluate needs --models DRA OVG DISC or --dra/--ovg/--disc");
  need_file(a.query, "query manifest");
  need_file(a.gallery, "gallery manifest");
  need_file(a.dra, "DRA checkpoint");
  need_file(a.ovg, "OVG checkpoint");
  need_file(a.disc, "discriminators");
  const auto protocol = retrieval::parse_protocol(a.protocol);
  require(protocol.has_value(), ErrorCode::BadConfig, "protocol must be full or sampled");
  a.options.protocol = *protocol;
  a.options.seed = g.seed;
  a.options.exclude_self = !a.keep_self;

  const retrieval::Pipeline pipeline{dra::load_model(a.dra), ovg::load_model(a.ovg), ovg::load_discriminators(a.disc)};
  const auto report =
      retrieval::evaluate(load_manifest(a.query), load_manifest(a.gallery), pipeline, a.options);
  const fs::path out(g.out);
  retrieval::save_report(out / "report.json", report);
  retrieval::save_cmc_csv(out / "cmc.csv", report.cmc);
  if (a.dump_distances) retrieval::save_distance_csv(out / "distances.csv", report);
  spdlog::info("mAP {:.4f}, rank-1 {:.4f} ({} queries, {} gallery)", report.mean_ap,
               report.cmc.empty() ? 0.0 : report.cmc[0], report.query_ids.size(), report.gallery_ids.size());
  const auto& o = a.options;
  echo_config(g, "evaluate", {{"query", a.query},
                              {"gallery", a.gallery},
                              {"dra", a.dra},
                              {"ovg", a.ovg},
                              {"disc", a.disc},
                              {"w1", o.weights.w1},
                              {"w2", o.weights.w2},
                              {"protocol", a.protocol},
                              {"max_rank", o.max_rank},
                              {"exclude_self", o.exclude_self}});
}

// ---- grad-check

struct GradCheckArgs {
  nn::GradCheckOptions options;
};

int grad_check(const Globals& g, GradCheckArgs a) {
  a.options.seed = g.seed;
  const auto results = nn::run_gradient_checks(a.options);
  json arr = json::array();
  bool ok = true;
  for (const auto& r : results) {
    spdlog::info("{}: {} trials, {} coordinates ({} skipped at kinks), max rel err {:.3e} {}", r.name, r.trials,
                 r.coordinates, r.skipped_kinks, r.max_relative_error, r.passed ? "ok" : "FAILED");
    arr.push_back({{"name", r.name},
                   {"trials", r.trials},
                   {"coordinates", r.coordinates},
                   {"skipped_kinks", r.skipped_kinks},
                   {"max_relative_error", r.max_relative_error},
                   {"passed", r.passed}});
    ok = ok && r.passed;
  }
  write_json(fs::path(g.out) / "gradcheck.json", arr);
  echo_config(g, "grad-check", {{"trials", a.options.trials},
                                {"step", a.options.step},
                                {"tolerance", a.options.tolerance}});
  if (!ok) spdlog::error("gradient check failed");
  return ok ? kExitOk : kExitNumeric;
}

void setup_logging(const std::string& level) {
  auto logger = spdlog::get("vreid");
  if (!logger) logger = spdlog::stderr_logger_mt("vreid");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(level));
}

void dims_option(CLI::App* cmd, const std::string& name, std::vector<std::size_t>& target, const std::string& help) {
  cmd->add_option(name, target, help)->delimiter(',')->capture_default_str();
}

}  // namespace

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Vehicle re-identification over precomputed feature maps"};
  app.name("vreid");
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--log-level", g.log_level, "Log level")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();
  app.add_option("--threads", g.threads, "Worker cap (0 = hardware concurrency)")->capture_default_str();

  GenSyntheticArgs gs;
  auto* c_gen = app.add_subcommand("gen-synthetic", "Write a synthetic corpus with planted semantics");
  c_gen->add_option("--vehicles", gs.cfg.n_vehicles)->capture_default_str();
  c_gen->add_option("--images-per-vehicle", gs.cfg.images_per_vehicle)->capture_default_str();
  c_gen->add_option("--front-fraction", gs.cfg.front_fraction)->capture_default_str();
  c_gen->add_option("--pool4", gs.pool4, "h,w,c")->delimiter(',')->expected(3)->capture_default_str();
  c_gen->add_option("--pool5", gs.pool5, "h,w,c")->delimiter(',')->expected(3)->capture_default_str();
  c_gen->add_option("--noise", gs.cfg.noise_sigma)->capture_default_str();
  c_gen->add_option("--identity-strength", gs.cfg.identity_strength)->capture_default_str();
  c_gen->add_option("--identity-dim", gs.cfg.identity_dim)->capture_default_str();
  c_gen->add_option("--distractor", gs.cfg.distractor_strength, "Clutter on seat and background")
      ->capture_default_str();

  GenPrototypesArgs gp;
  auto* c_proto = app.add_subcommand("gen-prototypes", "Cluster position features into semantic prototypes");
  c_proto->add_option("--manifest", gp.manifest)->required();
  c_proto->add_option("--layer", gp.layer)->check(CLI::IsMember({"pool4", "pool5"}))->capture_default_str();
  c_proto->add_option("--clusters", gp.clusters)->capture_default_str();
  c_proto->add_option("--gamma", gp.gamma, "RBF gamma (median heuristic when unset)");
  c_proto->add_option("--sample", gp.sample, "Images drawn for the feature set")->capture_default_str();
  c_proto->add_option("--max-points", gp.max_points, "Eigensolver subsample cap")->capture_default_str();

  LabelArgs la;
  auto* c_label = app.add_subcommand("label-protos", "Attach semantic labels to prototype clusters");
  c_label->add_option("--bank", la.bank)->required();
  c_label->add_option("--assign", la.assign, "semantic=cluster, repeatable");
  c_label->add_option("--auto-from-gt", la.auto_from_gt, "Match clusters to the planted signatures in gt.json");

  LocalizeArgs lo;
  auto* c_loc = app.add_subcommand("localize", "Write heatmaps and masks for one semantic");
  c_loc->add_option("--manifest", lo.manifest)->required();
  c_loc->add_option("--bank", lo.bank)->required();
  c_loc->add_option("--semantic", lo.semantic)->capture_default_str();
  c_loc->add_option("--out-dir", g.out, "Alias of --out");
  c_loc->add_option("--scale", lo.scale, "Heatmap pixels per grid cell")->capture_default_str();

  BuildViewpointArgs bv;
  auto* c_bv = app.add_subcommand("build-viewpoint", "Cluster viewpoint features into front/back discriminators");
  c_bv->add_option("--manifest", bv.manifest)->required();
  c_bv->add_option("--bank4", bv.bank4)->required();
  c_bv->add_option("--bank5", bv.bank5)->required();
  c_bv->add_flag("--spectral", bv.spectral, "Spectral instead of k-means");

  ClassifyArgs cv;
  auto* c_cv = app.add_subcommand("classify-viewpoint", "Tag every image front or back");
  c_cv->add_option("--manifest", cv.manifest)->required();
  c_cv->add_option("--disc", cv.disc)->required();

  TrainFusionArgs tf;
  auto* c_tf = app.add_subcommand("train-fusion", "Train the discriminative-region fusion net");
  c_tf->add_option("--manifest", tf.manifest)->required();
  c_tf->add_option("--bank", tf.bank, "Labeled pool5 bank")->required();
  c_tf->add_option("--alpha1", tf.cfg.weights.alpha1)->capture_default_str();
  c_tf->add_option("--alpha2", tf.cfg.weights.alpha2)->capture_default_str();
  c_tf->add_option("--margin", tf.cfg.weights.triplet_margin)->capture_default_str();
  c_tf->add_option("--epochs", tf.cfg.epochs)->capture_default_str();
  c_tf->add_option("--batch", tf.cfg.batch)->capture_default_str();
  c_tf->add_option("--images-per-id", tf.cfg.images_per_id)->capture_default_str();
  dims_option(c_tf, "--hidden", tf.hidden, "Hidden layer dims");
  c_tf->add_option("--output-dim", tf.cfg.fusion.output_dim)->capture_default_str();
  c_tf->add_option("--lr", tf.cfg.adam.base_lr)->capture_default_str();

  TrainGeneratorArgs tg;
  auto* c_tg = app.add_subcommand("train-generator", "Train the orthogonal-view generator");
  c_tg->add_option("--manifest", tg.manifest)->required();
  c_tg->add_option("--disc", tg.disc)->required();
  c_tg->add_option("--banks", tg.banks, "pool4 and pool5 banks overriding the prototypes in --disc")->expected(2);
  c_tg->add_option("--epochs", tg.cfg.epochs)->capture_default_str();
  c_tg->add_option("--batch", tg.cfg.batch)->capture_default_str();
  dims_option(c_tg, "--hidden", tg.hidden, "Hidden layer dims");
  c_tg->add_option("--output-dim", tg.output_dim, "0 = embedding dim")->capture_default_str();
  c_tg->add_option("--source", tg.source)->check(CLI::IsMember({"gap_pool5", "fc"}))->capture_default_str();
  c_tg->add_option("--lr", tg.cfg.adam.base_lr)->capture_default_str();

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Retrieval with the combined distance; CMC and mAP");
  c_ev->add_option("--query", ev.query)->required();
  c_ev->add_option("--gallery", ev.gallery)->required();
  c_ev->add_option("--models", ev.models, "DRA checkpoint, OVG checkpoint, discriminators")->expected(3);
  c_ev->add_option("--dra", ev.dra);
  c_ev->add_option("--ovg", ev.ovg);
  c_ev->add_option("--disc", ev.disc);
  c_ev->add_option("--w1", ev.options.weights.w1)->capture_default_str();
  c_ev->add_option("--w2", ev.options.weights.w2)->capture_default_str();
  c_ev->add_option("--protocol", ev.protocol)->check(CLI::IsMember({"full", "sampled"}))->capture_default_str();
  c_ev->add_option("--max-rank", ev.options.max_rank)->capture_default_str();
  c_ev->add_flag("--keep-self", ev.keep_self, "Do not exclude a query's own image from the gallery");
  c_ev->add_flag("--dump-distances", ev.dump_distances, "Also write distances.csv");

  GradCheckArgs gc;
  auto* c_gc = app.add_subcommand("grad-check", "Analytic vs finite-difference gradients");
  c_gc->add_option("--trials", gc.options.trials)->capture_default_str();
  c_gc->add_option("--tolerance", gc.options.tolerance)->capture_default_str();
  c_gc->add_option("--step", gc.options.step)->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (app.exit(e) == 0) return kExitOk;
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    setup_logging(g.log_level);
    set_max_threads(g.threads);
    std::error_code ec;
    fs::create_directories(g.out, ec);
    require(!ec, ErrorCode::IoError, "cannot create output directory " + g.out + ": " + ec.message());

    if (*c_gen) gen_synthetic(g, gs);
    else if (*c_proto) gen_prototypes(g, gp);
    else if (*c_label) label_protos(g, la);
    else if (*c_loc) localize(g, lo);
    else if (*c_bv) build_viewpoint(g, bv);
    else if (*c_cv) classify_viewpoint(g, cv);
    else if (*c_tf) train_fusion(g, tf);
    else if (*c_tg) train_generator(g, tg);
    else if (*c_ev) evaluate(g, ev);
    else if (*c_gc) return grad_check(g, gc);
    return kExitOk;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return e.category() == ErrorCategory::Numeric ? kExitNumeric : kExitData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  }
}

}  // namespace vreid::cli
