#include "fixtures.hpp"

namespace fixture {

using namespace vreid;

synth::SynthConfig small_config(std::uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.n_vehicles = 6;
  cfg.images_per_vehicle = 4;
  cfg.c4 = 24;
  cfg.c5 = 24;
  cfg.identity_dim = 6;
  cfg.seed = seed;
  return cfg;
}

PrototypeBank labeled_bank(const Manifest& manifest, const synth::GroundTruth& gt, LayerTag layer,
                           std::size_t sample, std::uint64_t seed) {
  const auto set = build_feature_set(manifest, layer, sample, Rng::derive(seed, 1));
  const auto bank = generate_prototypes(set, layer, seed);
  return label_prototypes(bank, synth::assign_from_ground_truth(bank, gt));
}

World make_world(const synth::SynthConfig& cfg, const std::string& tag, std::size_t sample) {
  World w;
  w.dir = std::make_unique<oracle::TempDir>(tag);
  w.cfg = cfg;
  w.manifest = synth::gen_corpus(cfg, w.dir->path());
  w.gt = synth::load_ground_truth(w.dir->path() / "gt.json");
  w.bank4 = labeled_bank(w.manifest, w.gt, LayerTag::Pool4, sample, 3);
  w.bank5 = labeled_bank(w.manifest, w.gt, LayerTag::Pool5, sample, 3);
  return w;
}

}  // namespace fixture
