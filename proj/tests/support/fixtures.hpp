#pragma once

#include <memory>

#include "oracles.hpp"
#include "vreid/manifest.hpp"
#include "vreid/prototype_bank.hpp"
#include "vreid/synthetic.hpp"

namespace fixture {

// A generated corpus with prototype banks labeled against its ground truth.
struct World {
  std::unique_ptr<oracle::TempDir> dir;
  vreid::synth::SynthConfig cfg;
  vreid::Manifest manifest;
  vreid::synth::GroundTruth gt;
  vreid::PrototypeBank bank4, bank5;
};

vreid::synth::SynthConfig small_config(std::uint64_t seed);

/// Bank seeds and sample sizes are fixed; `sample` caps the images clustered per layer.
World make_world(const vreid::synth::SynthConfig& cfg, const std::string& tag, std::size_t sample = 4);

vreid::PrototypeBank labeled_bank(const vreid::Manifest& manifest, const vreid::synth::GroundTruth& gt,
                                  vreid::LayerTag layer, std::size_t sample, std::uint64_t seed);

}  // namespace fixture
