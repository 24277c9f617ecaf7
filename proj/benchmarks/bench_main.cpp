#include <benchmark/benchmark.h>

#include "vreid/nn.hpp"
#include "vreid/prototype_bank.hpp"
#include "vreid/retrieval.hpp"
#include "vreid/rng.hpp"
#include "vreid/tensor_ops.hpp"

using namespace vreid;

namespace {

FeatureMaps random_maps(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  FeatureMaps m(h, w, c);
  for (auto& v : m.data) v = static_cast<float>(rng.normal());
  return m;
}

FeatureVector random_vector(std::size_t dim, Rng& rng) {
  FeatureVector v(dim);
  for (auto& x : v.data) x = rng.normal();
  return v;
}

void BM_ProbabilityMatrix(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto maps = random_maps(14, 14, c, 1);
  Rng rng(2);
  SemanticPrototype proto;
  proto.vector = random_vector(c, rng);
  for (auto _ : state) benchmark::DoNotOptimize(probability_matrix(maps, proto));
}
BENCHMARK(BM_ProbabilityMatrix)->Arg(64)->Arg(512);

void BM_MaskedGap(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto maps = random_maps(14, 14, c, 3);
  BinaryMask mask(14, 14);
  for (std::size_t p = 0; p < mask.data.size(); p += 3) mask.data[p] = 1;
  for (auto _ : state) benchmark::DoNotOptimize(masked_gap(maps, mask));
}
BENCHMARK(BM_MaskedGap)->Arg(64)->Arg(512);

void BM_MlpForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const nn::MlpConfig cfg{{192, 256, 256, 64}, true};
  const auto params = nn::init_mlp(cfg, 4);
  Rng rng(5);
  std::vector<FeatureVector> rows;
  for (std::size_t i = 0; i < batch; ++i) rows.push_back(random_vector(192, rng));
  const auto x = nn::to_batch(rows);
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward_eval(params, cfg, x));
}
BENCHMARK(BM_MlpForward)->Arg(1)->Arg(64);

void BM_DistanceMatrix(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(6);
  std::vector<retrieval::IdentityDescriptor> descs(n);
  for (auto& d : descs) {
    d.f_front = random_vector(64, rng);
    d.f_back = random_vector(64, rng);
    d.f_disc = random_vector(64, rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(retrieval::distance_matrix(descs, descs, {}));
}
BENCHMARK(BM_DistanceMatrix)->Arg(100)->Arg(400);

}  // namespace
BENCHMARK_MAIN();
