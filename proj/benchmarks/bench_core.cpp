#include <benchmark/benchmark.h>

#include <random>

#include "bkf/graph.hpp"
#include "bkf/kalman.hpp"
#include "bkf/nets.hpp"
#include "bkf/training.hpp"
#include "bkf/world.hpp"

using namespace bkf;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape) {
  std::normal_distribution<double> g;
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = g(rng);
  return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const std::size_t batch = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor images = random_tensor(rng, {batch, 32, 32, 3});
  const Tensor kernel = random_tensor(rng, {5, 5, 3, 16});
  for (auto _ : state) {
    Tape t;
    const NodeId k = t.parameter(kernel);
    const NodeId out = conv2d(t, t.constant(images), k, {1, 1});
    t.backward(sum(t, out));
    benchmark::DoNotOptimize(t.grad(k));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(1)->Arg(16);

void BM_KalmanUnroll(benchmark::State& state) {
  const std::size_t T = static_cast<std::size_t>(state.range(0));
  const auto wc = world::DiskWorldConfig::for_size(32);
  const KalmanMatrices m = world::tracking_filter_matrices(wc);
  std::mt19937_64 rng(2);
  std::vector<Tensor> obs, lhat;
  for (std::size_t i = 0; i < T; ++i) {
    obs.push_back(random_tensor(rng, {2}));
    lhat.push_back(random_tensor(rng, {3}));
  }
  for (auto _ : state) {
    Tape t;
    const KalmanParams p = instantiate(t, m);
    std::vector<NodeId> z, l;
    for (std::size_t i = 0; i < T; ++i) {
      z.push_back(t.constant(obs[i]));
      l.push_back(t.parameter(lhat[i]));
    }
    const auto states = unroll_lhat(t, z, l, {t.constant(Tensor({4})), p.Sigma0}, p);
    t.backward(sum(t, states.back().mean));
    benchmark::DoNotOptimize(t.grad(l[0]));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(T));
}
BENCHMARK(BM_KalmanUnroll)->Arg(10)->Arg(100);

void BM_BkfSequenceLoss(benchmark::State& state) {
  auto wc = world::DiskWorldConfig::for_size(32);
  wc.T = static_cast<std::size_t>(state.range(0));
  wc.num_distractors = 30;
  const auto ds = world::generate_tracking_dataset(wc, 1);
  nets::ModelSpec spec;
  spec.kind = nets::ModelKind::BKF;
  spec.encoder = nets::tracking_encoder_desk();
  spec.filter = world::tracking_filter_spec(wc);
  train::Checkpoint ck = train::initial_checkpoint(spec, 3);
  ck.completed = {train::Stage::PretrainFF};
  for (auto _ : state)
    benchmark::DoNotOptimize(train::stage_loss(ck, train::Stage::FinetuneE2E, ds.sequences[0]));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(wc.T));
}
BENCHMARK(BM_BkfSequenceLoss)->Arg(20)->Arg(100);

void BM_RenderTrackingSequence(benchmark::State& state) {
  auto wc = world::DiskWorldConfig::for_size(32);
  wc.num_distractors = static_cast<std::size_t>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    wc.seed = seed++;
    benchmark::DoNotOptimize(world::generate_tracking_dataset(wc, 1));
  }
}
BENCHMARK(BM_RenderTrackingSequence)->Arg(0)->Arg(30)->Arg(99);

}  // namespace

BENCHMARK_MAIN();
