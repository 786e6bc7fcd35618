#include <benchmark/benchmark.h>

#include <vector>

#include "mst/attention.hpp"
#include "mst/graph.hpp"
#include "mst/model.hpp"

using namespace mst;

namespace {

constexpr std::size_t kDim = 40;
constexpr std::size_t kHeadDim = 4;

Tensor random_input(std::size_t n, Rng& rng) {
  Tensor t({n, kDim});
  for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// args: sequence length, window width (0 = whole sequence)
void BM_SasaHead(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto w = state.range(1) ? static_cast<std::size_t>(state.range(1)) : 2 * n - 1;
  const HeadParams p = HeadParams::init(kDim, kHeadDim, rng, "h");
  const Tensor h = random_input(n, rng);
  for (auto _ : state) {
    Graph g(false);
    benchmark::DoNotOptimize(sasa_head(g.input(h), p, w).value().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_SasaHead)->ArgsProduct({{64, 256, 1024}, {3, 0}});

void BM_StandardHead(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::vector<HeadParams> heads{HeadParams::init(kDim, kHeadDim, rng, "h")};
  const Parameter wo("wo", Tensor::identity(kHeadDim));
  const Tensor h = random_input(n, rng);
  for (auto _ : state) {
    Graph g(false);
    benchmark::DoNotOptimize(msa_standard(g.input(h), heads, wo).value().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_StandardHead)->Arg(64)->Arg(256)->Arg(1024);

ModelConfig encoder(Architecture arch) {
  ModelConfig c;
  c.arch = arch;
  c.input = InputKind::Vectors;
  c.input_dim = kDim;
  c.task = TaskKind::Regress;
  c.output_dim = 1;
  return c;
}

void run_encoder(benchmark::State& state, Architecture arch, bool backward) {
  Rng rng(2);
  const Model model(encoder(arch));
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_input(n, rng);
  for (auto _ : state) {
    Graph g(backward);
    Var y = model.forward(g, x);
    if (backward) g.backward(sum(y));
    benchmark::DoNotOptimize(y.value().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

void BM_MultiScaleForward(benchmark::State& s) { run_encoder(s, Architecture::MultiScale, false); }
void BM_VanillaForward(benchmark::State& s) { run_encoder(s, Architecture::Vanilla, false); }
void BM_MultiScaleForwardBackward(benchmark::State& s) { run_encoder(s, Architecture::MultiScale, true); }
BENCHMARK(BM_MultiScaleForward)->Arg(32)->Arg(128)->Arg(512);
BENCHMARK(BM_VanillaForward)->Arg(32)->Arg(128)->Arg(512);
BENCHMARK(BM_MultiScaleForwardBackward)->Arg(32)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
