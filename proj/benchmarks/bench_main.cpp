#include <benchmark/benchmark.h>

#include <memory>
#include <numeric>
#include <vector>

#include "bbox/net.hpp"
#include "bbox/oracle.hpp"
#include "bbox/query.hpp"
#include "bbox/rng.hpp"
#include "bbox/transfer.hpp"
#include "bbox/zoo.hpp"

using namespace bbox;

namespace {

const Shape kShape{1, 16, 16};
constexpr std::size_t kClasses = 5;

std::vector<double> image(std::uint64_t seed) {
  auto rng = make_rng(seed, 0, "bench/image");
  std::vector<double> x(kShape.size());
  for (double& v : x) v = rng.uniform(0.0, 1.0);
  return x;
}

DifferentiableNet net_for(int arch) {
  switch (arch) {
    case 0: return make_linear(kShape, kClasses, 1);
    case 1: return make_mlp(kShape, kClasses, 1);
    default: return make_convnet(kShape, kClasses, 1);
  }
}

const char* arch_name(int arch) { return arch == 0 ? "linear" : arch == 1 ? "mlp" : "conv"; }

void BM_Forward(benchmark::State& state) {
  const auto net = net_for(static_cast<int>(state.range(0)));
  const auto x = image(1);
  for (auto _ : state) benchmark::DoNotOptimize(net.logits(x));
  state.SetLabel(arch_name(static_cast<int>(state.range(0))));
}
BENCHMARK(BM_Forward)->DenseRange(0, 2);

void BM_InputGradient(benchmark::State& state) {
  const auto net = net_for(static_cast<int>(state.range(0)));
  const auto x = image(2);
  for (auto _ : state) benchmark::DoNotOptimize(grad_input(net, x, LossKind::CrossEntropy, 0, Goal::Untargeted));
  state.SetLabel(arch_name(static_cast<int>(state.range(0))));
}
BENCHMARK(BM_InputGradient)->DenseRange(0, 2);

void BM_OracleQuery(benchmark::State& state) {
  const auto net = std::make_shared<const DifferentiableNet>(net_for(2));
  const FeedbackMode modes[] = {FeedbackMode::full_scores(), FeedbackMode::top_k(1), FeedbackMode::hard_label()};
  Oracle oracle(net, modes[state.range(0)]);
  const auto x = image(3);
  for (auto _ : state) benchmark::DoNotOptimize(oracle.query(x));
  state.counters["queries"] = static_cast<double>(oracle.query_count());
}
BENCHMARK(BM_OracleQuery)->DenseRange(0, 2);

void BM_NesGradient(benchmark::State& state) {
  const auto net = make_mlp(kShape, kClasses, 2);
  const auto x = image(4);
  const ScalarLoss loss = [&](std::span<const double> z) { return cross_entropy(net.logits(z), 0).value; };
  const auto n = static_cast<std::size_t>(state.range(0));
  auto rng = make_rng(1, 0, "bench/nes");
  for (auto _ : state) benchmark::DoNotOptimize(nes_gradient(loss, x, 0.01, n, rng));
}
BENCHMARK(BM_NesGradient)->Arg(20)->Arg(100);

void BM_TransferIteration(benchmark::State& state) {
  const std::vector<DifferentiableNet> nets = {net_for(1), net_for(2)};
  const auto variant = static_cast<TransferVariant>(state.range(0));
  ImageBatch batch(5, kShape);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto x = image(10 + i);
    std::copy(x.begin(), x.end(), batch.example(i).begin());
  }
  const std::vector<std::size_t> labels = {0, 1, 2, 3, 4};
  auto cfg = TransferConfig::defaults(Goal::Untargeted, variant);
  cfg.iterations = 1;
  for (auto _ : state) benchmark::DoNotOptimize(run_transfer_attack(cfg, nets, batch, labels));
  state.SetLabel(attack_id(variant));
}
BENCHMARK(BM_TransferIteration)->DenseRange(0, 9)->Unit(benchmark::kMicrosecond);

void BM_SquareQueries(benchmark::State& state) {
  const auto net = std::make_shared<const DifferentiableNet>(net_for(2));
  const auto x = image(5);
  const std::size_t label = argmax(net->logits(x));
  for (auto _ : state) {
    Oracle oracle(net, FeedbackMode::full_scores());
    benchmark::DoNotOptimize(square_attack(oracle, x, label, Goal::Untargeted, PerturbationBudget{2.0 / 255.0},
                                           QueryBudget{200}, QueryOptions{}));
  }
  state.SetItemsProcessed(state.iterations() * 200);
}
BENCHMARK(BM_SquareQueries)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
