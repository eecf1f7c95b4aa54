#include <benchmark/benchmark.h>

#include "relmap/network.hpp"
#include "relmap/tensor.hpp"

namespace {

using namespace relmap;

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  Tensor a = random_matrix(n, n, rng);
  Tensor b = random_matrix(n, n, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_ForwardEval(benchmark::State& state) {
  Rng rng(7);
  MaskedNetwork net = MaskedNetwork::standard_mlp(rng);
  net.start_task(rng);
  net.finish_task();
  Tensor x = random_matrix(128, 784, rng);
  for (auto _ : state) {
    Tensor y = net.forward(x, 0, Mode::kEval);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_ForwardEval);

void BM_TrainStep(benchmark::State& state) {
  Rng rng(7);
  MaskedNetwork net = MaskedNetwork::standard_mlp(rng);
  net.start_task(rng);
  Tensor x = random_matrix(128, 784, rng);
  std::vector<int> labels(128);
  for (auto& l : labels) l = static_cast<int>(rng.below(10));
  for (auto _ : state) {
    Tensor logits = net.forward(x, 0, Mode::kTrain);
    LossGrad lg = softmax_xent(logits, labels);
    net.backward(lg.grad);
    benchmark::DoNotOptimize(lg.loss);
  }
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
