#include <benchmark/benchmark.h>

#include <numeric>

#include "effops/operators.hpp"
#include "effops/ops.hpp"
#include "effops/quant.hpp"
#include "effops/task.hpp"
#include "effops/train.hpp"

using namespace effops;

namespace {

std::vector<Example> examples(int n) {
  SyntheticTask t;
  t.train_size = n;
  t.dev_size = 1;
  t.test_size = 1;
  return gen_task(t).train;
}

TokenBatch batch_of(const std::vector<Example>& ex, std::optional<std::size_t> pad) {
  std::vector<std::size_t> idx(ex.size());
  std::iota(idx.begin(), idx.end(), 0);
  return batch_examples(ex, idx, pad);
}

}  // namespace

// Inference on a batch of 8, padded to max_len (arg 0) or per batch (arg 1).
static void BM_Forward(benchmark::State& state) {
  const TransformerModel m = init_model(ModelConfig{}, 1);
  const auto ex = examples(8);
  const TokenBatch b = batch_of(ex, state.range(0) ? std::nullopt : std::optional<std::size_t>(32));
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, b, std::nullopt));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1);

static void BM_ForwardQuantized(benchmark::State& state) {
  const TransformerModel m = apply_quantize(init_model(ModelConfig{}, 1));
  const TokenBatch b = batch_of(examples(8), 32);
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, b, std::nullopt));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ForwardQuantized);

static void BM_MatmulFloat(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor a = randn({n, n}, 1.0f, rng), b = randn({n, n}, 1.0f, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
}
BENCHMARK(BM_MatmulFloat)->Arg(32)->Arg(128);

static void BM_MatmulInt8(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const QuantizedTensor a = quantize(randn({n, n}, 1.0f, rng)), b = quantize(randn({n, n}, 1.0f, rng));
  for (auto _ : state) benchmark::DoNotOptimize(qmatmul(a, b));
}
BENCHMARK(BM_MatmulInt8)->Arg(32)->Arg(128);

// One forward/backward/Adam step on a batch of 8.
static void BM_TrainStep(benchmark::State& state) {
  TransformerModel m = init_model(ModelConfig{}, 1);
  const auto ex = examples(8);
  const TokenBatch b = batch_of(ex, std::nullopt);
  std::vector<int> labels;
  for (const auto& e : ex) labels.push_back(e.label);
  Adam opt(m.parameters(), 1e-3);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    opt.zero_grad();
    Tensor loss = ops::cross_entropy(trace_forward(m, b).final_logits(), labels);
    tape.backward(loss);
    opt.step();
  }
}
BENCHMARK(BM_TrainStep);

static void BM_Importance(benchmark::State& state) {
  const TransformerModel m = init_model(ModelConfig{}, 1);
  const auto dev = examples(64);
  for (auto _ : state) benchmark::DoNotOptimize(compute_importance(m, dev));
}
BENCHMARK(BM_Importance);

BENCHMARK_MAIN();
