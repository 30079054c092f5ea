#include <benchmark/benchmark.h>

#include "depthmae/metrics.hpp"
#include "depthmae/model.hpp"
#include "depthmae/ops.hpp"
#include "depthmae/random.hpp"
#include "depthmae/synthetic.hpp"
#include "depthmae/training.hpp"

namespace depthmae {
namespace {

Tensor<float> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(rows * cols);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return Tensor<float>({rows, cols}, v);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1);
  const auto b = random_matrix(n, n, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(196)->Arg(384);

ModelConfig bench_model(std::size_t image) {
  ModelConfig c;
  c.image_size = image;
  c.patch_size = 8;
  c.enc_layers = 4;
  c.enc_heads = 4;
  c.enc_dim = 128;
  c.dec_layers = 2;
  c.dec_heads = 4;
  c.dec_dim = 64;
  return c;
}

RgbdSample scene(std::size_t size, std::uint64_t seed) {
  SyntheticOptions opt;
  opt.height = size;
  opt.width = size;
  return generate_scene(seed, opt);
}

void BM_CompleteImage(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  const auto model = DepthCompletionModel<float>::create(bench_model(size), 3);
  const RgbdSample s = scene(size, 4);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward_finetune(s).values().data());
}
BENCHMARK(BM_CompleteImage)->Arg(64)->Arg(112)->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  const Stage stage = state.range(0) == 0 ? Stage::kPretrain : Stage::kFinetune;
  std::vector<RgbdSample> samples;
  for (std::uint64_t k = 0; k < 4; ++k) samples.push_back(scene(64, derive_seed(5, k)));
  TrainConfig tc = TrainConfig::defaults(stage);
  tc.epochs = 1;
  tc.batch_size = 4;
  for (auto _ : state) benchmark::DoNotOptimize(train(samples, bench_model(64), tc).steps);
  state.SetLabel(stage_name(stage));
}
BENCHMARK(BM_TrainEpoch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const RgbdSample a = scene(240, 6);
  const RgbdSample b = scene(240, 7);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a.gt_depth, b.gt_depth, 8.0));
}
BENCHMARK(BM_Ssim)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace depthmae

BENCHMARK_MAIN();
