#include <benchmark/benchmark.h>

#include <cmath>

#include "regrowth/convlstm.hpp"
#include "regrowth/logistic.hpp"
#include "regrowth/preprocess.hpp"
#include "regrowth/rng.hpp"
#include "regrowth/tucker.hpp"

using namespace regrowth;

namespace {

template <typename T>
nn::Tensor<T> random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  nn::Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_Conv2d(benchmark::State& state) {
  Rng rng(1);
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor<float>({8, 10, 10, c}, rng);
  const auto k = random_tensor<float>({3, 3, c, 4 * c}, rng);
  const auto b = random_tensor<float>({4 * c}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, k, b));
  state.SetItemsProcessed(state.iterations() * 8 * 100 * 9 * c * 4 * c * 2);
}
BENCHMARK(BM_Conv2d)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_CellStep(benchmark::State& state) {
  Rng rng(2);
  const auto f = static_cast<std::size_t>(state.range(0));
  ConvLSTMCell<float> cell("bench", f, f);
  cell.initialize(rng);
  const auto x = random_tensor<float>({8, 10, 10, f}, rng);
  const auto h = random_tensor<float>({8, 10, 10, f}, rng);
  const auto c = random_tensor<float>({8, 10, 10, f}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(cell_step(x, h, c, cell));
}
BENCHMARK(BM_CellStep)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_ModelForwardBackward(benchmark::State& state) {
  Rng rng(3);
  ConvLSTMModel<float> model;
  model.initialize(3);
  const auto x = random_tensor<float>({8, 24, 10, 10, sample_channel::kCount}, rng);
  const auto target = random_tensor<float>({8, 24, 10, 10, 1}, rng);
  for (auto _ : state) {
    model.zero_grad();
    const auto loss = nn::mae_loss(model.forward(x, nn::BatchNormMode::kTrain), target);
    model.backward(loss.grad);
  }
}
BENCHMARK(BM_ModelForwardBackward)->Unit(benchmark::kMillisecond)->Iterations(3);

void BM_FitPixel(benchmark::State& state) {
  Rng rng(4);
  std::vector<double> s(25);
  for (std::size_t t = 0; t < 25; ++t) s[t] = 1.1 / (1.0 + std::exp(-0.3 * (double(t) - 8.0))) * (1 + 0.05 * rng.normal());
  for (auto _ : state) benchmark::DoNotOptimize(fit_pixel(s));
}
BENCHMARK(BM_FitPixel);

void BM_TuckerPredict(benchmark::State& state) {
  Rng rng(5);
  const Dims3 dims{25, 10, 10};
  std::vector<TuckerSample> samples;
  for (int i = 0; i < 60; ++i) {
    TuckerSample s{std::vector<double>(2500), rng.normal()};
    for (auto& v : s.x) v = rng.normal();
    samples.push_back(std::move(s));
  }
  TuckerConfig cfg;
  cfg.max_sweeps = 5;
  cfg.restarts = 1;
  const auto fit = tucker_fit(samples, dims, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(tucker_predict(fit.weights, samples[0].x));
}
BENCHMARK(BM_TuckerPredict);

void BM_KnnImpute(benchmark::State& state) {
  Rng rng(6);
  RasterStack s(25, 50, 50, {"NDVI"});
  for (auto& v : s.data()) v = static_cast<float>(rng.uniform());
  for (auto& m : s.missing_mask()) m = rng.uniform() < 0.1 ? 1 : 0;
  for (auto _ : state) benchmark::DoNotOptimize(knn_impute(s));
}
BENCHMARK(BM_KnnImpute)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
