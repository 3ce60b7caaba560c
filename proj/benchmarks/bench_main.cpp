// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "styleloop/distill.hpp"
#include "styleloop/metrics.hpp"
#include "styleloop/rng.hpp"
#include "styleloop/training.hpp"

namespace styleloop {
namespace {

ImageTensor noise_image(int size, uint64_t seed) {
  Rng rng(seed);
  ImageTensor img(size, size);
  for (double& v : img.data) {
    v = 2.0 * rng.uniform() - 1.0;
  }
  return img;
}

ag::Tensor noise(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(rows) * cols);
  for (double& x : v) {
    x = rng.normal();
  }
  return ag::Tensor::from(rows, cols, std::move(v));
}

void BM_Conv2d(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const int c = static_cast<int>(state.range(1));
  const ag::Tensor x = noise(size * size, c, 1);
  const ag::Tensor w = noise(c, 9 * c, 2);
  ag::NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ag::conv2d(x, {size, size}, w, ag::Tensor(), 3, 1, 1));
  }
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_Conv2d)->Args({32, 32})->Args({64, 32})->Args({32, 64});

void BM_Translate(benchmark::State& state) {
  ExperimentConfig cfg;
  cfg.image_size = static_cast<int>(state.range(0));
  const Model m = init_model(cfg, TrainingMode::kJoint);
  const auto c = encode_domain(tokenize(cfg.prompts.target_prompt, m.text.shape.max_tokens),
                               EmbeddingDomain::kTarget, m.text);
  const ImageTensor img = noise_image(cfg.image_size, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(translate(img, c, m.generator));
  }
}
BENCHMARK(BM_Translate)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_CompositeLossBackward(benchmark::State& state) {
  ExperimentConfig cfg;
  cfg.image_size = static_cast<int>(state.range(0));
  const Model m = init_model(cfg, TrainingMode::kJoint);
  const PerceptualNet net(cfg.model.perceptual_seed);
  const ImageTensor src = noise_image(cfg.image_size, 4);
  const std::vector<SamplePair> batch = {{src, stub_stylize(src, cfg.prompts.target_prompt, 42)}};
  const auto params = trainable_tensors(m, TrainingMode::kJoint, 0, cfg);
  for (const auto& p : params) {
    ag::Tensor(p.tensor).set_requires_grad(true);
  }
  for (auto _ : state) {
    forward_loss(m, batch, cfg, net).total.backward(1.0);
  }
}
BENCHMARK(BM_CompositeLossBackward)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Fid(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const ag::Tensor a = noise(256, dim, 5);
  const ag::Tensor b = noise(256, dim, 6);
  const FeatureMatrix fa = Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(a.data().data(), 256, dim);
  const FeatureMatrix fb = Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(b.data().data(), 256, dim);
  for (auto _ : state) {
    benchmark::DoNotOptimize(fid(fa, fb));
  }
}
BENCHMARK(BM_Fid)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const ImageTensor a = noise_image(size, 7);
  const ImageTensor b = noise_image(size, 8);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ssim(a, b));
  }
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(256);

}  // namespace
}  // namespace styleloop

BENCHMARK_MAIN();
