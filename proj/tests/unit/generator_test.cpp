// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/generator.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "styleloop/error.hpp"
#include "styleloop/rng.hpp"
#include "styleloop/text_encoder.hpp"
#include "test_util.hpp"

namespace styleloop {
namespace {

struct Fixture {
  ExperimentConfig cfg;
  GeneratorWeights gen;
  TextEncoderWeights text;
  ConditioningEmbedding cond;
};

Fixture make(int image_size, uint64_t seed = 4) {
  Fixture f;
  f.cfg = testing::tiny_config(image_size);
  f.gen = init_generator(GeneratorShape::from(f.cfg), f.cfg.lora, seed);
  f.text = init_text_encoder(TextEncoderShape::from(f.cfg.model), f.cfg.lora, seed + 1);
  f.cond = encode_base(tokenize(f.cfg.prompts.target_prompt, f.cfg.model.max_tokens), f.text);
  return f;
}

void randomize(ag::Tensor t, uint64_t seed, double std) {
  Rng rng(seed);
  for (double& v : t.mutable_data()) {
    v = std * rng.normal();
  }
}

void randomize_adapters(GeneratorWeights& w, uint64_t seed, double std = 0.05) {
  for (auto& [id, a] : w.adapters.adapters) {
    randomize(a.b, seed++, std);
  }
}

// Direct-loop convolution over a CHW buffer with the (ky, kx, c_in) weight layout.
std::vector<double> naive_conv(const std::vector<double>& x, int c_in, int h, int w,
                               const ag::Tensor& wt, const ag::Tensor& b, int k) {
  const int c_out = wt.rows();
  const int pad = k / 2;
  std::vector<double> y(static_cast<size_t>(c_out) * h * w);
  for (int co = 0; co < c_out; ++co) {
    for (int oy = 0; oy < h; ++oy) {
      for (int ox = 0; ox < w; ++ox) {
        double acc = b.at(0, co);
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy + ky - pad;
            const int ix = ox + kx - pad;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
              continue;
            }
            for (int ci = 0; ci < c_in; ++ci) {
              acc += wt.at(co, (ky * k + kx) * c_in + ci) * x[(static_cast<size_t>(ci) * h + iy) * w + ix];
            }
          }
        }
        y[(static_cast<size_t>(co) * h + oy) * w + ox] = acc;
      }
    }
  }
  return y;
}

std::vector<double> naive_upsample(const std::vector<double>& x, int c, int h, int w) {
  std::vector<double> y(static_cast<size_t>(c) * 4 * h * w);
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < 2 * h; ++oy) {
      for (int ox = 0; ox < 2 * w; ++ox) {
        y[(static_cast<size_t>(ch) * 2 * h + oy) * 2 * w + ox] = x[(static_cast<size_t>(ch) * h + oy / 2) * w + ox / 2];
      }
    }
  }
  return y;
}

double silu(double v) { return v / (1.0 + std::exp(-v)); }

// Decoder with adapters merged by hand: proj + SiLU, three upsample+conv
// stages, tanh.
ImageTensor naive_decode(const GeneratorWeights& g, const LatentTensor& z) {
  auto merged = [&](const std::string& id) {
    ag::Tensor w = g.base.get(id + ".w").clone();
    if (const auto* a = g.adapters.find(id)) {
      const Eigen::MatrixXd delta = a->scale() * a->b_matrix() * a->a_matrix();
      for (int r = 0; r < w.rows(); ++r) {
        for (int c = 0; c < w.cols(); ++c) {
          w.mutable_data()[static_cast<size_t>(r) * w.cols() + c] += delta(r, c);
        }
      }
    }
    return w;
  };
  int h = z.height;
  int c = z.channels();
  std::vector<double> x(static_cast<size_t>(c) * h * h);
  for (int p = 0; p < h * h; ++p) {
    for (int ch = 0; ch < c; ++ch) {
      x[static_cast<size_t>(ch) * h * h + p] = z.rows.at(p, ch);
    }
  }
  x = naive_conv(x, c, h, h, merged("vae.dec.proj"), g.base.get("vae.dec.proj.b"), 1);
  c = g.shape.vae_channels[2];
  for (double& v : x) {
    v = silu(v);
  }
  const char* stages[] = {"vae.dec.conv0", "vae.dec.conv1", "vae.dec.conv_out"};
  for (int i = 0; i < 3; ++i) {
    x = naive_upsample(x, c, h, h);
    h *= 2;
    const auto w = merged(stages[i]);
    x = naive_conv(x, c, h, h, w, g.base.get(std::string(stages[i]) + ".b"), 3);
    c = w.rows();
    for (double& v : x) {
      v = i == 2 ? std::tanh(v) : silu(v);
    }
  }
  ImageTensor img(h, h);
  img.data = x;
  return img;
}

TEST(Generator, LatentShapes) {
  auto f = make(64);
  const auto z = vae_encode(testing::random_image(64, 64, 1), f.gen);
  EXPECT_EQ(z.height, 8);
  EXPECT_EQ(z.width, 8);
  EXPECT_EQ(z.channels(), 4);

  auto big = make(256);
  const auto zb = vae_encode(testing::random_image(256, 256, 2), big.gen);
  EXPECT_EQ(zb.height, 32);
  EXPECT_EQ(zb.channels(), 4);
  const auto img = vae_decode(zb, big.gen);
  EXPECT_EQ(img.height, 256);
  EXPECT_EQ(img.width, 256);
  for (double v : img.data) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Generator, EncodeDecodeDeterministic) {
  auto f = make(32);
  const auto x = testing::random_image(32, 32, 3);
  const auto a = vae_encode(x, f.gen);
  const auto b = vae_encode(x, f.gen);
  EXPECT_TRUE(std::equal(a.rows.data().begin(), a.rows.data().end(), b.rows.data().begin()));
  EXPECT_EQ(vae_decode(a, f.gen), vae_decode(b, f.gen));
}

TEST(Generator, ShapeErrors) {
  auto f = make(32);
  EXPECT_THROW(vae_encode(testing::random_image(16, 16, 1), f.gen), ShapeError);
  EXPECT_THROW(translate(testing::random_image(32, 16, 1), f.cond, f.gen), ShapeError);
  LatentTensor bad{3, 3, ag::Tensor::zeros(9, 4)};
  EXPECT_THROW(vae_decode(bad, f.gen), ShapeError);
  ConditioningEmbedding narrow{ag::Tensor::zeros(4, 3), {1, 1, 1, 1}, EmbeddingDomain::kBase};
  EXPECT_THROW(translate(testing::random_image(32, 32, 1), narrow, f.gen), ShapeError);
}

TEST(Generator, ZeroLatentDecodesToFixedImage) {
  auto f = make(32);
  LatentTensor z{4, 4, ag::Tensor::zeros(16, 4)};
  // Zero biases everywhere: the decoder maps zero to zero.
  for (double v : vae_decode(z, f.gen).data) {
    EXPECT_EQ(v, 0.0);
  }
  for (const char* id : {"vae.dec.proj.b", "vae.dec.conv0.b", "vae.dec.conv1.b", "vae.dec.conv_out.b"}) {
    randomize(f.gen.base.get(id), Fnv1a{}.str(id).digest(), 0.5);
  }
  const auto out = vae_decode(z, f.gen);
  const auto ref = naive_decode(f.gen, z);
  ASSERT_EQ(out.data.size(), ref.data.size());
  for (size_t i = 0; i < ref.data.size(); ++i) {
    EXPECT_NEAR(out.data[i], ref.data[i], 1e-12);
  }
  EXPECT_EQ(vae_decode(z, f.gen), out);
}

TEST(Generator, DecoderMatchesNaiveWithAdapters) {
  auto f = make(16);
  randomize_adapters(f.gen, 100, 0.2);
  Rng rng(5);
  LatentTensor z{2, 2, ag::Tensor::zeros(4, 4)};
  randomize(z.rows, 6, 1.0);
  const auto out = vae_decode(z, f.gen);
  const auto ref = naive_decode(f.gen, z);
  for (size_t i = 0; i < ref.data.size(); ++i) {
    EXPECT_NEAR(out.data[i], ref.data[i], 1e-10);
  }
}

TEST(Generator, TranslateIsStagedComposition) {
  auto f = make(32);
  randomize_adapters(f.gen, 7);
  for (int i = 0; i < 10; ++i) {
    const auto x = testing::random_image(32, 32, 50 + i);
    const auto fused = translate(x, f.cond, f.gen);
    const auto staged = vae_decode(unet(vae_encode(x, f.gen), f.cond, f.gen), f.gen);
    ASSERT_TRUE(fused.same_shape(x));
    for (size_t k = 0; k < fused.data.size(); ++k) {
      EXPECT_NEAR(fused.data[k], staged.data[k], 1e-6);
    }
  }
}

TEST(Generator, OutputBounded) {
  auto f = make(16);
  randomize_adapters(f.gen, 8, 1.0);
  const auto x = testing::random_image(16, 16, 9, -50.0, 50.0);
  const auto y = translate(x, f.cond, f.gen);
  EXPECT_TRUE(y.all_finite());
  for (double v : y.data) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Generator, ConditioningChangesOutputOnceAdapted) {
  auto f = make(16);
  randomize_adapters(f.gen, 10, 0.3);
  const auto c_s = encode_base(tokenize(f.cfg.prompts.source_prompt, f.cfg.model.max_tokens), f.text);
  const auto x = testing::random_image(16, 16, 11);
  EXPECT_NE(translate(x, f.cond, f.gen), translate(x, c_s, f.gen));
}

TEST(Generator, IdentityHook) {
  auto f = make(16);
  f.gen.identity = true;
  const auto x = testing::random_image(16, 16, 12);
  EXPECT_EQ(translate(x, f.cond, f.gen), x);
}

TEST(Generator, SkipConnectionsChangeOutput) {
  auto f = make(16);
  auto cfg = f.cfg;
  cfg.model.vae_skip_connections = true;
  auto skip = init_generator(GeneratorShape::from(cfg), cfg.lora, 4);
  EXPECT_TRUE(skip.base.contains("vae.skip0.w"));
  EXPECT_TRUE(skip.base.contains("vae.skip1.w"));
  EXPECT_FALSE(f.gen.base.contains("vae.skip0.w"));
  randomize(skip.base.get("vae.skip0.w"), 13, 0.5);
  const auto x = testing::random_image(16, 16, 14);
  EXPECT_NE(translate(x, f.cond, skip), translate(x, f.cond, f.gen));
}

TEST(Generator, TrainableParameterCount) {
  auto f = make(16);
  size_t adapter_total = 0;
  for (const auto& layer : generator_adaptable_layers(f.gen.shape)) {
    const int r = std::min({f.cfg.lora.rank, layer.d_in, layer.d_out});
    adapter_total += static_cast<size_t>(r) * (layer.d_in + layer.d_out);
  }
  EXPECT_EQ(trainable_parameter_count(f.gen, TrainingMode::kJoint), adapter_total);
  EXPECT_EQ(trainable_parameter_count(f.gen, TrainingMode::kTwoStage), adapter_total);
  size_t base_total = 0;
  for (const auto& e : f.gen.base.entries()) {
    base_total += e.tensor.size();
  }
  EXPECT_EQ(trainable_parameter_count(f.gen, TrainingMode::kNoLora), base_total);
  auto bare = init_generator(f.gen.shape, f.cfg.lora, 4, false);
  EXPECT_EQ(trainable_parameter_count(bare, TrainingMode::kJoint), 0u);
}

TEST(Generator, AdapterGradientsMatchFiniteDifferences) {
  auto f = make(64);
  randomize_adapters(f.gen, 20, 0.05);
  const ag::Tensor x = image_to_rows(testing::random_image(64, 64, 21));
  auto loss = [&] { return ag::mean_abs_diff(translate_rows(f.gen, x, f.cond.values), x); };

  std::vector<ag::Tensor> params = lora::trainable_parameters(f.gen.adapters);
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  loss().backward();
  double grad_norm = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) {
      grad_norm += g * g;
    }
  }
  EXPECT_GT(grad_norm, 0.0);

  Rng pick(22);
  const double h = 1e-5;
  int checked = 0;
  int attempts = 0;
  while (checked < 20 && attempts < 200) {
    ++attempts;
    auto& p = params[pick.below(params.size())];
    const size_t i = pick.below(p.size());
    const double analytic = p.grad()[i];
    if (std::abs(analytic) < 1e-6) {
      continue;
    }
    const double orig = p.data()[i];
    double up;
    double down;
    {
      ag::NoGradGuard ng;
      p.mutable_data()[i] = orig + h;
      up = loss().item();
      p.mutable_data()[i] = orig - h;
      down = loss().item();
      p.mutable_data()[i] = orig;
    }
    const double numeric = (up - down) / (2 * h);
    EXPECT_LE(std::abs(analytic - numeric), 1e-3 * std::max(std::abs(numeric), 1e-5))
        << "analytic " << analytic << " numeric " << numeric;
    ++checked;
  }
  EXPECT_EQ(checked, 20);
}

}  // namespace
}  // namespace styleloop
