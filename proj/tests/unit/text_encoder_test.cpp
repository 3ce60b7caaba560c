// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/text_encoder.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "styleloop/error.hpp"
#include "styleloop/rng.hpp"

namespace styleloop {
namespace {

TextEncoderShape small_shape() { return {24, 8, 2, 2}; }

TextEncoderWeights small_encoder(uint64_t seed = 3) {
  LoraSettings lora;
  lora.rank = 2;
  lora.alpha = 2.0;
  return init_text_encoder(small_shape(), lora, seed);
}

void randomize_b(lora::AdapterSet& set, uint64_t seed, double std = 0.3) {
  Rng rng(seed);
  for (auto& [id, a] : set.adapters) {
    for (double& v : a.b.mutable_data()) {
      v = std * rng.normal();
    }
  }
}

bool bit_equal(const ag::Tensor& a, const ag::Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

ConditioningEmbedding constant_embedding(const std::vector<double>& row, int tokens = 3) {
  std::vector<double> v;
  for (int t = 0; t < tokens; ++t) {
    v.insert(v.end(), row.begin(), row.end());
  }
  return {ag::Tensor::from(tokens, static_cast<int>(row.size()), v),
          std::vector<uint8_t>(tokens, 1), EmbeddingDomain::kBase};
}

double brute_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    s += (a[i] - b[i]) * (a[i] - b[i]);
  }
  return std::sqrt(s);
}

// Textbook two-cluster silhouette.
double brute_silhouette(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b) {
  std::vector<std::vector<double>> all = a;
  all.insert(all.end(), b.begin(), b.end());
  double total = 0.0;
  for (size_t i = 0; i < all.size(); ++i) {
    const bool in_a = i < a.size();
    double own = 0.0;
    double other = 0.0;
    size_t n_own = 0;
    size_t n_other = 0;
    for (size_t j = 0; j < all.size(); ++j) {
      if (i == j) {
        continue;
      }
      const double d = brute_distance(all[i], all[j]);
      if ((j < a.size()) == in_a) {
        own += d;
        ++n_own;
      } else {
        other += d;
        ++n_other;
      }
    }
    if (n_own == 0) {
      continue;
    }
    own /= n_own;
    other /= n_other;
    total += (other - own) / std::max(own, other);
  }
  return total / all.size();
}

TEST(Tokenize, EmptyPrompt) {
  const auto t = tokenize("", 8);
  EXPECT_EQ(t.ids, (std::vector<int>{kBosId, kEosId, kPadId, kPadId, kPadId, kPadId, kPadId, kPadId}));
  EXPECT_EQ(t.attention_mask, (std::vector<uint8_t>{1, 1, 0, 0, 0, 0, 0, 0}));
}

TEST(Tokenize, ByteValues) {
  const auto t = tokenize("ab", 77);
  ASSERT_EQ(t.ids.size(), 77u);
  EXPECT_EQ(t.ids[0], kBosId);
  EXPECT_EQ(t.ids[1], 97);
  EXPECT_EQ(t.ids[2], 98);
  EXPECT_EQ(t.ids[3], kEosId);
  EXPECT_EQ(t.ids[4], kPadId);
  const auto u = tokenize("\xc3\xa9", 8);
  EXPECT_EQ(u.ids[1], 0xc3);
  EXPECT_EQ(u.ids[2], 0xa9);
}

TEST(Tokenize, Truncation) {
  const auto t = tokenize(std::string(200, 'x'), 77);
  ASSERT_EQ(t.ids.size(), 77u);
  EXPECT_EQ(t.ids.front(), kBosId);
  EXPECT_EQ(t.ids.back(), kEosId);
  for (int id : t.ids) {
    EXPECT_LT(id, kVocabSize);
  }
  for (uint8_t m : t.attention_mask) {
    EXPECT_EQ(m, 1);
  }
}

TEST(TextEncoder, BaseIsDeterministicWithFixedShape) {
  const auto w = small_encoder();
  const auto tok = tokenize("a natural photograph", 24);
  const auto a = encode_base(tok, w);
  const auto b = encode_base(tok, w);
  EXPECT_EQ(a.values.rows(), 24);
  EXPECT_EQ(a.values.cols(), 8);
  EXPECT_EQ(a.domain, EmbeddingDomain::kBase);
  EXPECT_TRUE(bit_equal(a.values, b.values));
  const auto other = encode_base(tokenize("an oil painting", 24), w);
  EXPECT_FALSE(bit_equal(a.values, other.values));
  for (double v : a.values.data()) {
    EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(TextEncoder, DefaultShapeIs77By64) {
  const auto w = init_text_encoder(TextEncoderShape{}, LoraSettings{}, 1);
  const auto e = encode_base(tokenize("hi", 77), w);
  EXPECT_EQ(e.values.rows(), 77);
  EXPECT_EQ(e.values.cols(), 64);
}

TEST(TextEncoder, ZeroInitDomainEqualsBase) {
  const auto w = small_encoder();
  for (const char* p : {"a natural photograph", "a painting in the style of Van Gogh", ""}) {
    const auto tok = tokenize(p, 24);
    const auto base = encode_base(tok, w);
    const auto s = encode_domain(tok, EmbeddingDomain::kSource, w);
    const auto t = encode_domain(tok, EmbeddingDomain::kTarget, w);
    EXPECT_TRUE(bit_equal(base.values, s.values));
    EXPECT_TRUE(bit_equal(base.values, t.values));
    EXPECT_EQ(s.domain, EmbeddingDomain::kSource);
    EXPECT_EQ(t.domain, EmbeddingDomain::kTarget);
  }
}

TEST(TextEncoder, AdapterFootprint) {
  const auto w = small_encoder();
  const auto layers = text_adaptable_layers(small_shape());
  EXPECT_EQ(layers.size(), 12u);
  EXPECT_EQ(w.source_adapters.adapters.size(), layers.size());
  EXPECT_NE(w.source_adapters.find("text.block0.q"), nullptr);
  EXPECT_NE(w.source_adapters.find("text.block1.ffn2"), nullptr);
  EXPECT_NE(&w.adapters(EmbeddingDomain::kSource), &w.adapters(EmbeddingDomain::kTarget));
}

TEST(TextEncoder, TrainedAdaptersDivergeAndSwap) {
  auto w = small_encoder();
  randomize_b(w.source_adapters, 1);
  randomize_b(w.target_adapters, 2);
  const auto tok = tokenize("a photo", 24);
  const auto s = encode_domain(tok, EmbeddingDomain::kSource, w);
  const auto t = encode_domain(tok, EmbeddingDomain::kTarget, w);
  EXPECT_FALSE(bit_equal(s.values, t.values));

  auto swapped = w;
  std::swap(swapped.source_adapters.adapters, swapped.target_adapters.adapters);
  EXPECT_TRUE(bit_equal(encode_domain(tok, EmbeddingDomain::kSource, swapped).values, t.values));
  EXPECT_TRUE(bit_equal(encode_domain(tok, EmbeddingDomain::kTarget, swapped).values, s.values));
}

TEST(Separation, IdenticalCopies) {
  const auto e = constant_embedding({1.0, 2.0, -0.5});
  const auto r = embedding_separation({e, e}, {e, e});
  EXPECT_NEAR(r.mean_within_source, 1.0, 1e-12);
  EXPECT_NEAR(r.mean_within_target, 1.0, 1e-12);
  EXPECT_NEAR(r.mean_between, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.silhouette, 0.0);
}

TEST(Separation, Antipodal) {
  const auto r = embedding_separation({constant_embedding({1.0, -2.0})},
                                      {constant_embedding({-1.0, 2.0})});
  EXPECT_NEAR(r.mean_between, -1.0, 1e-12);
}

TEST(Separation, PoolingIgnoresPadding) {
  auto e = constant_embedding({1.0, 0.0}, 2);
  e.values.mutable_data()[2] = -50.0;
  e.mask = {1, 0};
  const auto p = pool(e);
  EXPECT_DOUBLE_EQ(p.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(p.at(0, 1), 0.0);
}

TEST(Separation, EmptyFamilyRejected) {
  EXPECT_THROW(embedding_separation({}, {constant_embedding({1.0})}), Error);
}

TEST(Separation, GaussianCloudsSilhouette) {
  Rng rng(77);
  std::vector<std::vector<double>> a;
  std::vector<std::vector<double>> b;
  std::vector<ConditioningEmbedding> ea;
  std::vector<ConditioningEmbedding> eb;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> x(4);
    std::vector<double> y(4);
    for (int d = 0; d < 4; ++d) {
      x[d] = rng.normal();
      y[d] = rng.normal() + (d == 0 ? 10.0 : 0.0);
    }
    a.push_back(x);
    b.push_back(y);
    ea.push_back(constant_embedding(x, 1));
    eb.push_back(constant_embedding(y, 1));
  }
  const double oracle = brute_silhouette(a, b);
  EXPECT_NEAR(silhouette(a, b), oracle, 1e-12);
  EXPECT_GT(oracle, 0.5);
  EXPECT_NEAR(embedding_separation(ea, eb).silhouette, oracle, 1e-12);
}

TEST(SeparationLoss, OrthogonalClustersNearZero) {
  std::vector<ConditioningEmbedding> s(3, constant_embedding({1.0, 0.0, 0.0}));
  std::vector<ConditioningEmbedding> t(3, constant_embedding({0.0, 1.0, 0.0}));
  const double loss = separation_loss(s, t, 0.1).item();
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 0.05);
}

TEST(SeparationLoss, IdenticalBatchesMatchBruteForce) {
  Rng rng(5);
  std::vector<std::vector<double>> rows;
  std::vector<ConditioningEmbedding> batch;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> r = {rng.normal(), rng.normal(), rng.normal()};
    batch.push_back(constant_embedding(r));
    const double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    for (double& v : r) {
      v /= n;
    }
    rows.push_back(r);
  }
  const double tau = 0.5;
  // Six anchors: three source copies then three target copies of the same rows.
  double expected = 0.0;
  for (int i = 0; i < 6; ++i) {
    double all = 0.0;
    double pos = 0.0;
    for (int j = 0; j < 6; ++j) {
      const auto& u = rows[i % 3];
      const auto& v = rows[j % 3];
      const double e = std::exp((u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / tau);
      all += e;
      if ((i < 3) == (j < 3)) {
        pos += e;
      }
    }
    expected += std::log(all / pos);
  }
  expected /= 6;
  EXPECT_NEAR(separation_loss(batch, batch, tau).item(), expected, 1e-10);
  EXPECT_NEAR(expected, std::log(2.0), 1e-12);
}

TEST(SeparationLoss, AntipodalBeatsIdentical) {
  const auto e = constant_embedding({0.3, -0.7});
  const auto neg = constant_embedding({-0.3, 0.7});
  EXPECT_LT(separation_loss({e}, {neg}, 0.1).item(), separation_loss({e}, {e}, 0.1).item());
}

TEST(SeparationLoss, NonPositiveTemperatureRejected) {
  const auto e = constant_embedding({1.0});
  EXPECT_THROW(separation_loss({e}, {e}, 0.0), ConfigError);
  EXPECT_THROW(separation_loss({e}, {e}, -1.0), ConfigError);
}

TEST(SeparationLoss, AdapterGradientsMatchFiniteDifferences) {
  auto w = small_encoder(9);
  randomize_b(w.source_adapters, 11, 0.2);
  randomize_b(w.target_adapters, 12, 0.2);
  const std::vector<TokenSequence> s_tok = {tokenize("a photo", 24), tokenize("a snapshot", 24)};
  const std::vector<TokenSequence> t_tok = {tokenize("a painting", 24), tokenize("oil art", 24)};
  auto loss = [&] {
    std::vector<ConditioningEmbedding> cs;
    std::vector<ConditioningEmbedding> ct;
    for (const auto& t : s_tok) {
      cs.push_back({encode(w, t, &w.source_adapters), t.attention_mask, EmbeddingDomain::kSource});
    }
    for (const auto& t : t_tok) {
      ct.push_back({encode(w, t, &w.target_adapters), t.attention_mask, EmbeddingDomain::kTarget});
    }
    return separation_loss(cs, ct, 0.1);
  };

  std::vector<ag::Tensor> params = lora::trainable_parameters(w.source_adapters);
  for (auto& p : lora::trainable_parameters(w.target_adapters)) {
    params.push_back(p);
  }
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  loss().backward();

  Rng pick(13);
  const double h = 1e-4;
  int checked = 0;
  while (checked < 20) {
    auto& p = params[pick.below(params.size())];
    const size_t i = pick.below(p.size());
    const double analytic = p.grad()[i];
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
    if (std::abs(numeric) < 1e-7 && std::abs(analytic) < 1e-7) {
      continue;
    }
    EXPECT_LE(std::abs(analytic - numeric), 1e-3 * std::max(std::abs(numeric), 1e-4))
        << "analytic " << analytic << " numeric " << numeric;
    ++checked;
  }
}

TEST(Pca, ProjectsLineOntoFirstAxis) {
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 5; ++i) {
    rows.push_back({1.0 * i, 2.0 * i, 0.0});
  }
  const auto p = pca_2d(rows);
  ASSERT_EQ(p.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(std::abs(p[i][0]), std::sqrt(5.0) * std::abs(i - 2.0), 1e-9);
    EXPECT_NEAR(p[i][1], 0.0, 1e-9);
  }
}

}  // namespace
}  // namespace styleloop
