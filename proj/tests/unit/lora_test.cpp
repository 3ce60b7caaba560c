// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/lora.hpp"

#include <gtest/gtest.h>

#include "styleloop/error.hpp"
#include "styleloop/nn.hpp"
#include "styleloop/rng.hpp"

namespace styleloop::lora {
namespace {

// W = I2, r = 1, A = [[1, 0]], B = [[0], [1]].
LoRAAdapter hand_adapter(double alpha) {
  LoRAAdapter a = init_adapter(2, 2, 1, alpha, 1);
  a.a = ag::Tensor::from(1, 2, {1.0, 0.0});
  a.b = ag::Tensor::from(2, 1, {0.0, 1.0});
  return a;
}

Eigen::MatrixXd random_matrix(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      m(r, c) = rng.normal();
    }
  }
  return m;
}

TEST(Lora, InitShapesAndZeroB) {
  const auto a = init_adapter(8, 5, 3, 6.0, 11, "layer");
  EXPECT_EQ(a.a.rows(), 3);
  EXPECT_EQ(a.a.cols(), 8);
  EXPECT_EQ(a.b.rows(), 5);
  EXPECT_EQ(a.b.cols(), 3);
  EXPECT_DOUBLE_EQ(a.scale(), 2.0);
  EXPECT_EQ(a.target_layer_id, "layer");
  for (double v : a.b.data()) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(Lora, InitIsSeedDeterministic) {
  const auto x = init_adapter(16, 16, 4, 4.0, 99);
  const auto y = init_adapter(16, 16, 4, 4.0, 99);
  const auto z = init_adapter(16, 16, 4, 4.0, 100);
  EXPECT_TRUE(std::equal(x.a.data().begin(), x.a.data().end(), y.a.data().begin()));
  EXPECT_FALSE(std::equal(x.a.data().begin(), x.a.data().end(), z.a.data().begin()));
}

TEST(Lora, InitStdIsAboutPointZeroTwo) {
  const auto a = init_adapter(256, 256, 16, 16.0, 5);
  double ss = 0.0;
  double s = 0.0;
  for (double v : a.a.data()) {
    s += v;
    ss += v * v;
  }
  const double n = static_cast<double>(a.a.size());
  EXPECT_NEAR(s / n, 0.0, 0.001);
  EXPECT_NEAR(std::sqrt(ss / n), 0.02, 0.001);
}

TEST(Lora, RankTooLargeRejected) {
  EXPECT_THROW(init_adapter(4, 4, 5, 1.0, 1), ConfigError);
  EXPECT_THROW(init_adapter(4, 4, 0, 1.0, 1), ConfigError);
}

TEST(Lora, FreshAdapterHasZeroDelta) {
  const auto a = init_adapter(6, 4, 2, 2.0, 3);
  const Eigen::MatrixXd w = random_matrix(4, 6, 4);
  const Eigen::VectorXd x = random_matrix(6, 1, 5);
  EXPECT_EQ(apply_adapted(w, a, x), w * x);
  EXPECT_EQ(merge(w, a), w);
}

TEST(Lora, HandComputedApply) {
  const Eigen::MatrixXd w = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::Vector2d x(1.0, 2.0);
  EXPECT_EQ(apply_adapted(w, hand_adapter(1.0), x), Eigen::Vector2d(1.0, 3.0));
  EXPECT_EQ(apply_adapted(w, hand_adapter(2.0), x), Eigen::Vector2d(1.0, 4.0));
  Eigen::Matrix2d merged;
  merged << 1.0, 0.0, 1.0, 1.0;
  EXPECT_EQ(merge(w, hand_adapter(1.0)), merged);
}

TEST(Lora, ShapeMismatchRejected) {
  const auto a = init_adapter(3, 3, 1, 1.0, 1);
  EXPECT_THROW(apply_adapted(Eigen::MatrixXd::Identity(3, 3), a, Eigen::VectorXd::Ones(2)), ShapeError);
  EXPECT_THROW(merge(Eigen::MatrixXd::Identity(2, 2), a), ShapeError);
}

TEST(Lora, MergeMatchesApplyOnRandomVectors) {
  auto a = init_adapter(12, 9, 3, 5.0, 17);
  Rng rng(18);
  for (double& v : a.b.mutable_data()) {
    v = rng.normal();
  }
  const Eigen::MatrixXd w = random_matrix(9, 12, 19);
  const Eigen::MatrixXd merged = merge(w, a);
  for (int i = 0; i < 100; ++i) {
    const Eigen::VectorXd x = random_matrix(12, 1, 100 + i);
    const Eigen::VectorXd y = apply_adapted(w, a, x);
    const Eigen::VectorXd m = merged * x;
    EXPECT_LE((m - y).cwiseAbs().maxCoeff(), 1e-6 * (1.0 + y.norm()));
  }
}

TEST(Lora, DeltaIsLinearInAlpha) {
  auto a1 = init_adapter(5, 5, 2, 1.0, 21);
  Rng rng(22);
  for (double& v : a1.b.mutable_data()) {
    v = rng.normal();
  }
  auto a3 = a1.clone();
  a3.alpha = 3.0;
  const Eigen::MatrixXd w = Eigen::MatrixXd::Zero(5, 5);
  const Eigen::VectorXd x = random_matrix(5, 1, 23);
  EXPECT_LE((apply_adapted(w, a3, x) - 3.0 * apply_adapted(w, a1, x)).norm(), 1e-12);
}

TEST(Lora, TrainableParameterCounts) {
  AdapterSet empty;
  EXPECT_EQ(trainable_parameter_count(empty), 0u);
  EXPECT_TRUE(trainable_parameters(empty).empty());

  AdapterSet one;
  one.adapters.emplace("x", init_adapter(8, 8, 2, 2.0, 1, "x"));
  EXPECT_EQ(trainable_parameter_count(one), 32u);
  const auto params = trainable_parameters(one);
  ASSERT_EQ(params.size(), 2u);
  EXPECT_EQ(params[0].size() + params[1].size(), 32u);

  AdapterSet two = one.clone();
  two.adapters.emplace("y", init_adapter(10, 6, 3, 3.0, 2, "y"));
  EXPECT_EQ(trainable_parameter_count(two), 32u + 48u);
}

TEST(Lora, AdaptedLinearMatchesApply) {
  auto a = init_adapter(4, 3, 2, 2.0, 31);
  Rng rng(32);
  for (double& v : a.b.mutable_data()) {
    v = rng.normal();
  }
  const Eigen::MatrixXd w = random_matrix(3, 4, 33);
  std::vector<double> wv;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      wv.push_back(w(r, c));
    }
  }
  const Eigen::VectorXd x = random_matrix(4, 1, 34);
  auto y = adapted_linear(ag::Tensor::from(1, 4, {x(0), x(1), x(2), x(3)}),
                          ag::Tensor::from(3, 4, wv), ag::Tensor(), &a);
  const Eigen::VectorXd ref = apply_adapted(w, a, x);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(y.at(0, i), ref(i), 1e-12);
  }
}

TEST(Lora, MakeAdaptersClampsAndChecks) {
  const std::vector<nn::AdaptableLayer> layers = {{"big", 16, 16}, {"thin", 2, 16}};
  const auto set = nn::make_adapters(layers, AdapterDomain::kSource, 4, 4.0, 7);
  EXPECT_EQ(set.domain, AdapterDomain::kSource);
  EXPECT_EQ(set.find("big")->rank, 4);
  EXPECT_EQ(set.find("thin")->rank, 2);
  EXPECT_EQ(set.find("missing"), nullptr);
  EXPECT_NO_THROW(nn::check_adapters(set, layers));
  const std::vector<nn::AdaptableLayer> wrong = {{"big", 16, 8}, {"thin", 2, 16}};
  EXPECT_THROW(nn::check_adapters(set, wrong), ShapeError);
}

}  // namespace
}  // namespace styleloop::lora
