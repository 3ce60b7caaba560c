// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "styleloop/autograd.hpp"
#include "styleloop/image.hpp"
#include "styleloop/nn.hpp"

namespace styleloop {

/// Frozen, seed-initialised three-layer conv net (16, 32/2, 64/2 channels,
/// SiLU) used for the perceptual loss and the LPIPS metric.
class PerceptualNet {
 public:
  static constexpr int kLayers = 3;

  explicit PerceptualNet(uint64_t seed);

  uint64_t seed() const { return seed_; }
  const nn::ParameterSet& parameters() const { return params_; }

  /// Per-layer feature maps, each unit-normalised per pixel across channels.
  std::vector<ag::Tensor> features(const ag::Tensor& image_rows, int height, int width) const;

  /// Sum over layers of the per-pixel mean squared distance between
  /// normalised features. Graph form; gradients flow into both inputs.
  ag::Tensor distance(const ag::Tensor& a_rows, const ag::Tensor& b_rows, int height,
                      int width) const;
  double distance(const ImageTensor& a, const ImageTensor& b) const;

 private:
  uint64_t seed_;
  nn::ParameterSet params_;
};

/// Seeded three stride-2 convs followed by global average pooling; the
/// built-in stand-in for a pretrained image feature extractor.
class ToyFeatureExtractor {
 public:
  static constexpr int kDim = 64;

  explicit ToyFeatureExtractor(uint64_t seed);
  std::vector<double> operator()(const ImageTensor& img) const;

 private:
  nn::ParameterSet params_;
};

}  // namespace styleloop
