// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/perceptual.hpp"

#include <cmath>
#include <string>

#include "styleloop/error.hpp"

namespace styleloop {

namespace {

struct Layer {
  int c_in;
  int c_out;
  int stride;
};

constexpr Layer kPerceptualLayers[] = {{3, 16, 1}, {16, 32, 2}, {32, 64, 2}};
constexpr Layer kExtractorLayers[] = {{3, 16, 2}, {16, 32, 2}, {32, 64, 2}};

template <size_t N>
nn::ParameterSet make_convs(const Layer (&layers)[N], uint64_t seed, const std::string& prefix) {
  nn::ParameterSet p;
  for (size_t i = 0; i < N; ++i) {
    const std::string id = prefix + std::to_string(i);
    const int fan_in = 9 * layers[i].c_in;
    p.add(id + ".w", nn::gaussian(layers[i].c_out, fan_in, std::sqrt(2.0 / fan_in), seed, id + ".w"));
    p.add(id + ".b", nn::gaussian(1, layers[i].c_out, 0.1, seed, id + ".b"));
  }
  return p;
}

}  // namespace

PerceptualNet::PerceptualNet(uint64_t seed)
    : seed_(seed), params_(make_convs(kPerceptualLayers, seed, "perceptual.conv")) {}

std::vector<ag::Tensor> PerceptualNet::features(const ag::Tensor& image_rows, int height,
                                                int width) const {
  if (image_rows.rows() != height * width || image_rows.cols() != 3) {
    throw ShapeError("perceptual net expects a [h*w x 3] image");
  }
  std::vector<ag::Tensor> out;
  ag::Tensor x = image_rows;
  ag::Spatial s{height, width};
  for (int i = 0; i < kLayers; ++i) {
    const std::string id = "perceptual.conv" + std::to_string(i);
    const int stride = kPerceptualLayers[i].stride;
    x = ag::silu(ag::conv2d(x, s, params_.get(id + ".w"), params_.get(id + ".b"), 3, stride, 1));
    s = {ag::conv_out_size(s.height, 3, stride, 1), ag::conv_out_size(s.width, 3, stride, 1)};
    out.push_back(ag::l2_normalize_rows(x));
  }
  return out;
}

ag::Tensor PerceptualNet::distance(const ag::Tensor& a_rows, const ag::Tensor& b_rows, int height,
                                   int width) const {
  if (a_rows.rows() != b_rows.rows() || a_rows.cols() != b_rows.cols()) {
    throw ShapeError("perceptual distance: image shapes differ");
  }
  const auto fa = features(a_rows, height, width);
  const auto fb = features(b_rows, height, width);
  ag::Tensor total;
  for (size_t l = 0; l < fa.size(); ++l) {
    const ag::Tensor d = ag::scale(ag::sum_squares(ag::sub(fa[l], fb[l])), 1.0 / fa[l].rows());
    total = total.defined() ? ag::add(total, d) : d;
  }
  return total;
}

double PerceptualNet::distance(const ImageTensor& a, const ImageTensor& b) const {
  if (!a.same_shape(b)) {
    throw ShapeError("perceptual distance: image shapes differ");
  }
  ag::NoGradGuard guard;
  return distance(image_to_rows(a), image_to_rows(b), a.height, a.width).item();
}

ToyFeatureExtractor::ToyFeatureExtractor(uint64_t seed)
    : params_(make_convs(kExtractorLayers, seed, "extractor.conv")) {}

std::vector<double> ToyFeatureExtractor::operator()(const ImageTensor& img) const {
  ag::NoGradGuard guard;
  ag::Tensor x = image_to_rows(img);
  ag::Spatial s{img.height, img.width};
  for (int i = 0; i < 3; ++i) {
    const std::string id = "extractor.conv" + std::to_string(i);
    x = ag::silu(ag::conv2d(x, s, params_.get(id + ".w"), params_.get(id + ".b"), 3, 2, 1));
    s = {ag::conv_out_size(s.height, 3, 2, 1), ag::conv_out_size(s.width, 3, 2, 1)};
  }
  std::vector<double> f(kDim, 0.0);
  const auto d = x.data();
  for (int r = 0; r < x.rows(); ++r) {
    for (int c = 0; c < kDim; ++c) {
      f[static_cast<size_t>(c)] += d[static_cast<size_t>(r) * kDim + c];
    }
  }
  for (auto& v : f) {
    v /= x.rows();
  }
  return f;
}

}  // namespace styleloop
