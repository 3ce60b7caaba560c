// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "styleloop/autograd.hpp"
#include "styleloop/config.hpp"
#include "styleloop/image.hpp"
#include "styleloop/lora.hpp"
#include "styleloop/nn.hpp"
#include "styleloop/text_encoder.hpp"

namespace styleloop {

struct GeneratorShape {
  int image_size = 256;
  std::array<int, 3> vae_channels = {32, 64, 128};
  int latent_channels = 4;
  int unet_channels = 64;
  int unet_heads = 4;
  int d_cond = 64;
  bool vae_skip_connections = false;

  static GeneratorShape from(const ExperimentConfig& cfg);
  int latent_size() const { return image_size / kVaeDownsample; }
};

/// Latent feature map in [h*w x channels] layout.
struct LatentTensor {
  int height = 0;
  int width = 0;
  ag::Tensor rows;

  int channels() const { return rows.cols(); }
};

struct GeneratorWeights {
  GeneratorShape shape;
  nn::ParameterSet base;   // "vae.*" and "unet.*" (unet.t_emb is the fixed timestep embedding)
  lora::AdapterSet adapters;  // empty in no_lora mode
  /// Test hook: translate returns its input unchanged.
  bool identity = false;

  uint64_t base_hash() const { return base.hash(); }
};

/// VAE convolutions and UNet attention/FFN projections, as linear maps.
std::vector<nn::AdaptableLayer> generator_adaptable_layers(const GeneratorShape& shape);

/// Seeded base weights plus zero-delta generator adapters (none when
/// `with_adapters` is false).
GeneratorWeights init_generator(const GeneratorShape& shape, const LoraSettings& lora, uint64_t seed,
                                bool with_adapters = true);

// Graph forms over [h*w x c] feature maps.
struct EncoderFeatures {
  LatentTensor latent;
  std::vector<ag::Tensor> skips;  // filled only when skip connections are on
};
EncoderFeatures encode_latent(const GeneratorWeights& w, const ag::Tensor& image_rows);
ag::Tensor decode_latent(const GeneratorWeights& w, const LatentTensor& z,
                         const std::vector<ag::Tensor>& skips = {});
LatentTensor unet_forward(const GeneratorWeights& w, const LatentTensor& z, const ag::Tensor& cond);
/// decode(unet(encode(x), cond)); one pass, no noise.
ag::Tensor translate_rows(const GeneratorWeights& w, const ag::Tensor& image_rows,
                          const ag::Tensor& cond);

// Value forms (no graph).
LatentTensor vae_encode(const ImageTensor& img, const GeneratorWeights& w);
ImageTensor vae_decode(const LatentTensor& z, const GeneratorWeights& w);
LatentTensor unet(const LatentTensor& z, const ConditioningEmbedding& c, const GeneratorWeights& w);
ImageTensor translate(const ImageTensor& img, const ConditioningEmbedding& c,
                      const GeneratorWeights& w);

/// Adapter parameters in joint/two_stage, full base in no_lora.
size_t trainable_parameter_count(const GeneratorWeights& w, TrainingMode mode);

}  // namespace styleloop
