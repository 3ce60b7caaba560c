// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "styleloop/autograd.hpp"
#include "styleloop/config.hpp"
#include "styleloop/lora.hpp"
#include "styleloop/nn.hpp"

namespace styleloop {

constexpr int kVocabSize = 259;
constexpr int kBosId = 256;
constexpr int kEosId = 257;
constexpr int kPadId = 258;

struct TokenSequence {
  std::vector<int> ids;
  std::vector<uint8_t> attention_mask;
};

/// Byte-level: [BOS, bytes..., EOS, PAD...]; the body is truncated so that
/// BOS + body + EOS fits in max_tokens.
TokenSequence tokenize(const std::string& prompt, int max_tokens);

enum class EmbeddingDomain { kBase, kSource, kTarget };

struct ConditioningEmbedding {
  ag::Tensor values;  // [max_tokens x d_cond]
  std::vector<uint8_t> mask;
  EmbeddingDomain domain = EmbeddingDomain::kBase;
};

struct TextEncoderShape {
  int max_tokens = 77;
  int d_model = 64;
  int layers = 2;
  int heads = 4;

  static TextEncoderShape from(const ModelSettings& m) {
    return {m.max_tokens, m.d_model, m.text_layers, m.text_heads};
  }
};

struct TextEncoderWeights {
  TextEncoderShape shape;
  nn::ParameterSet base;
  lora::AdapterSet source_adapters;
  lora::AdapterSet target_adapters;

  const lora::AdapterSet& adapters(EmbeddingDomain d) const;
};

/// Adaptable linear layers (q, k, v, out, ffn1, ffn2 per block).
std::vector<nn::AdaptableLayer> text_adaptable_layers(const TextEncoderShape& shape);

/// Seeded base weights plus zero-delta source/target adapter sets.
TextEncoderWeights init_text_encoder(const TextEncoderShape& shape, const LoraSettings& lora,
                                     uint64_t seed);

/// Forward pass with an optional adapter set. Builds a graph when gradients
/// are enabled.
ag::Tensor encode(const TextEncoderWeights& w, const TokenSequence& tokens,
                  const lora::AdapterSet* adapters);

ConditioningEmbedding encode_base(const TokenSequence& tokens, const TextEncoderWeights& w);
/// `domain` must be kSource or kTarget.
ConditioningEmbedding encode_domain(const TokenSequence& tokens, EmbeddingDomain domain,
                                    const TextEncoderWeights& w);

/// Mean over unpadded positions -> [1 x d_cond].
ag::Tensor pool(const ConditioningEmbedding& e);

struct SeparationReport {
  double mean_within_source = 0.0;
  double mean_within_target = 0.0;
  double mean_between = 0.0;
  double silhouette = 0.0;
};

/// Cosine statistics of pooled embeddings plus a two-cluster silhouette
/// (Euclidean). Within-family means run over distinct pairs; a family of one
/// reports 1.0. Throws Error on an empty family.
SeparationReport embedding_separation(const std::vector<ConditioningEmbedding>& source_embs,
                                      const std::vector<ConditioningEmbedding>& target_embs);

/// Two-cluster silhouette over row vectors; clusters must be non-empty.
double silhouette(const std::vector<std::vector<double>>& a,
                  const std::vector<std::vector<double>>& b);

/// Multi-positive InfoNCE over pooled, L2-normalised embeddings of both
/// families: same family = positive, other family = negative, every
/// embedding serves as an anchor. Throws ConfigError if temperature <= 0.
ag::Tensor separation_loss(const std::vector<ConditioningEmbedding>& c_s,
                           const std::vector<ConditioningEmbedding>& c_t, double temperature);
/// Same loss over already pooled rows.
ag::Tensor separation_loss_pooled(const std::vector<ag::Tensor>& pooled_s,
                                  const std::vector<ag::Tensor>& pooled_t, double temperature);

/// Top-two principal-component projection of the given row vectors.
std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& rows);

}  // namespace styleloop
