// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/text_encoder.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "styleloop/error.hpp"

namespace styleloop {

TokenSequence tokenize(const std::string& prompt, int max_tokens) {
  TokenSequence t;
  t.ids.assign(static_cast<size_t>(max_tokens), kPadId);
  t.attention_mask.assign(static_cast<size_t>(max_tokens), 0);
  const size_t body = std::min(prompt.size(), static_cast<size_t>(std::max(max_tokens - 2, 0)));
  size_t pos = 0;
  t.ids[pos] = kBosId;
  t.attention_mask[pos++] = 1;
  for (size_t i = 0; i < body; ++i) {
    t.ids[pos] = static_cast<unsigned char>(prompt[i]);
    t.attention_mask[pos++] = 1;
  }
  t.ids[pos] = kEosId;
  t.attention_mask[pos] = 1;
  return t;
}

const lora::AdapterSet& TextEncoderWeights::adapters(EmbeddingDomain d) const {
  if (d == EmbeddingDomain::kSource) {
    return source_adapters;
  }
  if (d == EmbeddingDomain::kTarget) {
    return target_adapters;
  }
  throw Error("the base encoder has no adapters");
}

namespace {

std::string block_prefix(int b) { return "text.block" + std::to_string(b) + "."; }

ag::Tensor linear(const nn::ParameterSet& p, const std::string& id, const ag::Tensor& x,
                  const lora::AdapterSet* adapters) {
  const lora::LoRAAdapter* a = adapters != nullptr ? adapters->find(id) : nullptr;
  return lora::adapted_linear(x, p.get(id + ".w"), p.get(id + ".b"), a);
}

ag::Tensor norm(const nn::ParameterSet& p, const std::string& id, const ag::Tensor& x) {
  return ag::layer_norm(x, p.get(id + ".g"), p.get(id + ".b"));
}

}  // namespace

std::vector<nn::AdaptableLayer> text_adaptable_layers(const TextEncoderShape& s) {
  std::vector<nn::AdaptableLayer> out;
  const int d = s.d_model;
  for (int b = 0; b < s.layers; ++b) {
    const std::string pre = block_prefix(b);
    out.push_back({pre + "q", d, d});
    out.push_back({pre + "k", d, d});
    out.push_back({pre + "v", d, d});
    out.push_back({pre + "out", d, d});
    out.push_back({pre + "ffn1", d, 4 * d});
    out.push_back({pre + "ffn2", 4 * d, d});
  }
  return out;
}

TextEncoderWeights init_text_encoder(const TextEncoderShape& s, const LoraSettings& lora,
                                     uint64_t seed) {
  TextEncoderWeights w;
  w.shape = s;
  auto& p = w.base;
  const int d = s.d_model;
  auto add_norm = [&](const std::string& id) {
    p.add(id + ".g", nn::filled(1, d, 1.0));
    p.add(id + ".b", nn::filled(1, d, 0.0));
  };
  auto add_linear = [&](const std::string& id, int d_in, int d_out) {
    p.add(id + ".w", nn::gaussian(d_out, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)), seed,
                                  id + ".w"));
    p.add(id + ".b", nn::filled(1, d_out, 0.0));
  };
  p.add("text.tok_emb", nn::gaussian(kVocabSize, d, 1.0, seed, "text.tok_emb"));
  p.add("text.pos_emb", nn::gaussian(s.max_tokens, d, 0.1, seed, "text.pos_emb"));
  for (const auto& layer : text_adaptable_layers(s)) {
    if (layer.id.ends_with(".q")) {
      add_norm(layer.id.substr(0, layer.id.size() - 1) + "ln1");
    }
    if (layer.id.ends_with(".ffn1")) {
      add_norm(layer.id.substr(0, layer.id.size() - 4) + "ln2");
    }
    add_linear(layer.id, layer.d_in, layer.d_out);
  }
  add_norm("text.ln_f");
  w.source_adapters = nn::make_adapters(text_adaptable_layers(s), lora::AdapterDomain::kSource,
                                        lora.rank, lora.alpha, seed);
  w.target_adapters = nn::make_adapters(text_adaptable_layers(s), lora::AdapterDomain::kTarget,
                                        lora.rank, lora.alpha, seed);
  return w;
}

ag::Tensor encode(const TextEncoderWeights& w, const TokenSequence& tokens,
                  const lora::AdapterSet* adapters) {
  const auto& s = w.shape;
  if (static_cast<int>(tokens.ids.size()) != s.max_tokens ||
      tokens.attention_mask.size() != tokens.ids.size()) {
    throw ShapeError("token sequence length " + std::to_string(tokens.ids.size()) +
                     " does not match max_tokens " + std::to_string(s.max_tokens));
  }
  if (adapters != nullptr) {
    nn::check_adapters(*adapters, text_adaptable_layers(s));
  }
  const auto& p = w.base;
  ag::Tensor x = ag::add(ag::gather_rows(p.get("text.tok_emb"), tokens.ids), p.get("text.pos_emb"));
  for (int b = 0; b < s.layers; ++b) {
    const std::string pre = block_prefix(b);
    const ag::Tensor h = norm(p, pre + "ln1", x);
    const ag::Tensor q = linear(p, pre + "q", h, adapters);
    const ag::Tensor k = linear(p, pre + "k", h, adapters);
    const ag::Tensor v = linear(p, pre + "v", h, adapters);
    const ag::Tensor att = ag::attention(q, k, v, s.heads, tokens.attention_mask);
    x = ag::add(x, linear(p, pre + "out", att, adapters));
    const ag::Tensor h2 = norm(p, pre + "ln2", x);
    const ag::Tensor f = linear(p, pre + "ffn2", ag::gelu(linear(p, pre + "ffn1", h2, adapters)),
                                adapters);
    x = ag::add(x, f);
  }
  return norm(p, "text.ln_f", x);
}

ConditioningEmbedding encode_base(const TokenSequence& tokens, const TextEncoderWeights& w) {
  ag::NoGradGuard guard;
  return {encode(w, tokens, nullptr), tokens.attention_mask, EmbeddingDomain::kBase};
}

ConditioningEmbedding encode_domain(const TokenSequence& tokens, EmbeddingDomain domain,
                                    const TextEncoderWeights& w) {
  ag::NoGradGuard guard;
  return {encode(w, tokens, &w.adapters(domain)), tokens.attention_mask, domain};
}

ag::Tensor pool(const ConditioningEmbedding& e) { return ag::masked_mean_rows(e.values, e.mask); }

namespace {

std::vector<std::vector<double>> pooled_rows(const std::vector<ConditioningEmbedding>& embs) {
  ag::NoGradGuard guard;
  std::vector<std::vector<double>> out;
  for (const auto& e : embs) {
    const auto t = pool(e);
    out.emplace_back(t.data().begin(), t.data().end());
  }
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  const double den = std::sqrt(dot(a, a) * dot(b, b));
  return den > 0.0 ? dot(a, b) / den : 0.0;
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    s += (a[i] - b[i]) * (a[i] - b[i]);
  }
  return std::sqrt(s);
}

double mean_within(const std::vector<std::vector<double>>& v) {
  if (v.size() < 2) {
    return 1.0;
  }
  double s = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < v.size(); ++i) {
    for (size_t j = i + 1; j < v.size(); ++j) {
      s += cosine(v[i], v[j]);
      ++n;
    }
  }
  return s / static_cast<double>(n);
}

}  // namespace

double silhouette(const std::vector<std::vector<double>>& a,
                  const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) {
    throw Error("silhouette needs two non-empty clusters");
  }
  auto mean_dist = [](const std::vector<double>& x, const std::vector<std::vector<double>>& set,
                      const std::vector<double>* skip) {
    double s = 0.0;
    size_t n = 0;
    for (const auto& y : set) {
      if (&y == skip) {
        continue;
      }
      s += distance(x, y);
      ++n;
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
  };
  double total = 0.0;
  for (const auto* own : {&a, &b}) {
    const auto& other = own == &a ? b : a;
    for (const auto& x : *own) {
      if (own->size() < 2) {
        continue;  // singleton clusters score 0
      }
      const double ai = mean_dist(x, *own, &x);
      const double bi = mean_dist(x, other, nullptr);
      const double den = std::max(ai, bi);
      total += den > 0.0 ? (bi - ai) / den : 0.0;
    }
  }
  return total / static_cast<double>(a.size() + b.size());
}

SeparationReport embedding_separation(const std::vector<ConditioningEmbedding>& source_embs,
                                      const std::vector<ConditioningEmbedding>& target_embs) {
  if (source_embs.empty() || target_embs.empty()) {
    throw Error("embedding_separation: both embedding families must be non-empty");
  }
  const auto s = pooled_rows(source_embs);
  const auto t = pooled_rows(target_embs);
  SeparationReport r;
  r.mean_within_source = mean_within(s);
  r.mean_within_target = mean_within(t);
  double between = 0.0;
  for (const auto& x : s) {
    for (const auto& y : t) {
      between += cosine(x, y);
    }
  }
  r.mean_between = between / static_cast<double>(s.size() * t.size());
  r.silhouette = silhouette(s, t);
  return r;
}

ag::Tensor separation_loss_pooled(const std::vector<ag::Tensor>& pooled_s,
                                  const std::vector<ag::Tensor>& pooled_t, double temperature) {
  if (!(temperature > 0.0)) {
    throw ConfigError("separation temperature must be > 0");
  }
  if (pooled_s.empty() || pooled_t.empty()) {
    throw Error("separation_loss: both batches must be non-empty");
  }
  std::vector<ag::Tensor> rows(pooled_s);
  rows.insert(rows.end(), pooled_t.begin(), pooled_t.end());
  std::vector<int> labels(pooled_s.size(), 0);
  labels.resize(rows.size(), 1);
  const ag::Tensor z = ag::l2_normalize_rows(ag::stack_rows(rows));
  const ag::Tensor logits = ag::scale(ag::matmul_nt(z, z), 1.0 / temperature);
  return ag::multi_positive_nce(logits, labels);
}

ag::Tensor separation_loss(const std::vector<ConditioningEmbedding>& c_s,
                           const std::vector<ConditioningEmbedding>& c_t, double temperature) {
  std::vector<ag::Tensor> ps;
  std::vector<ag::Tensor> pt;
  for (const auto& e : c_s) {
    ps.push_back(pool(e));
  }
  for (const auto& e : c_t) {
    pt.push_back(pool(e));
  }
  return separation_loss_pooled(ps, pt, temperature);
}

std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& rows) {
  std::vector<std::array<double, 2>> out(rows.size(), {0.0, 0.0});
  if (rows.empty()) {
    return out;
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      x(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
  }
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = x.transpose() * x;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  for (int c = 0; c < 2 && c < d; ++c) {
    Eigen::VectorXd axis = eig.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0.0) {
      axis = -axis;
    }
    const Eigen::VectorXd proj = x * axis;
    for (Eigen::Index i = 0; i < n; ++i) {
      out[static_cast<size_t>(i)][static_cast<size_t>(c)] = proj(i);
    }
  }
  return out;
}

}  // namespace styleloop
