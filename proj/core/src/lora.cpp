// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/lora.hpp"

#include <algorithm>

#include "styleloop/error.hpp"
#include "styleloop/rng.hpp"

namespace styleloop::lora {

namespace {

Eigen::MatrixXd to_matrix(const ag::Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (int r = 0; r < t.rows(); ++r) {
    for (int c = 0; c < t.cols(); ++c) {
      m(r, c) = t.at(r, c);
    }
  }
  return m;
}

void check_dims(const Eigen::MatrixXd& w, const LoRAAdapter& adapter) {
  if (w.rows() != adapter.d_out || w.cols() != adapter.d_in) {
    throw ShapeError("adapter '" + adapter.target_layer_id + "' expects a [" +
                     std::to_string(adapter.d_out) + "x" + std::to_string(adapter.d_in) +
                     "] weight, got [" + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                     "]");
  }
}

}  // namespace

Eigen::MatrixXd LoRAAdapter::a_matrix() const { return to_matrix(a); }
Eigen::MatrixXd LoRAAdapter::b_matrix() const { return to_matrix(b); }

LoRAAdapter LoRAAdapter::clone() const {
  LoRAAdapter copy = *this;
  copy.a = a.clone();
  copy.b = b.clone();
  copy.a.set_requires_grad(a.requires_grad());
  copy.b.set_requires_grad(b.requires_grad());
  return copy;
}

const char* to_string(AdapterDomain d) {
  switch (d) {
    case AdapterDomain::kSource:
      return "source";
    case AdapterDomain::kTarget:
      return "target";
    case AdapterDomain::kGenerator:
      return "generator";
  }
  return "unknown";
}

const LoRAAdapter* AdapterSet::find(const std::string& layer_id) const {
  auto it = adapters.find(layer_id);
  return it == adapters.end() ? nullptr : &it->second;
}

AdapterSet AdapterSet::clone() const {
  AdapterSet copy;
  copy.domain = domain;
  for (const auto& [id, a] : adapters) {
    copy.adapters.emplace(id, a.clone());
  }
  return copy;
}

LoRAAdapter init_adapter(int d_in, int d_out, int rank, double alpha, uint64_t seed,
                         std::string layer_id) {
  if (rank < 1) {
    throw ConfigError("LoRA rank must be >= 1");
  }
  if (rank > std::min(d_in, d_out)) {
    throw ConfigError("LoRA rank " + std::to_string(rank) + " exceeds min(d_in, d_out) = " +
                      std::to_string(std::min(d_in, d_out)) +
                      (layer_id.empty() ? std::string() : " for layer '" + layer_id + "'"));
  }
  LoRAAdapter adapter;
  adapter.target_layer_id = std::move(layer_id);
  adapter.d_in = d_in;
  adapter.d_out = d_out;
  adapter.rank = rank;
  adapter.alpha = alpha;
  Rng rng(seed);
  std::vector<double> a(static_cast<size_t>(rank) * d_in);
  for (auto& v : a) {
    v = 0.02 * rng.normal();
  }
  adapter.a = ag::Tensor::from(rank, d_in, std::move(a));
  adapter.b = ag::Tensor::zeros(d_out, rank);
  return adapter;
}

Eigen::VectorXd apply_adapted(const Eigen::MatrixXd& w, const LoRAAdapter& adapter,
                              const Eigen::VectorXd& x) {
  check_dims(w, adapter);
  if (x.size() != adapter.d_in) {
    throw ShapeError("apply_adapted: input length does not match d_in");
  }
  const Eigen::VectorXd ax = adapter.a_matrix() * x;
  return w * x + adapter.scale() * (adapter.b_matrix() * ax);
}

Eigen::MatrixXd merge(const Eigen::MatrixXd& w, const LoRAAdapter& adapter) {
  check_dims(w, adapter);
  return w + adapter.scale() * (adapter.b_matrix() * adapter.a_matrix());
}

std::vector<ag::Tensor> trainable_parameters(const AdapterSet& set) {
  std::vector<ag::Tensor> out;
  out.reserve(set.adapters.size() * 2);
  for (const auto& [id, a] : set.adapters) {
    out.push_back(a.a);
    out.push_back(a.b);
  }
  return out;
}

size_t trainable_parameter_count(const AdapterSet& set) {
  size_t n = 0;
  for (const auto& [id, a] : set.adapters) {
    n += a.parameter_count();
  }
  return n;
}

ag::Tensor adapted_linear(const ag::Tensor& x, const ag::Tensor& weight, const ag::Tensor& bias,
                          const LoRAAdapter* adapter) {
  ag::Tensor y = ag::matmul_nt(x, weight);
  if (bias.defined()) {
    y = ag::add_row(y, bias);
  }
  if (adapter != nullptr) {
    if (adapter->d_in != weight.cols() || adapter->d_out != weight.rows()) {
      throw ShapeError("adapter '" + adapter->target_layer_id + "' does not fit its layer");
    }
    ag::Tensor delta = ag::matmul_nt(ag::matmul_nt(x, adapter->a), adapter->b);
    y = ag::add(y, ag::scale(delta, adapter->scale()));
  }
  return y;
}

ag::Tensor adapted_conv(const ag::Tensor& x, ag::Spatial in, const ag::Tensor& weight,
                        const ag::Tensor& bias, const LoRAAdapter* adapter, int kernel, int stride,
                        int pad) {
  ag::Tensor w = weight;
  if (adapter != nullptr) {
    if (adapter->d_in != weight.cols() || adapter->d_out != weight.rows()) {
      throw ShapeError("adapter '" + adapter->target_layer_id + "' does not fit its layer");
    }
    w = ag::add(weight, ag::scale(ag::matmul(adapter->b, adapter->a), adapter->scale()));
  }
  return ag::conv2d(x, in, w, bias, kernel, stride, pad);
}

}  // namespace styleloop::lora
