// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/nn.hpp"

#include <algorithm>

#include "styleloop/error.hpp"
#include "styleloop/rng.hpp"

namespace styleloop::nn {

ag::Tensor ParameterSet::add(const std::string& name, ag::Tensor t) {
  if (contains(name)) {
    throw Error("duplicate parameter '" + name + "'");
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({name, t});
  return t;
}

ag::Tensor ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw Error("unknown parameter '" + name + "'");
  }
  return entries_[it->second].tensor;
}

std::vector<ag::Tensor> ParameterSet::tensors() const {
  std::vector<ag::Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) {
    out.push_back(e.tensor);
  }
  return out;
}

size_t ParameterSet::parameter_count() const {
  size_t n = 0;
  for (const auto& e : entries_) {
    n += e.tensor.size();
  }
  return n;
}

void ParameterSet::set_requires_grad(bool on) {
  for (auto& e : entries_) {
    e.tensor.set_requires_grad(on);
  }
}

uint64_t ParameterSet::hash() const {
  Fnv1a h;
  for (const auto& e : entries_) {
    h.str(e.name).u64(static_cast<uint64_t>(e.tensor.rows())).u64(static_cast<uint64_t>(e.tensor.cols()));
    h.doubles(e.tensor.data());
  }
  return h.digest();
}

ParameterSet ParameterSet::clone() const {
  ParameterSet copy;
  for (const auto& e : entries_) {
    ag::Tensor t = e.tensor.clone();
    t.set_requires_grad(e.tensor.requires_grad());
    copy.add(e.name, t);
  }
  return copy;
}

ag::Tensor gaussian(int rows, int cols, double std, uint64_t seed, const std::string& name) {
  Rng rng(derive_seed(seed, name));
  std::vector<double> v(static_cast<size_t>(rows) * cols);
  for (auto& x : v) {
    x = std * rng.normal();
  }
  return ag::Tensor::from(rows, cols, std::move(v));
}

ag::Tensor filled(int rows, int cols, double value) {
  return ag::Tensor::from(rows, cols, std::vector<double>(static_cast<size_t>(rows) * cols, value));
}

lora::AdapterSet make_adapters(const std::vector<AdaptableLayer>& layers, lora::AdapterDomain domain,
                               int rank, double alpha, uint64_t seed) {
  lora::AdapterSet set;
  set.domain = domain;
  const std::string prefix = lora::to_string(domain);
  for (const auto& layer : layers) {
    const int r = std::min({rank, layer.d_in, layer.d_out});
    set.adapters.emplace(layer.id, lora::init_adapter(layer.d_in, layer.d_out, r, alpha,
                                                      derive_seed(seed, prefix + "/" + layer.id),
                                                      layer.id));
  }
  return set;
}

void check_adapters(const lora::AdapterSet& set, const std::vector<AdaptableLayer>& layers) {
  for (const auto& [id, a] : set.adapters) {
    auto it = std::find_if(layers.begin(), layers.end(), [&](const auto& l) { return l.id == id; });
    if (it == layers.end()) {
      throw ShapeError("adapter targets unknown layer '" + id + "'");
    }
    if (it->d_in != a.d_in || it->d_out != a.d_out) {
      throw ShapeError("adapter '" + id + "' is [" + std::to_string(a.d_out) + "x" +
                       std::to_string(a.d_in) + "] but layer is [" + std::to_string(it->d_out) + "x" +
                       std::to_string(it->d_in) + "]");
    }
  }
}

uint64_t hash_adapters(const lora::AdapterSet& set) {
  Fnv1a h;
  for (const auto& [id, a] : set.adapters) {
    h.str(id).u64(static_cast<uint64_t>(a.rank));
    h.doubles(a.a.data());
    h.doubles(a.b.data());
  }
  return h.digest();
}

}  // namespace styleloop::nn
