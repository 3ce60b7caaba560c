// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "styleloop/autograd.hpp"
#include "styleloop/lora.hpp"

namespace styleloop::nn {

/// Ordered, named collection of leaf tensors (a model's base weights).
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    ag::Tensor tensor;
  };

  ag::Tensor add(const std::string& name, ag::Tensor t);
  ag::Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<ag::Tensor> tensors() const;
  size_t parameter_count() const;
  void set_requires_grad(bool on);

  /// FNV-1a over names, shapes and values.
  uint64_t hash() const;
  ParameterSet clone() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

/// Weight N(0, std^2) drawn from a stream derived from (seed, name).
ag::Tensor gaussian(int rows, int cols, double std, uint64_t seed, const std::string& name);
ag::Tensor filled(int rows, int cols, double value);

/// Shape of a linear map that can carry an adapter.
struct AdaptableLayer {
  std::string id;
  int d_in = 0;
  int d_out = 0;
};

/// One adapter per layer, rank clamped to min(rank, d_in, d_out).
lora::AdapterSet make_adapters(const std::vector<AdaptableLayer>& layers, lora::AdapterDomain domain,
                               int rank, double alpha, uint64_t seed);

/// Throws ShapeError unless every adapter matches a known layer's dimensions.
void check_adapters(const lora::AdapterSet& set, const std::vector<AdaptableLayer>& layers);

uint64_t hash_adapters(const lora::AdapterSet& set);

}  // namespace styleloop::nn
