// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "styleloop/autograd.hpp"

namespace styleloop::lora {

/// Low-rank delta for one linear map: y = W x + (alpha / rank) * B (A x).
///
/// `a` is [rank x d_in] and `b` is [d_out x rank]. Both are autograd leaves so
/// the adapter trains in place; copying an adapter shares its tensors, use
/// `clone()` for an independent copy.
struct LoRAAdapter {
  std::string target_layer_id;
  int d_in = 0;
  int d_out = 0;
  int rank = 0;
  double alpha = 0.0;
  ag::Tensor a;
  ag::Tensor b;

  double scale() const { return alpha / static_cast<double>(rank); }
  size_t parameter_count() const { return static_cast<size_t>(rank) * (d_in + d_out); }
  Eigen::MatrixXd a_matrix() const;
  Eigen::MatrixXd b_matrix() const;
  LoRAAdapter clone() const;
};

enum class AdapterDomain { kSource, kTarget, kGenerator };

const char* to_string(AdapterDomain d);

struct AdapterSet {
  AdapterDomain domain = AdapterDomain::kGenerator;
  std::map<std::string, LoRAAdapter> adapters;

  const LoRAAdapter* find(const std::string& layer_id) const;
  bool empty() const { return adapters.empty(); }
  AdapterSet clone() const;
};

/// A ~ N(0, 0.02^2) from `seed`, B = 0.
/// Throws ConfigError when rank < 1 or rank > min(d_in, d_out).
LoRAAdapter init_adapter(int d_in, int d_out, int rank, double alpha, uint64_t seed,
                         std::string layer_id = {});

/// y = W x + (alpha/rank) B (A x). Throws ShapeError on dimension mismatch.
Eigen::VectorXd apply_adapted(const Eigen::MatrixXd& w, const LoRAAdapter& adapter,
                              const Eigen::VectorXd& x);

/// W + (alpha/rank) B A.
Eigen::MatrixXd merge(const Eigen::MatrixXd& w, const LoRAAdapter& adapter);

/// The A and B leaves of every adapter in layer-id order (A before B).
std::vector<ag::Tensor> trainable_parameters(const AdapterSet& set);
size_t trainable_parameter_count(const AdapterSet& set);

// Graph-building forms used by the models.

/// x[n x d_in] W^T + bias (+ adapter delta, unmerged).
ag::Tensor adapted_linear(const ag::Tensor& x, const ag::Tensor& weight, const ag::Tensor& bias,
                          const LoRAAdapter* adapter);

/// Convolution whose weight, viewed as a [c_out x k*k*c_in] linear map, carries
/// the adapter delta (merged into the weight before the patch GEMM).
ag::Tensor adapted_conv(const ag::Tensor& x, ag::Spatial in, const ag::Tensor& weight,
                        const ag::Tensor& bias, const LoRAAdapter* adapter, int kernel, int stride,
                        int pad);

}  // namespace styleloop::lora
