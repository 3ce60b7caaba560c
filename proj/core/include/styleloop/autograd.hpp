// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Minimal reverse-mode automatic differentiation over row-major 2-D tensors.
//
// Every tensor is a [rows x cols] block of doubles. Feature maps use the
// [height*width x channels] layout so convolutions, attention and linear
// layers all reduce to row-major GEMMs. A graph is built implicitly while
// ops run (unless a NoGradGuard is active) and is released as soon as the
// last handle to its root goes away.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace styleloop::ag {

using Scalar = double;

struct Node {
  int rows = 0;
  int cols = 0;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) {
      grad.assign(value.size(), 0.0);
    }
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor from(int rows, int cols, std::vector<Scalar> values, bool requires_grad = false);
  static Tensor scalar(Scalar v) { return from(1, 1, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  size_t size() const { return node_->value.size(); }

  std::span<const Scalar> data() const { return node_->value; }
  // Direct write access; callers must not mutate a tensor that is part of a live graph.
  std::span<Scalar> mutable_data() { return node_->value; }
  std::span<const Scalar> grad() const { return node_->grad; }
  std::span<Scalar> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  Scalar item() const { return node_->value.at(0); }
  Scalar at(int r, int c) const { return node_->value[static_cast<size_t>(r) * cols() + c]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad();

  // Accumulates d(seed * this)/d(leaf) into every reachable leaf that requires grad.
  void backward(Scalar seed = 1.0) const;

  // Deep copy of the value as a fresh leaf.
  Tensor clone() const;
  // Leaf sharing no graph history with this tensor.
  Tensor detach() const { return clone(); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// When enabled, GEMMs inside matmul/conv run in single precision with double
// accumulation outside the kernel. Off by default.
void set_mixed_precision(bool on);
bool mixed_precision();

class MixedPrecisionScope {
 public:
  explicit MixedPrecisionScope(bool on) : previous_(mixed_precision()) { set_mixed_precision(on); }
  ~MixedPrecisionScope() { set_mixed_precision(previous_); }
  MixedPrecisionScope(const MixedPrecisionScope&) = delete;
  MixedPrecisionScope& operator=(const MixedPrecisionScope&) = delete;

 private:
  bool previous_;
};

// ---- linear algebra -------------------------------------------------------

// a[n x k] * b[m x k]^T -> [n x m]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// a[n x k] * b[k x m] -> [n x m]
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
// a[n x c] + row[1 x c] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor silu(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor tanh(const Tensor& a);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_squares(const Tensor& a);
// mean(|a - b|) as a 1x1 tensor; the subgradient at 0 is 0.
Tensor mean_abs_diff(const Tensor& a, const Tensor& b);
// Mean over rows whose mask entry is non-zero -> [1 x c].
Tensor masked_mean_rows(const Tensor& a, std::span<const uint8_t> mask);

// ---- normalisation --------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = 1e-5);
// Row-wise x / sqrt(|x|^2 + eps).
Tensor l2_normalize_rows(const Tensor& x, Scalar eps = 1e-10);

// ---- structural -----------------------------------------------------------

// Rows of `table` selected by `ids` -> [ids.size() x table.cols()].
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
Tensor stack_rows(std::span<const Tensor> rows);

// ---- spatial (feature maps in [h*w x c] layout) ---------------------------

struct Spatial {
  int height = 0;
  int width = 0;
};

constexpr int conv_out_size(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// Convolution as patch-GEMM. `weight` is [c_out x kernel*kernel*c_in] with
// column order (ky, kx, c_in); `bias` is [1 x c_out] or undefined. Patches
// are rebuilt during backward instead of being kept alive by the graph.
Tensor conv2d(const Tensor& x, Spatial in, const Tensor& weight, const Tensor& bias, int kernel,
              int stride, int pad);
Tensor upsample_nearest(const Tensor& x, Spatial in, Spatial out);

// ---- attention ------------------------------------------------------------

// Multi-head scaled dot-product attention. q[n x d], k/v[m x d]; `key_mask`
// (size m, non-zero = attend) may be empty.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 std::span<const uint8_t> key_mask = {});

// ---- contrastive ----------------------------------------------------------

// Multi-positive InfoNCE over a logit matrix s[N x N]:
//   mean_i [ logsumexp_j s_ij - logsumexp_{j : label_j == label_i} s_ij ].
// The anchor itself counts as a positive; the loss is >= 0 and defined for
// singleton classes.
Tensor multi_positive_nce(const Tensor& logits, std::span<const int> labels);

}  // namespace styleloop::ag
