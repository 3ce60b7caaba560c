// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <unordered_set>
#include <utility>

#include "styleloop/error.hpp"

namespace styleloop::ag {

namespace {

thread_local bool g_grad_enabled = true;
thread_local bool g_mixed_precision = false;

using MatR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

CMapR cmap(const Node& n) { return CMapR(n.value.data(), n.rows, n.cols); }
CMapR cgrad(const Node& n) { return CMapR(n.grad.data(), n.rows, n.cols); }
MapR gmap(Node& n) {
  n.ensure_grad();
  return MapR(n.grad.data(), n.rows, n.cols);
}

// out += alpha * lhs * rhs, honouring the mixed-precision switch.
template <typename Out, typename Lhs, typename Rhs>
void gemm_acc(Out&& out, const Lhs& lhs, const Rhs& rhs, Scalar alpha = 1.0) {
  if (g_mixed_precision) {
    Eigen::MatrixXf l = lhs.template cast<float>();
    Eigen::MatrixXf r = rhs.template cast<float>();
    Eigen::MatrixXf p = l * r;
    out += alpha * p.cast<Scalar>();
  } else {
    out.noalias() += alpha * lhs * rhs;
  }
}

std::shared_ptr<Node> new_node(int rows, int cols) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(static_cast<size_t>(rows) * cols, 0.0);
  return n;
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) {
    return false;
  }
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) {
      return true;
    }
  }
  return false;
}

Tensor finish(std::shared_ptr<Node> out, std::initializer_list<const Tensor*> inputs,
              std::function<void(Node&)> backward) {
  if (wants_grad(inputs)) {
    out->requires_grad = true;
    for (const Tensor* t : inputs) {
      out->parents.push_back(t != nullptr && t->defined() ? t->shared() : nullptr);
    }
    out->backward = std::move(backward);
  }
  return Tensor(std::move(out));
}

bool flows(const std::shared_ptr<Node>& p) { return p && p->requires_grad; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch [" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + "] vs [" + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + "]");
  }
}

template <typename F>
Tensor unary(const Tensor& a, F&& fwd) {
  auto out = new_node(a.rows(), a.cols());
  const auto& in = a.node()->value;
  for (size_t i = 0; i < in.size(); ++i) {
    out->value[i] = fwd(in[i]);
  }
  return Tensor(std::move(out));
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  auto n = new_node(rows, cols);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(int rows, int cols, std::vector<Scalar> values, bool requires_grad) {
  if (values.size() != static_cast<size_t>(rows) * cols) {
    throw ShapeError("Tensor::from: value count does not match shape");
  }
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

void Tensor::zero_grad() {
  if (node_) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

Tensor Tensor::clone() const {
  auto n = std::make_shared<Node>();
  n->rows = node_->rows;
  n->cols = node_->cols;
  n->value = node_->value;
  return Tensor(std::move(n));
}

void Tensor::backward(Scalar seed) const {
  if (!node_ || !node_->requires_grad) {
    return;
  }
  // Iterative post-order DFS over the grad-carrying subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p != nullptr && p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  for (auto& g : node_->grad) {
    g += seed;
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) {
      continue;  // leaf
    }
    n->ensure_grad();
    n->backward(*n);
    // Interior gradients are released after use.
    std::vector<Scalar>().swap(n->grad);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_mixed_precision(bool on) { g_mixed_precision = on; }
bool mixed_precision() { return g_mixed_precision; }

// ---- linear algebra -------------------------------------------------------

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions differ");
  }
  auto out = new_node(a.rows(), b.rows());
  MapR(out->value.data(), out->rows, out->cols).setZero();
  {
    MapR o(out->value.data(), out->rows, out->cols);
    gemm_acc(o, cmap(*a.node()), cmap(*b.node()).transpose());
  }
  return finish(std::move(out), {&a, &b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (flows(pa)) {
      gemm_acc(gmap(*pa), cgrad(self), cmap(*pb));
    }
    if (flows(pb)) {
      gemm_acc(gmap(*pb), cgrad(self).transpose(), cmap(*pa));
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ");
  }
  auto out = new_node(a.rows(), b.cols());
  {
    MapR o(out->value.data(), out->rows, out->cols);
    gemm_acc(o, cmap(*a.node()), cmap(*b.node()));
  }
  return finish(std::move(out), {&a, &b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (flows(pa)) {
      gemm_acc(gmap(*pa), cgrad(self), cmap(*pb).transpose());
    }
    if (flows(pb)) {
      gemm_acc(gmap(*pb), cmap(*pa).transpose(), cgrad(self));
    }
  });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto out = new_node(a.rows(), a.cols());
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  for (size_t i = 0; i < x.size(); ++i) {
    out->value[i] = x[i] + y[i];
  }
  return finish(std::move(out), {&a, &b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (flows(p)) {
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
          p->grad[i] += self.grad[i];
        }
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto out = new_node(a.rows(), a.cols());
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  for (size_t i = 0; i < x.size(); ++i) {
    out->value[i] = x[i] - y[i];
  }
  return finish(std::move(out), {&a, &b}, [](Node& self) {
    if (flows(self.parents[0])) {
      auto& g = self.parents[0];
      g->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        g->grad[i] += self.grad[i];
      }
    }
    if (flows(self.parents[1])) {
      auto& g = self.parents[1];
      g->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        g->grad[i] -= self.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto out = new_node(a.rows(), a.cols());
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  for (size_t i = 0; i < x.size(); ++i) {
    out->value[i] = x[i] * y[i];
  }
  return finish(std::move(out), {&a, &b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (flows(pa)) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        pa->grad[i] += self.grad[i] * pb->value[i];
      }
    }
    if (flows(pb)) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        pb->grad[i] += self.grad[i] * pa->value[i];
      }
    }
  });
}

Tensor scale(const Tensor& a, Scalar s) {
  auto out = unary(a, [s](Scalar v) { return v * s; });
  return finish(out.shared(), {&a}, [s](Node& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      p->grad[i] += s * self.grad[i];
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: row must be [1 x cols]");
  }
  auto out = new_node(a.rows(), a.cols());
  const int n = a.rows();
  const int c = a.cols();
  const auto& x = a.node()->value;
  const auto& r = row.node()->value;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      out->value[static_cast<size_t>(i) * c + j] = x[static_cast<size_t>(i) * c + j] + r[j];
    }
  }
  return finish(std::move(out), {&a, &row}, [n, c](Node& self) {
    auto& pa = self.parents[0];
    auto& pr = self.parents[1];
    if (flows(pa)) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        pa->grad[i] += self.grad[i];
      }
    }
    if (flows(pr)) {
      pr->ensure_grad();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
          pr->grad[j] += self.grad[static_cast<size_t>(i) * c + j];
        }
      }
    }
  });
}

Tensor silu(const Tensor& a) {
  auto out = unary(a, [](Scalar v) { return v / (1.0 + std::exp(-v)); });
  return finish(out.shared(), {&a}, [](Node& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const Scalar x = p->value[i];
      const Scalar sg = 1.0 / (1.0 + std::exp(-x));
      p->grad[i] += self.grad[i] * sg * (1.0 + x * (1.0 - sg));
    }
  });
}

Tensor gelu(const Tensor& a) {
  constexpr Scalar kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr Scalar kK = 0.044715;
  auto out = unary(a, [](Scalar x) { return 0.5 * x * (1.0 + std::tanh(kC * (x + kK * x * x * x))); });
  return finish(out.shared(), {&a}, [](Node& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const Scalar x = p->value[i];
      const Scalar t = std::tanh(kC * (x + kK * x * x * x));
      const Scalar d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * kK * x * x);
      p->grad[i] += self.grad[i] * d;
    }
  });
}

Tensor tanh(const Tensor& a) {
  auto out = unary(a, [](Scalar v) { return std::tanh(v); });
  return finish(out.shared(), {&a}, [](Node& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const Scalar y = self.value[i];
      p->grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a) {
  Scalar s = 0.0;
  for (Scalar v : a.data()) {
    s += v;
  }
  auto out = new_node(1, 1);
  out->value[0] = s;
  return finish(std::move(out), {&a}, [](Node& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (auto& g : p->grad) {
      g += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<Scalar>(a.size())); }

Tensor sum_squares(const Tensor& a) {
  Scalar s = 0.0;
  for (Scalar v : a.data()) {
    s += v * v;
  }
  auto out = new_node(1, 1);
  out->value[0] = s;
  return finish(std::move(out), {&a}, [](Node& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    const Scalar g = self.grad[0];
    for (size_t i = 0; i < p->value.size(); ++i) {
      p->grad[i] += 2.0 * g * p->value[i];
    }
  });
}

Tensor mean_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_abs_diff");
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  Scalar s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    s += std::abs(x[i] - y[i]);
  }
  const Scalar inv_n = 1.0 / static_cast<Scalar>(x.size());
  auto out = new_node(1, 1);
  out->value[0] = s * inv_n;
  return finish(std::move(out), {&a, &b}, [inv_n](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const Scalar g = self.grad[0] * inv_n;
    for (size_t i = 0; i < pa->value.size(); ++i) {
      const Scalar d = pa->value[i] - pb->value[i];
      const Scalar sg = d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
      if (flows(pa)) {
        pa->ensure_grad();
        pa->grad[i] += sg;
      }
      if (flows(pb)) {
        pb->ensure_grad();
        pb->grad[i] -= sg;
      }
    }
  });
}

Tensor masked_mean_rows(const Tensor& a, std::span<const uint8_t> mask) {
  if (mask.size() != static_cast<size_t>(a.rows())) {
    throw ShapeError("masked_mean_rows: mask length must equal row count");
  }
  const int n = a.rows();
  const int c = a.cols();
  int count = 0;
  for (uint8_t m : mask) {
    count += m != 0 ? 1 : 0;
  }
  if (count == 0) {
    throw ShapeError("masked_mean_rows: mask selects no rows");
  }
  std::vector<uint8_t> keep(mask.begin(), mask.end());
  const Scalar inv = 1.0 / count;
  auto out = new_node(1, c);
  const auto& x = a.node()->value;
  for (int i = 0; i < n; ++i) {
    if (keep[i] != 0) {
      for (int j = 0; j < c; ++j) {
        out->value[j] += x[static_cast<size_t>(i) * c + j];
      }
    }
  }
  for (auto& v : out->value) {
    v *= inv;
  }
  return finish(std::move(out), {&a}, [keep = std::move(keep), n, c, inv](Node& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int i = 0; i < n; ++i) {
      if (keep[i] != 0) {
        for (int j = 0; j < c; ++j) {
          p->grad[static_cast<size_t>(i) * c + j] += self.grad[j] * inv;
        }
      }
    }
  });
}

// ---- normalisation --------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  const int n = x.rows();
  const int c = x.cols();
  if (gamma.cols() != c || beta.cols() != c || gamma.rows() != 1 || beta.rows() != 1) {
    throw ShapeError("layer_norm: gamma/beta must be [1 x cols]");
  }
  std::vector<Scalar> xhat(static_cast<size_t>(n) * c);
  std::vector<Scalar> rstd(n);
  auto out = new_node(n, c);
  const auto& xv = x.node()->value;
  const auto& g = gamma.node()->value;
  const auto& b = beta.node()->value;
  for (int i = 0; i < n; ++i) {
    const Scalar* row = xv.data() + static_cast<size_t>(i) * c;
    Scalar mu = 0.0;
    for (int j = 0; j < c; ++j) {
      mu += row[j];
    }
    mu /= c;
    Scalar var = 0.0;
    for (int j = 0; j < c; ++j) {
      var += (row[j] - mu) * (row[j] - mu);
    }
    var /= c;
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      const size_t k = static_cast<size_t>(i) * c + j;
      xhat[k] = (row[j] - mu) * rstd[i];
      out->value[k] = xhat[k] * g[j] + b[j];
    }
  }
  return finish(std::move(out), {&x, &gamma, &beta},
                [xhat = std::move(xhat), rstd = std::move(rstd), n, c](Node& self) {
                  auto& px = self.parents[0];
                  auto& pg = self.parents[1];
                  auto& pb = self.parents[2];
                  if (flows(pg)) {
                    pg->ensure_grad();
                  }
                  if (flows(pb)) {
                    pb->ensure_grad();
                  }
                  if (flows(px)) {
                    px->ensure_grad();
                  }
                  std::vector<Scalar> dxhat(c);
                  for (int i = 0; i < n; ++i) {
                    const size_t base = static_cast<size_t>(i) * c;
                    Scalar mean_d = 0.0;
                    Scalar mean_dx = 0.0;
                    for (int j = 0; j < c; ++j) {
                      const Scalar dy = self.grad[base + j];
                      if (flows(pg)) {
                        pg->grad[j] += dy * xhat[base + j];
                      }
                      if (flows(pb)) {
                        pb->grad[j] += dy;
                      }
                      dxhat[j] = dy * pg->value[j];
                      mean_d += dxhat[j];
                      mean_dx += dxhat[j] * xhat[base + j];
                    }
                    if (!flows(px)) {
                      continue;
                    }
                    mean_d /= c;
                    mean_dx /= c;
                    for (int j = 0; j < c; ++j) {
                      px->grad[base + j] +=
                          rstd[i] * (dxhat[j] - mean_d - xhat[base + j] * mean_dx);
                    }
                  }
                });
}

Tensor l2_normalize_rows(const Tensor& x, Scalar eps) {
  const int n = x.rows();
  const int c = x.cols();
  std::vector<Scalar> norms(n);
  auto out = new_node(n, c);
  const auto& xv = x.node()->value;
  for (int i = 0; i < n; ++i) {
    Scalar s = 0.0;
    for (int j = 0; j < c; ++j) {
      const Scalar v = xv[static_cast<size_t>(i) * c + j];
      s += v * v;
    }
    norms[i] = std::sqrt(s + eps);
    for (int j = 0; j < c; ++j) {
      const size_t k = static_cast<size_t>(i) * c + j;
      out->value[k] = xv[k] / norms[i];
    }
  }
  return finish(std::move(out), {&x}, [norms = std::move(norms), n, c](Node& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const size_t base = static_cast<size_t>(i) * c;
      Scalar dot = 0.0;
      for (int j = 0; j < c; ++j) {
        dot += self.value[base + j] * self.grad[base + j];
      }
      for (int j = 0; j < c; ++j) {
        p->grad[base + j] += (self.grad[base + j] - self.value[base + j] * dot) / norms[i];
      }
    }
  });
}

// ---- structural -----------------------------------------------------------

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  const int c = table.cols();
  const int n = static_cast<int>(ids.size());
  auto out = new_node(n, c);
  const auto& t = table.node()->value;
  for (int i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw ShapeError("gather_rows: index out of range");
    }
    std::memcpy(out->value.data() + static_cast<size_t>(i) * c,
                t.data() + static_cast<size_t>(ids[i]) * c, sizeof(Scalar) * c);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return finish(std::move(out), {&table}, [idx = std::move(idx), c](Node& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < idx.size(); ++i) {
      for (int j = 0; j < c; ++j) {
        p->grad[static_cast<size_t>(idx[i]) * c + j] += self.grad[i * c + j];
      }
    }
  });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) {
    throw ShapeError("stack_rows: no inputs");
  }
  const int c = rows.front().cols();
  int total = 0;
  for (const auto& r : rows) {
    if (r.cols() != c) {
      throw ShapeError("stack_rows: column counts differ");
    }
    total += r.rows();
  }
  auto out = new_node(total, c);
  size_t offset = 0;
  bool any_grad = false;
  for (const auto& r : rows) {
    std::copy(r.data().begin(), r.data().end(), out->value.begin() + static_cast<long>(offset));
    offset += r.size();
    any_grad = any_grad || r.requires_grad();
  }
  if (!g_grad_enabled || !any_grad) {
    return Tensor(std::move(out));
  }
  out->requires_grad = true;
  for (const auto& r : rows) {
    out->parents.push_back(r.shared());
  }
  out->backward = [](Node& self) {
    size_t off = 0;
    for (auto& p : self.parents) {
      if (flows(p)) {
        p->ensure_grad();
        for (size_t i = 0; i < p->value.size(); ++i) {
          p->grad[i] += self.grad[off + i];
        }
      }
      off += p->value.size();
    }
  };
  return Tensor(std::move(out));
}

// ---- spatial --------------------------------------------------------------

namespace {

struct ConvGeom {
  int h, w, c_in, kernel, stride, pad, ho, wo;
  int patch_cols() const { return kernel * kernel * c_in; }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

void build_patches(const ConvGeom& g, const Scalar* x, Scalar* patches) {
  const int pc = g.patch_cols();
  for (int oy = 0; oy < g.ho; ++oy) {
    for (int ox = 0; ox < g.wo; ++ox) {
      Scalar* row = patches + static_cast<size_t>(oy * g.wo + ox) * pc;
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          Scalar* dst = row + (ky * g.kernel + kx) * g.c_in;
          if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
            std::fill(dst, dst + g.c_in, 0.0);
          } else {
            std::memcpy(dst, x + static_cast<size_t>(iy * g.w + ix) * g.c_in,
                        sizeof(Scalar) * g.c_in);
          }
        }
      }
    }
  }
}

void scatter_patches(const ConvGeom& g, const Scalar* dpatches, Scalar* dx) {
  const int pc = g.patch_cols();
  for (int oy = 0; oy < g.ho; ++oy) {
    for (int ox = 0; ox < g.wo; ++ox) {
      const Scalar* row = dpatches + static_cast<size_t>(oy * g.wo + ox) * pc;
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.h) {
          continue;
        }
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.w) {
            continue;
          }
          const Scalar* src = row + (ky * g.kernel + kx) * g.c_in;
          Scalar* dst = dx + static_cast<size_t>(iy * g.w + ix) * g.c_in;
          for (int c = 0; c < g.c_in; ++c) {
            dst[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, Spatial in, const Tensor& weight, const Tensor& bias, int kernel,
              int stride, int pad) {
  if (x.rows() != in.height * in.width) {
    throw ShapeError("conv2d: input rows do not match spatial size");
  }
  ConvGeom g{in.height, in.width, x.cols(), kernel, stride, pad,
             conv_out_size(in.height, kernel, stride, pad), conv_out_size(in.width, kernel, stride, pad)};
  if (weight.cols() != g.patch_cols()) {
    throw ShapeError("conv2d: weight columns must equal kernel*kernel*c_in");
  }
  const int c_out = weight.rows();
  if (bias.defined() && (bias.rows() != 1 || bias.cols() != c_out)) {
    throw ShapeError("conv2d: bias must be [1 x c_out]");
  }
  const int n_out = g.ho * g.wo;
  auto out = new_node(n_out, c_out);
  MapR o(out->value.data(), n_out, c_out);
  if (g.is_pointwise()) {
    gemm_acc(o, cmap(*x.node()), cmap(*weight.node()).transpose());
  } else {
    MatR patches(n_out, g.patch_cols());
    build_patches(g, x.node()->value.data(), patches.data());
    gemm_acc(o, patches, cmap(*weight.node()).transpose());
  }
  if (bias.defined()) {
    const auto& b = bias.node()->value;
    for (int i = 0; i < n_out; ++i) {
      for (int j = 0; j < c_out; ++j) {
        o(i, j) += b[j];
      }
    }
  }
  return finish(std::move(out), {&x, &weight, &bias}, [g, n_out, c_out](Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    CMapR dy = cgrad(self);
    if (flows(pb)) {
      pb->ensure_grad();
      for (int i = 0; i < n_out; ++i) {
        for (int j = 0; j < c_out; ++j) {
          pb->grad[j] += dy(i, j);
        }
      }
    }
    if (g.is_pointwise()) {
      if (flows(pw)) {
        gemm_acc(gmap(*pw), dy.transpose(), cmap(*px));
      }
      if (flows(px)) {
        gemm_acc(gmap(*px), dy, cmap(*pw));
      }
      return;
    }
    if (flows(pw)) {
      MatR patches(n_out, g.patch_cols());
      build_patches(g, px->value.data(), patches.data());
      gemm_acc(gmap(*pw), dy.transpose(), patches);
    }
    if (flows(px)) {
      MatR dpatches = MatR::Zero(n_out, g.patch_cols());
      gemm_acc(dpatches, dy, cmap(*pw));
      px->ensure_grad();
      scatter_patches(g, dpatches.data(), px->grad.data());
    }
  });
}

Tensor upsample_nearest(const Tensor& x, Spatial in, Spatial out_size) {
  if (x.rows() != in.height * in.width) {
    throw ShapeError("upsample_nearest: input rows do not match spatial size");
  }
  const int c = x.cols();
  const int n_out = out_size.height * out_size.width;
  std::vector<int> src(n_out);
  for (int oy = 0; oy < out_size.height; ++oy) {
    const int iy = std::min(oy * in.height / out_size.height, in.height - 1);
    for (int ox = 0; ox < out_size.width; ++ox) {
      const int ix = std::min(ox * in.width / out_size.width, in.width - 1);
      src[oy * out_size.width + ox] = iy * in.width + ix;
    }
  }
  auto out = new_node(n_out, c);
  const auto& xv = x.node()->value;
  for (int i = 0; i < n_out; ++i) {
    std::memcpy(out->value.data() + static_cast<size_t>(i) * c,
                xv.data() + static_cast<size_t>(src[i]) * c, sizeof(Scalar) * c);
  }
  return finish(std::move(out), {&x}, [src = std::move(src), c](Node& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < src.size(); ++i) {
      for (int j = 0; j < c; ++j) {
        p->grad[static_cast<size_t>(src[i]) * c + j] += self.grad[i * c + j];
      }
    }
  });
}

// ---- attention ------------------------------------------------------------

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 std::span<const uint8_t> key_mask) {
  const int n = q.rows();
  const int m = k.rows();
  const int d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != m) {
    throw ShapeError("attention: q/k/v shapes disagree");
  }
  if (heads <= 0 || d % heads != 0) {
    throw ShapeError("attention: width not divisible by head count");
  }
  if (!key_mask.empty() && key_mask.size() != static_cast<size_t>(m)) {
    throw ShapeError("attention: key mask length must equal key count");
  }
  const int dh = d / heads;
  const Scalar inv_sqrt = 1.0 / std::sqrt(static_cast<Scalar>(dh));
  std::vector<uint8_t> mask(key_mask.begin(), key_mask.end());

  auto out = new_node(n, d);
  CMapR qm = cmap(*q.node());
  CMapR km = cmap(*k.node());
  CMapR vm = cmap(*v.node());
  MapR om(out->value.data(), n, d);
  std::vector<MatR> probs(heads);
  for (int h = 0; h < heads; ++h) {
    MatR s = MatR::Zero(n, m);
    gemm_acc(s, qm.middleCols(h * dh, dh), km.middleCols(h * dh, dh).transpose(), inv_sqrt);
    for (int i = 0; i < n; ++i) {
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (int j = 0; j < m; ++j) {
        if (!mask.empty() && mask[j] == 0) {
          continue;
        }
        mx = std::max(mx, s(i, j));
      }
      Scalar total = 0.0;
      for (int j = 0; j < m; ++j) {
        if (!mask.empty() && mask[j] == 0) {
          s(i, j) = 0.0;
          continue;
        }
        s(i, j) = std::exp(s(i, j) - mx);
        total += s(i, j);
      }
      s.row(i) /= total;
    }
    auto oh = om.middleCols(h * dh, dh);
    gemm_acc(oh, s, vm.middleCols(h * dh, dh));
    probs[h] = std::move(s);
  }
  return finish(std::move(out), {&q, &k, &v},
                [probs = std::move(probs), heads, dh, inv_sqrt](Node& self) {
                  auto& pq = self.parents[0];
                  auto& pk = self.parents[1];
                  auto& pv = self.parents[2];
                  CMapR dout = cgrad(self);
                  CMapR qv = cmap(*pq);
                  CMapR kv = cmap(*pk);
                  CMapR vv = cmap(*pv);
                  for (int h = 0; h < heads; ++h) {
                    const MatR& p = probs[h];
                    auto doh = dout.middleCols(h * dh, dh);
                    if (flows(pv)) {
                      auto dv = gmap(*pv).middleCols(h * dh, dh);
                      gemm_acc(dv, p.transpose(), doh);
                    }
                    if (!flows(pq) && !flows(pk)) {
                      continue;
                    }
                    MatR dp = MatR::Zero(p.rows(), p.cols());
                    gemm_acc(dp, doh, vv.middleCols(h * dh, dh).transpose());
                    MatR ds = p.cwiseProduct(dp);
                    const Eigen::VectorXd row_dot = ds.rowwise().sum();
                    ds -= p.cwiseProduct(row_dot.replicate(1, p.cols()));
                    if (flows(pq)) {
                      auto dq = gmap(*pq).middleCols(h * dh, dh);
                      gemm_acc(dq, ds, kv.middleCols(h * dh, dh), inv_sqrt);
                    }
                    if (flows(pk)) {
                      auto dk = gmap(*pk).middleCols(h * dh, dh);
                      gemm_acc(dk, ds.transpose(), qv.middleCols(h * dh, dh), inv_sqrt);
                    }
                  }
                });
}

// ---- contrastive ----------------------------------------------------------

Tensor multi_positive_nce(const Tensor& logits, std::span<const int> labels) {
  const int n = logits.rows();
  if (logits.cols() != n || labels.size() != static_cast<size_t>(n)) {
    throw ShapeError("multi_positive_nce: logits must be [N x N] with N labels");
  }
  const auto& s = logits.node()->value;
  std::vector<Scalar> p_all(static_cast<size_t>(n) * n);
  std::vector<Scalar> p_pos(static_cast<size_t>(n) * n, 0.0);
  Scalar loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const Scalar* row = s.data() + static_cast<size_t>(i) * n;
    Scalar mx = row[0];
    for (int j = 1; j < n; ++j) {
      mx = std::max(mx, row[j]);
    }
    Scalar z_all = 0.0;
    Scalar z_pos = 0.0;
    for (int j = 0; j < n; ++j) {
      const Scalar e = std::exp(row[j] - mx);
      p_all[static_cast<size_t>(i) * n + j] = e;
      z_all += e;
      if (labels[j] == labels[i]) {
        p_pos[static_cast<size_t>(i) * n + j] = e;
        z_pos += e;
      }
    }
    for (int j = 0; j < n; ++j) {
      p_all[static_cast<size_t>(i) * n + j] /= z_all;
      p_pos[static_cast<size_t>(i) * n + j] /= z_pos;
    }
    loss += std::log(z_all) - std::log(z_pos);
  }
  auto out = new_node(1, 1);
  out->value[0] = loss / n;
  return finish(std::move(out), {&logits},
                [p_all = std::move(p_all), p_pos = std::move(p_pos), n](Node& self) {
                  auto& p = self.parents[0];
                  p->ensure_grad();
                  const Scalar g = self.grad[0] / n;
                  for (size_t i = 0; i < p_all.size(); ++i) {
                    p->grad[i] += g * (p_all[i] - p_pos[i]);
                  }
                });
}

}  // namespace styleloop::ag
