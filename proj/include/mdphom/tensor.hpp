#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "mdphom/errors.hpp"
#include "mdphom/rng.hpp"

namespace mdphom {

namespace detail {

// Row-major matmul kernels; accumulation order within each output row is
// fixed, so results are bit-identical regardless of thread count.

inline void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) if (m >= 64 && static_cast<long>(k) * n >= 4096)
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double av = a[static_cast<std::size_t>(i) * k + l];
      const double* brow = b + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c (m x n) += a (m x k) * b^T where b is (n x k).
inline void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) if (m >= 64 && static_cast<long>(k) * n >= 4096)
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double dot = 0.0;
      for (int l = 0; l < k; ++l) dot += arow[l] * brow[l];
      crow[j] += dot;
    }
  }
}

// c (m x n) += a^T * b where a is (k x m), b is (k x n).
inline void mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) if (m >= 64 && static_cast<long>(k) * n >= 4096)
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double av = a[static_cast<std::size_t>(l) * m + i];
      const double* brow = b + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;  // leaf parameter flag
  bool needs_grad = false;     // participates in some backward pass
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t size() const { return value.size(); }
};

/// Handle to a node of a dynamically recorded computation graph. Graphs are
/// rebuilt per step; backward() visits each node exactly once in reverse
/// topological order, accumulating gradients into leaves.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor constant(int rows, int cols, std::vector<double> data) {
    if (data.size() != static_cast<std::size_t>(rows) * cols)
      throw ShapeMismatch("tensor data size does not match shape");
    auto n = std::make_shared<TensorNode>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(data);
    n->grad.assign(n->value.size(), 0.0);
    return Tensor(std::move(n));
  }

  static Tensor zeros(int rows, int cols) {
    return constant(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0));
  }

  static Tensor scalar(double x) { return constant(1, 1, {x}); }

  static Tensor param(int rows, int cols, std::vector<double> data) {
    Tensor t = constant(rows, cols, std::move(data));
    t.node_->requires_grad = true;
    t.node_->needs_grad = true;
    return t;
  }

  bool valid() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& value() { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  std::vector<double>& grad() { return node_->grad; }
  double item() const {
    if (size() != 1) throw ShapeMismatch("item() requires a scalar tensor");
    return node_->value[0];
  }
  std::shared_ptr<TensorNode> node() const { return node_; }

  /// Value copy severed from the graph.
  Tensor detach() const { return constant(rows(), cols(), node_->value); }

  /// Reverse pass from a scalar root.
  void backward() const {
    if (size() != 1) throw ShapeMismatch("backward() requires a scalar root");
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    topo(node_.get(), seen, order);
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode* n = *it;
      if (n->backward_fn && n->needs_grad) n->backward_fn(*n);
    }
  }

 private:
  static void topo(TensorNode* n, std::unordered_set<TensorNode*>& seen,
                   std::vector<TensorNode*>& order) {
    if (!n || seen.count(n)) return;
    seen.insert(n);
    for (const auto& p : n->parents) topo(p.get(), seen, order);
    order.push_back(n);
  }

  std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_op(int rows, int cols, std::vector<double> value,
                      std::vector<std::shared_ptr<TensorNode>> parents,
                      std::function<void(TensorNode&)> backward_fn) {
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  n->grad.assign(n->value.size(), 0.0);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->needs_grad;
  n->needs_grad = needs;
  if (needs) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch(std::string(op) + ": shapes differ");
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  detail::mm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return detail::make_op(
      m, n, std::move(out), {an, bn}, [an, bn, m, k, n](TensorNode& self) {
        if (an->needs_grad)
          detail::mm_nt(self.grad.data(), bn->value.data(), an->grad.data(), m, n, k);
        if (bn->needs_grad)
          detail::mm_tn(an->value.data(), self.grad.data(), bn->grad.data(), k, m, n);
      });
}

/// Elementwise addition; also broadcasts a (1 x n) bias row or a (1 x 1)
/// scalar over the rows of a.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const bool bias_row = b.rows() == 1 && b.cols() == a.cols() && a.rows() != 1;
  const bool scalar_b = b.size() == 1 && a.size() != 1;
  if (!bias_row && !scalar_b) detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[i] + (scalar_b ? bv[0] : bias_row ? bv[i % a.cols()] : bv[i]);
  auto an = a.node(), bn = b.node();
  return detail::make_op(a.rows(), a.cols(), std::move(out), {an, bn},
                         [an, bn, bias_row, scalar_b](TensorNode& self) {
                           if (an->needs_grad)
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               an->grad[i] += self.grad[i];
                           if (bn->needs_grad) {
                             if (scalar_b)
                               for (const double g : self.grad) bn->grad[0] += g;
                             else if (bias_row)
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 bn->grad[i % static_cast<std::size_t>(self.cols)] += self.grad[i];
                             else
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 bn->grad[i] += self.grad[i];
                           }
                         });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  auto an = a.node();
  return detail::make_op(a.rows(), a.cols(), std::move(out), {an}, [an, s](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += s * self.grad[i];
  });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

/// Elementwise product; either side may be a (1 x 1) scalar.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.size() == 1 && b.size() != 1) return mul(b, a);
  const bool scalar_b = b.size() == 1 && a.size() != 1;
  if (!scalar_b) detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] * (scalar_b ? b.value()[0] : b.value()[i]);
  auto an = a.node(), bn = b.node();
  return detail::make_op(a.rows(), a.cols(), std::move(out), {an, bn},
                         [an, bn, scalar_b](TensorNode& self) {
                           if (an->needs_grad)
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               an->grad[i] += self.grad[i] * (scalar_b ? bn->value[0] : bn->value[i]);
                           if (bn->needs_grad) {
                             if (scalar_b)
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 bn->grad[0] += self.grad[i] * an->value[i];
                             else
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 bn->grad[i] += self.grad[i] * an->value[i];
                           }
                         });
}

inline Tensor tanh_op(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.value()[i]);
  auto an = a.node();
  return detail::make_op(a.rows(), a.cols(), std::move(out), {an}, [an](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
  auto an = a.node();
  return detail::make_op(a.rows(), a.cols(), std::move(out), {an}, [an](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (an->value[i] > 0.0) an->grad[i] += self.grad[i];
  });
}

inline Tensor exp_op(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.value()[i]);
  auto an = a.node();
  return detail::make_op(a.rows(), a.cols(), std::move(out), {an}, [an](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] * self.value[i];
  });
}

inline Tensor square(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * a.value()[i];
  auto an = a.node();
  return detail::make_op(a.rows(), a.cols(), std::move(out), {an}, [an](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] * 2.0 * an->value[i];
  });
}

inline Tensor abs_op(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a.value()[i]);
  auto an = a.node();
  return detail::make_op(a.rows(), a.cols(), std::move(out), {an}, [an](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = an->value[i];
      if (x > 0.0)
        an->grad[i] += self.grad[i];
      else if (x < 0.0)
        an->grad[i] -= self.grad[i];
    }
  });
}

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (const double x : a.value()) total += x;
  auto an = a.node();
  return detail::make_op(1, 1, {total}, {an}, [an](TensorNode& self) {
    for (double& g : an->grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  double total = 0.0;
  for (const double x : a.value()) total += x;
  auto an = a.node();
  return detail::make_op(1, 1, {total * inv}, {an}, [an, inv](TensorNode& self) {
    for (double& g : an->grad) g += self.grad[0] * inv;
  });
}

/// Row-wise sum, (m x n) -> (m x 1).
inline Tensor row_sum(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(m, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[i] += a.value()[static_cast<std::size_t>(i) * n + j];
  auto an = a.node();
  return detail::make_op(m, 1, std::move(out), {an}, [an, m, n](TensorNode& self) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        an->grad[static_cast<std::size_t>(i) * n + j] += self.grad[i];
  });
}

/// Row-wise L1 norm, (m x n) -> (m x 1).
inline Tensor l1_norm(const Tensor& a) { return row_sum(abs_op(a)); }

inline Tensor clip(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw ShapeMismatch("clip: lo must not exceed hi");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a.value()[i], lo, hi);
  auto an = a.node();
  return detail::make_op(a.rows(), a.cols(), std::move(out), {an}, [an, lo, hi](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = an->value[i];
      if (x > lo && x < hi) an->grad[i] += self.grad[i];
    }
  });
}

/// sqrt(max(x, floor)); gradient vanishes below the floor.
inline Tensor sqrt_floor(const Tensor& a, double floor_value) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::sqrt(std::max(a.value()[i], floor_value));
  auto an = a.node();
  return detail::make_op(a.rows(), a.cols(), std::move(out), {an},
                         [an, floor_value](TensorNode& self) {
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             if (an->value[i] > floor_value)
                               an->grad[i] += self.grad[i] * 0.5 / self.value[i];
                         });
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ShapeMismatch("concat_cols: row counts differ");
  const int m = a.rows(), ca = a.cols(), cb = b.cols();
  std::vector<double> out(static_cast<std::size_t>(m) * (ca + cb));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < ca; ++j)
      out[static_cast<std::size_t>(i) * (ca + cb) + j] = a.value()[static_cast<std::size_t>(i) * ca + j];
    for (int j = 0; j < cb; ++j)
      out[static_cast<std::size_t>(i) * (ca + cb) + ca + j] =
          b.value()[static_cast<std::size_t>(i) * cb + j];
  }
  auto an = a.node(), bn = b.node();
  return detail::make_op(m, ca + cb, std::move(out), {an, bn},
                         [an, bn, m, ca, cb](TensorNode& self) {
                           for (int i = 0; i < m; ++i) {
                             if (an->needs_grad)
                               for (int j = 0; j < ca; ++j)
                                 an->grad[static_cast<std::size_t>(i) * ca + j] +=
                                     self.grad[static_cast<std::size_t>(i) * (ca + cb) + j];
                             if (bn->needs_grad)
                               for (int j = 0; j < cb; ++j)
                                 bn->grad[static_cast<std::size_t>(i) * cb + j] +=
                                     self.grad[static_cast<std::size_t>(i) * (ca + cb) + ca + j];
                           }
                         });
}

inline Tensor slice_cols(const Tensor& a, int start, int len) {
  if (start < 0 || len <= 0 || start + len > a.cols())
    throw ShapeMismatch("slice_cols: range out of bounds");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(static_cast<std::size_t>(m) * len);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < len; ++j)
      out[static_cast<std::size_t>(i) * len + j] =
          a.value()[static_cast<std::size_t>(i) * n + start + j];
  auto an = a.node();
  return detail::make_op(m, len, std::move(out), {an}, [an, m, n, start, len](TensorNode& self) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < len; ++j)
        an->grad[static_cast<std::size_t>(i) * n + start + j] +=
            self.grad[static_cast<std::size_t>(i) * len + j];
  });
}

/// Row gather: out[i] = a[perm[i]]. Backward scatters gradients through the
/// permutation.
inline Tensor permute_rows(const Tensor& a, const std::vector<int>& perm) {
  const int m = a.rows(), n = a.cols();
  if (static_cast<int>(perm.size()) != m) throw ShapeMismatch("permute_rows: bad permutation size");
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i) {
    if (perm[i] < 0 || perm[i] >= m) throw ShapeMismatch("permute_rows: index out of range");
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] =
          a.value()[static_cast<std::size_t>(perm[i]) * n + j];
  }
  auto an = a.node();
  return detail::make_op(m, n, std::move(out), {an}, [an, perm, m, n](TensorNode& self) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        an->grad[static_cast<std::size_t>(perm[i]) * n + j] +=
            self.grad[static_cast<std::size_t>(i) * n + j];
  });
}

/// Reparameterized Gaussian draw: mean + exp(log_std) * noise, with noise a
/// non-differentiated tensor of standard normals. The gradient path runs to
/// mean (identity) and log_std (scaled by the drawn noise).
inline Tensor gaussian_sample(const Tensor& mean_t, const Tensor& log_std, const Tensor& noise) {
  detail::require_same_shape(mean_t, log_std, "gaussian_sample");
  detail::require_same_shape(mean_t, noise, "gaussian_sample");
  return add(mean_t, mul(exp_op(log_std), noise.detach()));
}

inline Tensor gaussian_sample(const Tensor& mean_t, const Tensor& log_std, Rng& rng,
                              Tensor* noise_out = nullptr) {
  std::vector<double> eps(mean_t.size());
  for (double& e : eps) e = rng.normal();
  Tensor noise = Tensor::constant(mean_t.rows(), mean_t.cols(), std::move(eps));
  if (noise_out) *noise_out = noise;
  return gaussian_sample(mean_t, log_std, noise);
}

inline bool all_finite(const Tensor& t) {
  for (const double x : t.value())
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace mdphom
