// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Every forward operation optionally records a node on the active Tape; a
// single backward() traversal then populates the grad buffer of every tensor
// with requires_grad set. Gradients accumulate (fan-out sums), so callers
// zero_grad() between optimizer steps. The scalar type is a template
// parameter: double is the verification/training default, float is the
// permitted reduced-precision training mode. One tape is single-threaded;
// distinct tapes (thread_local active pointer) may live on distinct threads.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dgnc/common.hpp"

namespace dgnc {

namespace detail {

template <typename Real>
struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // allocated lazily; empty while untouched
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

}  // namespace detail

// Scales applied to selected adjoints. Test hook for verifying that the
// gradient checker catches a wrong derivative; 1.0 in normal operation.
struct FaultInjection {
  static inline double sigmoid_adjoint_scale = 1.0;
  static void reset() { sigmoid_adjoint_scale = 1.0; }
};

// Hash of the non-smooth decisions taken during a forward pass (ReLU sign
// masks, top-k selections). A finite-difference probe is only a valid
// derivative estimate when the perturbed evaluations take the same path as
// the base point; grad_check compares signatures to detect kink crossings.
// Disabled (and free) outside verification.
struct PathSignature {
  static inline thread_local bool enabled = false;
  static inline thread_local std::uint64_t hash = 1469598103934665603ULL;

  static void reset() { hash = 1469598103934665603ULL; }

  static void fold(std::uint64_t v) {
    hash = (hash ^ v) * 1099511628211ULL;
  }
};

template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    return filled(std::move(shape), Real(0), requires_grad);
  }

  static Tensor filled(std::vector<std::size_t> shape, Real v, bool requires_grad = false) {
    auto node = std::make_shared<detail::TensorNode<Real>>();
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    node->shape = std::move(shape);
    node->value.assign(n, v);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from_data(std::vector<std::size_t> shape, std::vector<Real> data,
                          bool requires_grad = false) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    }
    auto node = std::make_shared<detail::TensorNode<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from_data({1, 1}, {v}, requires_grad);
  }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.node_->value[i * n + i] = Real(1);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::size_t rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
  std::size_t cols() const { return rank() == 1 ? node_->shape[0] : node_->shape[rank() - 1]; }

  Real at(std::size_t i, std::size_t j) const { return node_->value[i * cols() + j]; }
  Real& at(std::size_t i, std::size_t j) { return node_->value[i * cols() + j]; }

  std::vector<Real>& values() { return node_->value; }
  const std::vector<Real>& values() const { return node_->value; }

  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Gradient buffer; empty until backward touches this tensor.
  const std::vector<Real>& grad() const { return node_->grad; }

  void zero_grad() {
    if (node_) node_->grad.assign(node_->value.size(), Real(0));
  }

  // Internal node handle, shared with tape closures.
  const std::shared_ptr<detail::TensorNode<Real>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode<Real>> node) : node_(std::move(node)) {}

  template <typename R>
  friend Tensor<R> make_op_output(std::vector<std::size_t> shape, bool requires_grad);

  std::shared_ptr<detail::TensorNode<Real>> node_;
};

template <typename Real>
Tensor<Real> make_op_output(std::vector<std::size_t> shape, bool requires_grad) {
  auto t = Tensor<Real>::zeros(std::move(shape));
  t.node_->requires_grad = requires_grad;
  return t;
}

// Suppresses tape recording for its lifetime (forward-only evaluation).
class NoGradScope {
 public:
  NoGradScope() { ++depth(); }
  ~NoGradScope() { --depth(); }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

  static bool active() { return depth() > 0; }

 private:
  static int& depth() {
    static thread_local int d = 0;
    return d;
  }
};

// Wengert list. Nodes are appended in construction order, which is already a
// topological order of the DAG, so the reverse scan visits each node exactly
// once after everything that consumes its output.
template <typename Real>
class Tape {
 public:
  Tape() : prev_(active_ptr()) { active_ptr() = this; }
  ~Tape() { active_ptr() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return NoGradScope::active() ? nullptr : active_ptr(); }

  void push(const char* op, std::function<void()> backward) {
    nodes_.push_back(Node{op, std::move(backward)});
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded adjoint in reverse.
  void backward(const Tensor<Real>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward: loss must be a scalar tensor, got shape " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("<empty>")));
    }
    if (nodes_.empty()) {
      throw ContractError("backward: tape is empty");
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += Real(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->fn();
    }
  }

 private:
  struct Node {
    const char* op;
    std::function<void()> fn;
  };

  static Tape*& active_ptr() {
    static thread_local Tape* t = nullptr;
    return t;
  }

  std::vector<Node> nodes_;
  Tape* prev_;
};

template <typename Real>
void backward(const Tensor<Real>& loss) {
  Tape<Real>* t = Tape<Real>::active();
  if (!t) throw ContractError("backward: no active tape");
  t->backward(loss);
}

namespace detail {

template <typename Real>
bool recording(std::initializer_list<const Tensor<Real>*> inputs) {
  if (!Tape<Real>::active()) return false;
  for (const Tensor<Real>* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename Real>
void require_rank2(const Tensor<Real>& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got shape " +
                     shape_str(t.shape()));
  }
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix product. c[i][j] = sum_k a[i][k] * b[k][j].
// Adjoints: dA += dC * B^T, dB += A^T * dC.
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (k != b.rows()) {
    throw ShapeError("matmul: inner dimensions mismatch for shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const bool rec = detail::recording<Real>({&a, &b});
  Tensor<Real> c = make_op_output<Real>({m, n}, rec);
  const Real* pa = a.values().data();
  const Real* pb = b.values().data();
  Real* pc = c.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const Real aik = pa[i * k + kk];
      if (aik == Real(0)) continue;
      const Real* brow = pb + kk * n;
      Real* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  if (rec) {
    auto an = a.node(), bn = b.node(), cn = c.node();
    Tape<Real>::active()->push("matmul", [an, bn, cn, m, k, n] {
      if (cn->grad.empty()) return;
      const Real* dc = cn->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        Real* da = an->grad.data();
        const Real* pb2 = bn->value.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            Real acc = Real(0);
            const Real* dcrow = dc + i * n;
            const Real* brow = pb2 + kk * n;
            for (std::size_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
            da[i * k + kk] += acc;
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        Real* db = bn->grad.data();
        const Real* pa2 = an->value.data();
        for (std::size_t kk = 0; kk < k; ++kk) {
          for (std::size_t i = 0; i < m; ++i) {
            const Real aik = pa2[i * k + kk];
            if (aik == Real(0)) continue;
            const Real* dcrow = dc + i * n;
            Real* dbrow = db + kk * n;
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += aik * dcrow[j];
          }
        }
      }
    });
  }
  return c;
}

// Row-wise softmax with per-row max subtraction. Rows of the output are
// positive and sum to 1 for any finite input.
template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& x) {
  detail::require_rank2(x, "softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  const bool rec = detail::recording<Real>({&x});
  Tensor<Real> y = make_op_output<Real>({r, c}, rec);
  for (std::size_t i = 0; i < r; ++i) {
    const Real* xi = x.values().data() + i * c;
    Real* yi = y.values().data() + i * c;
    Real mx = xi[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    Real sum = Real(0);
    for (std::size_t j = 0; j < c; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    const Real inv = Real(1) / sum;
    for (std::size_t j = 0; j < c; ++j) yi[j] *= inv;
  }
  if (rec) {
    auto xn = x.node(), yn = y.node();
    Tape<Real>::active()->push("softmax_rows", [xn, yn, r, c] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        const Real* yi = yn->value.data() + i * c;
        const Real* dyi = yn->grad.data() + i * c;
        Real* dxi = xn->grad.data() + i * c;
        Real dot = Real(0);
        for (std::size_t j = 0; j < c; ++j) dot += dyi[j] * yi[j];
        for (std::size_t j = 0; j < c; ++j) dxi[j] += yi[j] * (dyi[j] - dot);
      }
    });
  }
  return y;
}

// Elementwise logistic. Computed on the non-overflowing branch per sign and
// clamped into the open interval (0,1) so saturated outputs never round to
// exactly 0 or 1.
template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  const bool rec = detail::recording<Real>({&x});
  Tensor<Real> y = make_op_output<Real>(x.shape(), rec);
  const Real hi = std::nextafter(Real(1), Real(0));
  const Real lo = std::numeric_limits<Real>::min();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const Real v = x.values()[i];
    Real s;
    if (v >= Real(0)) {
      s = Real(1) / (Real(1) + std::exp(-v));
    } else {
      const Real e = std::exp(v);
      s = e / (Real(1) + e);
    }
    y.values()[i] = std::min(hi, std::max(lo, s));
  }
  if (rec) {
    auto xn = x.node(), yn = y.node();
    Tape<Real>::active()->push("sigmoid", [xn, yn] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      const Real fault = Real(FaultInjection::sigmoid_adjoint_scale);
      for (std::size_t i = 0; i < yn->value.size(); ++i) {
        const Real s = yn->value[i];
        xn->grad[i] += fault * yn->grad[i] * s * (Real(1) - s);
      }
    });
  }
  return y;
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "add");
  const bool rec = detail::recording<Real>({&a, &b});
  Tensor<Real> y = make_op_output<Real>(a.shape(), rec);
  for (std::size_t i = 0; i < y.numel(); ++i) y.values()[i] = a.values()[i] + b.values()[i];
  if (rec) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    Tape<Real>::active()->push("add", [an, bn, yn] {
      if (yn->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i) bn->grad[i] += yn->grad[i];
      }
    });
  }
  return y;
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "sub");
  const bool rec = detail::recording<Real>({&a, &b});
  Tensor<Real> y = make_op_output<Real>(a.shape(), rec);
  for (std::size_t i = 0; i < y.numel(); ++i) y.values()[i] = a.values()[i] - b.values()[i];
  if (rec) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    Tape<Real>::active()->push("sub", [an, bn, yn] {
      if (yn->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i) bn->grad[i] -= yn->grad[i];
      }
    });
  }
  return y;
}

// Elementwise (Hadamard) product.
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "mul");
  const bool rec = detail::recording<Real>({&a, &b});
  Tensor<Real> y = make_op_output<Real>(a.shape(), rec);
  for (std::size_t i = 0; i < y.numel(); ++i) y.values()[i] = a.values()[i] * b.values()[i];
  if (rec) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    Tape<Real>::active()->push("mul", [an, bn, yn] {
      if (yn->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i)
          an->grad[i] += yn->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i)
          bn->grad[i] += yn->grad[i] * an->value[i];
      }
    });
  }
  return y;
}

// Multiplication by a compile-time-constant scalar (not a tensor).
template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real factor) {
  const bool rec = detail::recording<Real>({&x});
  Tensor<Real> y = make_op_output<Real>(x.shape(), rec);
  for (std::size_t i = 0; i < y.numel(); ++i) y.values()[i] = x.values()[i] * factor;
  if (rec) {
    auto xn = x.node(), yn = y.node();
    Tape<Real>::active()->push("scale", [xn, yn, factor] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < yn->grad.size(); ++i) xn->grad[i] += factor * yn->grad[i];
    });
  }
  return y;
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  const bool rec = detail::recording<Real>({&x});
  Tensor<Real> y = make_op_output<Real>(x.shape(), rec);
  for (std::size_t i = 0; i < y.numel(); ++i)
    y.values()[i] = x.values()[i] > Real(0) ? x.values()[i] : Real(0);
  if (PathSignature::enabled) {
    for (std::size_t i = 0; i < x.numel(); ++i)
      PathSignature::fold(x.values()[i] > Real(0) ? 2 * i + 1 : 2 * i);
  }
  if (rec) {
    auto xn = x.node(), yn = y.node();
    Tape<Real>::active()->push("relu", [xn, yn] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < yn->grad.size(); ++i)
        if (xn->value[i] > Real(0)) xn->grad[i] += yn->grad[i];
    });
  }
  return y;
}

// Elementwise reciprocal square root; inputs must be strictly positive.
template <typename Real>
Tensor<Real> rsqrt(const Tensor<Real>& x) {
  const bool rec = detail::recording<Real>({&x});
  Tensor<Real> y = make_op_output<Real>(x.shape(), rec);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    if (!(x.values()[i] > Real(0))) {
      throw ContractError("rsqrt: input entries must be positive");
    }
    y.values()[i] = Real(1) / std::sqrt(x.values()[i]);
  }
  if (rec) {
    auto xn = x.node(), yn = y.node();
    Tape<Real>::active()->push("rsqrt", [xn, yn] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        const Real v = yn->value[i];
        xn->grad[i] += yn->grad[i] * Real(-0.5) * v * v * v;
      }
    });
  }
  return y;
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x) {
  detail::require_rank2(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  const bool rec = detail::recording<Real>({&x});
  Tensor<Real> y = make_op_output<Real>({c, r}, rec);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y.values()[j * r + i] = x.values()[i * c + j];
  if (rec) {
    auto xn = x.node(), yn = y.node();
    Tape<Real>::active()->push("transpose", [xn, yn, r, c] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += yn->grad[j * r + i];
    });
  }
  return y;
}

// Mean over one axis of a rank-2 tensor, keeping the reduced axis as size 1.
// axis 0 averages down columns (result 1 x c), axis 1 across rows (r x 1).
template <typename Real>
Tensor<Real> mean_over_axis(const Tensor<Real>& x, int axis) {
  detail::require_rank2(x, "mean_over_axis");
  if (axis != 0 && axis != 1) throw ContractError("mean_over_axis: axis must be 0 or 1");
  const std::size_t r = x.rows(), c = x.cols();
  const std::size_t count = axis == 0 ? r : c;
  const Real inv = Real(1) / Real(count);
  const bool rec = detail::recording<Real>({&x});
  Tensor<Real> y = make_op_output<Real>(axis == 0 ? std::vector<std::size_t>{1, c}
                                                  : std::vector<std::size_t>{r, 1},
                                        rec);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      y.values()[axis == 0 ? j : i] += x.values()[i * c + j] * inv;
  if (rec) {
    auto xn = x.node(), yn = y.node();
    Tape<Real>::active()->push("mean_over_axis", [xn, yn, r, c, axis, inv] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          xn->grad[i * c + j] += yn->grad[axis == 0 ? j : i] * inv;
    });
  }
  return y;
}

// Sum over one axis of a rank-2 tensor, keeping the reduced axis as size 1.
template <typename Real>
Tensor<Real> sum_over_axis(const Tensor<Real>& x, int axis) {
  detail::require_rank2(x, "sum_over_axis");
  if (axis != 0 && axis != 1) throw ContractError("sum_over_axis: axis must be 0 or 1");
  const std::size_t r = x.rows(), c = x.cols();
  const bool rec = detail::recording<Real>({&x});
  Tensor<Real> y = make_op_output<Real>(axis == 0 ? std::vector<std::size_t>{1, c}
                                                  : std::vector<std::size_t>{r, 1},
                                        rec);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y.values()[axis == 0 ? j : i] += x.values()[i * c + j];
  if (rec) {
    auto xn = x.node(), yn = y.node();
    Tape<Real>::active()->push("sum_over_axis", [xn, yn, r, c, axis] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          xn->grad[i * c + j] += yn->grad[axis == 0 ? j : i];
    });
  }
  return y;
}

// Sum of all entries as a 1x1 tensor.
template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& x) {
  const bool rec = detail::recording<Real>({&x});
  Tensor<Real> y = make_op_output<Real>({1, 1}, rec);
  Real acc = Real(0);
  for (Real v : x.values()) acc += v;
  y.values()[0] = acc;
  if (rec) {
    auto xn = x.node(), yn = y.node();
    Tape<Real>::active()->push("sum_all", [xn, yn] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      const Real g = yn->grad[0];
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
    });
  }
  return y;
}

// out[i][j] = m[i][j] * v[i]; v has one entry per row (diag(v) * m).
template <typename Real>
Tensor<Real> scale_rows(const Tensor<Real>& m, const Tensor<Real>& v) {
  detail::require_rank2(m, "scale_rows");
  const std::size_t r = m.rows(), c = m.cols();
  if (v.numel() != r) {
    throw ShapeError("scale_rows: row-scale length mismatch " + shape_str(m.shape()) + " vs " +
                     shape_str(v.shape()));
  }
  const bool rec = detail::recording<Real>({&m, &v});
  Tensor<Real> y = make_op_output<Real>({r, c}, rec);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y.values()[i * c + j] = m.values()[i * c + j] * v.values()[i];
  if (rec) {
    auto mn = m.node(), vn = v.node(), yn = y.node();
    Tape<Real>::active()->push("scale_rows", [mn, vn, yn, r, c] {
      if (yn->grad.empty()) return;
      if (mn->requires_grad) {
        mn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            mn->grad[i * c + j] += yn->grad[i * c + j] * vn->value[i];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
          Real acc = Real(0);
          for (std::size_t j = 0; j < c; ++j)
            acc += yn->grad[i * c + j] * mn->value[i * c + j];
          vn->grad[i] += acc;
        }
      }
    });
  }
  return y;
}

// out[i][j] = m[i][j] * v[j]; v has one entry per column (m * diag(v)).
template <typename Real>
Tensor<Real> scale_cols(const Tensor<Real>& m, const Tensor<Real>& v) {
  detail::require_rank2(m, "scale_cols");
  const std::size_t r = m.rows(), c = m.cols();
  if (v.numel() != c) {
    throw ShapeError("scale_cols: column-scale length mismatch " + shape_str(m.shape()) +
                     " vs " + shape_str(v.shape()));
  }
  const bool rec = detail::recording<Real>({&m, &v});
  Tensor<Real> y = make_op_output<Real>({r, c}, rec);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y.values()[i * c + j] = m.values()[i * c + j] * v.values()[j];
  if (rec) {
    auto mn = m.node(), vn = v.node(), yn = y.node();
    Tape<Real>::active()->push("scale_cols", [mn, vn, yn, r, c] {
      if (yn->grad.empty()) return;
      if (mn->requires_grad) {
        mn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            mn->grad[i * c + j] += yn->grad[i * c + j] * vn->value[j];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            vn->grad[j] += yn->grad[i * c + j] * mn->value[i * c + j];
      }
    });
  }
  return y;
}

// Adds a length-c vector to every row of an r x c matrix.
template <typename Real>
Tensor<Real> add_rowvec(const Tensor<Real>& m, const Tensor<Real>& v) {
  detail::require_rank2(m, "add_rowvec");
  const std::size_t r = m.rows(), c = m.cols();
  if (v.numel() != c) {
    throw ShapeError("add_rowvec: vector length mismatch " + shape_str(m.shape()) + " vs " +
                     shape_str(v.shape()));
  }
  const bool rec = detail::recording<Real>({&m, &v});
  Tensor<Real> y = make_op_output<Real>({r, c}, rec);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y.values()[i * c + j] = m.values()[i * c + j] + v.values()[j];
  if (rec) {
    auto mn = m.node(), vn = v.node(), yn = y.node();
    Tape<Real>::active()->push("add_rowvec", [mn, vn, yn, r, c] {
      if (yn->grad.empty()) return;
      if (mn->requires_grad) {
        mn->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i) mn->grad[i] += yn->grad[i];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) vn->grad[j] += yn->grad[i * c + j];
      }
    });
  }
  return y;
}

// Concatenates rank-2 tensors along axis 0 (stack rows) or 1 (widen rows).
template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: needs at least one input");
  if (axis != 0 && axis != 1) throw ContractError("concat: axis must be 0 or 1");
  for (const auto& p : parts) detail::require_rank2(p, "concat");
  std::size_t total = 0;
  const std::size_t other = axis == 0 ? parts[0].cols() : parts[0].rows();
  for (const auto& p : parts) {
    const std::size_t po = axis == 0 ? p.cols() : p.rows();
    if (po != other) {
      throw ShapeError("concat: incompatible shapes " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += axis == 0 ? p.rows() : p.cols();
  }
  bool rec = false;
  {
    std::vector<const Tensor<Real>*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    if (Tape<Real>::active()) {
      for (auto* p : ptrs)
        if (p->requires_grad()) {
          rec = true;
          break;
        }
    }
  }
  const std::size_t rr = axis == 0 ? total : other;
  const std::size_t cc = axis == 0 ? other : total;
  Tensor<Real> y = make_op_output<Real>({rr, cc}, rec);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pr = p.rows(), pc = p.cols();
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        if (axis == 0)
          y.values()[(offset + i) * cc + j] = p.values()[i * pc + j];
        else
          y.values()[i * cc + (offset + j)] = p.values()[i * pc + j];
      }
    offset += axis == 0 ? pr : pc;
  }
  if (rec) {
    std::vector<std::shared_ptr<detail::TensorNode<Real>>> ins;
    for (const auto& p : parts) ins.push_back(p.node());
    auto yn = y.node();
    Tape<Real>::active()->push("concat", [ins, yn, axis, cc] {
      if (yn->grad.empty()) return;
      std::size_t off = 0;
      for (const auto& in : ins) {
        const std::size_t pr = in->shape[0], pc = in->shape[1];
        if (in->requires_grad) {
          in->ensure_grad();
          for (std::size_t i = 0; i < pr; ++i)
            for (std::size_t j = 0; j < pc; ++j) {
              if (axis == 0)
                in->grad[i * pc + j] += yn->grad[(off + i) * cc + j];
              else
                in->grad[i * pc + j] += yn->grad[i * cc + (off + j)];
            }
        }
        off += axis == 0 ? pr : pc;
      }
    });
  }
  return y;
}

// Normalizes each row over the last axis to zero mean / unit variance
// (epsilon 1e-5), then applies elementwise gain and bias. A constant row maps
// to gain-scaled zeros: the variance term is guarded by epsilon.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.numel() != c || bias.numel() != c) {
    throw ShapeError("layer_norm: gain/bias length mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  const Real eps = Real(1e-5);
  const bool rec = detail::recording<Real>({&x, &gain, &bias});
  Tensor<Real> y = make_op_output<Real>({r, c}, rec);
  // saved per row for the adjoint: x_hat and 1/sqrt(var+eps)
  auto xhat = std::make_shared<std::vector<Real>>(r * c);
  auto inv_std = std::make_shared<std::vector<Real>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const Real* xi = x.values().data() + i * c;
    Real mean = Real(0);
    for (std::size_t j = 0; j < c; ++j) mean += xi[j];
    mean /= Real(c);
    Real var = Real(0);
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= Real(c);
    const Real is = Real(1) / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const Real xh = (xi[j] - mean) * is;
      (*xhat)[i * c + j] = xh;
      y.values()[i * c + j] = xh * gain.values()[j] + bias.values()[j];
    }
  }
  if (rec) {
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), yn = y.node();
    Tape<Real>::active()->push("layer_norm", [xn, gn, bn, yn, xhat, inv_std, r, c] {
      if (yn->grad.empty()) return;
      for (std::size_t i = 0; i < r; ++i) {
        const Real* dy = yn->grad.data() + i * c;
        const Real* xh = xhat->data() + i * c;
        const Real is = (*inv_std)[i];
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t j = 0; j < c; ++j) gn->grad[j] += dy[j] * xh[j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t j = 0; j < c; ++j) bn->grad[j] += dy[j];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          // dxhat = dy * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
          Real sum_dxh = Real(0), sum_dxh_xh = Real(0);
          for (std::size_t j = 0; j < c; ++j) {
            const Real dxh = dy[j] * gn->value[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
          }
          const Real inv_c = Real(1) / Real(c);
          for (std::size_t j = 0; j < c; ++j) {
            const Real dxh = dy[j] * gn->value[j];
            xn->grad[i * c + j] += (dxh - sum_dxh * inv_c - xh[j] * sum_dxh_xh * inv_c) * is;
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Central-finite-difference gradient verification.

template <typename Real>
struct GradCheckReport {
  Real max_rel_err = Real(0);
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked_entries = 0;
  // probes that crossed a ReLU/top-k decision boundary; a central difference
  // straddling a kink does not estimate the derivative, so these entries are
  // excluded from max_rel_err and counted here for the caller to act on
  std::size_t kink_crossings = 0;

  bool ok(Real threshold = Real(1e-4)) const { return max_rel_err < threshold; }
};

// Runs f once with taping to collect analytic gradients, then perturbs every
// entry of every requires_grad parameter by +/-h and compares the central
// difference of the scalar output. Relative error is
// |analytic - numeric| / max(1, |analytic|, |numeric|). f must be
// deterministic; call in 64-bit mode.
template <typename Real, typename F>
GradCheckReport<Real> grad_check(F&& f, const std::vector<std::pair<std::string, Tensor<Real>>>& params,
                                 Real h = Real(1e-3)) {
  GradCheckReport<Real> report;
  for (const auto& [name, p] : params) {
    if (p.requires_grad()) p.node()->grad.assign(p.numel(), Real(0));
  }
  std::vector<std::vector<Real>> analytic(params.size());
  {
    Tape<Real> tape;
    Tensor<Real> loss = f();
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("grad_check: f must return a scalar tensor");
    }
    tape.backward(loss);
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& p = params[pi].second;
    if (!p.requires_grad()) continue;  // frozen tensors are skipped
    analytic[pi] = p.node()->grad.empty() ? std::vector<Real>(p.numel(), Real(0))
                                          : p.node()->grad;
  }
  const bool outer_signature = PathSignature::enabled;
  PathSignature::enabled = true;
  auto eval = [&f](std::uint64_t& signature) -> Real {
    NoGradScope off;
    PathSignature::reset();
    const Real value = f().values()[0];
    signature = PathSignature::hash;
    return value;
  };
  std::uint64_t base_sig = 0;
  eval(base_sig);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi].second;
    if (!p.requires_grad()) continue;
    std::vector<Real>& v = p.node()->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const Real keep = v[i];
      std::uint64_t sig_p = 0, sig_m = 0;
      v[i] = keep + h;
      const Real fp = eval(sig_p);
      v[i] = keep - h;
      const Real fm = eval(sig_m);
      v[i] = keep;
      ++report.checked_entries;
      if (sig_p != base_sig || sig_m != base_sig) {
        ++report.kink_crossings;
        continue;
      }
      const Real numeric = (fp - fm) / (Real(2) * h);
      const Real a = analytic[pi][i];
      const Real denom = std::max(Real(1), std::max(std::abs(a), std::abs(numeric)));
      const Real rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].first;
        report.worst_index = i;
      }
    }
  }
  PathSignature::enabled = outer_signature;
  return report;
}

}  // namespace dgnc
