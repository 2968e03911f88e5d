#pragma once
// Minimal reverse-mode differentiable tensor engine. Tensors are row-major,
// dense, and templated on the scalar type: double for verification, float for
// training throughput.

#include "stylenet/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

namespace stylenet::ad {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

/// Variant with a lazily built message, for checks on hot paths.
template <class F>
  requires std::is_invocable_r_v<std::string, F>
void require(bool ok, F&& what) {
  if (!ok) throw ShapeError(what());
}

// Graph recording switch; forward passes under NoGradGuard build no graph.
inline thread_local bool grad_mode_enabled = true;

class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode_enabled) { grad_mode_enabled = false; }
  ~NoGradGuard() { grad_mode_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Records the sign of every ReLU input; a finite-difference probe whose
/// sign pattern differs from the baseline crossed a kink and is excluded.
struct ReluSignTrace {
  std::vector<std::uint8_t> signs;
};
inline thread_local ReluSignTrace* active_relu_trace = nullptr;

template <class Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward_fn;

  std::vector<Real>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    return grad;
  }
};

template <class Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

  static Tensor from_values(Shape shape, std::vector<Real> values, bool requires_grad = false) {
    require(values.size() == ad::numel(shape), [&] {
      return "from_values: " + std::to_string(values.size()) + " values for shape " + ad::to_string(shape);
    });
    auto n = std::make_shared<Node<Real>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor full(Shape shape, Real v, bool requires_grad = false) {
    const auto count = ad::numel(shape);
    return from_values(std::move(shape), std::vector<Real>(count, v), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), Real(0), requires_grad); }
  static Tensor scalar(Real v, bool requires_grad = false) { return from_values({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  const std::vector<Real>& values() const { return node_->value; }
  /// Direct access for leaves (optimizer updates, initialization).
  std::vector<Real>& values() { return node_->value; }
  const Real* data() const { return node_->value.data(); }

  const std::vector<Real>& grad() const { return node_->grad; }
  std::vector<Real>& grad_buffer() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  Real item() const {
    require(numel() == 1, "item: tensor is not a scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
  }
  bool is_leaf() const { return !node_->backward_fn; }

  const std::shared_ptr<Node<Real>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<Real>> node_;
};

namespace detail {

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MapMat = Eigen::Map<RowMat<Real>>;
template <class Real>
using CMapMat = Eigen::Map<const RowMat<Real>>;

template <class Real>
MapMat<Real> mat(Real* p, std::size_t r, std::size_t c) {
  return MapMat<Real>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
template <class Real>
CMapMat<Real> cmat(const Real* p, std::size_t r, std::size_t c) {
  return CMapMat<Real>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

/// Writes (or adds) a matrix expression into plain storage. Evaluation goes
/// through an aligned scratch matrix so the vectorized loop split, and hence
/// the rounding, does not depend on where the heap placed `dst`.
template <class Real, class Expr>
void store(Real* dst, const Expr& e, bool accumulate) {
  thread_local RowMat<Real> scratch;
  scratch.noalias() = e;
  const Real* s = scratch.data();
  const auto n = static_cast<std::size_t>(scratch.size());
  if (accumulate)
    for (std::size_t i = 0; i < n; ++i) dst[i] += s[i];
  else
    std::copy(s, s + n, dst);
}

/// Returns the parent's gradient buffer, or nullptr when it needs none.
template <class Real>
Real* grad_of(const Tensor<Real>& t) {
  return t.requires_grad() ? t.node()->grad_buffer().data() : nullptr;
}

template <class Real, class Backward>
Tensor<Real> make_op(Shape shape, std::vector<Real> value, std::initializer_list<Tensor<Real>> inputs,
                     Backward&& bw) {
  auto n = std::make_shared<Node<Real>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (grad_mode_enabled)
    for (const auto& t : inputs) needs = needs || (t.defined() && t.requires_grad());
  if (needs) {
    n->requires_grad = true;
    for (const auto& t : inputs)
      if (t.defined() && t.requires_grad()) n->parents.push_back(t.node());
    n->backward_fn = std::forward<Backward>(bw);
  }
  return Tensor<Real>(std::move(n));
}

inline bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

}  // namespace detail

/// Accumulates d(loss)/d(t) into every requires_grad tensor reachable from
/// `loss`. Intermediate gradients are reset per call; leaf gradients add up.
template <class Real>
void backward(const Tensor<Real>& loss) {
  require(loss.defined() && loss.numel() == 1, "backward: loss must be a scalar");
  if (!loss.requires_grad()) return;
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Real>* p = node->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto* n : order)
    if (n->backward_fn) n->grad.assign(n->value.size(), Real(0));
  loss.node()->grad_buffer()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------
// Elementwise

/// a + b; b may also be a trailing-shape suffix of a (broadcast over leading
/// dims), or vice versa.
template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape() && detail::is_suffix(b.shape(), a.shape())) return add(b, a);
  require(detail::is_suffix(a.shape(), b.shape()),
          [&] { return "add: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()); });
  const std::size_t n = a.numel(), m = b.numel();
  std::vector<Real> out(a.values());
  const Real* bv = b.data();
  for (std::size_t r = 0; r < n; r += m)
    for (std::size_t i = 0; i < m; ++i) out[r + i] += bv[i];
  return detail::make_op<Real>(a.shape(), std::move(out), {a, b}, [a, b, n, m](const Node<Real>& o) {
    if (Real* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i];
    if (Real* gb = detail::grad_of(b))
      for (std::size_t r = 0; r < n; r += m)
        for (std::size_t i = 0; i < m; ++i) gb[i] += o.grad[r + i];
  });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch");
  const std::size_t n = a.numel();
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] - b.values()[i];
  return detail::make_op<Real>(a.shape(), std::move(out), {a, b}, [a, b, n](const Node<Real>& o) {
    if (Real* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i];
    if (Real* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < n; ++i) gb[i] -= o.grad[i];
  });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  const std::size_t n = a.numel();
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] * b.values()[i];
  return detail::make_op<Real>(a.shape(), std::move(out), {a, b}, [a, b, n](const Node<Real>& o) {
    if (Real* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i] * b.values()[i];
    if (Real* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < n; ++i) gb[i] += o.grad[i] * a.values()[i];
  });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  std::vector<Real> out(a.values());
  for (auto& v : out) v *= s;
  return detail::make_op<Real>(a.shape(), std::move(out), {a}, [a, s](const Node<Real>& o) {
    if (Real* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += s * o.grad[i];
  });
}

/// s * x with a one-element tensor s (trainable stream weights).
template <class Real>
Tensor<Real> scalar_mul(const Tensor<Real>& s, const Tensor<Real>& x) {
  require(s.numel() == 1, "scalar_mul: first operand must hold one element");
  const Real k = s.values()[0];
  std::vector<Real> out(x.values());
  for (auto& v : out) v *= k;
  return detail::make_op<Real>(x.shape(), std::move(out), {s, x}, [s, x](const Node<Real>& o) {
    const Real k = s.values()[0];
    if (Real* gs = detail::grad_of(s)) {
      Real acc = 0;
      for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * x.values()[i];
      gs[0] += acc;
    }
    if (Real* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += k * o.grad[i];
  });
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  std::vector<Real> out(x.values());
  if (active_relu_trace) {
    auto& s = active_relu_trace->signs;
    for (auto v : out) s.push_back(v > Real(0));
  }
  for (auto& v : out) v = v > Real(0) ? v : Real(0);
  return detail::make_op<Real>(x.shape(), std::move(out), {x}, [x](const Node<Real>& o) {
    if (Real* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        if (x.values()[i] > Real(0)) gx[i] += o.grad[i];
  });
}

/// Inverted dropout: survivors scaled by 1/(1-p); identity outside training.
template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const Real k = static_cast<Real>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<Real>>(x.numel());
  std::vector<Real> out(x.values());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(rng) ? k : Real(0);
    out[i] *= (*mask)[i];
  }
  return detail::make_op<Real>(x.shape(), std::move(out), {x}, [x, mask](const Node<Real>& o) {
    if (Real* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += (*mask)[i] * o.grad[i];
  });
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real acc = 0;
  for (auto v : x.values()) acc += v;
  return detail::make_op<Real>({1}, {acc}, {x}, [x](const Node<Real>& o) {
    if (Real* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += o.grad[0];
  });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  return scale(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

// ---------------------------------------------------------------------------
// Layout

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  require(numel(shape) == x.numel(), [&] { return "reshape: " + to_string(x.shape()) + " -> " + to_string(shape); });
  return detail::make_op<Real>(std::move(shape), x.values(), {x}, [x](const Node<Real>& o) {
    if (Real* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
  });
}

/// General axis permutation: output axis i is input axis perm[i].
template <class Real>
Tensor<Real> permute(const Tensor<Real>& x, const std::vector<std::size_t>& perm) {
  const auto& in = x.shape();
  const std::size_t r = in.size();
  require(perm.size() == r, "permute: rank mismatch");
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in.at(perm[i]);
    src_stride[i] = in_stride[perm[i]];
  }
  const std::size_t n = x.numel();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t lin = 0; lin < n; ++lin) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * src_stride[i];
    (*map)[lin] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.values()[(*map)[i]];
  return detail::make_op<Real>(std::move(out_shape), std::move(out), {x}, [x, map](const Node<Real>& o) {
    if (Real* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[(*map)[i]] += o.grad[i];
  });
}

/// Swaps the last two axes.
template <class Real>
Tensor<Real> transpose(const Tensor<Real>& x) {
  require(x.rank() >= 2, "transpose: rank must be >= 2");
  const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  const std::size_t batch = x.numel() / (r * c);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<Real> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    detail::mat(out.data() + b * r * c, c, r) = detail::cmat(x.data() + b * r * c, r, c).transpose();
  return detail::make_op<Real>(std::move(shape), std::move(out), {x}, [x, r, c, batch](const Node<Real>& o) {
    if (Real* gx = detail::grad_of(x))
      for (std::size_t b = 0; b < batch; ++b)
        detail::mat(gx + b * r * c, r, c) += detail::cmat(o.grad.data() + b * r * c, c, r).transpose();
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product over the last two axes. Leading (batch) axes must
/// match, or one operand may be a plain matrix shared across the batch.
template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a.rank() >= 2 && b.rank() >= 2, "matmul: operands must have rank >= 2");
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  require(k == k2,
          [&] { return "matmul: inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()); });
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  require(a_batch == b_batch || a_batch.empty() || b_batch.empty(),
          [&] { return "matmul: batch dims differ: " + to_string(a.shape()) + " x " + to_string(b.shape()); });
  const Shape& batch_shape = a_batch.empty() ? b_batch : a_batch;
  const std::size_t batch = numel(batch_shape);
  const bool a_b = !a_batch.empty(), b_b = !b_batch.empty();
  Shape out_shape = batch_shape;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<Real> out(batch * m * n);
  using detail::cmat;
  using detail::mat;
  if (a_b && !b_b) {
    detail::store(out.data(), cmat(a.data(), batch * m, k) * cmat(b.data(), k, n), false);
  } else {
    for (std::size_t i = 0; i < batch; ++i)
      detail::store(out.data() + i * m * n,
                    cmat(a.data() + (a_b ? i * m * k : 0), m, k) * cmat(b.data() + (b_b ? i * k * n : 0), k, n), false);
  }
  return detail::make_op<Real>(std::move(out_shape), std::move(out), {a, b},
                               [a, b, m, k, n, batch, a_b, b_b](const Node<Real>& o) {
                                 Real* ga = detail::grad_of(a);
                                 Real* gb = detail::grad_of(b);
                                 const Real* g = o.grad.data();
                                 if (a_b && !b_b) {
                                   if (ga) detail::store(ga, cmat(g, batch * m, n) * cmat(b.data(), k, n).transpose(), true);
                                   if (gb) detail::store(gb, cmat(a.data(), batch * m, k).transpose() * cmat(g, batch * m, n), true);
                                   return;
                                 }
                                 for (std::size_t i = 0; i < batch; ++i) {
                                   const auto gi = cmat(g + i * m * n, m, n);
                                   const std::size_t ao = a_b ? i * m * k : 0, bo = b_b ? i * k * n : 0;
                                   if (ga) detail::store(ga + ao, gi * cmat(b.data() + bo, k, n).transpose(), true);
                                   if (gb) detail::store(gb + bo, cmat(a.data() + ao, m, k).transpose() * gi, true);
                                 }
                               });
}

/// x (R x in) times W^T (W is out x in) plus optional bias (out).
template <class Real>
Tensor<Real> fully_connected(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias = {}) {
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1),
          [&] { return "fully_connected: x " + to_string(x.shape()) + " vs W " + to_string(w.shape()); });
  const std::size_t rows = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (bias.defined()) require(bias.numel() == out_f, "fully_connected: bias size mismatch");
  std::vector<Real> out(rows * out_f);
  using detail::cmat;
  using detail::mat;
  detail::store(out.data(), cmat(x.data(), rows, in) * cmat(w.data(), out_f, in).transpose(), false);
  if (bias.defined())
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_f; ++j) out[r * out_f + j] += bias.values()[j];
  return detail::make_op<Real>({rows, out_f}, std::move(out), {x, w, bias},
                               [x, w, bias, rows, in, out_f](const Node<Real>& o) {
                                 const auto g = cmat(o.grad.data(), rows, out_f);
                                 if (Real* gx = detail::grad_of(x)) detail::store(gx, g * cmat(w.data(), out_f, in), true);
                                 if (Real* gw = detail::grad_of(w)) detail::store(gw, g.transpose() * cmat(x.data(), rows, in), true);
                                 if (bias.defined())
                                   if (Real* gb = detail::grad_of(bias))
                                     for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t j = 0; j < out_f; ++j) gb[j] += o.grad[r * out_f + j];
                               });
}

namespace detail {

struct ConvGeometry {
  std::size_t n, cin, t, v, cout, kt, kv, stride, pad, t_out, v_out;
  std::size_t k() const { return cin * kt * kv; }
  std::size_t cols() const { return t_out * v_out; }
  bool pointwise() const { return kt == 1 && kv == 1 && stride == 1 && pad == 0; }
};

template <class Real>
void im2col(const Real* x, const ConvGeometry& g, Real* col) {
  const std::size_t cols = g.cols();
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t dt = 0; dt < g.kt; ++dt)
      for (std::size_t dv = 0; dv < g.kv; ++dv) {
        Real* row = col + ((ci * g.kt + dt) * g.kv + dv) * cols;
        for (std::size_t to = 0; to < g.t_out; ++to) {
          const auto ti = static_cast<std::ptrdiff_t>(to * g.stride + dt) - static_cast<std::ptrdiff_t>(g.pad);
          Real* dst = row + to * g.v_out;
          if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(g.t)) {
            std::fill(dst, dst + g.v_out, Real(0));
          } else {
            const Real* src = x + (ci * g.t + static_cast<std::size_t>(ti)) * g.v + dv;
            std::copy(src, src + g.v_out, dst);
          }
        }
      }
}

template <class Real>
void col2im_add(const Real* col, const ConvGeometry& g, Real* x) {
  const std::size_t cols = g.cols();
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t dt = 0; dt < g.kt; ++dt)
      for (std::size_t dv = 0; dv < g.kv; ++dv) {
        const Real* row = col + ((ci * g.kt + dt) * g.kv + dv) * cols;
        for (std::size_t to = 0; to < g.t_out; ++to) {
          const auto ti = static_cast<std::ptrdiff_t>(to * g.stride + dt) - static_cast<std::ptrdiff_t>(g.pad);
          if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(g.t)) continue;
          Real* dst = x + (ci * g.t + static_cast<std::size_t>(ti)) * g.v + dv;
          const Real* src = row + to * g.v_out;
          for (std::size_t vo = 0; vo < g.v_out; ++vo) dst[vo] += src[vo];
        }
      }
}

}  // namespace detail

/// Cross-correlation of x (N,Cin,T,V) with w (Cout,Cin,kt,kv); stride and
/// zero padding act on the temporal axis only.
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias = {},
                    std::size_t stride = 1, std::size_t pad = 0) {
  require(x.rank() == 4 && w.rank() == 4, "conv2d: expected 4-d input and weight");
  require(x.dim(1) == w.dim(1), [&] {
    return "conv2d: input channels " + std::to_string(x.dim(1)) + " vs weight " + std::to_string(w.dim(1));
  });
  require(w.dim(2) % 2 == 1, "conv2d: temporal kernel extent must be odd");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(x.dim(2) + 2 * pad >= w.dim(2) && x.dim(3) >= w.dim(3), "conv2d: kernel larger than input");
  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, pad, 0, 0};
  g.t_out = (g.t + 2 * pad - g.kt) / stride + 1;
  g.v_out = g.v - g.kv + 1;
  if (bias.defined()) require(bias.numel() == g.cout, "conv2d: bias size mismatch");
  const std::size_t in_sz = g.cin * g.t * g.v, out_sz = g.cout * g.cols();
  std::vector<Real> out(g.n * out_sz);
  std::vector<Real> col(g.pointwise() ? 0 : g.k() * g.cols());
  using detail::cmat;
  using detail::mat;
  const auto wm = cmat(w.data(), g.cout, g.k());
  for (std::size_t n = 0; n < g.n; ++n) {
    const Real* src = x.data() + n * in_sz;
    if (!g.pointwise()) {
      detail::im2col(src, g, col.data());
      src = col.data();
    }
    detail::store(out.data() + n * out_sz, wm * cmat(src, g.k(), g.cols()), false);
    auto y = mat(out.data() + n * out_sz, g.cout, g.cols());
    if (bias.defined())
      for (std::size_t c = 0; c < g.cout; ++c) y.row(static_cast<Eigen::Index>(c)).array() += bias.values()[c];
  }
  return detail::make_op<Real>(
      {g.n, g.cout, g.t_out, g.v_out}, std::move(out), {x, w, bias}, [x, w, bias, g, in_sz, out_sz](const Node<Real>& o) {
        Real* gx = detail::grad_of(x);
        Real* gw = detail::grad_of(w);
        Real* gb = bias.defined() ? detail::grad_of(bias) : nullptr;
        std::vector<Real> col(g.pointwise() ? 0 : g.k() * g.cols());
        std::vector<Real> dcol(g.pointwise() || !gx ? 0 : g.k() * g.cols());
        const auto wm = cmat(w.data(), g.cout, g.k());
        for (std::size_t n = 0; n < g.n; ++n) {
          const auto gy = cmat(o.grad.data() + n * out_sz, g.cout, g.cols());
          if (gb)
            for (std::size_t c = 0; c < g.cout; ++c) {
              const Real* row = o.grad.data() + n * out_sz + c * g.cols();
              gb[c] += std::accumulate(row, row + g.cols(), Real(0));
            }
          const Real* src = x.data() + n * in_sz;
          if (gw) {
            if (!g.pointwise()) {
              detail::im2col(src, g, col.data());
              src = col.data();
            }
            detail::store(gw, gy * cmat(src, g.k(), g.cols()).transpose(), true);
          }
          if (gx) {
            if (g.pointwise()) {
              detail::store(gx + n * in_sz, wm.transpose() * gy, true);
            } else {
              detail::store(dcol.data(), wm.transpose() * gy, false);
              detail::col2im_add(dcol.data(), g, gx + n * in_sz);
            }
          }
        }
      });
}

/// Batch normalization over axis 1 of x (N, C, ...). Training mode uses
/// batch statistics and updates the running estimates in place.
template <class Real>
Tensor<Real> batchnorm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                       Tensor<Real>& running_mean, Tensor<Real>& running_var, bool training, double momentum = 0.1,
                       double eps = 1e-5) {
  require(x.rank() >= 2, "batchnorm: rank must be >= 2");
  const std::size_t outer = x.dim(0), ch = x.dim(1), inner = x.numel() / (outer * ch);
  require(gamma.numel() == ch && beta.numel() == ch && running_mean.numel() == ch && running_var.numel() == ch,
          [&] { return "batchnorm: parameter size does not match channel count " + std::to_string(ch); });
  const std::size_t count = outer * inner;
  auto xhat = std::make_shared<std::vector<Real>>(x.numel());
  auto inv_std = std::make_shared<std::vector<Real>>(ch);
  std::vector<Real> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t c = 0; c < ch; ++c) {
    double mu, var;
    if (training) {
      double s = 0;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) s += xv[(o * ch + c) * inner + i];
      mu = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = xv[(o * ch + c) * inner + i] - mu;
          ss += d * d;
        }
      var = ss / static_cast<double>(count);
      auto& rm = running_mean.values()[c];
      auto& rv = running_var.values()[c];
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      rm = static_cast<Real>((1.0 - momentum) * rm + momentum * mu);
      rv = static_cast<Real>((1.0 - momentum) * rv + momentum * unbiased);
    } else {
      mu = running_mean.values()[c];
      var = running_var.values()[c];
    }
    const Real is = static_cast<Real>(1.0 / std::sqrt(var + eps));
    (*inv_std)[c] = is;
    const Real g = gamma.values()[c], b = beta.values()[c], m = static_cast<Real>(mu);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = (o * ch + c) * inner + i;
        const Real h = (xv[idx] - m) * is;
        (*xhat)[idx] = h;
        out[idx] = g * h + b;
      }
  }
  return detail::make_op<Real>(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, outer, ch, inner, count, training](const Node<Real>& o) {
        Real* gx = detail::grad_of(x);
        Real* gg = detail::grad_of(gamma);
        Real* gbeta = detail::grad_of(beta);
        for (std::size_t c = 0; c < ch; ++c) {
          double sg = 0, sgh = 0;
          for (std::size_t ob = 0; ob < outer; ++ob)
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t idx = (ob * ch + c) * inner + i;
              sg += o.grad[idx];
              sgh += o.grad[idx] * (*xhat)[idx];
            }
          if (gg) gg[c] += static_cast<Real>(sgh);
          if (gbeta) gbeta[c] += static_cast<Real>(sg);
          if (!gx) continue;
          const double k = static_cast<double>(gamma.values()[c]) * (*inv_std)[c];
          const double mg = sg / static_cast<double>(count), mgh = sgh / static_cast<double>(count);
          for (std::size_t ob = 0; ob < outer; ++ob)
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t idx = (ob * ch + c) * inner + i;
              if (training) gx[idx] += static_cast<Real>(k * (o.grad[idx] - mg - (*xhat)[idx] * mgh));
              else gx[idx] += static_cast<Real>(k * o.grad[idx]);
            }
        }
      });
}

/// Max-shifted softmax along `axis`.
template <class Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis) {
  require(axis < x.rank(), "softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  std::vector<Real> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
      Real z = 0;
      for (std::size_t l = 0; l < len; ++l) z += (out[base + l * inner] = std::exp(xv[base + l * inner] - mx));
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= z;
    }
  return detail::make_op<Real>(x.shape(), std::move(out), {x}, [x, outer, inner, len](const Node<Real>& o) {
    Real* gx = detail::grad_of(x);
    if (!gx) return;
    for (std::size_t ob = 0; ob < outer; ++ob)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = ob * len * inner + i;
        Real dot = 0;
        for (std::size_t l = 0; l < len; ++l) dot += o.grad[base + l * inner] * o.value[base + l * inner];
        for (std::size_t l = 0; l < len; ++l)
          gx[base + l * inner] += o.value[base + l * inner] * (o.grad[base + l * inner] - dot);
      }
  });
}

/// Averages all axes after the first `keep` axes (global average pooling).
template <class Real>
Tensor<Real> mean_trailing(const Tensor<Real>& x, std::size_t keep) {
  require(keep >= 1 && keep < x.rank(), "mean_trailing: bad axis count");
  Shape shape(x.shape().begin(), x.shape().begin() + static_cast<std::ptrdiff_t>(keep));
  const std::size_t rows = numel(shape), len = x.numel() / rows;
  std::vector<Real> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    Real s = 0;
    for (std::size_t i = 0; i < len; ++i) s += x.values()[r * len + i];
    out[r] = s / static_cast<Real>(len);
  }
  return detail::make_op<Real>(std::move(shape), std::move(out), {x}, [x, rows, len](const Node<Real>& o) {
    if (Real* gx = detail::grad_of(x))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < len; ++i) gx[r * len + i] += o.grad[r] / static_cast<Real>(len);
  });
}

/// Mean over the batch of -log softmax(logits)[label].
template <class Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits, const std::vector<std::size_t>& labels) {
  require(logits.rank() == 2, "cross_entropy: logits must be N x C");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  require(labels.size() == n, "cross_entropy: one label per row required");
  for (auto l : labels)
    if (l >= c) throw std::out_of_range("cross_entropy: label " + std::to_string(l) + " >= class count");
  auto prob = std::make_shared<std::vector<Real>>(n * c);
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = logits.data() + i * c;
    const Real mx = *std::max_element(row, row + c);
    double z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) (*prob)[i * c + j] = static_cast<Real>(std::exp(static_cast<double>(row[j] - mx)) / z);
    loss += std::log(z) - static_cast<double>(row[labels[i]] - mx);
  }
  loss /= static_cast<double>(n);
  return detail::make_op<Real>({1}, {static_cast<Real>(loss)}, {logits},
                               [logits, prob, labels, n, c](const Node<Real>& o) {
                                 Real* g = detail::grad_of(logits);
                                 if (!g) return;
                                 const Real k = o.grad[0] / static_cast<Real>(n);
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < c; ++j)
                                     g[i * c + j] += k * ((*prob)[i * c + j] - (j == labels[i] ? Real(1) : Real(0)));
                               });
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double norm_rel_error = 0.0;  // |a - n|_2 / max(|a|_2, |n|_2) over checked coordinates
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes that crossed a ReLU kink
  double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;

  /// Folds in a check over a disjoint set of coordinates.
  GradCheckResult& merge(const GradCheckResult& o) {
    max_rel_error = std::max(max_rel_error, o.max_rel_error);
    max_abs_error = std::max(max_abs_error, o.max_abs_error);
    checked += o.checked;
    skipped += o.skipped;
    diff_sq += o.diff_sq;
    analytic_sq += o.analytic_sq;
    numeric_sq += o.numeric_sq;
    const double norm = std::sqrt(std::max(analytic_sq, numeric_sq));
    norm_rel_error = norm > 0 ? std::sqrt(diff_sq) / norm : 0.0;
    return *this;
  }
};

/// Compares reverse-mode gradients of the scalar `f()` with respect to each
/// input against central differences. Relative error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8). `stride` > 1
/// checks every stride-th coordinate only.
template <class F>
GradCheckResult grad_check(F&& f, std::vector<Tensor<double>> inputs, double eps = 1e-5, std::size_t stride = 1) {
  std::vector<bool> had_grad;
  for (auto& t : inputs) {
    had_grad.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  ReluSignTrace base;
  active_relu_trace = &base;
  Tensor<double> loss;
  try {
    loss = f();
  } catch (...) {
    active_relu_trace = nullptr;
    throw;
  }
  active_relu_trace = nullptr;
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0));

  auto probe = [&](ReluSignTrace& trace) {
    NoGradGuard ng;
    active_relu_trace = &trace;
    const double v = f().item();
    active_relu_trace = nullptr;
    return v;
  };

  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& vals = inputs[k].values();
    for (std::size_t i = 0; i < vals.size(); i += std::max<std::size_t>(stride, 1)) {
      const double orig = vals[i];
      ReluSignTrace tp, tm;
      vals[i] = orig + eps;
      const double fp = probe(tp);
      vals[i] = orig - eps;
      const double fm = probe(tm);
      vals[i] = orig;
      if (tp.signs != base.signs || tm.signs != base.signs) {
        ++res.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      res.max_rel_error = std::max(res.max_rel_error, std::abs(a - numeric) / denom);
      res.max_abs_error = std::max(res.max_abs_error, std::abs(a - numeric));
      res.diff_sq += (a - numeric) * (a - numeric);
      res.analytic_sq += a * a;
      res.numeric_sq += numeric * numeric;
      ++res.checked;
    }
  }
  res.merge({});
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    inputs[k].zero_grad();
    inputs[k].set_requires_grad(had_grad[k]);
  }
  return res;
}

}  // namespace stylenet::ad
