// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a graph node holding values, an optional
// gradient buffer, and a closure that pushes gradients into its parents.
// Graphs are built eagerly by the free functions below and consumed once
// by backward().

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace gatedap {

using real = double;
using Shape = std::vector<std::size_t>;

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error("shape error: " + m) {}
};
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& m) : std::runtime_error("domain error: " + m) {}
};
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& m) : std::runtime_error("usage error: " + m) {}
};
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& m) : std::runtime_error("format error: " + m) {}
};
struct InputError : std::runtime_error {
  explicit InputError(const std::string& m) : std::runtime_error("input error: " + m) {}
};
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& m) : std::runtime_error("numerical error: " + m) {}
};

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

struct Node {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape s) { return full(std::move(s), 0.0); }

  static Tensor full(Shape s, real v) {
    auto n = std::make_shared<Node>();
    n->value.assign(numel(s), v);
    n->shape = std::move(s);
    return Tensor(n);
  }

  static Tensor from_values(Shape s, std::vector<real> v) {
    if (numel(s) != v.size())
      throw ShapeError("from_values: " + shape_str(s) + " vs " + std::to_string(v.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(s);
    n->value = std::move(v);
    return Tensor(n);
  }

  static Tensor scalar(real v) { return from_values({1}, {v}); }

  bool valid() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t size() const { return n_->value.size(); }
  std::size_t rank() const { return n_->shape.size(); }
  std::vector<real>& value() { return n_->value; }
  const std::vector<real>& value() const { return n_->value; }
  std::vector<real>& grad() { return n_->grad; }
  const std::vector<real>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }

  // Marks a leaf as trainable. Only meaningful before building ops on it.
  Tensor& set_requires_grad(bool rg = true) {
    n_->requires_grad = rg;
    return *this;
  }

  real item() const {
    if (size() != 1) throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
    return n_->value[0];
  }

  real& operator[](std::size_t i) { return n_->value[i]; }
  real operator[](std::size_t i) const { return n_->value[i]; }

  const std::shared_ptr<Node>& node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<real> value,
                      std::vector<Tensor> parents,
                      const std::function<std::function<void()>(Node*)>& make_backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.node());
  }
  if (n->requires_grad && make_backprop) n->backprop = make_backprop(n.get());
  return Tensor(n);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse sweep from a scalar loss. Accumulates gradients into every
// requires_grad node reachable from it, then dismantles the graph so each
// forward pass is consumed exactly once.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) throw UsageError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Node* root = loss.node().get();
  if (root->consumed) throw UsageError("backward: graph already consumed");
  root->consumed = true;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() == n->value.size()) n->backprop();
  }
  // Break parent links so intermediate buffers free promptly; leaves keep
  // their accumulated gradients.
  for (Node* n : order) {
    if (n->backprop) {
      n->backprop = nullptr;
      n->parents.clear();
    }
  }
}

// ---------------------------------------------------------------------------
// broadcasting
// ---------------------------------------------------------------------------

namespace detail {

// Right-aligned broadcast: axes align from the right, size-1 axes stretch.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `s` when broadcast to `out` (0 on stretched axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> st(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t ax = s.size() - 1 - i;
    const std::size_t oax = r - 1 - i;
    if (s[ax] != 1) st[oax] = stride;
    stride *= s[ax];
  }
  // stretched own axes keep stride 0; leading missing axes are already 0
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t oax = r - s.size() + i;
    if (s[i] == 1 && out[oax] != 1) st[oax] = 0;
  }
  return st;
}

template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t n = numel(out);
  std::vector<std::size_t> idx(r, 0);
  std::size_t offa = 0, offb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, offa, offb);
    for (std::size_t ax = r; ax-- > 0;) {
      idx[ax]++;
      offa += sa[ax];
      offb += sb[ax];
      if (idx[ax] < out[ax]) break;
      offa -= sa[ax] * out[ax];
      offb -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// binary elementwise ops
// ---------------------------------------------------------------------------

enum class BinaryOp { add, sub, hadamard, div };

inline Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b) {
  Node* an = a.node().get();
  Node* bn = b.node().get();
  const bool same = a.shape() == b.shape();
  Shape out_shape = same ? a.shape() : detail::broadcast_shape(a.shape(), b.shape());
  std::vector<real> out(numel(out_shape));

  auto apply = [op](real x, real y) -> real {
    switch (op) {
      case BinaryOp::add: return x + y;
      case BinaryOp::sub: return x - y;
      case BinaryOp::hadamard: return x * y;
      case BinaryOp::div:
        if (y == 0.0) throw DomainError("division by zero");
        return x / y;
    }
    return 0.0;
  };

  std::vector<std::size_t> sa, sb;
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(an->value[i], bn->value[i]);
  } else {
    sa = detail::broadcast_strides(a.shape(), out_shape);
    sb = detail::broadcast_strides(b.shape(), out_shape);
    detail::for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      out[i] = apply(an->value[ia], bn->value[ib]);
    });
  }

  return detail::make_op(std::move(out_shape), std::move(out), {a, b}, [=](Node* n) {
    return [=]() {
      const bool ga = an->requires_grad;
      const bool gb = bn->requires_grad;
      if (ga) an->ensure_grad();
      if (gb) bn->ensure_grad();
      auto accum = [&](std::size_t i, std::size_t ia, std::size_t ib) {
        const real g = n->grad[i];
        switch (op) {
          case BinaryOp::add:
            if (ga) an->grad[ia] += g;
            if (gb) bn->grad[ib] += g;
            break;
          case BinaryOp::sub:
            if (ga) an->grad[ia] += g;
            if (gb) bn->grad[ib] -= g;
            break;
          case BinaryOp::hadamard:
            if (ga) an->grad[ia] += g * bn->value[ib];
            if (gb) bn->grad[ib] += g * an->value[ia];
            break;
          case BinaryOp::div: {
            const real inv = 1.0 / bn->value[ib];
            if (ga) an->grad[ia] += g * inv;
            if (gb) bn->grad[ib] -= g * an->value[ia] * inv * inv;
            break;
          }
        }
      };
      if (same) {
        for (std::size_t i = 0; i < n->value.size(); ++i) accum(i, i, i);
      } else {
        detail::for_each_broadcast(n->shape, sa, sb, accum);
      }
    };
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryOp::sub, a, b); }
inline Tensor hadamard(const Tensor& a, const Tensor& b) { return binary(BinaryOp::hadamard, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return binary(BinaryOp::div, a, b); }

// ---------------------------------------------------------------------------
// unary elementwise ops
// ---------------------------------------------------------------------------

enum class UnaryOp { sigmoid, elu, relu, tanh_op, log_op, negate, exp_op, sqrt_op, square };

inline Tensor elementwise(UnaryOp op, const Tensor& x) {
  Node* xn = x.node().get();
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const real v = xn->value[i];
    switch (op) {
      case UnaryOp::sigmoid: out[i] = 1.0 / (1.0 + std::exp(-v)); break;
      case UnaryOp::elu: out[i] = v < 0.0 ? std::expm1(v) : v; break;
      case UnaryOp::relu: out[i] = v > 0.0 ? v : 0.0; break;
      case UnaryOp::tanh_op: out[i] = std::tanh(v); break;
      case UnaryOp::log_op:
        if (v <= 0.0) throw DomainError("log of non-positive value " + std::to_string(v));
        out[i] = std::log(v);
        break;
      case UnaryOp::negate: out[i] = -v; break;
      case UnaryOp::exp_op: out[i] = std::exp(v); break;
      case UnaryOp::sqrt_op:
        if (v < 0.0) throw DomainError("sqrt of negative value " + std::to_string(v));
        out[i] = std::sqrt(v);
        break;
      case UnaryOp::square: out[i] = v * v; break;
    }
  }
  return detail::make_op(x.shape(), std::move(out), {x}, [=](Node* n) {
    return [=]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < n->value.size(); ++i) {
        const real g = n->grad[i];
        const real v = xn->value[i];
        const real y = n->value[i];
        switch (op) {
          case UnaryOp::sigmoid: xn->grad[i] += g * y * (1.0 - y); break;
          case UnaryOp::elu: xn->grad[i] += g * (v < 0.0 ? y + 1.0 : 1.0); break;
          case UnaryOp::relu: xn->grad[i] += v > 0.0 ? g : 0.0; break;
          case UnaryOp::tanh_op: xn->grad[i] += g * (1.0 - y * y); break;
          case UnaryOp::log_op: xn->grad[i] += g / v; break;
          case UnaryOp::negate: xn->grad[i] -= g; break;
          case UnaryOp::exp_op: xn->grad[i] += g * y; break;
          case UnaryOp::sqrt_op: xn->grad[i] += g * 0.5 / y; break;
          case UnaryOp::square: xn->grad[i] += g * 2.0 * v; break;
        }
      }
    };
  });
}

inline Tensor sigmoid(const Tensor& x) { return elementwise(UnaryOp::sigmoid, x); }
inline Tensor elu(const Tensor& x) { return elementwise(UnaryOp::elu, x); }
inline Tensor relu(const Tensor& x) { return elementwise(UnaryOp::relu, x); }
inline Tensor tanh_t(const Tensor& x) { return elementwise(UnaryOp::tanh_op, x); }
inline Tensor log_t(const Tensor& x) { return elementwise(UnaryOp::log_op, x); }
inline Tensor negate(const Tensor& x) { return elementwise(UnaryOp::negate, x); }
inline Tensor exp_t(const Tensor& x) { return elementwise(UnaryOp::exp_op, x); }
inline Tensor sqrt_t(const Tensor& x) { return elementwise(UnaryOp::sqrt_op, x); }
inline Tensor square(const Tensor& x) { return elementwise(UnaryOp::square, x); }

inline Tensor scale(const Tensor& x, real c) {
  Node* xn = x.node().get();
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xn->value[i] * c;
  return detail::make_op(x.shape(), std::move(out), {x}, [=](Node* n) {
    return [=]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < n->value.size(); ++i) xn->grad[i] += n->grad[i] * c;
    };
  });
}

inline Tensor add_scalar(const Tensor& x, real c) {
  Node* xn = x.node().get();
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xn->value[i] + c;
  return detail::make_op(x.shape(), std::move(out), {x}, [=](Node* n) {
    return [=]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < n->value.size(); ++i) xn->grad[i] += n->grad[i];
    };
  });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) throw ShapeError("matmul inner dims: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));

  Node* an = a.node().get();
  Node* bn = b.node().get();
  std::vector<real> out(m * n, 0.0);
  const real* A = an->value.data();
  const real* B = bn->value.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const real av = A[i * k + p];
      if (av == 0.0) continue;
      const real* brow = B + p * n;
      real* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }

  return detail::make_op({m, n}, std::move(out), {a, b}, [=](Node* nd) {
    return [=]() {
      const real* G = nd->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        // dA = dC * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            real acc = 0.0;
            const real* grow = G + i * n;
            const real* brow = bn->value.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            an->grad[i * k + p] += acc;
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        // dB = A^T * dC
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const real av = an->value[i * k + p];
            if (av == 0.0) continue;
            const real* grow = G + i * n;
            real* brow = bn->grad.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape s) {
  if (numel(s) != x.size())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(s));
  Node* xn = x.node().get();
  return detail::make_op(std::move(s), xn->value, {x}, [=](Node* n) {
    return [=]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < n->value.size(); ++i) xn->grad[i] += n->grad[i];
    };
  });
}

inline Tensor transpose2d(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose2d expects rank 2, got " + shape_str(x.shape()));
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Node* xn = x.node().get();
  std::vector<real> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xn->value[i * n + j];
  return detail::make_op({n, m}, std::move(out), {x}, [=](Node* nd) {
    return [=]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) xn->grad[i * n + j] += nd->grad[j * m + i];
    };
  });
}

inline Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) throw UsageError("concat of empty list");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat axis out of range");
  Shape out_shape = s0;
  std::size_t total_axis = 0;
  for (const auto& x : xs) {
    if (x.rank() != s0.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s0.size(); ++i)
      if (i != axis && x.shape()[i] != s0[i])
        throw ShapeError("concat shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(s0));
    total_axis += x.shape()[axis];
  }
  out_shape[axis] = total_axis;

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

  std::vector<real> out(numel(out_shape));
  std::size_t axis_off = 0;
  for (const auto& x : xs) {
    const std::size_t ax = x.shape()[axis];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.value().data() + o * ax * inner, ax * inner,
                  out.data() + (o * total_axis + axis_off) * inner);
    axis_off += ax;
  }

  std::vector<Node*> pnodes;
  std::vector<std::size_t> axes;
  for (const auto& x : xs) {
    pnodes.push_back(x.node().get());
    axes.push_back(x.shape()[axis]);
  }
  return detail::make_op(std::move(out_shape), std::move(out), xs, [=](Node* nd) {
    return [=]() {
      std::size_t off = 0;
      for (std::size_t pi = 0; pi < pnodes.size(); ++pi) {
        Node* p = pnodes[pi];
        const std::size_t ax = axes[pi];
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < ax * inner; ++i)
              p->grad[o * ax * inner + i] += nd->grad[(o * total_axis + off) * inner + i];
        }
        off += ax;
      }
    };
  });
}

inline Tensor stack(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw UsageError("stack of empty list");
  std::vector<Tensor> reshaped;
  reshaped.reserve(xs.size());
  for (const auto& x : xs) {
    if (x.shape() != xs[0].shape()) throw ShapeError("stack shape mismatch");
    Shape s = x.shape();
    s.insert(s.begin(), 1);
    reshaped.push_back(reshape(x, s));
  }
  return concat(reshaped, 0);
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= x.rank()) throw ShapeError("slice axis out of range");
  if (start + len > x.shape()[axis]) throw ShapeError("slice range out of bounds");
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t full = x.shape()[axis];

  Node* xn = x.node().get();
  std::vector<real> out(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xn->value.data() + (o * full + start) * inner, len * inner,
                out.data() + o * len * inner);
  return detail::make_op(std::move(out_shape), std::move(out), {x}, [=](Node* nd) {
    return [=]() {
      xn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < len * inner; ++i)
          xn->grad[(o * full + start) * inner + i] += nd->grad[o * len * inner + i];
    };
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  Node* xn = x.node().get();
  real acc = 0.0;
  for (real v : xn->value) acc += v;
  return detail::make_op({1}, {acc}, {x}, [=](Node* nd) {
    return [=]() {
      xn->ensure_grad();
      const real g = nd->grad[0];
      for (auto& gv : xn->grad) gv += g;
    };
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<real>(x.size())); }

namespace detail {

inline void reduce_dims(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& len,
                        std::size_t& inner) {
  if (axis >= s.size()) throw ShapeError("reduce axis out of range");
  outer = 1;
  inner = 1;
  len = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

inline Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace detail

inline Tensor sum(const Tensor& x, std::size_t axis) {
  std::size_t outer, len, inner;
  detail::reduce_dims(x.shape(), axis, outer, len, inner);
  Node* xn = x.node().get();
  std::vector<real> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += xn->value[(o * len + l) * inner + i];
  return detail::make_op(detail::drop_axis(x.shape(), axis), std::move(out), {x}, [=](Node* nd) {
    return [=]() {
      xn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t i = 0; i < inner; ++i)
            xn->grad[(o * len + l) * inner + i] += nd->grad[o * inner + i];
    };
  });
}

inline Tensor mean(const Tensor& x, std::size_t axis) {
  return scale(sum(x, axis), 1.0 / static_cast<real>(x.shape()[axis]));
}

// Max reduction; gradient routes only to the argmax location (first on ties).
inline Tensor max(const Tensor& x, std::size_t axis) {
  std::size_t outer, len, inner;
  detail::reduce_dims(x.shape(), axis, outer, len, inner);
  Node* xn = x.node().get();
  std::vector<real> out(outer * inner);
  auto argmax = std::make_shared<std::vector<std::size_t>>(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      real best = xn->value[o * len * inner + i];
      std::size_t bl = 0;
      for (std::size_t l = 1; l < len; ++l) {
        const real v = xn->value[(o * len + l) * inner + i];
        if (v > best) {
          best = v;
          bl = l;
        }
      }
      out[o * inner + i] = best;
      (*argmax)[o * inner + i] = bl;
    }
  return detail::make_op(detail::drop_axis(x.shape(), axis), std::move(out), {x}, [=](Node* nd) {
    return [=]() {
      xn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i)
          xn->grad[(o * len + (*argmax)[o * inner + i]) * inner + i] += nd->grad[o * inner + i];
    };
  });
}

inline Tensor max_all(const Tensor& x) { return max(reshape(x, {x.size()}), 0); }

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

// Max-subtracted stable softmax along `axis`.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  std::size_t outer, len, inner;
  detail::reduce_dims(x.shape(), axis, outer, len, inner);
  Node* xn = x.node().get();
  std::vector<real> out(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      real m = -std::numeric_limits<real>::infinity();
      for (std::size_t l = 0; l < len; ++l) m = std::max(m, xn->value[(o * len + l) * inner + i]);
      real s = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const real e = std::exp(xn->value[(o * len + l) * inner + i] - m);
        out[(o * len + l) * inner + i] = e;
        s += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[(o * len + l) * inner + i] /= s;
    }
  return detail::make_op(x.shape(), std::move(out), {x}, [=](Node* nd) {
    return [=]() {
      xn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          real dot = 0.0;
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t k = (o * len + l) * inner + i;
            dot += nd->grad[k] * nd->value[k];
          }
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t k = (o * len + l) * inner + i;
            xn->grad[k] += nd->value[k] * (nd->grad[k] - dot);
          }
        }
    };
  });
}

inline bool all_finite(const Tensor& x) {
  for (real v : x.value())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace gatedap
