#pragma once

// Define-by-run reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every primitive applied during a forward pass. Nodes are
// appended in execution order, so the node index is a topological order and
// backward() simply walks the tape from the loss down to the first node.
//
// Tensors are row-major. Most primitives treat a tensor as a matrix whose
// column count is the last dimension and whose row count is the product of
// the leading dimensions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace rsmp {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
struct Tensor {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Shape shape;
  Array values;

  Tensor() = default;

  explicit Tensor(Shape s) : shape(std::move(s)), values(Array::Zero(numel(shape))) {
    validate_shape();
  }

  Tensor(Shape s, Array v) : shape(std::move(s)), values(std::move(v)) {
    validate_shape();
    if (values.size() != numel(shape)) {
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + to_string(shape));
    }
  }

  Tensor(Shape s, std::initializer_list<Scalar> v)
      : Tensor(std::move(s), Eigen::Map<const Array>(v.begin(), static_cast<Index>(v.size()))) {}

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, Array::Constant(1, v)); }
  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor constant(Shape s, Scalar v) {
    const Index n = numel(s);
    return Tensor(std::move(s), Array::Constant(n, v));
  }
  static Tensor from_matrix(const Eigen::Ref<const RowMatrix>& m) {
    Tensor t(Shape{m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  Index size() const { return values.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  Index cols() const { return shape.empty() ? 1 : shape.back(); }
  Index rows() const { return cols() == 0 ? 0 : size() / cols(); }

  MatrixMap matrix() { return MatrixMap(values.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(values.data(), rows(), cols()); }

  Scalar& operator()(Index r, Index c) { return values[r * cols() + c]; }
  Scalar operator()(Index r, Index c) const { return values[r * cols() + c]; }

  Scalar item() const {
    if (size() != 1) throw std::invalid_argument("tensor: item() on " + to_string(shape));
    return values[0];
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape, values.template cast<Other>());
  }

 private:
  void validate_shape() const {
    for (Index d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension in " + to_string(shape));
    }
  }
};

template <typename Scalar>
class Tape;

/// Handle to a node of a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<Scalar>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape; }
  Index size() const { return value().size(); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar item() const { return value().item(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

template <typename Scalar>
class Tape {
 public:
  using Array = typename Tensor<Scalar>::Array;
  using Backward = std::function<void(Tape&, const Array& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> variable(Tensor<Scalar> value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, nullptr, "leaf");
  }
  Var<Scalar> constant(Tensor<Scalar> value) { return variable(std::move(value), false); }

  /// Appends a primitive. The backward rule is dropped when no input needs
  /// gradients.
  Var<Scalar> push(Tensor<Scalar> value, bool requires_grad, Backward backward, const char* op) {
    nodes_.push_back(Node{std::move(value), requires_grad, requires_grad ? std::move(backward) : nullptr,
                          Array{}, op});
    return Var<Scalar>{this, nodes_.size() - 1};
  }

  const Tensor<Scalar>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const char* op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Gradients of all earlier runs are
  /// discarded; nodes not reachable from the loss end with zero gradient.
  void backward(Var<Scalar> loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (loss.size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " + to_string(loss.shape()));
    }
    for (auto& node : nodes_) {
      if (node.requires_grad) {
        node.grad = Array::Zero(node.value.size());
      } else {
        node.grad.resize(0);
      }
    }
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad.setOnes();
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.backward) node.backward(*this, node.grad);
    }
  }

  /// Gradient of the last backward() run with respect to `v`. Zero for
  /// nodes that do not require gradients.
  Tensor<Scalar> grad(Var<Scalar> v) const {
    const Node& node = nodes_.at(v.id);
    if (node.grad.size() != node.value.size()) return Tensor<Scalar>::zeros(node.value.shape);
    return Tensor<Scalar>(node.value.shape, node.grad);
  }

  /// Accumulation target used by backward rules. Returns nullptr when the
  /// node does not take gradients.
  Array* grad_slot(std::size_t id) {
    Node& node = nodes_[id];
    return node.requires_grad ? &node.grad : nullptr;
  }

 private:
  struct Node {
    Tensor<Scalar> value;
    bool requires_grad;
    Backward backward;
    Array grad;
    const char* op;
  };
  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
void check_same_tape(Var<Scalar> a, Var<Scalar> b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw std::invalid_argument(std::string(op) + ": operands belong to different tapes");
  }
}

inline void check_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + to_string(s));
}

template <typename Scalar>
bool is_scalar(const Tensor<Scalar>& t) {
  return t.size() == 1;
}

/// Elementwise op on one tensor with an analytic derivative expressed in
/// terms of input x and output y.
template <typename Scalar, typename Forward, typename Derivative>
Var<Scalar> unary(Var<Scalar> x, const char* op, Forward&& f, Derivative&& df) {
  const Tensor<Scalar>& xv = x.value();
  Tensor<Scalar> out(xv.shape, xv.values.unaryExpr(f));
  const std::size_t xid = x.id;
  auto& tape = *x.tape;
  const std::size_t yid = tape.size();
  return tape.push(std::move(out), x.requires_grad(),
                   [xid, yid, df](Tape<Scalar>& t, const auto& g) {
                     auto* gx = t.grad_slot(xid);
                     if (!gx) return;
                     const auto& xs = t.value(xid).values;
                     const auto& ys = t.value(yid).values;
                     for (Index i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(xs[i], ys[i]);
                   },
                   op);
}

enum class Broadcast { None, LeftScalar, RightScalar };

template <typename Scalar>
Broadcast broadcast_kind(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape == b.shape) return Broadcast::None;
  if (is_scalar(b)) return Broadcast::RightScalar;
  if (is_scalar(a)) return Broadcast::LeftScalar;
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape) + " vs " +
                              to_string(b.shape));
}

template <typename Scalar>
void accumulate_broadcast(Tape<Scalar>& t, std::size_t id, bool reduce,
                          const typename Tensor<Scalar>::Array& g) {
  auto* slot = t.grad_slot(id);
  if (!slot) return;
  if (reduce) {
    (*slot)[0] += g.sum();
  } else {
    *slot += g;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_tape(a, b, "matmul");
  detail::check_rank2(a.shape(), "matmul");
  detail::check_rank2(b.shape(), "matmul");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree " + to_string(a.shape()) + " * " +
                                to_string(b.shape()));
  }
  Tensor<Scalar> out(Shape{a.rows(), b.cols()});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  const std::size_t aid = a.id, bid = b.id;
  const Index m = a.rows(), k = a.cols(), n = b.cols();
  return a.tape->push(
      std::move(out), a.requires_grad() || b.requires_grad(),
      [aid, bid, m, k, n](Tape<Scalar>& t, const auto& g) {
        using Map = typename Tensor<Scalar>::MatrixMap;
        using ConstMap = typename Tensor<Scalar>::ConstMatrixMap;
        ConstMap gm(g.data(), m, n);
        if (auto* ga = t.grad_slot(aid)) {
          Map(ga->data(), m, k).noalias() += gm * t.value(bid).matrix().transpose();
        }
        if (auto* gb = t.grad_slot(bid)) {
          Map(gb->data(), k, n).noalias() += t.value(aid).matrix().transpose() * gm;
        }
      },
      "matmul");
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> x) {
  detail::check_rank2(x.shape(), "transpose");
  const Index m = x.rows(), n = x.cols();
  Tensor<Scalar> out(Shape{n, m});
  out.matrix() = x.value().matrix().transpose();
  const std::size_t xid = x.id;
  return x.tape->push(std::move(out), x.requires_grad(),
                      [xid, m, n](Tape<Scalar>& t, const auto& g) {
                        auto* gx = t.grad_slot(xid);
                        if (!gx) return;
                        typename Tensor<Scalar>::MatrixMap(gx->data(), m, n) +=
                            typename Tensor<Scalar>::ConstMatrixMap(g.data(), n, m).transpose();
                      },
                      "transpose");
}

/// Adds `bias` (a vector of length cols) to every row of `x`.
template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> x, Var<Scalar> bias) {
  detail::check_same_tape(x, bias, "add_bias");
  if (bias.size() != x.cols()) {
    throw std::invalid_argument("add_bias: bias " + to_string(bias.shape()) + " does not match " +
                                to_string(x.shape()));
  }
  Tensor<Scalar> out = x.value();
  out.matrix().rowwise() += bias.value().values.matrix().transpose();
  const std::size_t xid = x.id, bid = bias.id;
  const Index m = x.rows(), n = x.cols();
  return x.tape->push(std::move(out), x.requires_grad() || bias.requires_grad(),
                      [xid, bid, m, n](Tape<Scalar>& t, const auto& g) {
                        if (auto* gx = t.grad_slot(xid)) *gx += g;
                        if (auto* gb = t.grad_slot(bid)) {
                          gb->matrix() +=
                              typename Tensor<Scalar>::ConstMatrixMap(g.data(), m, n).colwise().sum().transpose();
                        }
                      },
                      "add_bias");
}

/// Multiplies row r of `x` by the scalar scale[r]; `scale` holds one value
/// per row.
template <typename Scalar>
Var<Scalar> scale_rows(Var<Scalar> x, Var<Scalar> scale) {
  detail::check_same_tape(x, scale, "scale_rows");
  if (scale.size() != x.rows()) {
    throw std::invalid_argument("scale_rows: scale " + to_string(scale.shape()) + " does not match rows of " +
                                to_string(x.shape()));
  }
  Tensor<Scalar> out = x.value();
  out.matrix().array().colwise() *= scale.value().values;
  const std::size_t xid = x.id, sid = scale.id;
  const Index m = x.rows(), n = x.cols();
  return x.tape->push(std::move(out), x.requires_grad() || scale.requires_grad(),
                      [xid, sid, m, n](Tape<Scalar>& t, const auto& g) {
                        using ConstMap = typename Tensor<Scalar>::ConstMatrixMap;
                        ConstMap gm(g.data(), m, n);
                        if (auto* gx = t.grad_slot(xid)) {
                          typename Tensor<Scalar>::MatrixMap(gx->data(), m, n).array() +=
                              gm.array().colwise() * t.value(sid).values;
                        }
                        if (auto* gs = t.grad_slot(sid)) {
                          *gs += (gm.array() * t.value(xid).matrix().array()).rowwise().sum();
                        }
                      },
                      "scale_rows");
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic (exact shapes, or one scalar operand)
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_tape(a, b, "add");
  using detail::Broadcast;
  const Broadcast kind = detail::broadcast_kind(a.value(), b.value(), "add");
  Tensor<Scalar> out;
  switch (kind) {
    case Broadcast::None: out = Tensor<Scalar>(a.shape(), a.value().values + b.value().values); break;
    case Broadcast::RightScalar: out = Tensor<Scalar>(a.shape(), a.value().values + b.item()); break;
    case Broadcast::LeftScalar: out = Tensor<Scalar>(b.shape(), b.value().values + a.item()); break;
  }
  const std::size_t aid = a.id, bid = b.id;
  return a.tape->push(std::move(out), a.requires_grad() || b.requires_grad(),
                      [aid, bid, kind](Tape<Scalar>& t, const auto& g) {
                        detail::accumulate_broadcast(t, aid, kind == Broadcast::LeftScalar, g);
                        detail::accumulate_broadcast(t, bid, kind == Broadcast::RightScalar, g);
                      },
                      "add");
}

template <typename Scalar>
Var<Scalar> neg(Var<Scalar> x) {
  const std::size_t xid = x.id;
  return x.tape->push(Tensor<Scalar>(x.shape(), -x.value().values), x.requires_grad(),
                      [xid](Tape<Scalar>& t, const auto& g) {
                        if (auto* gx = t.grad_slot(xid)) *gx -= g;
                      },
                      "neg");
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_tape(a, b, "sub");
  using detail::Broadcast;
  const Broadcast kind = detail::broadcast_kind(a.value(), b.value(), "sub");
  Tensor<Scalar> out;
  switch (kind) {
    case Broadcast::None: out = Tensor<Scalar>(a.shape(), a.value().values - b.value().values); break;
    case Broadcast::RightScalar: out = Tensor<Scalar>(a.shape(), a.value().values - b.item()); break;
    case Broadcast::LeftScalar: out = Tensor<Scalar>(b.shape(), a.item() - b.value().values); break;
  }
  const std::size_t aid = a.id, bid = b.id;
  return a.tape->push(std::move(out), a.requires_grad() || b.requires_grad(),
                      [aid, bid, kind](Tape<Scalar>& t, const auto& g) {
                        detail::accumulate_broadcast(t, aid, kind == Broadcast::LeftScalar, g);
                        detail::accumulate_broadcast(t, bid, kind == Broadcast::RightScalar,
                                                     typename Tensor<Scalar>::Array(-g));
                      },
                      "sub");
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_tape(a, b, "mul");
  using detail::Broadcast;
  const Broadcast kind = detail::broadcast_kind(a.value(), b.value(), "mul");
  Tensor<Scalar> out;
  switch (kind) {
    case Broadcast::None: out = Tensor<Scalar>(a.shape(), a.value().values * b.value().values); break;
    case Broadcast::RightScalar: out = Tensor<Scalar>(a.shape(), a.value().values * b.item()); break;
    case Broadcast::LeftScalar: out = Tensor<Scalar>(b.shape(), b.value().values * a.item()); break;
  }
  const std::size_t aid = a.id, bid = b.id;
  return a.tape->push(
      std::move(out), a.requires_grad() || b.requires_grad(),
      [aid, bid, kind](Tape<Scalar>& t, const auto& g) {
        const auto& av = t.value(aid).values;
        const auto& bv = t.value(bid).values;
        using Array = typename Tensor<Scalar>::Array;
        switch (kind) {
          case Broadcast::None:
            detail::accumulate_broadcast(t, aid, false, Array(g * bv));
            detail::accumulate_broadcast(t, bid, false, Array(g * av));
            break;
          case Broadcast::RightScalar:
            detail::accumulate_broadcast(t, aid, false, Array(g * bv[0]));
            detail::accumulate_broadcast(t, bid, true, Array(g * av));
            break;
          case Broadcast::LeftScalar:
            detail::accumulate_broadcast(t, aid, true, Array(g * bv));
            detail::accumulate_broadcast(t, bid, false, Array(g * av[0]));
            break;
        }
      },
      "mul");
}

/// scale * x + shift with constant scalars.
template <typename Scalar>
Var<Scalar> affine_scale_shift(Var<Scalar> x, Scalar scale, Scalar shift) {
  const std::size_t xid = x.id;
  return x.tape->push(Tensor<Scalar>(x.shape(), x.value().values * scale + shift), x.requires_grad(),
                      [xid, scale](Tape<Scalar>& t, const auto& g) {
                        if (auto* gx = t.grad_slot(xid)) *gx += g * scale;
                      },
                      "affine_scale_shift");
}

/// Row-wise affine map with constant coefficients: out(r, :) = scale[r] * x(r, :) + shift[r].
template <typename Scalar>
Var<Scalar> affine_rows(Var<Scalar> x, const typename Tensor<Scalar>::Array& scale,
                        const typename Tensor<Scalar>::Array& shift) {
  if (scale.size() != x.rows() || shift.size() != x.rows()) {
    throw std::invalid_argument("affine_rows: coefficient count does not match rows of " + to_string(x.shape()));
  }
  Tensor<Scalar> out = x.value();
  out.matrix().array().colwise() *= scale;
  out.matrix().array().colwise() += shift;
  const std::size_t xid = x.id;
  const Index m = x.rows(), n = x.cols();
  return x.tape->push(std::move(out), x.requires_grad(),
                      [xid, scale, m, n](Tape<Scalar>& t, const auto& g) {
                        auto* gx = t.grad_slot(xid);
                        if (!gx) return;
                        typename Tensor<Scalar>::MatrixMap(gx->data(), m, n).array() +=
                            typename Tensor<Scalar>::ConstMatrixMap(g.data(), m, n).array().colwise() * scale;
                      },
                      "affine_rows");
}

/// Clamps row r of `x` to [lo[r], hi[r]]. Gradient is zero where clamped.
template <typename Scalar>
Var<Scalar> clamp_rows(Var<Scalar> x, const typename Tensor<Scalar>::Array& lo,
                       const typename Tensor<Scalar>::Array& hi) {
  if (lo.size() != x.rows() || hi.size() != x.rows()) {
    throw std::invalid_argument("clamp_rows: bound count does not match rows of " + to_string(x.shape()));
  }
  const Index m = x.rows(), n = x.cols();
  Tensor<Scalar> out = x.value();
  std::vector<bool> clamped(static_cast<std::size_t>(m * n), false);
  for (Index r = 0; r < m; ++r) {
    for (Index c = 0; c < n; ++c) {
      Scalar& v = out.values[r * n + c];
      if (v < lo[r] || v > hi[r]) {
        v = std::clamp(v, lo[r], hi[r]);
        clamped[static_cast<std::size_t>(r * n + c)] = true;
      }
    }
  }
  const std::size_t xid = x.id;
  return x.tape->push(std::move(out), x.requires_grad(),
                      [xid, clamped = std::move(clamped)](Tape<Scalar>& t, const auto& g) {
                        auto* gx = t.grad_slot(xid);
                        if (!gx) return;
                        for (Index i = 0; i < g.size(); ++i) {
                          if (!clamped[static_cast<std::size_t>(i)]) (*gx)[i] += g[i];
                        }
                      },
                      "clamp_rows");
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> exp(Var<Scalar> x) {
  return detail::unary(
      x, "exp", [](Scalar v) { return std::exp(v); }, [](Scalar, Scalar y) { return y; });
}

template <typename Scalar>
Scalar sigmoid_value(Scalar v) {
  if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
  const Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  return detail::unary(
      x, "sigmoid", [](Scalar v) { return sigmoid_value(v); },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Var<Scalar> softplus(Var<Scalar> x) {
  return detail::unary(
      x, "softplus",
      [](Scalar v) { return std::max(v, Scalar(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](Scalar v, Scalar) { return sigmoid_value(v); });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  return detail::unary(
      x, "relu", [](Scalar v) { return v > Scalar(0) ? v : Scalar(0); },
      [](Scalar v, Scalar) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
}

/// Exact GELU, x * Phi(x).
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return detail::unary(
      x, "gelu", [](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * Scalar(inv_sqrt2))); },
      [](Scalar v, Scalar) {
        const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * Scalar(inv_sqrt2)));
        const Scalar pdf = Scalar(inv_sqrt_2pi) * std::exp(Scalar(-0.5) * v * v);
        return cdf + v * pdf;
      });
}

// ---------------------------------------------------------------------------
// Reductions and layout
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  const std::size_t xid = x.id;
  return x.tape->push(Tensor<Scalar>::scalar(x.value().values.sum()), x.requires_grad(),
                      [xid](Tape<Scalar>& t, const auto& g) {
                        if (auto* gx = t.grad_slot(xid)) *gx += g[0];
                      },
                      "sum");
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  const std::size_t xid = x.id;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(x.size());
  return x.tape->push(Tensor<Scalar>::scalar(x.value().values.sum() * inv), x.requires_grad(),
                      [xid, inv](Tape<Scalar>& t, const auto& g) {
                        if (auto* gx = t.grad_slot(xid)) *gx += g[0] * inv;
                      },
                      "mean");
}

/// Sums along the last dimension; the result keeps that dimension with size 1.
template <typename Scalar>
Var<Scalar> sum_last_dim(Var<Scalar> x) {
  Shape shape = x.shape();
  if (shape.empty()) shape.push_back(1);
  shape.back() = 1;
  const Index m = x.rows(), n = x.cols();
  Tensor<Scalar> out(shape, x.value().matrix().rowwise().sum().array());
  const std::size_t xid = x.id;
  return x.tape->push(std::move(out), x.requires_grad(),
                      [xid, m, n](Tape<Scalar>& t, const auto& g) {
                        auto* gx = t.grad_slot(xid);
                        if (!gx) return;
                        typename Tensor<Scalar>::MatrixMap(gx->data(), m, n).colwise() += g.matrix();
                      },
                      "sum_last_dim");
}

/// Inclusive prefix sum along the last dimension.
template <typename Scalar>
Var<Scalar> cumulative_sum(Var<Scalar> x) {
  const Index m = x.rows(), n = x.cols();
  Tensor<Scalar> out = x.value();
  for (Index r = 0; r < m; ++r) {
    for (Index c = 1; c < n; ++c) out.values[r * n + c] += out.values[r * n + c - 1];
  }
  const std::size_t xid = x.id;
  return x.tape->push(std::move(out), x.requires_grad(),
                      [xid, m, n](Tape<Scalar>& t, const auto& g) {
                        auto* gx = t.grad_slot(xid);
                        if (!gx) return;
                        for (Index r = 0; r < m; ++r) {
                          Scalar acc = 0;
                          for (Index c = n; c-- > 0;) {
                            acc += g[r * n + c];
                            (*gx)[r * n + c] += acc;
                          }
                        }
                      },
                      "cumulative_sum");
}

template <typename Scalar>
Var<Scalar> concat_last_dim(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last_dim: no operands");
  const Index m = parts.front().rows();
  Shape shape = parts.front().shape();
  if (shape.empty()) shape.push_back(1);
  Index total = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    detail::check_same_tape(parts.front(), p, "concat_last_dim");
    Shape lead = p.shape();
    if (!lead.empty()) lead.pop_back();
    Shape ref = shape;
    ref.pop_back();
    if (lead != ref) {
      throw std::invalid_argument("concat_last_dim: leading dimensions disagree " + to_string(p.shape()) +
                                  " vs " + to_string(parts.front().shape()));
    }
    total += p.cols();
    needs_grad = needs_grad || p.requires_grad();
  }
  shape.back() = total;
  Tensor<Scalar> out(shape);
  std::vector<std::pair<std::size_t, Index>> pieces;  // (node id, width)
  Index offset = 0;
  for (const auto& p : parts) {
    out.matrix().middleCols(offset, p.cols()) = p.value().matrix();
    pieces.emplace_back(p.id, p.cols());
    offset += p.cols();
  }
  return parts.front().tape->push(
      std::move(out), needs_grad,
      [pieces = std::move(pieces), m, total](Tape<Scalar>& t, const auto& g) {
        typename Tensor<Scalar>::ConstMatrixMap gm(g.data(), m, total);
        Index off = 0;
        for (const auto& [id, width] : pieces) {
          if (auto* gp = t.grad_slot(id)) {
            typename Tensor<Scalar>::MatrixMap(gp->data(), m, width) += gm.middleCols(off, width);
          }
          off += width;
        }
      },
      "concat_last_dim");
}

template <typename Scalar>
Var<Scalar> concat_last_dim(std::initializer_list<Var<Scalar>> parts) {
  return concat_last_dim(std::span<const Var<Scalar>>(parts.begin(), parts.size()));
}

/// Columns [begin, begin + count) of the last dimension.
template <typename Scalar>
Var<Scalar> slice_last_dim(Var<Scalar> x, Index begin, Index count) {
  const Index m = x.rows(), n = x.cols();
  if (begin < 0 || count <= 0 || begin + count > n) {
    throw std::invalid_argument("slice_last_dim: range out of bounds for " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape.back() = count;
  Tensor<Scalar> out(shape);
  out.matrix() = x.value().matrix().middleCols(begin, count);
  const std::size_t xid = x.id;
  return x.tape->push(std::move(out), x.requires_grad(),
                      [xid, m, n, begin, count](Tape<Scalar>& t, const auto& g) {
                        auto* gx = t.grad_slot(xid);
                        if (!gx) return;
                        typename Tensor<Scalar>::MatrixMap(gx->data(), m, n).middleCols(begin, count) +=
                            typename Tensor<Scalar>::ConstMatrixMap(g.data(), m, count);
                      },
                      "slice_last_dim");
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw std::invalid_argument("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  const std::size_t xid = x.id;
  return x.tape->push(Tensor<Scalar>(std::move(shape), x.value().values), x.requires_grad(),
                      [xid](Tape<Scalar>& t, const auto& g) {
                        if (auto* gx = t.grad_slot(xid)) *gx += g;
                      },
                      "reshape");
}

template <typename Scalar>
struct SortResult {
  Var<Scalar> values;
  /// permutation[r * cols + j] is the source column of output column j in row r.
  std::vector<Index> permutation;
};

/// Stable ascending sort along the last dimension. Gradients follow the
/// permutation back to the source slots.
template <typename Scalar>
SortResult<Scalar> sort_ascending(Var<Scalar> x) {
  const Index m = x.rows(), n = x.cols();
  const auto& xv = x.value().values;
  std::vector<Index> perm(static_cast<std::size_t>(m * n));
  Tensor<Scalar> out(x.shape());
  for (Index r = 0; r < m; ++r) {
    auto row = perm.begin() + r * n;
    std::iota(row, row + n, Index{0});
    std::stable_sort(row, row + n, [&](Index a, Index b) { return xv[r * n + a] < xv[r * n + b]; });
    for (Index j = 0; j < n; ++j) out.values[r * n + j] = xv[r * n + row[j]];
  }
  const std::size_t xid = x.id;
  Var<Scalar> values = x.tape->push(std::move(out), x.requires_grad(),
                                    [xid, perm, m, n](Tape<Scalar>& t, const auto& g) {
                                      auto* gx = t.grad_slot(xid);
                                      if (!gx) return;
                                      for (Index r = 0; r < m; ++r) {
                                        for (Index j = 0; j < n; ++j) {
                                          (*gx)[r * n + perm[r * n + j]] += g[r * n + j];
                                        }
                                      }
                                    },
                                    "sort_ascending");
  return {values, std::move(perm)};
}

// Operator sugar for readability in model code.
template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a) { return neg(a); }

}  // namespace rsmp
