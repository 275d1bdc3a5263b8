#pragma once

// Radiance field: frequency encoding followed by an MLP that maps a point
// and viewing direction to density and color.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsmp/autodiff.hpp"
#include "rsmp/layers.hpp"

namespace rsmp {

struct FieldShape {
  Index depth = 4;
  Index width = 64;
  Index pos_levels = 6;
  Index dir_levels = 4;
  /// World positions are multiplied by this before encoding so that the
  /// scene volume lies inside one period of the lowest frequency.
  double position_scale = 1.0 / 3.0;
};

template <typename Leaf>
struct FieldLayers {
  std::vector<Dense<Leaf>> trunk;
  Dense<Leaf> density;
  Dense<Leaf> color;
};

template <typename Scalar>
using FieldParams = FieldLayers<Tensor<Scalar>>;
template <typename Scalar>
using FieldVars = FieldLayers<Var<Scalar>>;

template <typename Scalar>
struct FieldOutput {
  Var<Scalar> sigma;  // [n x 1], >= 0
  Var<Scalar> rgb;    // [n x 3], in [0, 1]
};

template <typename Leaf, typename F>
void visit(FieldLayers<Leaf>& field, F&& f) {
  for (std::size_t i = 0; i < field.trunk.size(); ++i) visit(field.trunk[i], "field.trunk." + std::to_string(i), f);
  visit(field.density, "field.density", f);
  visit(field.color, "field.color", f);
}

template <typename Leaf, typename F>
void visit(const FieldLayers<Leaf>& field, F&& f) {
  for (std::size_t i = 0; i < field.trunk.size(); ++i) visit(field.trunk[i], "field.trunk." + std::to_string(i), f);
  visit(field.density, "field.density", f);
  visit(field.color, "field.color", f);
}

inline Index encoded_width(Index coords, Index levels) { return 2 * levels * coords; }

template <typename Scalar>
FieldParams<Scalar> init_field(const FieldShape& shape, Rng& rng) {
  if (shape.depth < 1 || shape.width < 1 || shape.pos_levels < 1 || shape.dir_levels < 1) {
    throw std::invalid_argument("field: depth, width and encoding levels must be positive");
  }
  FieldParams<Scalar> p;
  Index in = encoded_width(3, shape.pos_levels);
  for (Index i = 0; i < shape.depth; ++i) {
    p.trunk.push_back(glorot_dense<Scalar>(in, shape.width, rng));
    in = shape.width;
  }
  p.density = glorot_dense<Scalar>(shape.width, 1, rng);
  p.color = glorot_dense<Scalar>(shape.width + encoded_width(3, shape.dir_levels), 3, rng);
  return p;
}

template <typename Scalar>
FieldVars<Scalar> bind(Tape<Scalar>& tape, const FieldParams<Scalar>& p, bool requires_grad) {
  FieldVars<Scalar> v;
  for (const auto& layer : p.trunk) v.trunk.push_back(bind(tape, layer, requires_grad));
  v.density = bind(tape, p.density, requires_grad);
  v.color = bind(tape, p.color, requires_grad);
  return v;
}

/// Frequency encoding. For each input coordinate x the output holds
/// sin(2^l pi x), cos(2^l pi x) for l = 0 .. levels-1, coordinate-major.
template <typename Scalar>
Var<Scalar> positional_encode(Var<Scalar> x, Index levels) {
  if (levels < 1) throw std::invalid_argument("positional_encode: levels must be >= 1");
  const Index m = x.rows(), k = x.cols();
  const Index width = encoded_width(k, levels);
  Shape shape = x.shape();
  if (shape.empty()) shape.push_back(1);
  shape.back() = width;
  Tensor<Scalar> out(shape);
  const auto& xv = x.value().values;
  for (Index r = 0; r < m; ++r) {
    for (Index c = 0; c < k; ++c) {
      Scalar freq = std::numbers::pi_v<Scalar>;
      for (Index l = 0; l < levels; ++l, freq *= Scalar(2)) {
        const Scalar arg = freq * xv[r * k + c];
        out.values[r * width + 2 * (c * levels + l)] = std::sin(arg);
        out.values[r * width + 2 * (c * levels + l) + 1] = std::cos(arg);
      }
    }
  }
  const std::size_t xid = x.id;
  const std::size_t yid = x.tape->size();
  return x.tape->push(std::move(out), x.requires_grad(),
                      [xid, yid, m, k, levels, width](Tape<Scalar>& t, const auto& g) {
                        auto* gx = t.grad_slot(xid);
                        if (!gx) return;
                        const auto& y = t.value(yid).values;
                        for (Index r = 0; r < m; ++r) {
                          for (Index c = 0; c < k; ++c) {
                            Scalar freq = std::numbers::pi_v<Scalar>;
                            Scalar acc = 0;
                            for (Index l = 0; l < levels; ++l, freq *= Scalar(2)) {
                              const Index j = r * width + 2 * (c * levels + l);
                              // d sin = freq cos, d cos = -freq sin
                              acc += freq * (g[j] * y[j + 1] - g[j + 1] * y[j]);
                            }
                            (*gx)[r * k + c] += acc;
                          }
                        }
                      },
                      "positional_encode");
}

template <typename Scalar>
FieldOutput<Scalar> field_forward(Var<Scalar> points, Var<Scalar> dirs, const FieldVars<Scalar>& p,
                                  const FieldShape& shape) {
  if (points.cols() != 3 || dirs.cols() != 3 || points.rows() != dirs.rows()) {
    throw std::invalid_argument("field_forward: expected matching [n x 3] points and directions, got " +
                                to_string(points.shape()) + " and " + to_string(dirs.shape()));
  }
  if (!points.value().values.allFinite() || !dirs.value().values.allFinite()) {
    throw std::invalid_argument("field_forward: non-finite input");
  }
  const auto norms = dirs.value().matrix().rowwise().norm().array();
  if (((norms - Scalar(1)).abs() > Scalar(1e-6)).any()) {
    throw std::invalid_argument("field_forward: view directions must be unit vectors");
  }
  Var<Scalar> h = positional_encode(affine_scale_shift(points, static_cast<Scalar>(shape.position_scale), Scalar(0)),
                                    shape.pos_levels);
  for (const auto& layer : p.trunk) h = relu(apply(layer, h));
  Var<Scalar> sigma = softplus(apply(p.density, h));
  Var<Scalar> encoded_dirs = positional_encode(dirs, shape.dir_levels);
  Var<Scalar> rgb = sigmoid(apply(p.color, concat_last_dim({h, encoded_dirs})));
  return {sigma, rgb};
}

}  // namespace rsmp
