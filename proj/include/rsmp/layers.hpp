#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rsmp/autodiff.hpp"

namespace rsmp {

using Rng = std::mt19937_64;

/// Fully connected layer. `Leaf` is Tensor<Scalar> for stored parameters and
/// Var<Scalar> once bound to a tape. weight is [in x out], bias is [out].
template <typename Leaf>
struct Dense {
  Leaf weight;
  Leaf bias;
};

template <typename Scalar>
Var<Scalar> apply(const Dense<Var<Scalar>>& layer, Var<Scalar> x) {
  return add_bias(matmul(x, layer.weight), layer.bias);
}

template <typename Scalar>
Dense<Tensor<Scalar>> glorot_dense(Index in, Index out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Dense<Tensor<Scalar>> layer{Tensor<Scalar>(Shape{in, out}), Tensor<Scalar>(Shape{out})};
  for (Index i = 0; i < layer.weight.size(); ++i) layer.weight.values[i] = static_cast<Scalar>(dist(rng));
  return layer;
}

template <typename Leaf, typename F>
void visit(Dense<Leaf>& layer, const std::string& prefix, F&& f) {
  f(prefix + ".weight", layer.weight);
  f(prefix + ".bias", layer.bias);
}

template <typename Leaf, typename F>
void visit(const Dense<Leaf>& layer, const std::string& prefix, F&& f) {
  f(prefix + ".weight", layer.weight);
  f(prefix + ".bias", layer.bias);
}

template <typename Scalar>
Dense<Var<Scalar>> bind(Tape<Scalar>& tape, const Dense<Tensor<Scalar>>& layer, bool requires_grad) {
  return {tape.variable(layer.weight, requires_grad), tape.variable(layer.bias, requires_grad)};
}

}  // namespace rsmp
