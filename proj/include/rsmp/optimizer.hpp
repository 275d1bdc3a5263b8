#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "rsmp/autodiff.hpp"

namespace rsmp {

struct AdamHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

template <typename Scalar>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor<Scalar>> m;
  std::vector<Tensor<Scalar>> v;
};

/// Adam with bias correction:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * (m / (1 - b1^k)) / (sqrt(v / (1 - b2^k)) + eps)
/// Moments are created on the first call.
template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>* const> params, std::span<const Tensor<Scalar>> grads, AdamState<Scalar>& state,
               const AdamHyper& hyper) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.push_back(Tensor<Scalar>::zeros(p->shape));
      state.v.push_back(Tensor<Scalar>::zeros(p->shape));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double k = static_cast<double>(state.step);
  const Scalar b1 = static_cast<Scalar>(hyper.beta1), b2 = static_cast<Scalar>(hyper.beta2);
  const Scalar correction1 = static_cast<Scalar>(1.0 - std::pow(hyper.beta1, k));
  const Scalar correction2 = static_cast<Scalar>(1.0 - std::pow(hyper.beta2, k));
  const Scalar lr = static_cast<Scalar>(hyper.lr), eps = static_cast<Scalar>(hyper.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape != params[i]->shape) throw std::invalid_argument("adam_step: gradient shape mismatch");
    auto& m = state.m[i].values;
    auto& v = state.v[i].values;
    const auto& g = grads[i].values;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    params[i]->values -= lr * (m / correction1) / ((v / correction2).sqrt() + eps);
  }
}

}  // namespace rsmp
