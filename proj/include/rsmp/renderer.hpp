#pragma once

// Differentiable volume rendering with the standard quadrature
//   alpha_i = 1 - exp(-sigma_i delta_i)
//   T_i     = prod_{k<i} (1 - alpha_k)
//   C       = sum_i T_i alpha_i c_i
// Radiance behind `far` is zero.

#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsmp/autodiff.hpp"
#include "rsmp/field.hpp"
#include "rsmp/sampler.hpp"

namespace rsmp {

/// One ray's composite, in double precision.
struct RenderResult {
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  Eigen::VectorXd weights;
  Eigen::VectorXd transmittance;
  double final_transmittance = 1.0;
  double expected_depth = 0.0;
};

/// Batched, differentiable composite of m rays with n samples each.
template <typename Scalar>
struct RenderVars {
  Var<Scalar> rgb;            // [m x 3]
  Var<Scalar> weights;        // [m x n]
  Var<Scalar> transmittance;  // [m x n]
  Var<Scalar> depth;          // [m x 1], sum_i w_i t_i
};

/// One draw per equal-width bin of [near, far]. Without an rng the bin
/// midpoints are returned.
template <typename Scalar = double>
std::vector<Scalar> uniform_stratified_samples(double near, double far, Index n, Rng* rng = nullptr) {
  if (!(far > near) || n < 1) throw std::invalid_argument("uniform_stratified_samples: requires near < far, n >= 1");
  std::vector<Scalar> t(static_cast<std::size_t>(n));
  const double width = (far - near) / static_cast<double>(n);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    const double offset = rng ? u01(*rng) : 0.5;
    t[static_cast<std::size_t>(i)] = static_cast<Scalar>(std::min(far, near + (static_cast<double>(i) + offset) * width));
  }
  return t;
}

/// delta_i = t_{i+1} - t_i, and far - t_n for the last sample of each row.
template <typename Scalar>
Var<Scalar> compute_deltas(Tape<Scalar>& tape, Var<Scalar> t, const typename Tensor<Scalar>::Array& far) {
  const Index m = t.rows(), n = t.cols();
  if (far.size() != m) throw std::invalid_argument("compute_deltas: one far bound per row required");
  const auto& tv = t.value();
  for (Index r = 0; r < m; ++r) {
    for (Index i = 0; i < n; ++i) {
      const Scalar next = i + 1 < n ? tv(r, i + 1) : far[r];
      if (tv(r, i) > next) {
        throw std::invalid_argument("compute_deltas: distances of row " + std::to_string(r) +
                                    " are unsorted or exceed far");
      }
    }
  }
  Var<Scalar> far_col = tape.constant(Tensor<Scalar>(Shape{m, 1}, far));
  Var<Scalar> next = n > 1 ? concat_last_dim({slice_last_dim(t, 1, n - 1), far_col}) : far_col;
  return sub(next, t);
}

/// sigma [m x n], rgb [m*n x 3] (ray-major), t [m x n] sorted per row.
template <typename Scalar>
RenderVars<Scalar> volume_render(Tape<Scalar>& tape, Var<Scalar> sigma, Var<Scalar> rgb, Var<Scalar> t,
                                 const typename Tensor<Scalar>::Array& far) {
  const Index m = t.rows(), n = t.cols();
  if (sigma.size() != m * n || rgb.rows() != m * n || rgb.cols() != 3) {
    throw std::invalid_argument("volume_render: sigma " + to_string(sigma.shape()) + " and rgb " +
                                to_string(rgb.shape()) + " do not match distances " + to_string(t.shape()));
  }
  if ((sigma.value().values < Scalar(0)).any()) throw std::invalid_argument("volume_render: negative density");
  sigma = reshape(sigma, Shape{m, n});

  Var<Scalar> optical = mul(sigma, compute_deltas(tape, t, far));
  // Exclusive prefix sum built from the inclusive one by shifting, so that
  // it stays non-decreasing in floating point.
  Var<Scalar> zero_col = tape.constant(Tensor<Scalar>::zeros(Shape{m, 1}));
  Var<Scalar> before = n > 1 ? concat_last_dim({zero_col, slice_last_dim(cumulative_sum(optical), 0, n - 1)}) : zero_col;
  Var<Scalar> transmittance = exp(neg(before));
  Var<Scalar> alpha = sub(tape.constant(Tensor<Scalar>::scalar(Scalar(1))), exp(neg(optical)));
  Var<Scalar> weights = mul(transmittance, alpha);

  std::vector<Var<Scalar>> channels;
  for (Index c = 0; c < 3; ++c) {
    Var<Scalar> color = reshape(slice_last_dim(rgb, c, 1), Shape{m, n});
    channels.push_back(sum_last_dim(mul(weights, color)));
  }
  Var<Scalar> pixel = concat_last_dim(std::span<const Var<Scalar>>(channels));
  Var<Scalar> depth = sum_last_dim(mul(weights, t));
  return {pixel, weights, transmittance, depth};
}

/// Single-ray convenience wrapper evaluated in double precision.
inline RenderResult volume_render(std::span<const double> sigma, const Eigen::Ref<const Eigen::MatrixX3d>& rgb,
                                  std::span<const double> t, double far) {
  const Index n = static_cast<Index>(t.size());
  if (static_cast<Index>(sigma.size()) != n || rgb.rows() != n) {
    throw std::invalid_argument("volume_render: sigma, rgb and t must have one entry per sample");
  }
  Tape<double> tape;
  Tensor<double> rgb_t(Shape{n, 3});
  rgb_t.matrix() = rgb;
  auto sig = tape.constant(Tensor<double>(Shape{1, n}, Eigen::Map<const Eigen::ArrayXd>(sigma.data(), n)));
  auto dist = tape.constant(Tensor<double>(Shape{1, n}, Eigen::Map<const Eigen::ArrayXd>(t.data(), n)));
  auto out = volume_render(tape, sig, tape.constant(rgb_t), dist, Eigen::ArrayXd::Constant(1, far));

  RenderResult r;
  r.rgb = out.rgb.value().values.matrix();
  r.weights = out.weights.value().values.matrix();
  r.transmittance = out.transmittance.value().values.matrix();
  r.expected_depth = out.depth.item();
  r.final_transmittance = n > 0 ? r.transmittance[n - 1] - r.weights[n - 1] : 1.0;
  return r;
}

/// Where sample distances come from: the learned sampler when `sampler` is
/// set, otherwise stratified uniform bins (jittered when `jitter` is set).
template <typename Scalar>
struct SampleSource {
  const SamplerVars<Scalar>* sampler = nullptr;
  SamplerShape sampler_shape;
  Index n_samples = 16;
  Rng* jitter = nullptr;

  Index samples() const { return sampler ? sampler_shape.n_samples : n_samples; }
};

template <typename Scalar>
struct RayRender {
  Var<Scalar> t;  // [m x n]
  RenderVars<Scalar> render;
};

template <typename Scalar>
Var<Scalar> uniform_distances(Tape<Scalar>& tape, const RayBatch& batch, Index n_samples, Rng* jitter) {
  const Index m = static_cast<Index>(batch.size());
  Tensor<Scalar> t(Shape{m, n_samples});
  for (Index r = 0; r < m; ++r) {
    const Ray& ray = batch[static_cast<std::size_t>(r)];
    const auto row = uniform_stratified_samples<Scalar>(ray.near, ray.far, n_samples, jitter);
    for (Index i = 0; i < n_samples; ++i) t(r, i) = row[static_cast<std::size_t>(i)];
  }
  return tape.constant(std::move(t));
}

/// Sampler (or baseline) -> points -> field -> composite, for one batch.
template <typename Scalar>
RayRender<Scalar> render_rays(Tape<Scalar>& tape, const RayBatch& batch, const SampleSource<Scalar>& source,
                              const FieldVars<Scalar>& field, const FieldShape& field_shape) {
  Var<Scalar> t = source.sampler ? sampler_forward(tape, batch, *source.sampler, source.sampler_shape)
                                 : uniform_distances(tape, batch, source.n_samples, source.jitter);
  const Index m = static_cast<Index>(batch.size()), n = t.cols();
  Var<Scalar> points = distances_to_points(tape, batch, t);

  Tensor<Scalar> dirs(Shape{m * n, 3});
  for (Index r = 0; r < m; ++r) {
    const auto d = batch[static_cast<std::size_t>(r)].direction.cast<Scalar>().eval();
    for (Index s = 0; s < n; ++s) dirs.matrix().row(r * n + s) = d.transpose();
  }
  FieldOutput<Scalar> out = field_forward(points, tape.constant(std::move(dirs)), field, field_shape);
  return {t, volume_render(tape, out.sigma, out.rgb, t, batch.fars<Scalar>())};
}

}  // namespace rsmp
