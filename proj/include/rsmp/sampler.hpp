#pragma once

// Learned ray sampler. A batch of exactly n_rays rays is embedded into a
// feature matrix [n_rays x d_feat], passed through residual sampling blocks
// and mapped by a sigmoid head to n_samples sorted distances per ray.
//
// Each sampling block runs two streams on the same input:
//   ray-wise   : MLP along the feature axis, independently per ray
//   scene-wise : MLP along the ray axis (token mixing), coupling all rays
// Their outputs are concatenated, projected back to d_feat and added to the
// block input.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsmp/autodiff.hpp"
#include "rsmp/layers.hpp"

namespace rsmp {

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d direction;  // unit length
  double near = 0.0;
  double far = 1.0;
};

/// Validated set of rays. Direction norms must be 1 within 1e-6 and
/// 0 < near < far.
class RayBatch {
 public:
  RayBatch() = default;
  explicit RayBatch(std::vector<Ray> rays) : rays_(std::move(rays)) {
    for (std::size_t i = 0; i < rays_.size(); ++i) {
      const Ray& r = rays_[i];
      if (!r.origin.allFinite() || !r.direction.allFinite()) {
        throw std::invalid_argument("ray " + std::to_string(i) + ": non-finite origin or direction");
      }
      if (std::abs(r.direction.norm() - 1.0) > 1e-6) {
        throw std::invalid_argument("ray " + std::to_string(i) + ": direction is not unit length");
      }
      if (!(r.near > 0.0) || !(r.far > r.near)) {
        throw std::invalid_argument("ray " + std::to_string(i) + ": requires 0 < near < far");
      }
    }
  }

  std::size_t size() const { return rays_.size(); }
  const Ray& operator[](std::size_t i) const { return rays_[i]; }
  const std::vector<Ray>& rays() const { return rays_; }

  template <typename Scalar>
  Tensor<Scalar> origins() const {
    return column_block<Scalar>([](const Ray& r) { return r.origin; });
  }
  template <typename Scalar>
  Tensor<Scalar> directions() const {
    return column_block<Scalar>([](const Ray& r) { return r.direction; });
  }
  template <typename Scalar>
  typename Tensor<Scalar>::Array nears() const {
    typename Tensor<Scalar>::Array a(static_cast<Index>(rays_.size()));
    for (std::size_t i = 0; i < rays_.size(); ++i) a[static_cast<Index>(i)] = static_cast<Scalar>(rays_[i].near);
    return a;
  }
  template <typename Scalar>
  typename Tensor<Scalar>::Array fars() const {
    typename Tensor<Scalar>::Array a(static_cast<Index>(rays_.size()));
    for (std::size_t i = 0; i < rays_.size(); ++i) a[static_cast<Index>(i)] = static_cast<Scalar>(rays_[i].far);
    return a;
  }

 private:
  template <typename Scalar, typename Get>
  Tensor<Scalar> column_block(Get get) const {
    Tensor<Scalar> t(Shape{static_cast<Index>(rays_.size()), 3});
    for (std::size_t i = 0; i < rays_.size(); ++i) {
      t.matrix().row(static_cast<Index>(i)) = get(rays_[i]).template cast<Scalar>().transpose();
    }
    return t;
  }

  std::vector<Ray> rays_;
};

struct SamplerShape {
  Index n_rays = 64;
  Index n_samples = 16;
  Index d_feat = 16;
  Index h_ray = 64;
  Index h_scene = 256;
  Index n_blocks = 3;
};

template <typename Leaf>
struct SamplingBlock {
  Dense<Leaf> ray_in;     // d_feat -> h_ray
  Dense<Leaf> ray_out;    // h_ray -> d_feat
  Dense<Leaf> scene_in;   // n_rays -> h_scene
  Dense<Leaf> scene_out;  // h_scene -> n_rays
  Dense<Leaf> merge;      // 2 d_feat -> d_feat
};

template <typename Leaf>
struct SamplerLayers {
  Dense<Leaf> embed;  // 6 -> d_feat
  std::vector<SamplingBlock<Leaf>> blocks;
  Dense<Leaf> head;  // d_feat -> n_samples
};

template <typename Scalar>
using SamplerParams = SamplerLayers<Tensor<Scalar>>;
template <typename Scalar>
using SamplerVars = SamplerLayers<Var<Scalar>>;

template <typename Block, typename F>
void visit_block(Block& block, const std::string& prefix, F&& f) {
  visit(block.ray_in, prefix + ".ray_in", f);
  visit(block.ray_out, prefix + ".ray_out", f);
  visit(block.scene_in, prefix + ".scene_in", f);
  visit(block.scene_out, prefix + ".scene_out", f);
  visit(block.merge, prefix + ".merge", f);
}

template <typename Leaf, typename F>
void visit(SamplerLayers<Leaf>& s, F&& f) {
  visit(s.embed, "sampler.embed", f);
  for (std::size_t i = 0; i < s.blocks.size(); ++i) visit_block(s.blocks[i], "sampler.block." + std::to_string(i), f);
  visit(s.head, "sampler.head", f);
}

template <typename Leaf, typename F>
void visit(const SamplerLayers<Leaf>& s, F&& f) {
  visit(s.embed, "sampler.embed", f);
  for (std::size_t i = 0; i < s.blocks.size(); ++i) visit_block(s.blocks[i], "sampler.block." + std::to_string(i), f);
  visit(s.head, "sampler.head", f);
}

inline void validate(const SamplerShape& s) {
  if (s.n_rays < 1 || s.n_samples < 1 || s.d_feat < 1 || s.h_ray < 1 || s.h_scene < 1 || s.n_blocks < 1) {
    throw std::invalid_argument("sampler: all dimensions and the block count must be positive");
  }
}

inline double logit(double u) { return std::log(u / (1.0 - u)); }

/// Glorot-uniform everywhere except the head: small Gaussian weights and
/// biases logit((i - 0.5) / n_samples), so a fresh sampler reproduces evenly
/// spaced bin midpoints.
template <typename Scalar>
SamplerParams<Scalar> init_sampler(const SamplerShape& shape, Rng& rng, double head_std = 1e-3) {
  validate(shape);
  SamplerParams<Scalar> p;
  p.embed = glorot_dense<Scalar>(6, shape.d_feat, rng);
  for (Index b = 0; b < shape.n_blocks; ++b) {
    SamplingBlock<Tensor<Scalar>> block;
    block.ray_in = glorot_dense<Scalar>(shape.d_feat, shape.h_ray, rng);
    block.ray_out = glorot_dense<Scalar>(shape.h_ray, shape.d_feat, rng);
    block.scene_in = glorot_dense<Scalar>(shape.n_rays, shape.h_scene, rng);
    block.scene_out = glorot_dense<Scalar>(shape.h_scene, shape.n_rays, rng);
    block.merge = glorot_dense<Scalar>(2 * shape.d_feat, shape.d_feat, rng);
    p.blocks.push_back(std::move(block));
  }
  p.head.weight = Tensor<Scalar>(Shape{shape.d_feat, shape.n_samples});
  p.head.bias = Tensor<Scalar>(Shape{shape.n_samples});
  std::normal_distribution<double> gauss(0.0, head_std);
  for (Index i = 0; i < p.head.weight.size(); ++i) p.head.weight.values[i] = static_cast<Scalar>(gauss(rng));
  for (Index i = 0; i < shape.n_samples; ++i) {
    p.head.bias.values[i] = static_cast<Scalar>(logit((static_cast<double>(i) + 0.5) / static_cast<double>(shape.n_samples)));
  }
  return p;
}

template <typename Scalar>
SamplingBlock<Var<Scalar>> bind_block(Tape<Scalar>& tape, const SamplingBlock<Tensor<Scalar>>& b, bool requires_grad) {
  return {bind(tape, b.ray_in, requires_grad), bind(tape, b.ray_out, requires_grad),
          bind(tape, b.scene_in, requires_grad), bind(tape, b.scene_out, requires_grad),
          bind(tape, b.merge, requires_grad)};
}

template <typename Scalar>
SamplerVars<Scalar> bind(Tape<Scalar>& tape, const SamplerParams<Scalar>& p, bool requires_grad) {
  SamplerVars<Scalar> v;
  v.embed = bind(tape, p.embed, requires_grad);
  for (const auto& b : p.blocks) v.blocks.push_back(bind_block(tape, b, requires_grad));
  v.head = bind(tape, p.head, requires_grad);
  return v;
}

/// Linear map of the per-ray 6-vector (origin, direction) to d_feat features.
template <typename Scalar>
Var<Scalar> embed_rays(Tape<Scalar>& tape, const RayBatch& batch, const Dense<Var<Scalar>>& embed,
                       Index n_rays) {
  if (static_cast<Index>(batch.size()) != n_rays) {
    throw std::invalid_argument("embed_rays: batch holds " + std::to_string(batch.size()) + " rays, sampler expects " +
                                std::to_string(n_rays));
  }
  Tensor<Scalar> input(Shape{n_rays, 6});
  input.matrix().leftCols(3) = batch.origins<Scalar>().matrix();
  input.matrix().rightCols(3) = batch.directions<Scalar>().matrix();
  return apply(embed, tape.constant(std::move(input)));
}

/// Two fully connected layers with GELU after the first, applied per row.
template <typename Scalar>
Var<Scalar> ray_mlp_forward(Var<Scalar> features, const Dense<Var<Scalar>>& in, const Dense<Var<Scalar>>& out) {
  return apply(out, gelu(apply(in, features)));
}

/// Same MLP form applied along the ray axis of the feature matrix.
template <typename Scalar>
Var<Scalar> scene_mlp_forward(Var<Scalar> features, const Dense<Var<Scalar>>& in, const Dense<Var<Scalar>>& out) {
  if (features.rows() != in.weight.rows()) {
    throw std::invalid_argument("scene_mlp_forward: " + std::to_string(features.rows()) +
                                " rays given, scene-wise MLP expects " + std::to_string(in.weight.rows()));
  }
  return transpose(apply(out, gelu(apply(in, transpose(features)))));
}

template <typename Scalar>
Var<Scalar> sampling_block_forward(Var<Scalar> features, const SamplingBlock<Var<Scalar>>& block) {
  Var<Scalar> ray = ray_mlp_forward(features, block.ray_in, block.ray_out);
  Var<Scalar> scene = scene_mlp_forward(features, block.scene_in, block.scene_out);
  return add(features, apply(block.merge, concat_last_dim({ray, scene})));
}

/// Sample distances [n_rays x n_samples], each row sorted within [near, far].
template <typename Scalar>
Var<Scalar> sampler_forward(Tape<Scalar>& tape, const RayBatch& batch, const SamplerVars<Scalar>& p,
                            const SamplerShape& shape) {
  Var<Scalar> h = embed_rays(tape, batch, p.embed, shape.n_rays);
  for (const auto& block : p.blocks) h = sampling_block_forward(h, block);
  Var<Scalar> s = sigmoid(apply(p.head, h));
  const auto nears = batch.nears<Scalar>();
  const auto fars = batch.fars<Scalar>();
  const auto spans = (fars - nears).eval();
  // clamp only absorbs rounding of near + s * span
  return sort_ascending(clamp_rows(affine_rows(s, spans, nears), nears, fars)).values;
}

/// Points o + t d for every sample, flattened ray-major to [n_rays * n_samples x 3].
template <typename Scalar>
Var<Scalar> distances_to_points(Tape<Scalar>& tape, const RayBatch& batch, Var<Scalar> t) {
  const Index n_rays = static_cast<Index>(batch.size());
  if (t.rows() != n_rays) {
    throw std::invalid_argument("distances_to_points: " + std::to_string(t.rows()) + " rows of distances for " +
                                std::to_string(n_rays) + " rays");
  }
  const Index n_samples = t.cols();
  Tensor<Scalar> origins(Shape{n_rays * n_samples, 3});
  Tensor<Scalar> dirs(Shape{n_rays * n_samples, 3});
  for (Index r = 0; r < n_rays; ++r) {
    const auto& ray = batch[static_cast<std::size_t>(r)];
    for (Index s = 0; s < n_samples; ++s) {
      origins.matrix().row(r * n_samples + s) = ray.origin.cast<Scalar>().transpose();
      dirs.matrix().row(r * n_samples + s) = ray.direction.cast<Scalar>().transpose();
    }
  }
  Var<Scalar> t_col = reshape(t, Shape{n_rays * n_samples, 1});
  return add(tape.constant(std::move(origins)), scale_rows(tape.constant(std::move(dirs)), t_col));
}

}  // namespace rsmp
