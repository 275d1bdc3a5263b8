#pragma once

// A trained (or trainable) scene model: the radiance field plus, in learned
// mode, the ray sampler that places its samples.

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsmp/camera.hpp"
#include "rsmp/field.hpp"
#include "rsmp/image.hpp"
#include "rsmp/metrics.hpp"
#include "rsmp/renderer.hpp"
#include "rsmp/sampler.hpp"

namespace rsmp {

enum class SamplingMode { Learned, Uniform };

inline std::string to_string(SamplingMode mode) { return mode == SamplingMode::Learned ? "learned" : "uniform"; }

inline SamplingMode parse_sampling_mode(const std::string& s) {
  if (s == "learned") return SamplingMode::Learned;
  if (s == "uniform") return SamplingMode::Uniform;
  throw std::invalid_argument("mode must be 'learned' or 'uniform', got '" + s + "'");
}

template <typename Scalar>
struct Model {
  SamplingMode mode = SamplingMode::Learned;
  FieldShape field_shape;
  SamplerShape sampler_shape;  // n_samples applies to both modes
  FieldParams<Scalar> field;
  std::optional<SamplerParams<Scalar>> sampler;

  Index n_samples() const { return sampler_shape.n_samples; }
};

template <typename Scalar, typename F>
void visit(Model<Scalar>& model, F&& f) {
  visit(model.field, f);
  if (model.sampler) visit(*model.sampler, f);
}

template <typename Scalar, typename F>
void visit(const Model<Scalar>& model, F&& f) {
  visit(model.field, f);
  if (model.sampler) visit(*model.sampler, f);
}

template <typename Scalar>
Model<Scalar> init_model(SamplingMode mode, const FieldShape& field_shape, const SamplerShape& sampler_shape,
                         Rng& rng) {
  Model<Scalar> m;
  m.mode = mode;
  m.field_shape = field_shape;
  m.sampler_shape = sampler_shape;
  m.field = init_field<Scalar>(field_shape, rng);
  if (mode == SamplingMode::Learned) m.sampler = init_sampler<Scalar>(sampler_shape, rng);
  return m;
}

/// Colors and sample distances for an arbitrary number of rays.
struct RenderedRays {
  Eigen::Matrix<double, Eigen::Dynamic, 3> rgb;
  DistanceMatrix t;
};

/// Inference over any number of rays. Rays are processed in raster order in
/// chunks; in learned mode every chunk holds exactly n_rays rays, and the
/// last chunk is padded by repeating its final ray (padded outputs are
/// dropped). Uniform mode uses bin midpoints.
template <typename Scalar>
RenderedRays render_ray_list(const Model<Scalar>& model, const std::vector<Ray>& rays, Index chunk) {
  if (model.mode == SamplingMode::Learned) {
    if (!model.sampler) throw std::invalid_argument("render: learned model has no sampler parameters");
    if (chunk != model.sampler_shape.n_rays) {
      throw std::invalid_argument("render: learned sampling needs chunks of exactly " +
                                  std::to_string(model.sampler_shape.n_rays) + " rays");
    }
  }
  if (chunk < 1) throw std::invalid_argument("render: chunk size must be positive");
  const Index total = static_cast<Index>(rays.size());
  RenderedRays out;
  out.rgb.resize(total, 3);
  out.t.resize(total, model.n_samples());
  for (Index begin = 0; begin < total; begin += chunk) {
    const Index count = std::min(chunk, total - begin);
    std::vector<Ray> part(rays.begin() + begin, rays.begin() + begin + count);
    if (model.mode == SamplingMode::Learned) part.resize(static_cast<std::size_t>(chunk), part.back());
    const RayBatch batch(std::move(part));

    Tape<Scalar> tape;
    const FieldVars<Scalar> field = bind(tape, model.field, false);
    SampleSource<Scalar> source;
    source.n_samples = model.n_samples();
    std::optional<SamplerVars<Scalar>> sampler;
    if (model.mode == SamplingMode::Learned) {
      sampler = bind(tape, *model.sampler, false);
      source.sampler = &*sampler;
      source.sampler_shape = model.sampler_shape;
    }
    const RayRender<Scalar> r = render_rays(tape, batch, source, field, model.field_shape);
    out.rgb.middleRows(begin, count) =
        r.render.rgb.value().matrix().topRows(count).template cast<double>();
    out.t.middleRows(begin, count) = r.t.value().matrix().topRows(count).template cast<double>();
  }
  return out;
}

template <typename Scalar>
Image render_image(const Camera& camera, const Model<Scalar>& model, Index chunk, DistanceMatrix* distances = nullptr) {
  const RenderedRays r = render_ray_list(model, generate_rays(camera), chunk);
  Image img(camera.intrinsics.width, camera.intrinsics.height);
  for (Index i = 0; i < r.rgb.rows(); ++i) {
    for (int c = 0; c < 3; ++c) img.rgb[static_cast<std::size_t>(i) * 3 + c] = r.rgb(i, c);
  }
  if (distances) *distances = r.t;
  return img;
}

/// Chunk size that satisfies the model's sampling mode.
template <typename Scalar>
Index default_chunk(const Model<Scalar>& model) {
  return model.mode == SamplingMode::Learned ? model.sampler_shape.n_rays : Index{1024};
}

}  // namespace rsmp
