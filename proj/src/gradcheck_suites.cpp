#include "rsmp/gradcheck_suites.hpp"

#include <functional>
#include <map>
#include <stdexcept>

#include "rsmp/field.hpp"
#include "rsmp/renderer.hpp"
#include "rsmp/sampler.hpp"

namespace rsmp {

namespace {

using T = Tensor<double>;
using V = Var<double>;
using Leaves = std::span<const V>;

T uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values[i] = u(rng);
  return t;
}

// Values bounded away from zero, for primitives with a kink there.
T away_from_zero(Shape shape, Rng& rng) {
  T t = uniform(std::move(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (Index i = 0; i < t.size(); ++i) {
    if (flip(rng)) t.values[i] = -t.values[i];
  }
  return t;
}

// Rows with pairwise gaps of at least 0.01, in random order.
T distinct_rows(Index m, Index n, Rng& rng) {
  T t(Shape{m, n});
  for (Index r = 0; r < m; ++r) {
    std::vector<double> row;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    while (static_cast<Index>(row.size()) < n) {
      const double v = u(rng);
      bool ok = true;
      for (double w : row) ok = ok && std::abs(v - w) >= 0.01;
      if (ok) row.push_back(v);
    }
    for (Index c = 0; c < n; ++c) t(r, c) = row[static_cast<std::size_t>(c)];
  }
  return t;
}

// Random weighting so every output element contributes a distinct amount.
V weighted_sum(V y, Rng& weights_rng) {
  T w = uniform(y.shape(), weights_rng, 0.5, 1.5);
  return sum(mul(y, y.tape->constant(std::move(w))));
}

struct Problem {
  std::vector<T> params;
  std::function<V(Tape<double>&, Leaves)> forward;  // output before weighting
  double eps = 1e-3;
  double resolution = 0.0;  // see finite_diff_check; only for piecewise-smooth compositions
};

using ProblemFactory = std::function<Problem(Rng&)>;

std::vector<Ray> random_rays(Index n, Rng& rng) {
  std::vector<Ray> rays;
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (Index i = 0; i < n; ++i) {
    Eigen::Vector3d d(0.3 * g(rng), 0.3 * g(rng), -1.0);
    rays.push_back({Eigen::Vector3d(u(rng), u(rng), u(rng)), d.normalized(), 2.0, 6.0});
  }
  return rays;
}

FieldShape tiny_field() { return {2, 8, 2, 1, 1.0 / 3.0}; }
SamplerShape tiny_sampler() { return {4, 4, 8, 8, 8, 1}; }

// Zero-initialized biases put ReLU inputs exactly on the kink for points
// whose previous layer is fully inactive; checks run at generic values.
template <typename Layers>
void randomize_biases(Layers& layers, Rng& rng) {
  visit(layers, [&](const std::string&, T& t) {
    if (t.rank() == 1) t = uniform(t.shape, rng, -0.2, 0.2);
  });
}

template <typename Layers>
std::vector<T> flatten(const Layers& layers) {
  std::vector<T> out;
  visit(layers, [&](const std::string&, const T& t) { out.push_back(t); });
  return out;
}

// Fills a Var-valued layer skeleton from leaves in visit order.
template <typename Layers>
std::size_t unflatten(Layers& layers, Leaves leaves, std::size_t k) {
  visit(layers, [&](const std::string&, V& v) { v = leaves[k++]; });
  return k;
}

FieldVars<double> field_skeleton(const FieldShape& s) {
  FieldVars<double> f;
  f.trunk.resize(static_cast<std::size_t>(s.depth));
  return f;
}

SamplerVars<double> sampler_skeleton(const SamplerShape& s) {
  SamplerVars<double> v;
  v.blocks.resize(static_cast<std::size_t>(s.n_blocks));
  return v;
}

const std::map<std::string, ProblemFactory>& registry() {
  static const std::map<std::string, ProblemFactory> suites = {
      {"matmul",
       [](Rng& rng) {
         return Problem{{uniform({3, 4}, rng), uniform({4, 2}, rng)},
                        [](Tape<double>&, Leaves x) { return matmul(x[0], x[1]); }};
       }},
      {"transpose",
       [](Rng& rng) { return Problem{{uniform({3, 5}, rng)}, [](Tape<double>&, Leaves x) { return transpose(x[0]); }}; }},
      {"add_bias",
       [](Rng& rng) {
         return Problem{{uniform({4, 3}, rng), uniform({3}, rng)},
                        [](Tape<double>&, Leaves x) { return add_bias(x[0], x[1]); }};
       }},
      {"scale_rows",
       [](Rng& rng) {
         return Problem{{uniform({4, 3}, rng), uniform({4, 1}, rng)},
                        [](Tape<double>&, Leaves x) { return scale_rows(x[0], x[1]); }};
       }},
      {"add",
       [](Rng& rng) {
         return Problem{{uniform({3, 3}, rng), uniform({3, 3}, rng), uniform({}, rng)},
                        [](Tape<double>&, Leaves x) { return add(add(x[0], x[1]), x[2]); }};
       }},
      {"sub",
       [](Rng& rng) {
         return Problem{{uniform({3, 3}, rng), uniform({3, 3}, rng), uniform({}, rng)},
                        [](Tape<double>&, Leaves x) { return sub(x[2], sub(x[0], x[1])); }};
       }},
      {"mul",
       [](Rng& rng) {
         return Problem{{uniform({3, 3}, rng), uniform({3, 3}, rng), uniform({}, rng)},
                        [](Tape<double>&, Leaves x) { return mul(mul(x[0], x[1]), x[2]); }};
       }},
      {"neg", [](Rng& rng) { return Problem{{uniform({2, 3}, rng)}, [](Tape<double>&, Leaves x) { return neg(x[0]); }}; }},
      {"affine_scale_shift",
       [](Rng& rng) {
         return Problem{{uniform({2, 3}, rng)},
                        [](Tape<double>&, Leaves x) { return affine_scale_shift(x[0], 2.5, -0.75); }};
       }},
      {"affine_rows",
       [](Rng& rng) {
         Eigen::ArrayXd scale = uniform({3}, rng, 0.5, 2.0).values, shift = uniform({3}, rng).values;
         return Problem{{uniform({3, 4}, rng)},
                        [scale, shift](Tape<double>&, Leaves x) { return affine_rows(x[0], scale, shift); }};
       }},
      {"clamp_rows",
       [](Rng& rng) {
         // interior and clamped entries, none within 0.05 of a bound
         T x = uniform({3, 6}, rng, -1.0, 1.0);
         for (Index i = 0; i < x.size(); ++i) {
           if (std::abs(std::abs(x.values[i]) - 0.5) < 0.05) x.values[i] *= 0.8;
         }
         const Eigen::ArrayXd lo = Eigen::ArrayXd::Constant(3, -0.5), hi = Eigen::ArrayXd::Constant(3, 0.5);
         return Problem{{x}, [lo, hi](Tape<double>&, Leaves v) { return clamp_rows(v[0], lo, hi); }};
       }},
      {"exp", [](Rng& rng) { return Problem{{uniform({3, 3}, rng)}, [](Tape<double>&, Leaves x) { return exp(x[0]); }}; }},
      {"sigmoid",
       [](Rng& rng) {
         return Problem{{uniform({3, 3}, rng, -4.0, 4.0)}, [](Tape<double>&, Leaves x) { return sigmoid(x[0]); }};
       }},
      {"softplus",
       [](Rng& rng) {
         return Problem{{uniform({3, 3}, rng, -4.0, 4.0)}, [](Tape<double>&, Leaves x) { return softplus(x[0]); }};
       }},
      {"relu",
       [](Rng& rng) { return Problem{{away_from_zero({4, 4}, rng)}, [](Tape<double>&, Leaves x) { return relu(x[0]); }}; }},
      {"gelu",
       [](Rng& rng) {
         return Problem{{uniform({3, 3}, rng, -3.0, 3.0)}, [](Tape<double>&, Leaves x) { return gelu(x[0]); }};
       }},
      {"sum", [](Rng& rng) { return Problem{{uniform({3, 4}, rng)}, [](Tape<double>&, Leaves x) { return sum(x[0]); }}; }},
      {"mean",
       [](Rng& rng) { return Problem{{uniform({3, 4}, rng)}, [](Tape<double>&, Leaves x) { return mean(x[0]); }}; }},
      {"sum_last_dim",
       [](Rng& rng) {
         return Problem{{uniform({3, 4}, rng)}, [](Tape<double>&, Leaves x) { return sum_last_dim(x[0]); }};
       }},
      {"cumulative_sum",
       [](Rng& rng) {
         return Problem{{uniform({3, 5}, rng)}, [](Tape<double>&, Leaves x) { return cumulative_sum(x[0]); }};
       }},
      {"concat_last_dim",
       [](Rng& rng) {
         return Problem{{uniform({3, 2}, rng), uniform({3, 4}, rng)},
                        [](Tape<double>&, Leaves x) { return concat_last_dim<double>({x[0], x[1]}); }};
       }},
      {"slice_last_dim",
       [](Rng& rng) {
         return Problem{{uniform({3, 6}, rng)}, [](Tape<double>&, Leaves x) { return slice_last_dim(x[0], 1, 3); }};
       }},
      {"reshape",
       [](Rng& rng) {
         return Problem{{uniform({3, 4}, rng)}, [](Tape<double>&, Leaves x) { return reshape(x[0], Shape{2, 6}); }};
       }},
      {"sort_ascending",
       [](Rng& rng) {
         return Problem{{distinct_rows(3, 6, rng)}, [](Tape<double>&, Leaves x) { return sort_ascending(x[0]).values; }};
       }},
      {"positional_encode",
       [](Rng& rng) {
         return Problem{{uniform({4, 3}, rng)}, [](Tape<double>&, Leaves x) { return positional_encode(x[0], 3); }};
       }},
      {"volume_render",
       [](Rng& rng) {
         T sigma = uniform({3, 5}, rng, 0.0, 2.0);
         T rgb = uniform({15, 3}, rng, 0.0, 1.0);
         T t(Shape{3, 5});
         for (Index r = 0; r < 3; ++r) {
           for (Index i = 0; i < 5; ++i) t(r, i) = 2.0 + 0.7 * static_cast<double>(i) + uniform({}, rng, 0.0, 0.3).item();
         }
         const Eigen::ArrayXd far = Eigen::ArrayXd::Constant(3, 6.0);
         return Problem{{sigma, rgb, t}, [far](Tape<double>& tape, Leaves x) {
                          auto out = volume_render(tape, x[0], x[1], x[2], far);
                          return concat_last_dim<double>({out.rgb, out.depth});
                        }};
       }},
      {"field_forward",
       [](Rng& rng) {
         const FieldShape fs = tiny_field();
         auto field = init_field<double>(fs, rng);
         randomize_biases(field, rng);
         std::vector<T> params = flatten(field);
         params.push_back(uniform({6, 3}, rng, -1.5, 1.5));
         T dirs = uniform({6, 3}, rng);
         dirs.matrix().rowwise().normalize();
         return Problem{params, [fs, dirs](Tape<double>& tape, Leaves x) {
                          FieldVars<double> f = field_skeleton(fs);
                          const std::size_t k = unflatten(f, x, 0);
                          auto out = field_forward(x[k], tape.constant(dirs), f, fs);
                          return concat_last_dim<double>({out.sigma, out.rgb});
                        }, 1e-4, 1e-6};
       }},
      {"sampler_forward",
       [](Rng& rng) {
         const SamplerShape ss = tiny_sampler();
         const RayBatch batch(random_rays(ss.n_rays, rng));
         return Problem{flatten(init_sampler<double>(ss, rng, 0.3)), [ss, batch](Tape<double>& tape, Leaves x) {
                          SamplerVars<double> s = sampler_skeleton(ss);
                          unflatten(s, x, 0);
                          return sampler_forward(tape, batch, s, ss);
                        }, 1e-4, 1e-6};
       }},
      {"pipeline",
       [](Rng& rng) {
         const SamplerShape ss = tiny_sampler();
         const FieldShape fs = tiny_field();
         const RayBatch batch(random_rays(ss.n_rays, rng));
         std::vector<T> params = flatten(init_sampler<double>(ss, rng, 0.3));
         const std::size_t n_sampler = params.size();
         auto field = init_field<double>(fs, rng);
         randomize_biases(field, rng);
         for (auto& p : flatten(field)) params.push_back(std::move(p));
         const T target = uniform({ss.n_rays, 3}, rng, 0.0, 1.0);
         return Problem{params, [ss, fs, batch, target, n_sampler](Tape<double>& tape, Leaves x) {
                          SamplerVars<double> s = sampler_skeleton(ss);
                          FieldVars<double> f = field_skeleton(fs);
                          unflatten(s, x, 0);
                          unflatten(f, x, n_sampler);
                          SampleSource<double> source;
                          source.sampler = &s;
                          source.sampler_shape = ss;
                          auto out = render_rays(tape, batch, source, f, fs);
                          V diff = sub(out.render.rgb, tape.constant(target));
                          return mean(mul(diff, diff));
                        }, 1e-4, 1e-6};
       }},
  };
  return suites;
}

}  // namespace

std::vector<std::string> gradcheck_suite_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

SuiteResult run_gradcheck_suite(const std::string& name, std::uint64_t first_seed, int n_seeds) {
  const auto it = registry().find(name);
  if (it == registry().end()) throw std::invalid_argument("unknown gradcheck suite '" + name + "'");
  SuiteResult result{name, {}, n_seeds};
  for (int s = 0; s < n_seeds; ++s) {
    Rng rng(first_seed + static_cast<std::uint64_t>(s));
    Problem problem = it->second(rng);
    const std::uint64_t weight_seed = rng();
    LossBuilder<double> loss = [&](Tape<double>& tape, std::span<const V> leaves) {
      Rng weights(weight_seed);
      return weighted_sum(problem.forward(tape, leaves), weights);
    };
    const GradCheckResult r = finite_diff_check<double>(loss, problem.params, problem.eps, problem.resolution);
    const std::size_t elements = result.check.elements + r.elements;
    const std::size_t unresolved = result.check.unresolved + r.unresolved;
    if (s == 0 || r.max_rel_error > result.check.max_rel_error) result.check = r;
    result.check.elements = elements;
    result.check.unresolved = unresolved;
  }
  return result;
}

bool passed(const SuiteResult& r, double tolerance) {
  return r.check.max_rel_error < tolerance &&
         static_cast<double>(r.check.unresolved) <= kMaxUnresolvedFraction * static_cast<double>(r.check.elements);
}

std::vector<SuiteResult> run_gradcheck_suites(std::uint64_t first_seed, int n_seeds) {
  std::vector<SuiteResult> out;
  for (const auto& name : gradcheck_suite_names()) out.push_back(run_gradcheck_suite(name, first_seed, n_seeds));
  return out;
}

}  // namespace rsmp
