#include <catch_amalgamated.hpp>

#include "rsmp/gradcheck.hpp"
#include "rsmp/sampler.hpp"

using namespace rsmp;
using TD = Tensor<double>;

namespace {

std::vector<Ray> random_rays(Index n, Rng& rng, double near = 2.0, double far = 6.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Ray> rays;
  for (Index i = 0; i < n; ++i) {
    Eigen::Vector3d d(g(rng), g(rng), g(rng));
    rays.push_back({Eigen::Vector3d(g(rng), g(rng), g(rng)), d.normalized(), near, far});
  }
  return rays;
}

SamplerShape tiny() { return {6, 5, 4, 7, 9, 2}; }

void zero(Dense<TD>& layer) {
  layer.weight.values.setZero();
  layer.bias.values.setZero();
}

void zero(SamplingBlock<TD>& block) {
  visit_block(block, "", [](const std::string&, TD& t) { t.values.setZero(); });
}

TD random_features(Index rows, Index cols, Rng& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  TD f({rows, cols});
  for (Index i = 0; i < f.size(); ++i) f.values[i] = u(rng);
  return f;
}

// Standalone two-layer MLP on one row vector.
Eigen::RowVectorXd mlp_oracle(const Eigen::RowVectorXd& x, const Dense<TD>& a, const Dense<TD>& b) {
  Eigen::RowVectorXd h = x * a.weight.matrix() + a.bias.matrix().transpose().reshaped(1, a.bias.size());
  for (Index i = 0; i < h.size(); ++i) h[i] = 0.5 * h[i] * (1.0 + std::erf(h[i] / std::sqrt(2.0)));
  return h * b.weight.matrix() + b.bias.values.matrix().transpose();
}

}  // namespace

TEST_CASE("RayBatch validation") {
  Rng rng(0);
  auto rays = random_rays(2, rng);
  CHECK_NOTHROW(RayBatch(rays));
  auto bad = rays;
  bad[1].direction *= 1.01;
  CHECK_THROWS_AS(RayBatch(bad), std::invalid_argument);
  bad = rays;
  bad[0].far = bad[0].near;
  CHECK_THROWS_AS(RayBatch(bad), std::invalid_argument);
  bad = rays;
  bad[0].near = 0.0;
  CHECK_THROWS_AS(RayBatch(bad), std::invalid_argument);
}

TEST_CASE("embed_rays") {
  Rng rng(1);
  const SamplerShape s = tiny();
  auto p = init_sampler<double>(s, rng);
  auto rays = random_rays(s.n_rays, rng);
  rays[4] = rays[1];
  const RayBatch batch(rays);

  Tape<double> tape;
  auto f = embed_rays(tape, batch, bind(tape, p.embed, false), s.n_rays);
  for (Index j = 0; j < s.n_rays; ++j) {
    Eigen::Matrix<double, 1, 6> in;
    in << rays[static_cast<std::size_t>(j)].origin.transpose(), rays[static_cast<std::size_t>(j)].direction.transpose();
    const Eigen::RowVectorXd expect = in * p.embed.weight.matrix() + p.embed.bias.values.matrix().transpose();
    CHECK((f.value().matrix().row(j) - expect).cwiseAbs().maxCoeff() < 1e-14);
  }
  CHECK(f.value().matrix().row(4) == f.value().matrix().row(1));

  zero(p.embed);
  CHECK((embed_rays(tape, batch, bind(tape, p.embed, false), s.n_rays).value().values == 0.0).all());
  CHECK_THROWS_AS(embed_rays(tape, RayBatch(random_rays(3, rng)), bind(tape, p.embed, false), s.n_rays),
                  std::invalid_argument);
}

TEST_CASE("ray-wise MLP") {
  Rng rng(2);
  const SamplerShape s = tiny();
  auto p = init_sampler<double>(s, rng);
  auto& block = p.blocks[0];
  const TD x = random_features(s.n_rays, s.d_feat, rng);

  Tape<double> tape;
  auto in = bind(tape, block.ray_in, false), out = bind(tape, block.ray_out, false);
  auto y = ray_mlp_forward(tape.constant(x), in, out).value();
  for (Index j = 0; j < s.n_rays; ++j) {
    CHECK((y.matrix().row(j) - mlp_oracle(x.matrix().row(j), block.ray_in, block.ray_out)).cwiseAbs().maxCoeff() <
          1e-14);
  }

  // row permutation
  TD xp = x;
  xp.matrix().row(0) = x.matrix().row(3);
  xp.matrix().row(3) = x.matrix().row(0);
  auto yp = ray_mlp_forward(tape.constant(xp), in, out).value();
  CHECK(yp.matrix().row(0) == y.matrix().row(3));
  CHECK(yp.matrix().row(3) == y.matrix().row(0));

  block.ray_in.weight.values.setZero();
  block.ray_out.weight.values.setZero();
  auto z = ray_mlp_forward(tape.constant(x), bind(tape, block.ray_in, false), bind(tape, block.ray_out, false)).value();
  for (Index j = 0; j < s.n_rays; ++j) CHECK(z.matrix().row(j) == block.ray_out.bias.values.matrix().transpose());
}

TEST_CASE("scene-wise MLP") {
  Rng rng(3);
  const SamplerShape s = tiny();
  auto p = init_sampler<double>(s, rng);
  auto& block = p.blocks[0];
  const TD x = random_features(s.n_rays, s.d_feat, rng);
  Tape<double> tape;
  auto in = bind(tape, block.scene_in, false), out = bind(tape, block.scene_out, false);
  auto y = scene_mlp_forward(tape.constant(x), in, out).value();
  CHECK(y.shape == x.shape);

  // column c of the output is the MLP applied to column c of the input
  for (Index c = 0; c < s.d_feat; ++c) {
    const Eigen::RowVectorXd col = x.matrix().col(c).transpose();
    CHECK((y.matrix().col(c).transpose() - mlp_oracle(col, block.scene_in, block.scene_out)).cwiseAbs().maxCoeff() <
          1e-14);
  }

  // perturbing one ray changes every other ray's output
  TD xp = x;
  xp(2, 1) += 0.5;
  auto yp = scene_mlp_forward(tape.constant(xp), in, out).value();
  for (Index j = 0; j < s.n_rays; ++j) CHECK(yp.matrix().row(j) != y.matrix().row(j));

  CHECK_THROWS_AS(scene_mlp_forward(tape.constant(random_features(s.n_rays + 1, s.d_feat, rng)), in, out),
                  std::invalid_argument);

  block.scene_in.weight.values.setZero();
  block.scene_out.weight.values.setZero();
  auto z = scene_mlp_forward(tape.constant(x), bind(tape, block.scene_in, false), bind(tape, block.scene_out, false));
  for (Index c = 0; c < s.d_feat; ++c) {
    CHECK(z.value().matrix().col(c) == block.scene_out.bias.values.matrix());
  }
}

TEST_CASE("scene-wise MLP with an inverting second layer is the identity") {
  // h = W1^T-space map; with W2 = W1^{-1}, zero biases and GELU replaced by
  // its near-linear regime (large positive pre-activations) the output returns
  // the input up to GELU's deviation from identity.
  const Index n = 4;
  Dense<TD> in{TD({n, n}), TD({n})}, out{TD({n, n}), TD({n})};
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(n, n) * 0.5;
  w(0, 1) = 0.1;
  in.weight.matrix() = w;
  out.weight.matrix() = w.inverse();
  TD x({n, 3});
  for (Index i = 0; i < x.size(); ++i) x.values[i] = 20.0 + static_cast<double>(i);
  Tape<double> tape;
  auto y = scene_mlp_forward(tape.constant(x), bind(tape, in, false), bind(tape, out, false)).value();
  CHECK((y.values - x.values).abs().maxCoeff() < 1e-9);
}

TEST_CASE("sampling block") {
  Rng rng(4);
  const SamplerShape s = tiny();
  auto p = init_sampler<double>(s, rng);
  const TD x = random_features(s.n_rays, s.d_feat, rng);
  Tape<double> tape;
  auto y = sampling_block_forward(tape.constant(x), bind_block(tape, p.blocks[0], false)).value();
  CHECK(y.shape == x.shape);

  // independent recomposition
  const auto& b = p.blocks[0];
  Eigen::MatrixXd ray(s.n_rays, s.d_feat), scene(s.n_rays, s.d_feat);
  for (Index j = 0; j < s.n_rays; ++j) ray.row(j) = mlp_oracle(x.matrix().row(j), b.ray_in, b.ray_out);
  for (Index c = 0; c < s.d_feat; ++c) {
    scene.col(c) = mlp_oracle(x.matrix().col(c).transpose(), b.scene_in, b.scene_out).transpose();
  }
  Eigen::MatrixXd cat(s.n_rays, 2 * s.d_feat);
  cat << ray, scene;
  Eigen::MatrixXd expect = x.matrix() + ((cat * b.merge.weight.matrix()).rowwise() +
                                         b.merge.bias.values.matrix().transpose());
  CHECK((y.matrix() - expect).cwiseAbs().maxCoeff() < 1e-13);

  auto zeroed = p.blocks[0];
  zero(zeroed);
  CHECK((sampling_block_forward(tape.constant(x), bind_block(tape, zeroed, false)).value().values == x.values).all());
}

TEST_CASE("sampler output is sorted within near and far") {
  Rng rng(5);
  const SamplerShape s = tiny();
  for (int trial = 0; trial < 50; ++trial) {
    auto p = init_sampler<double>(s, rng, trial % 2 ? 3.0 : 1e-3);
    std::uniform_real_distribution<double> u(0.5, 3.0);
    const double near = u(rng), far = near + u(rng);
    const RayBatch batch(random_rays(s.n_rays, rng, near, far));
    Tape<double> tape;
    const auto t = sampler_forward(tape, batch, bind(tape, p, false), s).value();
    CHECK(t.shape == Shape{s.n_rays, s.n_samples});
    CHECK((t.values >= near).all());
    CHECK((t.values <= far).all());
    for (Index j = 0; j < s.n_rays; ++j) {
      for (Index i = 1; i < s.n_samples; ++i) CHECK(t(j, i - 1) <= t(j, i));
    }
  }
}

TEST_CASE("passthrough head reproduces bin midpoints") {
  Rng rng(6);
  const SamplerShape s = tiny();
  auto p = init_sampler<double>(s, rng);
  p.head.weight.values.setZero();
  const RayBatch batch(random_rays(s.n_rays, rng));
  Tape<double> tape;
  const auto t = sampler_forward(tape, batch, bind(tape, p, false), s).value();
  for (Index j = 0; j < s.n_rays; ++j) {
    for (Index i = 0; i < s.n_samples; ++i) {
      CHECK(t(j, i) == Catch::Approx(2.0 + 4.0 * (static_cast<double>(i) + 0.5) / 5.0).epsilon(1e-12));
    }
  }
  // default init (std 1e-3 head weights) stays close to the midpoints
  auto q = init_sampler<double>(s, rng);
  const auto t2 = sampler_forward(tape, batch, bind(tape, q, false), s).value();
  CHECK((t2.values - t.values).abs().maxCoeff() < 0.05);
}

TEST_CASE("permutation equivariance without scene-wise weights") {
  Rng rng(7);
  const SamplerShape s = tiny();
  auto p = init_sampler<double>(s, rng, 1.0);
  for (auto& b : p.blocks) {
    zero(b.scene_in);
    zero(b.scene_out);
  }
  auto rays = random_rays(s.n_rays, rng);
  std::vector<std::size_t> perm(rays.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Ray> shuffled;
  for (auto i : perm) shuffled.push_back(rays[i]);
  Tape<double> tape;
  const auto vars = bind(tape, p, false);
  const auto t = sampler_forward(tape, RayBatch(rays), vars, s).value();
  const auto tp = sampler_forward(tape, RayBatch(shuffled), vars, s).value();
  for (Index j = 0; j < s.n_rays; ++j) {
    CHECK((tp.matrix().row(j) - t.matrix().row(static_cast<Index>(perm[static_cast<std::size_t>(j)]))).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("scene coupling with random scene-wise weights") {
  Rng rng(8);
  const SamplerShape s = tiny();
  auto p = init_sampler<double>(s, rng, 1.0);
  auto rays = random_rays(s.n_rays, rng);
  Tape<double> tape;
  const auto vars = bind(tape, p, false);
  const auto t = sampler_forward(tape, RayBatch(rays), vars, s).value();
  rays[0].origin += Eigen::Vector3d(0.7, -0.3, 0.2);
  const auto t2 = sampler_forward(tape, RayBatch(rays), vars, s).value();
  CHECK(t2.matrix().row(3) != t.matrix().row(3));
}

TEST_CASE("sampler determinism") {
  const SamplerShape s = tiny();
  Rng a(12), b(12), r(1);
  auto pa = init_sampler<double>(s, a), pb = init_sampler<double>(s, b);
  const RayBatch batch(random_rays(s.n_rays, r));
  Tape<double> tape;
  CHECK((sampler_forward(tape, batch, bind(tape, pa, false), s).value().values ==
         sampler_forward(tape, batch, bind(tape, pb, false), s).value().values)
            .all());
}

TEST_CASE("distances_to_points") {
  Tape<double> tape;
  const RayBatch one({Ray{Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), 2.0, 6.0}});
  auto pts = distances_to_points(tape, one, tape.constant(TD({1, 2}, {4.0, 2.0}))).value();
  CHECK(pts.matrix().row(0) == Eigen::RowVector3d(0, 0, 4));
  CHECK(pts.matrix().row(1) == Eigen::RowVector3d(0, 0, 2));

  Rng rng(9);
  const auto rays = random_rays(4, rng);
  TD t({4, 3});
  std::uniform_real_distribution<double> u(2, 6);
  for (Index i = 0; i < t.size(); ++i) t.values[i] = u(rng);
  auto all = distances_to_points(tape, RayBatch(rays), tape.constant(t)).value();
  for (Index j = 0; j < 4; ++j) {
    for (Index i = 0; i < 3; ++i) {
      const Ray& ray = rays[static_cast<std::size_t>(j)];
      const Eigen::Vector3d expect = ray.origin + t(j, i) * ray.direction;
      CHECK((all.matrix().row(j * 3 + i).transpose() - expect).cwiseAbs().maxCoeff() < 1e-15);
    }
  }
  CHECK_THROWS_AS(distances_to_points(tape, one, tape.constant(t)), std::invalid_argument);
}

TEST_CASE("sampler gradients are nonzero and match finite differences") {
  Rng rng(10);
  const SamplerShape s = tiny();
  const auto p = init_sampler<double>(s, rng, 0.3);
  std::vector<TD> leaves;
  visit(p, [&](const std::string&, const TD& t) { leaves.push_back(t); });
  const RayBatch batch(random_rays(s.n_rays, rng));
  TD w({s.n_rays, s.n_samples});
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (Index i = 0; i < w.size(); ++i) w.values[i] = u(rng);

  LossBuilder<double> f = [&](Tape<double>& tape, std::span<const Var<double>> x) {
    SamplerVars<double> v;
    v.blocks.resize(static_cast<std::size_t>(s.n_blocks));
    std::size_t k = 0;
    visit(v, [&](const std::string&, Var<double>& leaf) { leaf = x[k++]; });
    auto t = sampler_forward(tape, batch, v, s);
    return sum(mul(mul(t, t), tape.constant(w)));
  };
  const auto r = finite_diff_check<double>(f, leaves, 1e-5);
  CHECK(r.max_rel_error < 1e-4);

  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& l : leaves) vars.push_back(tape.variable(l));
  tape.backward(f(tape, vars));
  double total = 0;
  for (const auto& v : vars) total += tape.grad(v).values.abs().sum();
  CHECK(total > 0.0);
}

TEST_CASE("sampler parameter shapes") {
  Rng rng(0);
  const SamplerShape s{64, 16, 16, 64, 256, 3};
  const auto p = init_sampler<float>(s, rng);
  CHECK(p.embed.weight.shape == Shape{6, 16});
  REQUIRE(p.blocks.size() == 3);
  CHECK(p.blocks[0].scene_in.weight.shape == Shape{64, 256});
  CHECK(p.blocks[0].scene_out.weight.shape == Shape{256, 64});
  CHECK(p.blocks[0].merge.weight.shape == Shape{32, 16});
  CHECK(p.head.weight.shape == Shape{16, 16});
  CHECK(p.head.bias.values[0] == Catch::Approx(std::log(1.0 / 31.0)));
  CHECK_THROWS_AS(init_sampler<float>(SamplerShape{64, 16, 16, 64, 256, 0}, rng), std::invalid_argument);
}
