#include <catch_amalgamated.hpp>

#include "rsmp/field.hpp"
#include "rsmp/gradcheck.hpp"

using namespace rsmp;
using TD = Tensor<double>;

namespace {

TD random_points(Index n, Rng& rng) {
  std::uniform_real_distribution<double> u(-2, 2);
  TD p({n, 3});
  for (Index i = 0; i < p.size(); ++i) p.values[i] = u(rng);
  return p;
}

TD random_dirs(Index n, Rng& rng) {
  std::normal_distribution<double> g(0, 1);
  TD d({n, 3});
  for (Index i = 0; i < d.size(); ++i) d.values[i] = g(rng);
  d.matrix().rowwise().normalize();
  return d;
}

FieldShape small_shape() { return {3, 16, 4, 2, 1.0 / 3.0}; }

}  // namespace

TEST_CASE("positional_encode layout") {
  Tape<double> tape;
  auto y = positional_encode(tape.constant(TD({1, 1}, {0.0})), 2);
  CHECK(y.shape() == Shape{1, 4});
  CHECK(y.value().values.isApprox(Eigen::Array4d(0, 1, 0, 1)));

  // coordinate-major: (sin, cos) pairs per level for coordinate 0, then coordinate 1
  auto z = positional_encode(tape.constant(TD({1, 2}, {0.25, 0.5})), 2).value().values;
  const double pi = std::numbers::pi;
  CHECK(z[0] == Catch::Approx(std::sin(pi * 0.25)));
  CHECK(z[3] == Catch::Approx(std::cos(2 * pi * 0.25)));
  CHECK(z[4] == Catch::Approx(std::sin(pi * 0.5)));

  Rng rng(2);
  auto r = positional_encode(tape.constant(random_points(50, rng)), 6).value().values;
  CHECK((r.abs() <= 1.0).all());
  CHECK_THROWS_AS(positional_encode(tape.constant(TD({1, 1})), 0), std::invalid_argument);
}

TEST_CASE("zero parameters give softplus(0) and 0.5") {
  Rng rng(0);
  const FieldShape shape = small_shape();
  FieldParams<double> p = init_field<double>(shape, rng);
  visit(p, [](const std::string&, TD& t) { t.values.setZero(); });
  Tape<double> tape;
  auto out = field_forward(tape.constant(random_points(8, rng)), tape.constant(random_dirs(8, rng)),
                           bind(tape, p, false), shape);
  CHECK(((out.sigma.value().values - std::log(2.0)).abs() < 1e-15).all());
  CHECK((out.rgb.value().values == 0.5).all());
}

TEST_CASE("field is row-wise pure and bounded") {
  Rng rng(4);
  const FieldShape shape = small_shape();
  const FieldParams<double> p = init_field<double>(shape, rng);
  TD pts = random_points(12, rng), dirs = random_dirs(12, rng);
  pts.matrix().row(5) = pts.matrix().row(2);
  dirs.matrix().row(5) = dirs.matrix().row(2);

  Tape<double> tape;
  auto out = field_forward(tape.constant(pts), tape.constant(dirs), bind(tape, p, false), shape);
  const auto s = out.sigma.value().matrix();
  const auto c = out.rgb.value().matrix();
  CHECK(s.row(5) == s.row(2));
  CHECK(c.row(5) == c.row(2));
  CHECK((out.sigma.value().values >= 0.0).all());
  CHECK(((out.rgb.value().values >= 0.0) && (out.rgb.value().values <= 1.0)).all());

  // shuffling rows shuffles outputs
  std::vector<Index> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  TD pts2(pts.shape), dirs2(dirs.shape);
  for (Index i = 0; i < 12; ++i) {
    pts2.matrix().row(i) = pts.matrix().row(perm[static_cast<std::size_t>(i)]);
    dirs2.matrix().row(i) = dirs.matrix().row(perm[static_cast<std::size_t>(i)]);
  }
  auto out2 = field_forward(tape.constant(pts2), tape.constant(dirs2), bind(tape, p, false), shape);
  for (Index i = 0; i < 12; ++i) {
    CHECK(out2.sigma.value().matrix().row(i) == s.row(perm[static_cast<std::size_t>(i)]));
    CHECK(out2.rgb.value().matrix().row(i) == c.row(perm[static_cast<std::size_t>(i)]));
  }
}

TEST_CASE("field is deterministic") {
  Rng a(11), b(11);
  const FieldShape shape = small_shape();
  auto pa = init_field<double>(shape, a);
  auto pb = init_field<double>(shape, b);
  Rng rng(1);
  const TD pts = random_points(6, rng), dirs = random_dirs(6, rng);
  Tape<double> tape;
  auto oa = field_forward(tape.constant(pts), tape.constant(dirs), bind(tape, pa, false), shape);
  auto ob = field_forward(tape.constant(pts), tape.constant(dirs), bind(tape, pb, false), shape);
  CHECK((oa.sigma.value().values == ob.sigma.value().values).all());
  CHECK((oa.rgb.value().values == ob.rgb.value().values).all());
}

TEST_CASE("gradient of sum(sigma) with respect to points") {
  Rng rng(7);
  const FieldShape shape = small_shape();
  FieldParams<double> p = init_field<double>(shape, rng);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  visit(p, [&](const std::string&, TD& t) {
    if (t.rank() == 1) {
      for (Index i = 0; i < t.size(); ++i) t.values[i] = u(rng);
    }
  });
  const TD dirs = random_dirs(5, rng);
  LossBuilder<double> f = [&](Tape<double>& tape, std::span<const Var<double>> x) {
    return sum(field_forward(x[0], tape.constant(dirs), bind(tape, p, false), shape).sigma);
  };
  CHECK(finite_diff_check<double>(f, {random_points(5, rng)}, 1e-6).max_rel_error < 1e-5);
}

TEST_CASE("field input validation") {
  Rng rng(0);
  const FieldShape shape = small_shape();
  const auto p = init_field<double>(shape, rng);
  Tape<double> tape;
  const auto vars = bind(tape, p, false);
  TD pts = random_points(2, rng), dirs = random_dirs(2, rng);
  TD bad_dirs = dirs;
  bad_dirs.values *= 1.1;
  CHECK_THROWS_AS(field_forward(tape.constant(pts), tape.constant(bad_dirs), vars, shape), std::invalid_argument);
  TD nan_pts = pts;
  nan_pts.values[0] = std::nan("");
  CHECK_THROWS_AS(field_forward(tape.constant(nan_pts), tape.constant(dirs), vars, shape), std::invalid_argument);
  CHECK_THROWS_AS(field_forward(tape.constant(random_points(3, rng)), tape.constant(dirs), vars, shape),
                  std::invalid_argument);
}

TEST_CASE("field parameter shapes follow the configuration") {
  Rng rng(0);
  const FieldShape shape{4, 64, 6, 4, 1.0 / 3.0};
  const auto p = init_field<float>(shape, rng);
  REQUIRE(p.trunk.size() == 4);
  CHECK(p.trunk[0].weight.shape == Shape{36, 64});
  CHECK(p.trunk[3].weight.shape == Shape{64, 64});
  CHECK(p.density.weight.shape == Shape{64, 1});
  CHECK(p.color.weight.shape == Shape{64 + 24, 3});
}
