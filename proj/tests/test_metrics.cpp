#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "json.hpp"
#include "rsmp/metrics.hpp"

using namespace rsmp;
using Catch::Approx;
using Eigen::Index;

namespace {

Image constant_image(int w, int h, double v) {
  Image img(w, h);
  std::fill(img.rgb.begin(), img.rgb.end(), v);
  return img;
}

Image random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(w, h);
  for (double& v : img.rgb) v = u(rng);
  return img;
}

// Reference values for these patterns come from an independent SSIM
// implementation with the same window and constants.
Image pattern(int kind, int which) {
  Image img(16, 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v;
        if (kind == 0) {
          v = which == 0 ? ((x * 7 + y * 13 + c * 5) % 17) / 16.0 : ((x * 3 + y * 5 + c * 11) % 19) / 18.0;
        } else {
          v = which == 0 ? 0.5 + 0.4 * std::sin(0.3 * x + 0.2 * y + c)
                         : 0.5 + 0.35 * std::sin(0.3 * x + 0.25 * y + c + 0.1);
        }
        img.at(x, y, c) = v;
      }
    }
  }
  return img;
}

}  // namespace

TEST_CASE("psnr examples") {
  const Image a = constant_image(8, 8, 0.3);
  CHECK(psnr(a, constant_image(8, 8, 0.4)) == Approx(20.0).epsilon(1e-12));
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, a) > 0);
  CHECK(psnr(constant_image(4, 4, 0.0), constant_image(4, 4, 0.5)) == Approx(6.020599913279624).epsilon(1e-12));

  const Image x = random_image(9, 7, 1), y = random_image(9, 7, 2);
  CHECK(psnr(x, y) == psnr(y, x));
  CHECK_THROWS_AS(psnr(x, random_image(7, 9, 3)), std::invalid_argument);
}

TEST_CASE("psnr decreases as noise grows") {
  const Image clean = random_image(16, 16, 4);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  Image direction(16, 16);
  for (double& v : direction.rgb) v = g(rng);
  double previous = std::numeric_limits<double>::infinity();
  for (double level : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    Image noisy = clean;
    for (std::size_t i = 0; i < noisy.rgb.size(); ++i) noisy.rgb[i] += level * direction.rgb[i];
    const double p = psnr(clean, noisy);
    CHECK(p < previous);
    previous = p;
  }
}

TEST_CASE("ssim examples") {
  const Image a = random_image(20, 17, 6);
  CHECK(ssim(a, a) == Approx(1.0).epsilon(1e-12));
  CHECK(ssim(pattern(0, 0), pattern(0, 1)) == Approx(0.014053749097494137).margin(1e-12));
  CHECK(ssim(pattern(1, 0), pattern(1, 1)) == Approx(0.761830750089176).margin(1e-12));

  const Image smooth = pattern(1, 0);
  Image inverted = smooth;
  for (double& v : inverted.rgb) v = 1.0 - v;
  CHECK(ssim(smooth, inverted) < 0.0);

  const Image b = random_image(20, 17, 7);
  CHECK(ssim(a, b) == Approx(ssim(b, a)).epsilon(1e-12));
  CHECK_THROWS_AS(ssim(random_image(10, 20, 1), random_image(10, 20, 2)), std::invalid_argument);
  CHECK_THROWS_AS(ssim(a, random_image(17, 20, 1)), std::invalid_argument);
}

TEST_CASE("surface concentration") {
  DistanceMatrix t(2, 4);
  t << 3.0, 3.05, 3.1, 2.95,  //
      2.5, 3.5, 4.5, 5.5;
  const std::vector<double> depth{3.0, std::numeric_limits<double>::quiet_NaN()};
  CHECK(surface_concentration(t, depth, 0.125) == 1.0);

  // Bin midpoints on [2, 6] with eps equal to half a bin: one sample per ray.
  DistanceMatrix mid(3, 16);
  for (Index r = 0; r < 3; ++r) {
    for (Index i = 0; i < 16; ++i) mid(r, i) = 2.0 + 0.25 * (static_cast<double>(i) + 0.5);
  }
  CHECK(surface_concentration(mid, std::vector<double>{2.3, 4.0 + 1e-3, 5.9}, 0.125) == Approx(1.0 / 16.0));

  const std::vector<double> none(2, std::numeric_limits<double>::quiet_NaN());
  CHECK(surface_concentration(t, none, 0.125) == 0.0);
  CHECK_THROWS_AS(surface_concentration(t, std::vector<double>{3.0}, 0.1), std::invalid_argument);
}

TEST_CASE("surface concentration ignores ray order") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(2.0, 6.0);
  DistanceMatrix t(50, 8);
  std::vector<double> depth(50);
  for (Index r = 0; r < 50; ++r) {
    for (Index i = 0; i < 8; ++i) t(r, i) = u(rng);
    depth[static_cast<std::size_t>(r)] = r % 7 == 0 ? std::numeric_limits<double>::quiet_NaN() : u(rng);
  }
  std::vector<Index> perm(50);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  DistanceMatrix tp(50, 8);
  std::vector<double> dp(50);
  for (Index r = 0; r < 50; ++r) {
    tp.row(r) = t.row(perm[static_cast<std::size_t>(r)]);
    dp[static_cast<std::size_t>(r)] = depth[static_cast<std::size_t>(perm[static_cast<std::size_t>(r)])];
  }
  CHECK(surface_concentration(tp, dp, 0.3) == Approx(surface_concentration(t, depth, 0.3)).epsilon(1e-14));
}

TEST_CASE("distance histogram") {
  DistanceMatrix t(2, 4);
  t << 2.0, 2.5, 3.0, 6.0,  //
      4.0, 4.99, 5.0, 5.5;
  const auto bins = distance_histogram(t, 2.0, 6.0, 4);
  REQUIRE(bins.size() == 4);
  CHECK(bins[0].lo == 2.0);
  CHECK(bins[3].hi == 6.0);
  CHECK(bins[0].count == 2);
  CHECK(bins[1].count == 1);
  CHECK(bins[2].count == 2);
  CHECK(bins[3].count == 3);

  // Bin midpoints fill every bin equally.
  DistanceMatrix mid(5, 16);
  for (Index r = 0; r < 5; ++r) {
    for (Index i = 0; i < 16; ++i) mid(r, i) = 2.0 + 0.25 * (static_cast<double>(i) + 0.5);
  }
  std::size_t total = 0;
  for (const auto& b : distance_histogram(mid, 2.0, 6.0, 16)) {
    CHECK(b.count == 5);
    total += b.count;
  }
  CHECK(total == 80);

  const std::string csv = histogram_csv(bins);
  CHECK(csv.rfind("bin_lo,bin_hi,count\n2,3,2\n", 0) == 0);
  CHECK_THROWS_AS(distance_histogram(t, 2.0, 6.0, 0), std::invalid_argument);
}

TEST_CASE("metric report JSON") {
  MetricReport r;
  r.label = "a";
  r.mode = "uniform";
  r.views = {{0, 20.0, 0.5}, {8, std::numeric_limits<double>::infinity(), 1.0}};
  r.finalize();
  r.surface_concentration = 0.25;
  MetricReport s = r;
  s.label = "b";
  s.views = {{0, 10.0, 0.25}, {8, 30.0, 0.75}};
  s.finalize();
  CHECK(s.mean_psnr == 20.0);
  CHECK(s.mean_ssim == 0.5);

  const auto j = nlohmann::json::parse(reports_to_json({r, s}));
  REQUIRE(j["models"].size() == 2);
  CHECK(j["models"][0]["views"][1]["psnr"] == "inf");
  CHECK(j["models"][0]["mean_psnr"] == "inf");
  CHECK(j["models"][1]["mean_psnr"] == 20.0);
  CHECK(j["models"][1]["surface_concentration"] == 0.25);
}
