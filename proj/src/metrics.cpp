#include "rsmp/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace rsmp {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

void check_same_size(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height || a.rgb.size() != b.rgb.size()) {
    throw std::invalid_argument(std::string(what) + ": image dimensions differ (" + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
  }
}

std::array<double, kWindow> gaussian_kernel() {
  std::array<double, kWindow> k{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    k[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    total += k[i];
  }
  for (double& v : k) v /= total;
  return k;
}

// Valid-mode separable Gaussian filter of a single-channel plane.
Eigen::ArrayXXd filter(const Eigen::ArrayXXd& plane, const std::array<double, kWindow>& k) {
  const Eigen::Index rows = plane.rows(), cols = plane.cols();
  Eigen::ArrayXXd horizontal = Eigen::ArrayXXd::Zero(rows, cols - kWindow + 1);
  for (int i = 0; i < kWindow; ++i) horizontal += k[i] * plane.middleCols(i, cols - kWindow + 1);
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(rows - kWindow + 1, horizontal.cols());
  for (int i = 0; i < kWindow; ++i) out += k[i] * horizontal.middleRows(i, rows - kWindow + 1);
  return out;
}

Eigen::ArrayXXd channel(const Image& img, int c) {
  Eigen::ArrayXXd plane(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) plane(y, x) = img.at(x, y, c);
  }
  return plane;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_same_size(a, b, "psnr");
  if (a.rgb.empty()) throw std::invalid_argument("psnr: empty image");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = a.rgb[i] - b.rgb[i];
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(a.rgb.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
  check_same_size(a, b, "ssim");
  if (a.width < kWindow || a.height < kWindow) {
    throw std::invalid_argument("ssim: images must be at least 11x11, got " + std::to_string(a.width) + "x" +
                                std::to_string(a.height));
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto k = gaussian_kernel();
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    const Eigen::ArrayXXd x = channel(a, c), y = channel(b, c);
    const Eigen::ArrayXXd mx = filter(x, k), my = filter(y, k);
    const Eigen::ArrayXXd vx = filter(x * x, k) - mx * mx;
    const Eigen::ArrayXXd vy = filter(y * y, k) - my * my;
    const Eigen::ArrayXXd cxy = filter(x * y, k) - mx * my;
    const Eigen::ArrayXXd map =
        ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    total += map.mean();
  }
  return total / 3.0;
}

double surface_concentration(const Eigen::Ref<const DistanceMatrix>& t, std::span<const double> depth, double eps) {
  if (static_cast<Eigen::Index>(depth.size()) != t.rows()) {
    throw std::invalid_argument("surface_concentration: one depth per ray required");
  }
  double sum = 0.0;
  std::size_t rays = 0;
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    const double d = depth[static_cast<std::size_t>(r)];
    if (!std::isfinite(d)) continue;
    const auto near_surface = ((t.row(r).array() - d).abs() <= eps).count();
    sum += static_cast<double>(near_surface) / static_cast<double>(t.cols());
    ++rays;
  }
  return rays ? sum / static_cast<double>(rays) : 0.0;
}

std::vector<HistogramBin> distance_histogram(const Eigen::Ref<const DistanceMatrix>& t, double near, double far,
                                             int bins) {
  if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
  if (!(far > near)) throw std::invalid_argument("histogram: requires near < far");
  std::vector<HistogramBin> out(static_cast<std::size_t>(bins));
  const double width = (far - near) / bins;
  for (int i = 0; i < bins; ++i) {
    out[i].lo = near + i * width;
    out[i].hi = i + 1 == bins ? far : near + (i + 1) * width;
  }
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const double v = t(i / t.cols(), i % t.cols());
    if (v < near || v > far) continue;
    const int bin = std::min(bins - 1, static_cast<int>((v - near) / width));
    ++out[static_cast<std::size_t>(bin)].count;
  }
  return out;
}

std::string histogram_csv(const std::vector<HistogramBin>& bins) {
  std::ostringstream os;
  os.precision(17);
  os << "bin_lo,bin_hi,count\n";
  for (const auto& b : bins) os << b.lo << ',' << b.hi << ',' << b.count << '\n';
  return os.str();
}

void MetricReport::finalize() {
  if (views.empty()) {
    mean_psnr = mean_ssim = 0.0;
    return;
  }
  double p = 0.0, s = 0.0;
  for (const auto& v : views) {
    p += v.psnr;
    s += v.ssim;
  }
  mean_psnr = p / static_cast<double>(views.size());
  mean_ssim = s / static_cast<double>(views.size());
}

std::string reports_to_json(const std::vector<MetricReport>& reports) {
  using nlohmann::json;
  auto number = [](double v) -> json {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return nullptr;
    return v;
  };
  json out = json::array();
  for (const auto& r : reports) {
    json views = json::array();
    for (const auto& v : r.views) views.push_back({{"view", v.view}, {"psnr", number(v.psnr)}, {"ssim", number(v.ssim)}});
    json entry = {{"label", r.label},
                  {"mode", r.mode},
                  {"views", views},
                  {"mean_psnr", number(r.mean_psnr)},
                  {"mean_ssim", number(r.mean_ssim)}};
    if (r.surface_concentration) entry["surface_concentration"] = number(*r.surface_concentration);
    out.push_back(entry);
  }
  return json{{"models", out}}.dump(2) + "\n";
}

}  // namespace rsmp
