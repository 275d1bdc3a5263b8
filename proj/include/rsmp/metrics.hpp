#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsmp/image.hpp"

namespace rsmp {

using DistanceMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 10 log10(1 / MSE) with peak value 1. Identical images give +infinity.
double psnr(const Image& a, const Image& b);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over valid window positions and
/// then over channels. Both sides must be at least 11 pixels.
double ssim(const Image& a, const Image& b);

/// Fraction of samples within eps of their ray's surface depth, averaged
/// over rays whose depth is finite. Returns 0 when no ray has a depth.
double surface_concentration(const Eigen::Ref<const DistanceMatrix>& t, std::span<const double> depth, double eps);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

/// Equal-width bins over [near, far]; the last bin is closed on the right.
std::vector<HistogramBin> distance_histogram(const Eigen::Ref<const DistanceMatrix>& t, double near, double far,
                                             int bins);

/// CSV with header `bin_lo,bin_hi,count`.
std::string histogram_csv(const std::vector<HistogramBin>& bins);

struct ViewMetrics {
  int view = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::string label;
  std::string mode;
  std::vector<ViewMetrics> views;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::optional<double> surface_concentration;

  void finalize();
};

/// JSON text for a set of reports, one entry per model. Infinite PSNR is
/// written as the string "inf".
std::string reports_to_json(const std::vector<MetricReport>& reports);

}  // namespace rsmp
