#pragma once

// Analytic synthetic scenes, a dense-quadrature ground-truth renderer and the
// on-disk dataset format.
//
// Dataset directory layout:
//   manifest.json      version, intrinsics, near/far, split, per-file CRC-32
//   poses.json         camera-to-world 3x4 matrices, row-major nested arrays
//   images/####.png    8-bit RGB
//   depth/####.bin     float32 little-endian, row-major, NaN = undefined

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsmp/camera.hpp"
#include "rsmp/image.hpp"
#include "rsmp/sampler.hpp"

namespace rsmp {

struct Sphere {
  Eigen::Vector3d center;
  double radius = 0.0;
  double density = 0.0;
  Eigen::Vector3d albedo;
};

struct Box {
  Eigen::Vector3d lo;
  Eigen::Vector3d hi;
  double density = 0.0;
  Eigen::Vector3d albedo;
};

struct Scene {
  std::string name;
  std::vector<Sphere> spheres;
  std::vector<Box> boxes;
  double near = 2.0;
  double far = 6.0;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
};

struct DensityColor {
  double sigma = 0.0;
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
};

/// Summed density of the primitives containing `p`; color is the
/// density-weighted mean albedo (black where empty).
DensityColor scene_density_color(const Scene& scene, const Eigen::Vector3d& p);

/// Twelve thin boxes (long side at least 8x the thinnest) and two spheres.
Scene leaves_lite(std::uint64_t seed);

Scene scene_by_name(const std::string& name, std::uint64_t seed);

/// Accumulated opacity below which a pixel's depth is reported as NaN.
inline constexpr double kDepthOpacityThreshold = 0.5;
inline constexpr int kOracleSteps = 4096;

struct OraclePixel {
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  double opacity = 0.0;
  /// Weighted mean sample distance, NaN when opacity is below the threshold.
  double depth = 0.0;
};

/// Quadrature nodes used by the oracle: the grid near + k (far - near) / steps
/// plus a node just past every point where the ray enters or leaves a
/// primitive. Density is constant between consecutive nodes, so the sum is
/// exact for these scenes up to the grid's effect on the depth estimate.
std::vector<double> oracle_nodes(const Scene& scene, const Ray& ray, int steps = kOracleSteps);

OraclePixel oracle_ray(const Scene& scene, const Ray& ray, int steps = kOracleSteps);

struct OracleImage {
  Image image;
  std::vector<double> depth;  // row-major, NaN where undefined
};

OracleImage oracle_render(const Scene& scene, const Camera& camera, int steps = kOracleSteps);

struct DatasetLayout {
  int width = 64;
  int height = 64;
  double fov = 0.7853981633974483;  // 45 degrees horizontal
  double radius = 4.0;              // camera distance from the scene centroid
  double max_angle = 0.35;          // angular radius of the capture disc (rad)
  int oracle_steps = kOracleSteps;
};

struct View {
  Image image;  // as stored: 8-bit values / 255
  Pose pose = Pose::Identity();
  std::vector<float> depth;
};

struct Dataset {
  std::string scene;
  std::uint64_t seed = 0;
  Intrinsics intrinsics;
  double near = 2.0;
  double far = 6.0;
  std::vector<View> views;
  std::vector<int> train;
  std::vector<int> test;

  Camera camera(int view) const;
};

/// Every 8th view (0, 8, 16, ...) is held out for testing.
std::vector<int> test_split(int n_views);

/// Camera poses on a forward-facing disc around the centroid direction.
std::vector<Pose> forward_facing_poses(const Scene& scene, int n_views, const DatasetLayout& layout);

Dataset make_dataset(const Scene& scene, std::uint64_t seed, int n_views, const DatasetLayout& layout = {});
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// make_dataset followed by write_dataset.
Dataset generate_dataset(const Scene& scene, std::uint64_t seed, int n_views, const DatasetLayout& layout,
                         const std::filesystem::path& dir);

}  // namespace rsmp
