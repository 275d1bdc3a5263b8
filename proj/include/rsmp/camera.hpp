#pragma once

#include <vector>

#include <Eigen/Dense>

#include "rsmp/sampler.hpp"

namespace rsmp {

struct Intrinsics {
  int width = 64;
  int height = 64;
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  /// Square pixels with the principal point at the image center.
  static Intrinsics from_fov(int width, int height, double horizontal_fov_rad);
};

/// Camera-to-world transform [R | t]. Right-handed; the camera looks down
/// its local -z axis with +y up.
using Pose = Eigen::Matrix<double, 3, 4>;

struct Camera {
  Intrinsics intrinsics;
  Pose pose = Pose::Identity();
  double near = 1.0;
  double far = 2.0;
};

Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up);

/// Ray through the center of pixel (x, y); y grows downward in the image.
Ray pixel_ray(const Camera& camera, int x, int y);

/// One ray per pixel in row-major order.
std::vector<Ray> generate_rays(const Camera& camera);

}  // namespace rsmp
