#include "rsmp/camera.hpp"

#include <cmath>
#include <stdexcept>

namespace rsmp {

Intrinsics Intrinsics::from_fov(int width, int height, double horizontal_fov_rad) {
  Intrinsics k;
  k.width = width;
  k.height = height;
  k.fx = 0.5 * width / std::tan(0.5 * horizontal_fov_rad);
  k.fy = k.fx;
  k.cx = 0.5 * width;
  k.cy = 0.5 * height;
  return k;
}

Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up) {
  const Eigen::Vector3d back = (eye - target).normalized();
  const Eigen::Vector3d right = up.cross(back);
  if (right.norm() < 1e-12) throw std::invalid_argument("look_at: up vector is parallel to the view axis");
  const Eigen::Vector3d x = right.normalized();
  const Eigen::Vector3d y = back.cross(x);
  Pose pose;
  pose.col(0) = x;
  pose.col(1) = y;
  pose.col(2) = back;
  pose.col(3) = eye;
  return pose;
}

Ray pixel_ray(const Camera& camera, int x, int y) {
  const Intrinsics& k = camera.intrinsics;
  const Eigen::Vector3d local((x + 0.5 - k.cx) / k.fx, -(y + 0.5 - k.cy) / k.fy, -1.0);
  Ray ray;
  ray.origin = camera.pose.col(3);
  ray.direction = (camera.pose.leftCols<3>() * local).normalized();
  ray.near = camera.near;
  ray.far = camera.far;
  return ray;
}

std::vector<Ray> generate_rays(const Camera& camera) {
  const Intrinsics& k = camera.intrinsics;
  if (k.width < 1 || k.height < 1 || !(k.fx > 0.0) || !(k.fy > 0.0)) {
    throw std::invalid_argument("camera: invalid intrinsics");
  }
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(k.width) * static_cast<std::size_t>(k.height));
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) rays.push_back(pixel_ray(camera, x, y));
  }
  return rays;
}

}  // namespace rsmp
