#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace rsmp {

/// Row-major, interleaved RGB image with linear values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0) {}

  std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  double& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// clamp to [0, 1], scale by 255, round half up.
std::uint8_t quantize(double v);

/// 8-bit representation of `image` decoded back to [0, 1].
Image quantized(const Image& image);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

}  // namespace rsmp
