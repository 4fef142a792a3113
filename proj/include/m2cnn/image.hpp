#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace m2cnn {

/// Three-channel image, row-major HWC, intensities nominally in [0, 255].
/// Stored as doubles so preprocessing never quantises before the network.
struct Image {
  static constexpr std::size_t channels = 3;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w * channels, fill) {}

  bool empty() const { return height == 0 || width == 0; }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary PPM (P6, maxval 255). Throws IoError / FormatError.
Image read_ppm(const std::filesystem::path& path);
/// Rounds to nearest and clamps to [0, 255] on the way out.
void write_ppm(const std::filesystem::path& path, const Image& image);

}  // namespace m2cnn
