#pragma once

#include <cstddef>
#include <vector>

#include "m2cnn/image.hpp"

namespace m2cnn {

/// Coefficients of the Gaussian-difference normalisation
///   out = alpha * I + beta * (G(rho) * I) + gamma
/// Defaults suit fundus photographs of roughly 500-700 px.
struct PreprocessParams {
  double alpha = 4.0;
  double beta = -4.0;
  double rho = 10.0;                  // Gaussian standard deviation, pixels
  double gamma = 128.0;
  double border_threshold = 10.0;     // intensity a pixel must exceed to count as fundus
  double kernel_radius_sigmas = 3.0;  // kernel truncation, in units of rho

  /// Throws ParameterError.
  void validate() const;
  std::size_t kernel_radius() const;
};

/// Minimal bounding box of pixels whose per-channel maximum exceeds threshold.
/// Throws EmptyImageError when the image is empty or nothing exceeds it.
Image crop_black_border(const Image& image, double threshold);

/// Normalised samples of exp(-i^2 / 2 rho^2), i in [-radius, radius].
std::vector<double> gaussian_kernel(double rho, std::size_t radius);

/// Separable Gaussian filter with edge replication.
Image gaussian_blur(const Image& image, double rho, std::size_t radius);

/// Applies the normalisation per channel and clamps to [0, 255].
Image normalize_minpool(const Image& image, const PreprocessParams& params);

/// Bilinear resampling, pixel-centre convention (align_corners = false).
Image resize_bilinear(const Image& image, std::size_t target_h, std::size_t target_w);

/// crop_black_border -> normalize_minpool -> optional square resize
/// (size 0 keeps the cropped extent).
Image preprocess_image(const Image& image, const PreprocessParams& params, std::size_t size);

}  // namespace m2cnn
