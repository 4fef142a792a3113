#include "m2cnn/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "m2cnn/error.hpp"

namespace m2cnn {

void PreprocessParams::validate() const {
  if (!(rho > 0.0)) throw ParameterError(fmt::format("rho must be positive, got {}", rho));
  if (!(kernel_radius_sigmas > 0.0)) {
    throw ParameterError(fmt::format("kernel_radius_sigmas must be positive, got {}", kernel_radius_sigmas));
  }
  if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(gamma)) {
    throw ParameterError("alpha, beta and gamma must be finite");
  }
  if (border_threshold < 0.0 || border_threshold >= 255.0) {
    throw ParameterError(fmt::format("border_threshold must lie in [0,255), got {}", border_threshold));
  }
}

std::size_t PreprocessParams::kernel_radius() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(kernel_radius_sigmas * rho)));
}

Image crop_black_border(const Image& image, double threshold) {
  if (image.empty()) throw EmptyImageError("cannot crop an empty image");
  std::size_t top = image.height, bottom = 0, left = image.width, right = 0;
  bool found = false;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double m = std::max({image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2)});
      if (m > threshold) {
        found = true;
        top = std::min(top, y);
        bottom = std::max(bottom, y);
        left = std::min(left, x);
        right = std::max(right, x);
      }
    }
  }
  if (!found) throw EmptyImageError(fmt::format("no pixel exceeds the border threshold {}", threshold));
  Image out(bottom - top + 1, right - left + 1);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      for (std::size_t c = 0; c < Image::channels; ++c) out.at(y, x, c) = image.at(top + y, left + x, c);
  return out;
}

std::vector<double> gaussian_kernel(double rho, std::size_t radius) {
  if (!(rho > 0.0)) throw ParameterError(fmt::format("rho must be positive, got {}", rho));
  if (radius < 1) throw ParameterError("kernel radius must be >= 1");
  std::vector<double> w(2 * radius + 1);
  double total = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double i = static_cast<double>(j) - static_cast<double>(radius);
    w[j] = std::exp(-i * i / (2.0 * rho * rho));
    total += w[j];
  }
  for (auto& v : w) v /= total;
  return w;
}

namespace {

// One separable pass. Written as x[p] + sum_i w_i (x[p+i] - x[p]) so that a
// constant signal maps to itself exactly rather than to c * sum(w).
void blur_pass(const Image& src, Image& dst, const std::vector<double>& w, bool horizontal) {
  const long radius = static_cast<long>(w.size() / 2);
  const long h = static_cast<long>(src.height), wd = static_cast<long>(src.width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < wd; ++x) {
      for (std::size_t c = 0; c < Image::channels; ++c) {
        const double center = src.at(y, x, c);
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i) {
          const long sy = horizontal ? y : std::clamp(y + i, 0L, h - 1);
          const long sx = horizontal ? std::clamp(x + i, 0L, wd - 1) : x;
          acc += w[static_cast<std::size_t>(i + radius)] * (src.at(sy, sx, c) - center);
        }
        dst.at(y, x, c) = center + acc;
      }
    }
  }
}

}  // namespace

Image gaussian_blur(const Image& image, double rho, std::size_t radius) {
  const auto w = gaussian_kernel(rho, radius);
  Image tmp(image.height, image.width);
  Image out(image.height, image.width);
  blur_pass(image, tmp, w, true);
  blur_pass(tmp, out, w, false);
  return out;
}

Image normalize_minpool(const Image& image, const PreprocessParams& params) {
  params.validate();
  if (image.empty()) throw EmptyImageError("cannot normalise an empty image");
  const Image blurred = gaussian_blur(image, params.rho, params.kernel_radius());
  Image out(image.height, image.width);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double v = params.alpha * image.pixels[i] + params.beta * blurred.pixels[i] + params.gamma;
    out.pixels[i] = std::clamp(v, 0.0, 255.0);
  }
  return out;
}

Image resize_bilinear(const Image& image, std::size_t target_h, std::size_t target_w) {
  if (target_h == 0 || target_w == 0) {
    throw ParameterError(fmt::format("resize target must be nonempty, got {}x{}", target_h, target_w));
  }
  if (image.empty()) throw EmptyImageError("cannot resize an empty image");

  struct Tap {
    std::size_t i0, i1;
    double frac;
  };
  auto taps = [](std::size_t src, std::size_t dst) {
    std::vector<Tap> t(dst);
    const double ratio = static_cast<double>(src) / static_cast<double>(dst);
    const double last = static_cast<double>(src - 1);
    for (std::size_t d = 0; d < dst; ++d) {
      const double s = std::clamp((static_cast<double>(d) + 0.5) * ratio - 0.5, 0.0, last);
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      t[d] = {i0, std::min(i0 + 1, src - 1), s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(image.height, target_h);
  const auto tx = taps(image.width, target_w);
  Image out(target_h, target_w);
  for (std::size_t y = 0; y < target_h; ++y) {
    for (std::size_t x = 0; x < target_w; ++x) {
      for (std::size_t c = 0; c < Image::channels; ++c) {
        const double a = image.at(ty[y].i0, tx[x].i0, c);
        const double b = image.at(ty[y].i0, tx[x].i1, c);
        const double p = image.at(ty[y].i1, tx[x].i0, c);
        const double q = image.at(ty[y].i1, tx[x].i1, c);
        const double top = a + tx[x].frac * (b - a);
        const double bottom = p + tx[x].frac * (q - p);
        out.at(y, x, c) = top + ty[y].frac * (bottom - top);
      }
    }
  }
  return out;
}

Image preprocess_image(const Image& image, const PreprocessParams& params, std::size_t size) {
  Image out = normalize_minpool(crop_black_border(image, params.border_threshold), params);
  if (size != 0) out = resize_bilinear(out, size, size);
  return out;
}

}  // namespace m2cnn
