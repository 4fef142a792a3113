#pragma once

// Independent reference implementations used by the tests. They are written
// as plain loops over the definitions and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "m2cnn/rng.hpp"
#include "m2cnn/tensor.hpp"

namespace oracle {

inline m2cnn::Tensor random_tensor(const m2cnn::Shape& shape, m2cnn::Rng& rng, double lo = -1.0, double hi = 1.0) {
  m2cnn::Tensor t(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Valid or zero-padded convolution by direct summation. Terms are added in
// (ky, kx, ci) order, then the bias.
inline m2cnn::Tensor conv2d(const m2cnn::Tensor& x, const m2cnn::Tensor& k, const m2cnn::Tensor& b, std::size_t stride,
                            std::size_t pad_top, std::size_t pad_left, std::size_t oh, std::size_t ow) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
  m2cnn::Tensor y({n, oh, ow, cout});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx)
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad_top);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad_left);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += x[((s * h + iy) * w + ix) * cin + ci] * k[((ky * kw + kx) * cin + ci) * cout + co];
              }
          y[((s * oh + oy) * ow + ox) * cout + co] = acc + b[co];
        }
  return y;
}

inline m2cnn::Tensor maxpool(const m2cnn::Tensor& x, std::size_t window, std::size_t stride) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  m2cnn::Tensor y({n, oh, ow, c});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch) {
          double best = -INFINITY;
          for (std::size_t dy = 0; dy < window; ++dy)
            for (std::size_t dx = 0; dx < window; ++dx)
              best = std::max(best, x[((s * h + oy * stride + dy) * w + ox * stride + dx) * c + ch]);
          y[((s * oh + oy) * ow + ox) * c + ch] = best;
        }
  return y;
}

// Plain 2-D weighted sum of a kernel over an image with replicated edges.
inline std::vector<double> filter2d_replicate(const std::vector<double>& img, std::size_t h, std::size_t w,
                                              const std::vector<double>& k2d, std::size_t radius) {
  std::vector<double> out(h * w, 0.0);
  const long r = static_cast<long>(radius), side = 2 * r + 1;
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x) {
      double acc = 0.0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          const long yy = std::clamp(y + dy, 0L, static_cast<long>(h) - 1);
          const long xx = std::clamp(x + dx, 0L, static_cast<long>(w) - 1);
          acc += k2d[(dy + r) * side + (dx + r)] * img[yy * w + xx];
        }
      out[y * w + x] = acc;
    }
  return out;
}

// Kappa straight from the textbook definition: observed and expected
// matrices, quadratic weights, no shortcuts.
inline double kappa(const std::vector<int>& truth, const std::vector<int>& pred, int k) {
  const double n = static_cast<double>(truth.size());
  std::vector<std::vector<double>> o(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < truth.size(); ++i) o[truth[i]][pred[i]] += 1.0;
  std::vector<double> rows(k, 0.0), cols(k, 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      rows[i] += o[i][j];
      cols[j] += o[i][j];
    }
  double num = 0.0, den = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double wgt = double((i - j) * (i - j)) / double((k - 1) * (k - 1));
      num += wgt * o[i][j];
      den += wgt * rows[i] * cols[j] / n;
    }
  return 1.0 - num / den;
}

}  // namespace oracle
