#include "m2cnn/kernels.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "m2cnn/error.hpp"
#include "m2cnn/parallel.hpp"

namespace m2cnn::kernels {

std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride, Padding padding) {
  if (stride == 0) throw DimensionError("stride must be >= 1");
  if (k == 0) throw DimensionError("kernel extent must be >= 1");
  if (padding == Padding::same) return (in + stride - 1) / stride;
  if (k > in) throw DimensionError(fmt::format("kernel extent {} exceeds input extent {}", k, in));
  return (in - k) / stride + 1;
}

ConvGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, std::size_t stride,
                           Padding padding) {
  ConvGeometry g;
  g.out_h = conv_output_extent(h, kh, stride, padding);
  g.out_w = conv_output_extent(w, kw, stride, padding);
  if (padding == Padding::same) {
    const std::size_t need_h = (g.out_h - 1) * stride + kh;
    const std::size_t need_w = (g.out_w - 1) * stride + kw;
    const std::size_t total_h = need_h > h ? need_h - h : 0;
    const std::size_t total_w = need_w > w ? need_w - w : 0;
    if (kh > h + total_h || kw > w + total_w) {
      throw DimensionError("kernel larger than padded input");
    }
    g.pad_top = total_h / 2;
    g.pad_left = total_w / 2;
  }
  return g;
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(fmt::format("{} must have rank {}, got shape {}", what, rank, shape_string(t.shape())));
  }
}

struct ConvDims {
  std::size_t n, h, w, cin, kh, kw, cout;
  ConvGeometry g;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, std::size_t stride, Padding padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
             kernel.dim(0), kernel.dim(1), kernel.dim(3), {}};
  if (kernel.dim(2) != d.cin) {
    throw DimensionError(fmt::format("conv2d input has {} channels but kernel expects {}", d.cin, kernel.dim(2)));
  }
  d.g = conv_geometry(d.h, d.w, d.kh, d.kw, stride, padding);
  return d;
}

// Input row/col for an output coordinate and kernel tap; false when it falls
// in the zero padding.
inline bool source_index(std::size_t o, std::size_t k, std::size_t stride, std::size_t pad, std::size_t extent,
                         std::size_t& out) {
  const std::size_t pos = o * stride + k;
  if (pos < pad) return false;
  out = pos - pad;
  return out < extent;
}

// Fixed four-lane reassociation: deterministic, and lets the compiler vectorize.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride, Padding padding) {
  const ConvDims d = conv_dims(input, kernel, stride, padding);
  if (bias.size() != d.cout) {
    throw DimensionError(fmt::format("conv2d bias has {} entries, expected {}", bias.size(), d.cout));
  }
  Tensor out({d.n, d.g.out_h, d.g.out_w, d.cout});
  const double* in = input.data().data();
  const double* ker = kernel.data().data();
  const double* b = bias.data().data();
  double* dst = out.data().data();

  parallel_for(d.n, [&](std::size_t n) {
    std::vector<double> acc(d.cout);
    for (std::size_t oy = 0; oy < d.g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < d.g.out_w; ++ox) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          std::size_t iy;
          if (!source_index(oy, ky, stride, d.g.pad_top, d.h, iy)) continue;
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            std::size_t ix;
            if (!source_index(ox, kx, stride, d.g.pad_left, d.w, ix)) continue;
            const double* src = in + ((n * d.h + iy) * d.w + ix) * d.cin;
            const double* krow = ker + (ky * d.kw + kx) * d.cin * d.cout;
            for (std::size_t ci = 0; ci < d.cin; ++ci) {
              const double v = src[ci];
              const double* k = krow + ci * d.cout;
              for (std::size_t co = 0; co < d.cout; ++co) acc[co] += v * k[co];
            }
          }
        }
        double* o = dst + ((n * d.g.out_h + oy) * d.g.out_w + ox) * d.cout;
        for (std::size_t co = 0; co < d.cout; ++co) o[co] = acc[co] + b[co];
      }
    }
  });
  return out;
}

void conv2d_backward(const Tensor& input, const Tensor& kernel, std::span<const double> grad_out, std::size_t stride,
                     Padding padding, std::span<double> grad_input, std::span<double> grad_kernel,
                     std::span<double> grad_bias) {
  const ConvDims d = conv_dims(input, kernel, stride, padding);
  const std::size_t out_pixels = d.n * d.g.out_h * d.g.out_w;
  if (grad_out.size() != out_pixels * d.cout) throw DimensionError("conv2d_backward: grad_out size mismatch");
  const double* in = input.data().data();
  const double* ker = kernel.data().data();
  const double* gout = grad_out.data();

  if (!grad_bias.empty()) {
    for (std::size_t p = 0; p < out_pixels; ++p) {
      const double* g = gout + p * d.cout;
      for (std::size_t co = 0; co < d.cout; ++co) grad_bias[co] += g[co];
    }
  }

  if (!grad_kernel.empty()) {
    // One task per kernel tap; the sample/pixel accumulation order inside a
    // tap never changes with the worker count.
    parallel_for(d.kh * d.kw, [&](std::size_t tap) {
      const std::size_t ky = tap / d.kw;
      const std::size_t kx = tap % d.kw;
      double* gk = grad_kernel.data() + tap * d.cin * d.cout;
      for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t oy = 0; oy < d.g.out_h; ++oy) {
          std::size_t iy;
          if (!source_index(oy, ky, stride, d.g.pad_top, d.h, iy)) continue;
          for (std::size_t ox = 0; ox < d.g.out_w; ++ox) {
            std::size_t ix;
            if (!source_index(ox, kx, stride, d.g.pad_left, d.w, ix)) continue;
            const double* src = in + ((n * d.h + iy) * d.w + ix) * d.cin;
            const double* g = gout + ((n * d.g.out_h + oy) * d.g.out_w + ox) * d.cout;
            for (std::size_t ci = 0; ci < d.cin; ++ci) {
              const double v = src[ci];
              double* row = gk + ci * d.cout;
              for (std::size_t co = 0; co < d.cout; ++co) row[co] += v * g[co];
            }
          }
        }
      }
    });
  }

  if (!grad_input.empty()) {
    parallel_for(d.n, [&](std::size_t n) {
      for (std::size_t oy = 0; oy < d.g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < d.g.out_w; ++ox) {
          const double* g = gout + ((n * d.g.out_h + oy) * d.g.out_w + ox) * d.cout;
          for (std::size_t ky = 0; ky < d.kh; ++ky) {
            std::size_t iy;
            if (!source_index(oy, ky, stride, d.g.pad_top, d.h, iy)) continue;
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
              std::size_t ix;
              if (!source_index(ox, kx, stride, d.g.pad_left, d.w, ix)) continue;
              double* gi = grad_input.data() + ((n * d.h + iy) * d.w + ix) * d.cin;
              const double* krow = ker + (ky * d.kw + kx) * d.cin * d.cout;
              for (std::size_t ci = 0; ci < d.cin; ++ci) gi[ci] += dot(g, krow + ci * d.cout, d.cout);
            }
          }
        }
      }
    });
  }
}

Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride, std::vector<std::size_t>* argmax) {
  require_rank(input, 4, "maxpool2d input");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  if (window == 0 || window > h || window > w) {
    throw DimensionError(fmt::format("pool window {} does not fit spatial extent {}x{}", window, h, w));
  }
  const std::size_t oh = conv_output_extent(h, window, stride, Padding::valid);
  const std::size_t ow = conv_output_extent(w, window, stride, Padding::valid);
  Tensor out({n, oh, ow, c});
  if (argmax) argmax->assign(out.size(), 0);
  const double* in = input.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((b * h + oy * stride) * w + ox * stride) * c + ch;
          for (std::size_t ky = 0; ky < window; ++ky) {
            for (std::size_t kx = 0; kx < window; ++kx) {
              const std::size_t idx = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
              if (in[idx] > in[best]) best = idx;
            }
          }
          const std::size_t o = ((b * oh + oy) * ow + ox) * c + ch;
          out[o] = in[best];
          if (argmax) (*argmax)[o] = best;
        }
      }
    }
  }
  return out;
}

Tensor avgpool_global(const Tensor& input) {
  require_rank(input, 4, "avgpool_global input");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  Tensor out({n, c});
  const double area = static_cast<double>(h * w);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t p = 0; p < h * w; ++p) s += input[(b * h * w + p) * c + ch];
      out[b * c + ch] = s / area;
    }
  }
  return out;
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "dense input");
  require_rank(weight, 2, "dense weight");
  const std::size_t n = input.dim(0), f = input.dim(1), o = weight.dim(1);
  if (weight.dim(0) != f) {
    throw DimensionError(fmt::format("dense: input has {} features, weight expects {}", f, weight.dim(0)));
  }
  if (bias.size() != o) throw DimensionError(fmt::format("dense: bias has {} entries, expected {}", bias.size(), o));
  Tensor out({n, o});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < o; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < f; ++i) s += input[r * f + i] * weight[i * o + j];
      out[r * o + j] = s + bias[j];
    }
  }
  return out;
}

Tensor log_softmax(const Tensor& logits) {
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.size() / k;
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.data().data() + r * k;
    const double m = *std::max_element(x, x + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(x[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x[j] - lse;
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.size() / k;
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.data().data() + r * k;
    const double m = *std::max_element(x, x + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[r * k + j] = std::exp(x[j] - m);
      s += out[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= s;
  }
  return out;
}

}  // namespace m2cnn::kernels
