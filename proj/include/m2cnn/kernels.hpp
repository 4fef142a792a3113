#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "m2cnn/tensor.hpp"

// Forward and backward kernels on plain tensors. The autodiff graph wraps these;
// tests compare them against brute-force loop oracles.
namespace m2cnn::kernels {

enum class Padding { valid, same };

struct ConvGeometry {
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::size_t pad_top = 0;
  std::size_t pad_left = 0;
};

/// valid: floor((n - k) / stride) + 1.  same: ceil(n / stride), padded
/// symmetrically with the odd pixel going to the bottom/right.
std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride, Padding padding);
ConvGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, std::size_t stride,
                           Padding padding);

/// Cross-correlation. input [N,H,W,Cin], kernel [kh,kw,Cin,Cout], bias [Cout].
/// Each output is the sum over (ky, kx, ci) in row-major order, then + bias.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride, Padding padding);

/// Any of the gradient spans may be empty to skip that gradient.
void conv2d_backward(const Tensor& input, const Tensor& kernel, std::span<const double> grad_out, std::size_t stride,
                     Padding padding, std::span<double> grad_input, std::span<double> grad_kernel,
                     std::span<double> grad_bias);

/// Valid-window max pooling on NHWC. argmax receives, per output element,
/// the flat input index of the first maximal element in row-major window order.
Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride, std::vector<std::size_t>* argmax);

/// [N,H,W,C] -> [N,C]
Tensor avgpool_global(const Tensor& input);

/// [N,F] x [F,O] + [O]
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Softmax over the last axis with max subtraction.
Tensor softmax(const Tensor& logits);

/// log-softmax over the last axis.
Tensor log_softmax(const Tensor& logits);

}  // namespace m2cnn::kernels
