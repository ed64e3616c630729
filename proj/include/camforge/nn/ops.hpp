#pragma once

#include <cstdint>
#include <span>

#include "camforge/nn/autograd.hpp"

namespace camforge::nn {

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

// weight: (out, in, kh, kw); bias: (1, out, 1, 1) or undefined.
Var conv2d(const Var& input, const Var& weight, const Var& bias, Conv2dOptions opt = {});

// weight: (in, out, kh, kw); output size (H - 1) * stride - 2 * padding + kh.
Var transposed_conv2d(const Var& input, const Var& weight, const Var& bias,
                      Conv2dOptions opt = {});

// Per-channel affine normalization with externally owned statistics.
struct BatchNormStats {
  Tensor running_mean;  // (1, C, 1, 1)
  Tensor running_var;   // (1, C, 1, 1)
  double momentum = 0.1;
  double eps = 1e-5;
};
Var batchnorm(const Var& input, const Var& gamma, const Var& beta, BatchNormStats& stats,
              bool training);

Var relu(const Var& input);

// Max pooling; padded cells never win. Ties go to the first cell in
// row-major window order.
Var maxpool2d(const Var& input, int kernel, int stride, int padding = 0);

// Global average pooling to (N, C, 1, 1).
Var gap(const Var& input);

// input (N, K, 1, 1) x weight (C, K, 1, 1) -> (N, C, 1, 1); bias optional.
Var linear(const Var& input, const Var& weight, const Var& bias);

// Softmax over the channel axis independently at every (n, y, x).
Var softmax_channel(const Var& input);

Var upsample_nearest(const Var& input, int factor);
Var upsample_bilinear(const Var& input, std::int64_t out_h, std::int64_t out_w);

Var concat_channels(const Var& a, const Var& b);
// Center crop to (h, w); a no-op when dims already match.
Var center_crop(const Var& input, std::int64_t h, std::int64_t w);

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& input, float factor);
Var sum(const Var& input);
Var mean(const Var& input);

// Mean over the batch of -log softmax(logits)[label]; logits (N, C, 1, 1).
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

}  // namespace camforge::nn
