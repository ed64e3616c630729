#pragma once

#include <optional>
#include <string>
#include <vector>

#include "camforge/nn/ops.hpp"
#include "camforge/rng.hpp"

namespace camforge::nn {

enum class LayerKind { conv2d, transposed_conv2d, batchnorm, linear };

// Trainable parameters of one layer. For batchnorm, `weight` is the scale
// and `bias` the shift, both (1, C, 1, 1), and `bn` holds running stats.
struct LayerParams {
  LayerKind kind = LayerKind::conv2d;
  Var weight;
  Var bias;
  std::optional<BatchNormStats> bn;

  std::int64_t out_channels() const;
  std::int64_t in_channels() const;
};

// Kaiming fan-in normal init, zero bias.
LayerParams make_conv2d(std::int64_t in, std::int64_t out, int kernel, Rng& rng, bool with_bias = true);
LayerParams make_transposed_conv2d(std::int64_t in, std::int64_t out, int kernel, Rng& rng,
                                   bool with_bias = true);
// Scale 1, shift 0, running mean 0, running variance 1.
LayerParams make_batchnorm(std::int64_t channels, double eps = 1e-5, double momentum = 0.1);
LayerParams make_linear(std::int64_t in, std::int64_t out, Rng& rng, bool with_bias = true);

Var conv2d_forward(const Var& input, const LayerParams& params, int stride, int padding);
Var transposed_conv2d_forward(const Var& input, const LayerParams& params, int stride,
                              int padding);
Var batchnorm_forward(const Var& input, LayerParams& params, bool training);
Var linear_forward(const Var& input, const LayerParams& params);

// A parameter as seen by optimizers and checkpoints.
struct NamedParameter {
  std::string name;
  Var var;
  bool decay = false;  // weight decay applies
};

// Non-trainable state saved alongside parameters.
struct NamedBuffer {
  std::string name;
  Tensor* tensor = nullptr;
};

// Appends the parameters/buffers of `layer` under `prefix`.
void collect(const std::string& prefix, LayerParams& layer, std::vector<NamedParameter>& params,
             std::vector<NamedBuffer>& buffers);

}  // namespace camforge::nn
