#include "camforge/nn/layers.hpp"

#include <cmath>

#include "camforge/errors.hpp"

namespace camforge::nn {

namespace {
Tensor kaiming(Shape shape, double fan_in, Rng& rng) {
  Tensor t(shape);
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& v : t.data()) v = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}
}  // namespace

std::int64_t LayerParams::out_channels() const {
  switch (kind) {
    case LayerKind::conv2d: return weight.shape().n;
    case LayerKind::transposed_conv2d: return weight.shape().c;
    case LayerKind::batchnorm: return weight.shape().c;
    case LayerKind::linear: return weight.shape().n;
  }
  return 0;
}

std::int64_t LayerParams::in_channels() const {
  switch (kind) {
    case LayerKind::conv2d: return weight.shape().c;
    case LayerKind::transposed_conv2d: return weight.shape().n;
    case LayerKind::batchnorm: return weight.shape().c;
    case LayerKind::linear: return weight.shape().c;
  }
  return 0;
}

LayerParams make_conv2d(std::int64_t in, std::int64_t out, int kernel, Rng& rng, bool with_bias) {
  if (in < 1 || out < 1 || kernel < 1) throw ContractError("make_conv2d: dims must be >= 1");
  LayerParams p;
  p.kind = LayerKind::conv2d;
  p.weight = parameter(kaiming({out, in, kernel, kernel}, static_cast<double>(in * kernel * kernel), rng));
  if (with_bias) p.bias = parameter(Tensor({1, out, 1, 1}));
  return p;
}

LayerParams make_transposed_conv2d(std::int64_t in, std::int64_t out, int kernel, Rng& rng,
                                   bool with_bias) {
  if (in < 1 || out < 1 || kernel < 1) {
    throw ContractError("make_transposed_conv2d: dims must be >= 1");
  }
  LayerParams p;
  p.kind = LayerKind::transposed_conv2d;
  p.weight = parameter(kaiming({in, out, kernel, kernel}, static_cast<double>(in * kernel * kernel), rng));
  if (with_bias) p.bias = parameter(Tensor({1, out, 1, 1}));
  return p;
}

LayerParams make_batchnorm(std::int64_t channels, double eps, double momentum) {
  if (channels < 1) throw ContractError("make_batchnorm: channels must be >= 1");
  if (!(eps > 0.0)) throw ContractError("make_batchnorm: epsilon must be > 0");
  LayerParams p;
  p.kind = LayerKind::batchnorm;
  p.weight = parameter(Tensor({1, channels, 1, 1}, 1.0f));
  p.bias = parameter(Tensor({1, channels, 1, 1}, 0.0f));
  p.bn = BatchNormStats{Tensor({1, channels, 1, 1}, 0.0f), Tensor({1, channels, 1, 1}, 1.0f),
                        momentum, eps};
  return p;
}

LayerParams make_linear(std::int64_t in, std::int64_t out, Rng& rng, bool with_bias) {
  if (in < 1 || out < 1) throw ContractError("make_linear: dims must be >= 1");
  LayerParams p;
  p.kind = LayerKind::linear;
  Tensor w({out, in, 1, 1});
  const double stddev = std::sqrt(1.0 / static_cast<double>(in));
  for (auto& v : w.data()) v = static_cast<float>(rng.normal(0.0, stddev));
  p.weight = parameter(std::move(w));
  if (with_bias) p.bias = parameter(Tensor({1, out, 1, 1}));
  return p;
}

Var conv2d_forward(const Var& input, const LayerParams& params, int stride, int padding) {
  if (params.kind != LayerKind::conv2d) throw ContractError("conv2d_forward: layer is not conv2d");
  return conv2d(input, params.weight, params.bias, {stride, padding});
}

Var transposed_conv2d_forward(const Var& input, const LayerParams& params, int stride,
                              int padding) {
  if (params.kind != LayerKind::transposed_conv2d) {
    throw ContractError("transposed_conv2d_forward: layer is not transposed-conv2d");
  }
  return transposed_conv2d(input, params.weight, params.bias, {stride, padding});
}

Var batchnorm_forward(const Var& input, LayerParams& params, bool training) {
  if (params.kind != LayerKind::batchnorm || !params.bn) {
    throw ContractError("batchnorm_forward: layer is not batchnorm");
  }
  if (params.weight.shape().c != input.shape().c) {
    throw ShapeError("batchnorm: " + std::to_string(params.weight.shape().c) +
                     " channels of state vs input " + input.shape().str());
  }
  return batchnorm(input, params.weight, params.bias, *params.bn, training);
}

Var linear_forward(const Var& input, const LayerParams& params) {
  if (params.kind != LayerKind::linear) throw ContractError("linear_forward: layer is not linear");
  return linear(input, params.weight, params.bias);
}

void collect(const std::string& prefix, LayerParams& layer, std::vector<NamedParameter>& params,
             std::vector<NamedBuffer>& buffers) {
  const bool is_bn = layer.kind == LayerKind::batchnorm;
  params.push_back({prefix + ".weight", layer.weight, !is_bn});
  if (layer.bias.defined()) params.push_back({prefix + ".bias", layer.bias, false});
  if (layer.bn) {
    buffers.push_back({prefix + ".running_mean", &layer.bn->running_mean});
    buffers.push_back({prefix + ".running_var", &layer.bn->running_var});
  }
}

}  // namespace camforge::nn
