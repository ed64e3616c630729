#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "camforge/nn/layers.hpp"

namespace camforge {

struct MixedUNetConfig {
  std::int64_t in_channels = 1;
  std::int64_t num_classes = 2;
  std::int64_t base_channels = 8;  // 64 in the full preset
  bool single_branch = false;      // ablation: one decoder branch

  static constexpr int kDepth = 3;

  std::int64_t branches() const { return single_branch ? 1 : 2; }
  void validate() const;
};

// Two 3x3 conv (padding 1) + BN + ReLU layers.
struct DoubleConv {
  nn::LayerParams conv1, bn1, conv2, bn2;
};

// Nearest 2x upsample, 3x3 transposed conv halving channels, skip concat,
// then a DoubleConv back to the halved width.
struct DecoderStep {
  nn::LayerParams up;
  DoubleConv conv;
};

struct DecoderBranch {
  std::vector<DecoderStep> steps;  // deepest first
};

// Shared encoder (each stage a DoubleConv then 3x3/2 max pool), bottleneck,
// one or two decoder branches, and a 1x1 conv head over their concatenation.
struct MixedUNetModel {
  MixedUNetConfig config;
  std::vector<DoubleConv> encoder;
  DoubleConv bottleneck;
  std::vector<DecoderBranch> branches;
  nn::LayerParams head;

  std::vector<nn::NamedParameter> parameters();
  std::vector<nn::NamedBuffer> buffers();
};

// Branches draw from independent random streams unless `tied_init`, which
// gives every branch identical initial weights.
MixedUNetModel make_mixed_unet(const MixedUNetConfig& config, std::uint64_t seed, bool tied_init = false);

// Same encoder and head semantics with one decoder branch.
MixedUNetConfig single_branch_ablation(MixedUNetConfig config);

// Exchanges the parameters of the two decoder branches.
void swap_branches(MixedUNetModel& model);

struct MixedUNetForward {
  std::vector<nn::Var> skips;     // encoder outputs before pooling, shallowest first
  nn::Var encoded;                // bottleneck output
  std::vector<nn::Var> branches;  // per-branch decoder output, base_channels wide
  nn::Var logits;                 // head output before softmax
  nn::Var probs;                  // (N, C, H, W) per-pixel distribution
};

// Input sides must be multiples of 8.
MixedUNetForward mixed_unet_forward(MixedUNetModel& model, const nn::Var& input, bool training);

// Closed-form trainable scalar count:
//   conv 3x3 (ci -> co):      9 ci co + co
//   transposed 3x3 (ci -> co): 9 ci co + co
//   batchnorm (c):            2 c
//   DoubleConv (ci -> co):    conv(ci, co) + bn(co) + conv(co, co) + bn(co)
//   encoder:    DoubleConv(in, b) + DoubleConv(b, 2b) + DoubleConv(2b, 4b)
//   bottleneck: DoubleConv(4b, 8b)
//   per branch, for ci in (8b, 4b, 2b): transposed(ci, ci/2) + DoubleConv(ci, ci/2)
//   head 1x1:   branches * b * C + C
std::int64_t param_count(const MixedUNetConfig& config);
// Sum of element counts over the model's parameters.
std::int64_t count_parameters(MixedUNetModel& model);

void save_mixed_unet(const std::filesystem::path& path, MixedUNetModel& model);
MixedUNetModel load_mixed_unet(const std::filesystem::path& path);

}  // namespace camforge
