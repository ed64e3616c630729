#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "camforge/classifier.hpp"
#include "camforge/label_mask.hpp"
#include "camforge/nn/tensor.hpp"

namespace camforge {

// Single-class activation map.
struct Cam {
  int class_id = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<float> values;  // row-major h x w
  double scale = 1.0;         // input rescale ratio that produced the map

  float at(std::int64_t y, std::int64_t x) const { return values[static_cast<std::size_t>(y * w + x)]; }
  float& at(std::int64_t y, std::int64_t x) { return values[static_cast<std::size_t>(y * w + x)]; }
  nn::Tensor to_tensor() const;  // (1, 1, h, w)
};

struct ScaleSet {
  std::vector<double> ratios{0.5, 1.0, 1.5, 2.0};

  void validate() const;
};

struct ThresholdConfig {
  double t = 0.35;

  void validate() const;
};

// Shipped thresholds: seed masks and the stricter segmentation preset.
inline constexpr double kSeedThreshold = 0.35;
inline constexpr double kStrictThreshold = 0.7;

// Weighted channel sum sum_k w[c, k] * A^k of features (1, K, h, w) with
// head weights (C, K, 1, 1). No rectification.
Cam compute_cam(const nn::Tensor& features, const nn::Tensor& head_weight, int class_id);

// One Cam per ratio, each computed on the bilinearly rescaled image and
// resized back to the image's dims. Throws ConfigError naming a ratio that
// shrinks the image below the classifier minimum.
std::vector<Cam> multi_scale_cams(ClassifierModel& model, const nn::Tensor& image,
                                  const ScaleSet& scales, int class_id);

// Elementwise mean.
Cam fuse(std::span<const Cam> cams);

// Min-max scaling to [0, 1]; a constant map becomes all zeros.
Cam normalize(const Cam& cam);

// 1 where value >= t. The map must already lie in [0, 1].
LabelMask threshold(const Cam& cam, const ThresholdConfig& cfg);

struct CamSet {
  std::vector<Cam> per_scale;  // resized to image dims, not normalized
  Cam origin;                  // normalized scale-1 map
  Cam fused;                   // normalized fused map
};

// Multi-scale CAMs plus the single-scale and fused normalized maps. With
// `prefuse_norm` each scale is normalized before averaging. `scales` must
// contain 1.0.
CamSet cam_set(ClassifierModel& model, const nn::Tensor& image, const ScaleSet& scales,
               int class_id, bool prefuse_norm = true);

}  // namespace camforge
