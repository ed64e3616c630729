#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "camforge/data/augment.hpp"
#include "camforge/history.hpp"
#include "camforge/label_mask.hpp"
#include "camforge/losses.hpp"
#include "camforge/mixed_unet.hpp"

namespace camforge {

// One training image with its two pseudo-masks.
struct SegExample {
  nn::Tensor image;   // (1, 1, H, W)
  LabelMask seed;     // thresholded fused CAM; scored by the seeding loss
  LabelMask crf;      // CRF-refined mask; scored by the pixel cross-entropy
};

struct SegTrainConfig {
  int epochs = 30;
  int batch_size = 4;
  double lr = 1e-3;
  double poly_gamma = 0.9;
  double weight_decay = 1e-4;
  bool augment = true;
  data::AugmentConfig augment_config;
  EmptySeedPolicy empty_seed = EmptySeedPolicy::error;
  std::uint64_t seed = 0;
};

// Minimizes seeding loss + pixel cross-entropy. History rows report the mean
// combined loss and pixel accuracy against the CRF mask; val rows are
// computed in eval mode without augmentation.
std::vector<HistoryRow> train_segmentation(MixedUNetModel& model, std::span<const SegExample> train,
                                           std::span<const SegExample> val, const SegTrainConfig& cfg);

// Eval-mode per-pixel argmax for one (1, c, H, W) image.
LabelMask predict_mask(MixedUNetModel& model, const nn::Tensor& image);

}  // namespace camforge
