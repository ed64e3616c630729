#pragma once

#include <optional>
#include <vector>

#include "camforge/label_mask.hpp"

namespace camforge {

struct MetricsReport {
  double pa = 0.0;
  double miou = 0.0;
  double dice = 0.0;
  // IoU per class; nullopt for classes absent from both masks.
  std::vector<std::optional<double>> class_iou;
};

// Pixel accuracy, mean IoU over classes present in either mask, and Dice of
// the foreground class. Dice is 1 when both masks have no foreground.
MetricsReport evaluate(const LabelMask& pred, const LabelMask& truth, int num_classes = 2,
                       int foreground = 1);

}  // namespace camforge
