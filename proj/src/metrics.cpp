#include "camforge/metrics.hpp"

#include <string>

namespace camforge {

MetricsReport evaluate(const LabelMask& pred, const LabelMask& truth, int num_classes,
                       int foreground) {
  if (!pred.same_dims(truth)) {
    throw ShapeError("evaluate: prediction " + std::to_string(pred.h) + "x" + std::to_string(pred.w) +
                     " vs truth " + std::to_string(truth.h) + "x" + std::to_string(truth.w));
  }
  if (num_classes < 1 || foreground < 0 || foreground >= num_classes) {
    throw ContractError("evaluate: invalid class configuration");
  }
  const auto C = static_cast<std::size_t>(num_classes);
  std::vector<std::int64_t> tp(C, 0), fp(C, 0), fn(C, 0);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred.labels[i], t = truth.labels[i];
    if (p >= C || t >= C) throw ContractError("evaluate: label out of range");
    if (p == t) {
      ++correct;
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  MetricsReport r;
  r.pa = pred.size() ? static_cast<double>(correct) / static_cast<double>(pred.size()) : 1.0;
  r.class_iou.assign(C, std::nullopt);
  double iou_sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const auto denom = tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp[c]) / static_cast<double>(denom);
    r.class_iou[c] = iou;
    iou_sum += iou;
    ++present;
  }
  r.miou = present ? iou_sum / present : 1.0;
  const auto f = static_cast<std::size_t>(foreground);
  const auto dd = 2 * tp[f] + fp[f] + fn[f];
  r.dice = dd ? 2.0 * static_cast<double>(tp[f]) / static_cast<double>(dd) : 1.0;
  return r;
}

}  // namespace camforge
