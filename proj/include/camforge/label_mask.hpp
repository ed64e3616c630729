#pragma once

#include <cstdint>
#include <vector>

#include "camforge/errors.hpp"

namespace camforge {

// 2-D grid of integer class labels (pseudo-mask or ground truth).
struct LabelMask {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> labels;

  LabelMask() = default;
  LabelMask(std::int64_t height, std::int64_t width, std::uint8_t fill = 0)
      : h(height), w(width), labels(static_cast<std::size_t>(height * width), fill) {
    if (height < 0 || width < 0) throw ShapeError("negative mask dimension");
  }

  std::size_t size() const { return labels.size(); }
  std::uint8_t& at(std::int64_t y, std::int64_t x) { return labels[static_cast<std::size_t>(y * w + x)]; }
  std::uint8_t at(std::int64_t y, std::int64_t x) const {
    return labels[static_cast<std::size_t>(y * w + x)];
  }
  std::int64_t count(std::uint8_t label) const {
    std::int64_t k = 0;
    for (auto v : labels) k += (v == label);
    return k;
  }
  bool same_dims(const LabelMask& o) const { return h == o.h && w == o.w; }
  bool operator==(const LabelMask&) const = default;
};

}  // namespace camforge
