#include "camforge/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "camforge/errors.hpp"

namespace camforge::nn {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

namespace {
void check_dims(const Shape& s) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
    throw ShapeError("negative tensor dimension " + s.str());
  }
}
}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(shape) {
  check_dims(shape_);
  data_.assign(static_cast<std::size_t>(shape_.numel()), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  check_dims(shape_);
  if (static_cast<std::int64_t>(data_.size()) != shape_.numel()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match dims " +
                     shape_.str());
  }
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != shape_.numel()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

Tensor Tensor::item(std::int64_t i) const {
  if (i < 0 || i >= shape_.n) throw ShapeError("batch index out of range");
  const auto per = static_cast<std::size_t>(shape_.c * shape_.h * shape_.w);
  std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(per * i),
                         data_.begin() + static_cast<std::ptrdiff_t>(per * (i + 1)));
  return Tensor({1, shape_.c, shape_.h, shape_.w}, std::move(out));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) return Tensor();
  const Shape first = items.front().shape();
  std::vector<float> data;
  std::int64_t n = 0;
  for (const auto& t : items) {
    const Shape& s = t.shape();
    if (s.c != first.c || s.h != first.h || s.w != first.w) {
      throw ShapeError("stack: mismatched item dims " + s.str() + " vs " + first.str());
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
    n += s.n;
  }
  return Tensor({n, first.c, first.h, first.w}, std::move(data));
}

Tensor resize_bilinear(const Tensor& input, std::int64_t out_h, std::int64_t out_w) {
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize target must be positive");
  const Shape s = input.shape();
  Tensor out({s.n, s.c, out_h, out_w});
  const double sy = static_cast<double>(s.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(s.w) / static_cast<double>(out_w);
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const float* src = input.plane(n, c);
      float* dst = out.plane(n, c);
      for (std::int64_t y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(s.h - 1));
        const auto y0 = static_cast<std::int64_t>(fy);
        const std::int64_t y1 = std::min(y0 + 1, s.h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < out_w; ++x) {
          const double fx =
              std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(s.w - 1));
          const auto x0 = static_cast<std::int64_t>(fx);
          const std::int64_t x1 = std::min(x0 + 1, s.w - 1);
          const double wx = fx - static_cast<double>(x0);
          const double top = src[y0 * s.w + x0] * (1 - wx) + src[y0 * s.w + x1] * wx;
          const double bot = src[y1 * s.w + x0] * (1 - wx) + src[y1 * s.w + x1] * wx;
          dst[y * out_w + x] = static_cast<float>(top * (1 - wy) + bot * wy);
        }
      }
    }
  }
  return out;
}

}  // namespace camforge::nn
