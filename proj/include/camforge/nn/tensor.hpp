#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace camforge::nn {

// Dimensions of a dense NCHW tensor.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  std::int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense row-major float32 NCHW array with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  const Shape& shape() const { return shape_; }
  std::int64_t n() const { return shape_.n; }
  std::int64_t c() const { return shape_.c; }
  std::int64_t h() const { return shape_.h; }
  std::int64_t w() const { return shape_.w; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }
  std::vector<float>& storage() { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + y) * shape_.w + x);
  }
  float& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
    return data_[offset(n, c, y, x)];
  }
  float at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data_[offset(n, c, y, x)];
  }
  // Pointer to the start of the (n, c) spatial plane.
  float* plane(std::int64_t n, std::int64_t c) { return data_.data() + offset(n, c, 0, 0); }
  const float* plane(std::int64_t n, std::int64_t c) const {
    return data_.data() + offset(n, c, 0, 0);
  }

  void fill(float v);
  bool all_finite() const;
  // Returns a copy with new dims; element count must match.
  Tensor reshaped(Shape shape) const;
  // Copies batch item `i` into a 1-item tensor.
  Tensor item(std::int64_t i) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Stacks single-item tensors of identical (c, h, w) along the batch axis.
Tensor stack(std::span<const Tensor> items);

// Bilinear resize with half-pixel centers (align_corners = false).
Tensor resize_bilinear(const Tensor& input, std::int64_t out_h, std::int64_t out_w);

}  // namespace camforge::nn
