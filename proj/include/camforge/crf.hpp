#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "camforge/cam.hpp"
#include "camforge/label_mask.hpp"
#include "camforge/nn/tensor.hpp"

namespace camforge {

// Fully-connected CRF with an appearance kernel (position + intensity) and a
// smoothness kernel (position only), Potts compatibility.
struct CrfParams {
  int iterations = 10;
  double w_app = 10.0;
  double theta_alpha = 80.0;         // px
  double theta_beta = 13.0 / 255.0;  // normalized intensity
  double w_smooth = 3.0;
  double theta_gamma = 3.0;  // px
  double unary_clip = 0.05;  // probabilities kept in [eps, 1 - eps]

  void validate() const;
};

// Per-pixel class distribution or energy, stored class-major: [c][y][x].
struct ClassField {
  std::int64_t classes = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<double> values;

  ClassField() = default;
  ClassField(std::int64_t c, std::int64_t height, std::int64_t width, double fill = 0.0)
      : classes(c), h(height), w(width), values(static_cast<std::size_t>(c * height * width), fill) {}

  std::int64_t pixels() const { return h * w; }
  double& at(std::int64_t c, std::int64_t i) { return values[static_cast<std::size_t>(c * h * w + i)]; }
  double at(std::int64_t c, std::int64_t i) const { return values[static_cast<std::size_t>(c * h * w + i)]; }
  // Per-pixel argmax; ties go to the lower class id.
  LabelMask argmax() const;
};

// Negative log-probabilities per class.
using UnaryField = ClassField;

// p_fg = clip(cam, eps, 1 - eps), p_bg = 1 - p_fg, unary = -log p.
// Class 0 is background, class 1 foreground.
UnaryField unary_from_cam(const Cam& cam, double eps);

// Per-pixel softmax(-unary).
ClassField softmax_neg(const UnaryField& unary);

struct MeanFieldOptions {
  // Use truncated windows (radius 3 theta) even for small images.
  bool force_windowed = false;
  // Called with Q after initialization (iteration 0) and after each update.
  std::function<void(int iteration, const ClassField& q)> on_iteration;
};

// Images with at most this many pixels use the exact all-pairs kernel.
inline constexpr std::int64_t kExactCrfPixels = 64 * 64;

// Mean-field inference. `image` is (1, ch, h, w) in [0, 1]; intensity
// distance is Euclidean over channels. Updates are double-buffered.
ClassField mean_field(const UnaryField& unary, const nn::Tensor& image, const CrfParams& params,
                      const MeanFieldOptions& options = {});

// CRF refinement of a thresholded seed. The unary comes from the average of
// the normalized CAM and the binary seed, so the seed decides the unary
// argmax and the CAM grades confidence.
LabelMask refine_mask(const LabelMask& seed, const Cam& cam, const nn::Tensor& image,
                      const CrfParams& params, const MeanFieldOptions& options = {});

}  // namespace camforge
