#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "camforge/label_mask.hpp"
#include "camforge/nn/tensor.hpp"
#include "camforge/rng.hpp"

namespace camforge::data {

struct AugmentConfig {
  bool flip = true;
  std::vector<double> rotations{-25.0, 25.0, 90.0, 180.0, 270.0};  // degrees
  double noise_sigma_min = 0.3;
  double noise_sigma_max = 0.7;
  double flip_prob = 0.5;
  double rotate_prob = 0.5;
  double noise_prob = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Augmented {
  nn::Tensor image;
  std::vector<LabelMask> masks;
};

// Applies one random geometric transform to the image and every mask
// (bilinear for the image, nearest for masks, reflective borders), then
// optional additive Gaussian noise on the image only. Intensities are
// clamped to [0, 1].
Augmented augment(const nn::Tensor& image, std::span<const LabelMask> masks,
                  const AugmentConfig& cfg, Rng& rng);

nn::Tensor flip_lr(const nn::Tensor& image);
nn::Tensor flip_ud(const nn::Tensor& image);
LabelMask flip_lr(const LabelMask& mask);
LabelMask flip_ud(const LabelMask& mask);

// Rotation about the image center by `degrees` (counter-clockwise). Multiples
// of 90 are exact index permutations.
nn::Tensor rotate(const nn::Tensor& image, double degrees);
LabelMask rotate(const LabelMask& mask, double degrees);

}  // namespace camforge::data
