#pragma once

#include <span>
#include <vector>

#include "camforge/label_mask.hpp"
#include "camforge/nn/autograd.hpp"

namespace camforge {

// Raised when the seeding loss is asked to score zero seed pixels.
class EmptySeedError : public ContractError {
 public:
  using ContractError::ContractError;
};

struct PixelLocation {
  std::int64_t n = 0;
  std::int64_t y = 0;
  std::int64_t x = 0;
};

// Seed pixel sets S_c over a batch, stored as a label grid where
// kUnseeded marks pixels that belong to no set.
class SeedRegions {
 public:
  static constexpr std::int16_t kUnseeded = -1;

  SeedRegions() = default;
  SeedRegions(std::int64_t n, std::int64_t h, std::int64_t w);

  // Every pixel of every mask is a seed of its labeled class.
  static SeedRegions from_masks(std::span<const LabelMask> masks);
  // sets[c] lists the locations labeled c; sets must be disjoint and in bounds.
  static SeedRegions from_sets(std::int64_t n, std::int64_t h, std::int64_t w,
                               const std::vector<std::vector<PixelLocation>>& sets);

  std::int64_t n() const { return n_; }
  std::int64_t h() const { return h_; }
  std::int64_t w() const { return w_; }
  std::int16_t label(std::int64_t n, std::int64_t y, std::int64_t x) const {
    return labels_[static_cast<std::size_t>((n * h_ + y) * w_ + x)];
  }
  std::int64_t total() const;
  const std::vector<std::int16_t>& labels() const { return labels_; }

 private:
  std::int64_t n_ = 0, h_ = 0, w_ = 0;
  std::vector<std::int16_t> labels_;
};

// Probabilities below this are clamped before taking the log.
inline constexpr double kLogClamp = 1e-12;

// -(1 / sum_c |S_c|) * sum_c sum_{u in S_c} log Y[u, c]. `y` is a per-pixel
// distribution (N, C, H, W). Throws EmptySeedError when no pixel is seeded.
nn::Var seeding_loss(const nn::Var& y, const SeedRegions& seeds);

// Mean over all pixels of -log Y[u, target(u)].
nn::Var pixel_ce_loss(const nn::Var& y, std::span<const LabelMask> target);

enum class EmptySeedPolicy {
  error,    // propagate EmptySeedError
  ce_only,  // drop the seeding term and flag it
};

struct CombinedLoss {
  nn::Var total;
  nn::Var seed;  // undefined when the seeding term was dropped
  nn::Var ce;
  bool seed_dropped = false;
};

// Unweighted sum of the seeding loss (seeds from the fused-CAM mask) and the
// pixel cross-entropy (targets from the CRF mask).
CombinedLoss combined_loss(const nn::Var& y, const SeedRegions& seeds,
                           std::span<const LabelMask> crf_target,
                           EmptySeedPolicy policy = EmptySeedPolicy::error);

}  // namespace camforge
