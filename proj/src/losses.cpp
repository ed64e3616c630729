#include "camforge/losses.hpp"

#include <algorithm>
#include <cmath>

#include "camforge/nn/ops.hpp"

namespace camforge {

using nn::Node;
using nn::Tensor;
using nn::Var;

SeedRegions::SeedRegions(std::int64_t n, std::int64_t h, std::int64_t w)
    : n_(n), h_(h), w_(w), labels_(static_cast<std::size_t>(n * h * w), kUnseeded) {
  if (n < 0 || h < 0 || w < 0) throw ShapeError("negative seed grid dimension");
}

SeedRegions SeedRegions::from_masks(std::span<const LabelMask> masks) {
  if (masks.empty()) return {};
  const auto h = masks.front().h, w = masks.front().w;
  SeedRegions s(static_cast<std::int64_t>(masks.size()), h, w);
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n].h != h || masks[n].w != w) throw ShapeError("seed masks differ in dims");
    std::copy(masks[n].labels.begin(), masks[n].labels.end(),
              s.labels_.begin() + static_cast<std::ptrdiff_t>(n * h * w));
  }
  return s;
}

SeedRegions SeedRegions::from_sets(std::int64_t n, std::int64_t h, std::int64_t w,
                                   const std::vector<std::vector<PixelLocation>>& sets) {
  SeedRegions s(n, h, w);
  for (std::size_t c = 0; c < sets.size(); ++c) {
    for (const auto& u : sets[c]) {
      if (u.n < 0 || u.n >= n || u.y < 0 || u.y >= h || u.x < 0 || u.x >= w) {
        throw ContractError("seed location out of bounds");
      }
      auto& slot = s.labels_[static_cast<std::size_t>((u.n * h + u.y) * w + u.x)];
      if (slot != kUnseeded) throw ContractError("seed sets are not disjoint");
      slot = static_cast<std::int16_t>(c);
    }
  }
  return s;
}

std::int64_t SeedRegions::total() const {
  return std::count_if(labels_.begin(), labels_.end(), [](auto v) { return v != kUnseeded; });
}

namespace {

// Mean of -log Y[u, label(u)] over pixels whose label is >= 0.
Var masked_nll(const Var& y, std::vector<std::int16_t> labels, std::int64_t count) {
  const auto s = y.shape();
  const std::int64_t hw = s.plane();
  double acc = 0.0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    const float* p = y.value().plane(n, 0);
    for (std::int64_t i = 0; i < hw; ++i) {
      const auto l = labels[static_cast<std::size_t>(n * hw + i)];
      if (l < 0) continue;
      acc -= std::log(std::max(static_cast<double>(p[l * hw + i]), kLogClamp));
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  Tensor out({1, 1, 1, 1}, static_cast<float>(acc * inv));
  return nn::make_result(std::move(out), {y},
                         [s, hw, inv, labels = std::move(labels)](Node& self) {
    const auto& yn = self.parents[0];
    Tensor d(s);
    const double g = self.grad[0] * inv;
    for (std::int64_t n = 0; n < s.n; ++n) {
      const float* p = yn->value.plane(n, 0);
      float* dp = d.plane(n, 0);
      for (std::int64_t i = 0; i < hw; ++i) {
        const auto l = labels[static_cast<std::size_t>(n * hw + i)];
        if (l < 0) continue;
        const double v = p[l * hw + i];
        if (v >= kLogClamp) dp[l * hw + i] = static_cast<float>(-g / v);
      }
    }
    yn->accumulate(d);
  });
}

}  // namespace

Var seeding_loss(const Var& y, const SeedRegions& seeds) {
  const auto s = y.shape();
  if (seeds.n() != s.n || seeds.h() != s.h || seeds.w() != s.w) {
    throw ShapeError("seeding_loss: seed grid does not match predictions " + s.str());
  }
  const auto total = seeds.total();
  if (total == 0) throw EmptySeedError("seeding_loss: no seed pixels in any class");
  for (auto l : seeds.labels()) {
    if (l >= s.c) throw ContractError("seeding_loss: seed class " + std::to_string(l) + " >= C");
  }
  return masked_nll(y, seeds.labels(), total);
}

Var pixel_ce_loss(const Var& y, std::span<const LabelMask> target) {
  const auto s = y.shape();
  if (static_cast<std::int64_t>(target.size()) != s.n) {
    throw ShapeError("pixel_ce_loss: " + std::to_string(target.size()) + " targets for batch " +
                     std::to_string(s.n));
  }
  std::vector<std::int16_t> labels;
  labels.reserve(static_cast<std::size_t>(s.n * s.plane()));
  for (const auto& t : target) {
    if (t.h != s.h || t.w != s.w) throw ShapeError("pixel_ce_loss: target dims mismatch");
    for (auto l : t.labels) {
      if (l >= s.c) throw ContractError("pixel_ce_loss: label " + std::to_string(l) + " >= C");
      labels.push_back(static_cast<std::int16_t>(l));
    }
  }
  const auto count = s.n * s.plane();
  if (count == 0) throw ContractError("pixel_ce_loss: empty prediction");
  return masked_nll(y, std::move(labels), count);
}

CombinedLoss combined_loss(const Var& y, const SeedRegions& seeds,
                           std::span<const LabelMask> crf_target, EmptySeedPolicy policy) {
  CombinedLoss out;
  out.ce = pixel_ce_loss(y, crf_target);
  if (seeds.total() == 0 && policy == EmptySeedPolicy::ce_only) {
    out.seed_dropped = true;
    out.total = out.ce;
    return out;
  }
  out.seed = seeding_loss(y, seeds);
  out.total = nn::add(out.seed, out.ce);
  return out;
}

}  // namespace camforge
