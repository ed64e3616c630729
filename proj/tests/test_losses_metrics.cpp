#include <gtest/gtest.h>

#include <cmath>

#include "camforge/losses.hpp"
#include "camforge/metrics.hpp"
#include "camforge/nn/ops.hpp"
#include "support.hpp"

using namespace camforge;
using camforge::testing::random_tensor;
using nn::Tensor;

namespace {

Tensor random_distribution(nn::Shape s, Rng& rng) {
  return nn::softmax_channel(nn::constant(random_tensor(s, rng, -3.0, 3.0))).value();
}

LabelMask random_mask(std::int64_t h, std::int64_t w, int classes, Rng& rng) {
  LabelMask m(h, w);
  for (auto& l : m.labels) l = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(classes)));
  return m;
}

struct Confusion {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Confusion brute_force(const LabelMask& pred, const LabelMask& truth, int cls) {
  Confusion c;
  for (std::int64_t y = 0; y < pred.h; ++y)
    for (std::int64_t x = 0; x < pred.w; ++x) {
      const bool p = pred.at(y, x) == cls, t = truth.at(y, x) == cls;
      c.tp += p && t;
      c.fp += p && !t;
      c.fn += !p && t;
      c.tn += !p && !t;
    }
  return c;
}

}  // namespace

TEST(SeedingLoss, PerfectSeedsGiveZero) {
  Tensor y({1, 2, 2, 2});
  for (int i = 0; i < 4; ++i) y.plane(0, i % 2)[i] = 1.0f;
  std::vector<std::vector<PixelLocation>> sets(2);
  for (int i = 0; i < 4; ++i) sets[i % 2].push_back({0, i / 2, i % 2});
  EXPECT_EQ(seeding_loss(nn::constant(y), SeedRegions::from_sets(1, 2, 2, sets)).value()[0], 0.0f);
}

TEST(SeedingLoss, TwoPixelHandValue) {
  Tensor y({1, 2, 1, 2}, {0.5f, 0.75f, 0.5f, 0.25f});
  std::vector<std::vector<PixelLocation>> sets{{{0, 0, 0}}, {{0, 0, 1}}};
  const auto loss = seeding_loss(nn::constant(y), SeedRegions::from_sets(1, 1, 2, sets));
  EXPECT_NEAR(loss.value()[0], -(std::log(0.5) + std::log(0.25)) / 2, 1e-6);
  EXPECT_NEAR(loss.value()[0], 1.0397, 1e-4);
}

TEST(SeedingLoss, MatchesDoubleLoopReference) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(30, s);
    const auto y = random_distribution({2, 3, 4, 4}, rng);
    std::vector<std::vector<PixelLocation>> sets(3);
    std::vector<int> label(32, -1);
    for (int i = 0; i < 32; ++i) {
      if (rng.bernoulli(0.4)) {
        label[i] = static_cast<int>(rng.below(3));
        sets[label[i]].push_back({i / 16, i % 16 / 4, i % 4});
      }
    }
    if (sets[0].empty() && sets[1].empty() && sets[2].empty()) continue;
    double ref = 0.0;
    int count = 0;
    for (int c = 0; c < 3; ++c)
      for (const auto& u : sets[c]) {
        ref -= std::log(y.at(u.n, c, u.y, u.x));
        ++count;
      }
    ref /= count;
    EXPECT_NEAR(seeding_loss(nn::constant(y), SeedRegions::from_sets(2, 4, 4, sets)).value()[0], ref, 1e-6);
  }
}

TEST(SeedingLoss, EmptySeedsThrow) {
  const auto seeds = SeedRegions::from_sets(1, 2, 2, {{}, {}});
  EXPECT_THROW(seeding_loss(nn::constant(Tensor({1, 2, 2, 2}, 0.5f)), seeds), EmptySeedError);
}

TEST(SeedingLoss, OverlappingSetsRejected) {
  EXPECT_THROW(SeedRegions::from_sets(1, 2, 2, {{{0, 0, 0}}, {{0, 0, 0}}}), ContractError);
}

TEST(SeedingLoss, ZeroProbabilityIsClampedNotInfinite) {
  Tensor y({1, 2, 1, 1}, {0.0f, 1.0f});
  const auto loss = seeding_loss(nn::constant(y), SeedRegions::from_sets(1, 1, 1, {{{0, 0, 0}}, {}}));
  EXPECT_TRUE(std::isfinite(loss.value()[0]));
  EXPECT_NEAR(loss.value()[0], -std::log(kLogClamp), 1e-3);
}

TEST(PixelCe, OneHotPredictionGivesZero) {
  Rng rng(31);
  const auto t = random_mask(3, 4, 3, rng);
  Tensor y({1, 3, 3, 4});
  for (std::int64_t i = 0; i < 12; ++i) y.plane(0, t.labels[i])[i] = 1.0f;
  const LabelMask targets[] = {t};
  EXPECT_EQ(pixel_ce_loss(nn::constant(y), targets).value()[0], 0.0f);
}

TEST(PixelCe, UniformPredictionGivesLogC) {
  Rng rng(32);
  for (int C : {2, 3, 5}) {
    const LabelMask targets[] = {random_mask(4, 4, C, rng)};
    const auto loss = pixel_ce_loss(nn::constant(Tensor({1, C, 4, 4}, 1.0f / C)), targets);
    EXPECT_NEAR(loss.value()[0], std::log(C), 1e-6);
  }
}

TEST(PixelCe, MatchesLoopReference) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(33, s);
    const auto y = random_distribution({2, 3, 4, 4}, rng);
    const std::vector<LabelMask> t{random_mask(4, 4, 3, rng), random_mask(4, 4, 3, rng)};
    double ref = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) ref -= std::log(y.plane(n, t[n].labels[i])[i]);
    EXPECT_NEAR(pixel_ce_loss(nn::constant(y), t).value()[0], ref / 32, 1e-6);
  }
}

TEST(CombinedLoss, ZeroWhenBothTermsZero) {
  Tensor y({1, 2, 1, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  LabelMask m(1, 2);
  m.labels = {0, 1};
  const LabelMask masks[] = {m};
  const auto l = combined_loss(nn::constant(y), SeedRegions::from_masks(masks), masks);
  EXPECT_EQ(l.total.value()[0], 0.0f);
}

TEST(CombinedLoss, EqualsSumOfTerms) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(34, s);
    const auto y = nn::constant(random_distribution({2, 2, 4, 4}, rng));
    const std::vector<LabelMask> seeds{random_mask(4, 4, 2, rng), random_mask(4, 4, 2, rng)};
    const std::vector<LabelMask> crf{random_mask(4, 4, 2, rng), random_mask(4, 4, 2, rng)};
    const auto sr = SeedRegions::from_masks(seeds);
    const auto l = combined_loss(y, sr, crf);
    EXPECT_FALSE(l.seed_dropped);
    EXPECT_NEAR(l.total.value()[0], seeding_loss(y, sr).value()[0] + pixel_ce_loss(y, crf).value()[0], 1e-6);
  }
}

TEST(CombinedLoss, EmptySeedPolicy) {
  const auto y = nn::constant(Tensor({1, 2, 2, 2}, 0.5f));
  const auto empty = SeedRegions::from_sets(1, 2, 2, {{}, {}});
  const LabelMask crf[] = {LabelMask(2, 2)};
  EXPECT_THROW(combined_loss(y, empty, crf, EmptySeedPolicy::error), EmptySeedError);
  const auto l = combined_loss(y, empty, crf, EmptySeedPolicy::ce_only);
  EXPECT_TRUE(l.seed_dropped);
  EXPECT_FALSE(l.seed.defined());
  EXPECT_NEAR(l.total.value()[0], std::log(2.0), 1e-6);
}

TEST(Losses, NonNegativeProperty) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(35, s);
    const auto y = nn::constant(random_distribution({1, 3, 5, 5}, rng));
    const std::vector<LabelMask> m{random_mask(5, 5, 3, rng)};
    EXPECT_GT(seeding_loss(y, SeedRegions::from_masks(m)).value()[0], 0.0f);
    EXPECT_GT(pixel_ce_loss(y, m).value()[0], 0.0f);
  }
}

TEST(Evaluate, IdentityIsPerfect) {
  Rng rng(36);
  const auto m = random_mask(8, 8, 2, rng);
  const auto r = evaluate(m, m);
  EXPECT_EQ(r.pa, 1.0);
  EXPECT_EQ(r.miou, 1.0);
  EXPECT_EQ(r.dice, 1.0);
}

TEST(Evaluate, DisjointForegroundsHaveZeroDice) {
  LabelMask a(4, 4), b(4, 4);
  for (int x = 0; x < 4; ++x) {
    a.at(0, x) = 1;
    b.at(3, x) = 1;
  }
  EXPECT_EQ(evaluate(a, b).dice, 0.0);
}

TEST(Evaluate, BothEmptyForegroundScoresOne) {
  const LabelMask a(4, 4);
  const auto r = evaluate(a, a);
  EXPECT_EQ(r.dice, 1.0);
  EXPECT_FALSE(r.class_iou[1].has_value());
  EXPECT_EQ(r.miou, 1.0);
}

TEST(Evaluate, MatchesBruteForceConfusionCounts) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(37, s);
    const auto p = random_mask(16, 16, 2, rng), t = random_mask(16, 16, 2, rng);
    const auto r = evaluate(p, t);
    const auto fg = brute_force(p, t, 1), bg = brute_force(p, t, 0);
    EXPECT_EQ(r.pa, static_cast<double>(fg.tp + fg.tn) / 256);
    const double iou1 = static_cast<double>(fg.tp) / static_cast<double>(fg.tp + fg.fp + fg.fn);
    const double iou0 = static_cast<double>(bg.tp) / static_cast<double>(bg.tp + bg.fp + bg.fn);
    EXPECT_EQ(r.miou, (iou0 + iou1) / 2);
    EXPECT_EQ(r.dice, 2.0 * static_cast<double>(fg.tp) / static_cast<double>(2 * fg.tp + fg.fp + fg.fn));
    EXPECT_NEAR(r.dice, 2 * iou1 / (1 + iou1), 1e-9);
  }
}

TEST(Evaluate, MultiClassSkipsAbsentClasses) {
  LabelMask p(1, 4), t(1, 4);
  p.labels = {0, 0, 2, 2};
  t.labels = {0, 0, 2, 0};
  const auto r = evaluate(p, t, 3, 2);
  EXPECT_FALSE(r.class_iou[1].has_value());
  EXPECT_DOUBLE_EQ(r.miou, (2.0 / 3 + 1.0 / 2) / 2);
}

TEST(Evaluate, SymmetricInDimsAndDeterministic) {
  Rng rng(38);
  const auto a = random_mask(5, 7, 2, rng), b = random_mask(5, 7, 2, rng);
  const auto r1 = evaluate(a, b), r2 = evaluate(a, b), r3 = evaluate(b, a);
  EXPECT_EQ(r1.miou, r2.miou);
  EXPECT_EQ(r1.pa, r3.pa);
  EXPECT_EQ(r1.dice, r3.dice);
  EXPECT_THROW(evaluate(a, LabelMask(7, 5)), ShapeError);
}
