#include <gtest/gtest.h>

#include <cmath>

#include "camforge/errors.hpp"
#include "camforge/nn/checkpoint.hpp"
#include "camforge/nn/layers.hpp"
#include "camforge/nn/ops.hpp"
#include "camforge/nn/optim.hpp"
#include "grad_suite.hpp"
#include "support.hpp"

using namespace camforge;
using namespace camforge::nn;
using camforge::testing::random_tensor;

namespace {

Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
  const auto oh = (x.h() + 2 * pad - w.h()) / stride + 1, ow = (x.w() + 2 * pad - w.w()) / stride + 1;
  Tensor out({x.n(), w.n(), oh, ow});
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t o = 0; o < w.n(); ++o)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          double acc = b ? (*b)[o] : 0.0;
          for (std::int64_t c = 0; c < x.c(); ++c)
            for (std::int64_t ky = 0; ky < w.h(); ++ky)
              for (std::int64_t kx = 0; kx < w.w(); ++kx) {
                const auto iy = y * stride + ky - pad, ix = xx * stride + kx - pad;
                if (iy < 0 || ix < 0 || iy >= x.h() || ix >= x.w()) continue;
                acc += static_cast<double>(x.at(n, c, iy, ix)) * w.at(o, c, ky, kx);
              }
          out.at(n, o, y, xx) = static_cast<float>(acc);
        }
  return out;
}

// Scatter form: every input pixel adds a weighted kernel footprint.
Tensor naive_transposed_conv(const Tensor& x, const Tensor& w, int stride, int pad) {
  const auto oh = (x.h() - 1) * stride - 2 * pad + w.h(), ow = (x.w() - 1) * stride - 2 * pad + w.w();
  std::vector<double> acc(static_cast<std::size_t>(x.n() * w.c() * oh * ow), 0.0);
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t i = 0; i < x.c(); ++i)
      for (std::int64_t y = 0; y < x.h(); ++y)
        for (std::int64_t xx = 0; xx < x.w(); ++xx)
          for (std::int64_t o = 0; o < w.c(); ++o)
            for (std::int64_t ky = 0; ky < w.h(); ++ky)
              for (std::int64_t kx = 0; kx < w.w(); ++kx) {
                const auto oy = y * stride + ky - pad, ox = xx * stride + kx - pad;
                if (oy < 0 || ox < 0 || oy >= oh || ox >= ow) continue;
                acc[static_cast<std::size_t>(((n * w.c() + o) * oh + oy) * ow + ox)] +=
                    static_cast<double>(x.at(n, i, y, xx)) * w.at(i, o, ky, kx);
              }
  Tensor out({x.n(), w.c(), oh, ow});
  for (std::size_t k = 0; k < acc.size(); ++k) out[k] = static_cast<float>(acc[k]);
  return out;
}

void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(Conv2d, IdentityKernelReturnsInput) {
  Rng rng(1);
  const auto x = random_tensor({1, 1, 4, 4}, rng);
  const auto y = conv2d(constant(x), constant(Tensor({1, 1, 1, 1}, 1.0f)), constant(Tensor({1, 1, 1, 1})));
  expect_near(y.value(), x, 0.0);
}

TEST(Conv2d, ZeroKernelAnnihilates) {
  Rng rng(2);
  const auto y = conv2d(constant(random_tensor({2, 3, 5, 5}, rng)), constant(Tensor({4, 3, 3, 3})),
                        constant(Tensor({1, 4, 1, 1})), {1, 1});
  for (float v : y.value().data()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv2d, MatchesNestedLoopReference) {
  Rng rng(3);
  const auto x = random_tensor({1, 1, 4, 4}, rng);
  const auto w = random_tensor({1, 1, 3, 3}, rng);
  const auto y = conv2d(constant(x), constant(w), Var());
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  expect_near(y.value(), naive_conv(x, w, nullptr, 1, 0), 1e-6);
}

TEST(Conv2d, StridePaddingBiasMatchReference) {
  Rng rng(4);
  const auto x = random_tensor({2, 3, 9, 7}, rng);
  const auto w = random_tensor({5, 3, 3, 3}, rng);
  const auto b = random_tensor({1, 5, 1, 1}, rng);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1, 2}) {
      const auto y = conv2d(constant(x), constant(w), constant(b), {stride, pad});
      expect_near(y.value(), naive_conv(x, w, &b, stride, pad), 1e-5);
    }
  }
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d(constant(Tensor({1, 2, 4, 4})), constant(Tensor({1, 3, 3, 3})), Var()), ShapeError);
}

TEST(TransposedConv2d, IdentityKernelReturnsInput) {
  Rng rng(5);
  const auto x = random_tensor({2, 1, 4, 5}, rng);
  const auto y = transposed_conv2d(constant(x), constant(Tensor({1, 1, 1, 1}, 1.0f)), Var());
  expect_near(y.value(), x, 0.0);
}

TEST(TransposedConv2d, MatchesScatterReference) {
  Rng rng(6);
  const auto x = random_tensor({2, 3, 4, 5}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      const auto y = transposed_conv2d(constant(x), constant(w), Var(), {stride, pad});
      expect_near(y.value(), naive_transposed_conv(x, w, stride, pad), 1e-5);
    }
  }
}

TEST(Backward, LinearMapGradientIsInput) {
  Rng rng(7);
  const auto x = random_tensor({1, 4, 1, 1}, rng);
  auto w = parameter(random_tensor({1, 4, 1, 1}, rng));
  backward(sum(mul(w, constant(x))));
  expect_near(w.grad(), x, 0.0);
}

TEST(Backward, DisconnectedParameterGetsZeroGradient) {
  Rng rng(8);
  auto used = parameter(random_tensor({1, 2, 2, 2}, rng));
  auto unused = parameter(random_tensor({1, 2, 2, 2}, rng));
  backward(sum(used));
  EXPECT_FALSE(unused.has_grad());
  std::vector<NamedParameter> params{{"unused", unused, false}};
  AdamState state(params);
  const Tensor before = unused.value();
  adam_step(params, state, 0.1);
  expect_near(unused.value(), before, 0.0);
}

TEST(Backward, NoGradGuardSkipsTape) {
  auto w = parameter(Tensor({1, 1, 1, 1}, 2.0f));
  NoGradGuard guard;
  EXPECT_FALSE(grad_enabled());
  const auto y = mul(w, w);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, SharedNodeAccumulates) {
  auto w = parameter(Tensor({1, 1, 1, 1}, 3.0f));
  backward(sum(mul(w, w)));
  EXPECT_FLOAT_EQ(w.grad()[0], 6.0f);
}

TEST(Maxpool, ConstantInputGivesConstantOutput) {
  const auto y = maxpool2d(constant(Tensor({1, 2, 6, 6}, 0.7f)), 3, 2, 1);
  for (float v : y.value().data()) EXPECT_EQ(v, 0.7f);
}

TEST(Maxpool, WindowedMaximaMatchEnumeration) {
  Rng rng(9);
  const auto x = camforge::testing::random_distinct({1, 1, 4, 4}, rng);
  const auto y = maxpool2d(constant(x), 2, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (int oy = 0; oy < 2; ++oy)
    for (int ox = 0; ox < 2; ++ox) {
      float m = -INFINITY;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) m = std::max(m, x.at(0, 0, 2 * oy + dy, 2 * ox + dx));
      EXPECT_EQ(y.value().at(0, 0, oy, ox), m);
    }
}

TEST(Maxpool, UnitWindowIsIdentity) {
  Rng rng(10);
  const auto x = random_tensor({2, 3, 5, 4}, rng);
  expect_near(maxpool2d(constant(x), 1, 1).value(), x, 0.0);
}

TEST(Maxpool, PaddedCellsNeverWin) {
  const auto y = maxpool2d(constant(Tensor({1, 1, 4, 4}, -5.0f)), 3, 2, 1);
  for (float v : y.value().data()) EXPECT_EQ(v, -5.0f);
}

TEST(Batchnorm, TrainingNormalizesPerChannel) {
  Rng rng(11);
  const auto x = random_tensor({2, 3, 4, 4}, rng, -3.0, 5.0);
  BatchNormStats stats{Tensor({1, 3, 1, 1}), Tensor({1, 3, 1, 1}, 1.0f)};
  const auto y = batchnorm(constant(x), constant(Tensor({1, 3, 1, 1}, 1.0f)), constant(Tensor({1, 3, 1, 1})),
                           stats, true);
  for (int c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) s += y.value().plane(n, c)[i];
    const double mean = s / 32;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) s2 += std::pow(y.value().plane(n, c)[i] - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-4);
    EXPECT_NEAR(s2 / 32, 1.0, 1e-4);
  }
}

TEST(Batchnorm, IdentityStatisticsInEvalMode) {
  Rng rng(12);
  const auto x = random_tensor({2, 3, 4, 4}, rng);
  BatchNormStats stats{Tensor({1, 3, 1, 1}), Tensor({1, 3, 1, 1}, 1.0f)};
  const auto y = batchnorm(constant(x), constant(Tensor({1, 3, 1, 1}, 1.0f)), constant(Tensor({1, 3, 1, 1})),
                           stats, false);
  expect_near(y.value(), x, 1e-5);
}

TEST(Batchnorm, MatchesTwoPassReference) {
  Rng rng(13);
  const auto x = random_tensor({2, 3, 4, 4}, rng, -2.0, 3.0);
  const auto gamma = random_tensor({1, 3, 1, 1}, rng), beta = random_tensor({1, 3, 1, 1}, rng);
  BatchNormStats stats{Tensor({1, 3, 1, 1}), Tensor({1, 3, 1, 1}, 1.0f)};
  const auto y = batchnorm(constant(x), constant(gamma), constant(beta), stats, true);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) mean += x.plane(n, c)[i];
    mean /= 32;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) var += std::pow(x.plane(n, c)[i] - mean, 2);
    var /= 32;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) {
        const double ref = gamma[c] * (x.plane(n, c)[i] - mean) / std::sqrt(var + 1e-5) + beta[c];
        EXPECT_NEAR(y.value().plane(n, c)[i], ref, 1e-5);
      }
    // Running statistics move by momentum 0.1 with the unbiased variance.
    EXPECT_NEAR(stats.running_mean[c], 0.1 * mean, 1e-6);
    EXPECT_NEAR(stats.running_var[c], 0.9 + 0.1 * var * 32 / 31, 1e-5);
  }
}

TEST(Gap, ConstantMap) {
  const auto y = gap(constant(Tensor({1, 1, 3, 5}, 0.25f)));
  EXPECT_EQ(y.value()[0], 0.25f);
}

TEST(Gap, ArithmeticMean) {
  const auto y = gap(constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})));
  EXPECT_EQ(y.value()[0], 2.5f);
}

TEST(Gap, MatchesSummationOracle) {
  Rng rng(14);
  const auto x = random_tensor({3, 4, 7, 5}, rng);
  const auto y = gap(constant(x));
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 4; ++c) {
      double s = 0.0;
      for (int i = 0; i < 35; ++i) s += x.plane(n, c)[i];
      EXPECT_NEAR(y.value().at(n, c, 0, 0), s / 35, 1e-6);
      EXPECT_EQ(y.value().at(n, c, 0, 0), static_cast<float>(s / 35));
    }
}

TEST(Softmax, SymmetricLogitsGiveHalf) {
  const auto y = softmax_channel(constant(Tensor({1, 2, 1, 1}, 0.0f)));
  EXPECT_EQ(y.value()[0], 0.5f);
  EXPECT_EQ(y.value()[1], 0.5f);
}

TEST(Softmax, OutputIsDistributionProperty) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(15, s);
    const auto y = softmax_channel(constant(random_tensor({2, 4, 5, 5}, rng, -30.0, 30.0)));
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 25; ++i) {
        double total = 0.0;
        for (int c = 0; c < 4; ++c) {
          const float p = y.value().plane(n, c)[i];
          ASSERT_GE(p, 0.0f);
          total += p;
        }
        ASSERT_NEAR(total, 1.0, 1e-5);
      }
  }
}

TEST(Upsample, NearestRepeatsPixels) {
  const auto y = upsample_nearest(constant(Tensor({1, 1, 1, 2}, {1, 2})), 2);
  EXPECT_EQ(y.value().data()[0], 1.0f);
  EXPECT_EQ(y.value().data()[1], 1.0f);
  EXPECT_EQ(y.value().data()[2], 2.0f);
  EXPECT_EQ(y.value().at(0, 0, 1, 3), 2.0f);
}

TEST(Upsample, BilinearSameSizeIsIdentity) {
  Rng rng(16);
  const auto x = random_tensor({1, 2, 5, 6}, rng);
  expect_near(upsample_bilinear(constant(x), 5, 6).value(), x, 1e-7);
}

TEST(Upsample, BilinearPreservesConstants) {
  const auto y = upsample_bilinear(constant(Tensor({1, 1, 3, 3}, 0.4f)), 7, 5);
  for (float v : y.value().data()) EXPECT_NEAR(v, 0.4f, 1e-6);
}

TEST(CenterCrop, NoOpWhenDimsMatch) {
  Rng rng(17);
  const auto x = random_tensor({1, 2, 4, 4}, rng);
  expect_near(center_crop(constant(x), 4, 4).value(), x, 0.0);
}

TEST(CenterCrop, TakesCenteredWindow) {
  Tensor x({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
  const auto y = center_crop(constant(x), 2, 2);
  EXPECT_EQ(y.value()[0], 5.0f);
  EXPECT_EQ(y.value()[3], 10.0f);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto w = parameter(Tensor({1, 1, 1, 1}, 1.0f));
  std::vector<NamedParameter> params{{"w", w, false}};
  AdamState state(params, {0.9, 0.999, 1e-8, 0.0});
  backward(sum(mul(w, w)));
  adam_step(params, state, 0.1);
  EXPECT_NEAR(w.value()[0], 0.9, 1e-6);
}

TEST(Adam, ZeroLearningRateFreezesParameters) {
  Rng rng(18);
  auto w = parameter(random_tensor({2, 3, 1, 1}, rng));
  std::vector<NamedParameter> params{{"w", w, true}};
  AdamState state(params);
  const Tensor before = w.value();
  for (int i = 0; i < 5; ++i) {
    zero_grad(params);
    backward(sum(mul(w, w)));
    adam_step(params, state, 0.0);
  }
  expect_near(w.value(), before, 0.0);
}

TEST(Adam, DecoupledDecayOnlyOnFlaggedParameters) {
  auto a = parameter(Tensor({1, 1, 1, 1}, 2.0f));
  auto b = parameter(Tensor({1, 1, 1, 1}, 2.0f));
  std::vector<NamedParameter> params{{"a", a, true}, {"b", b, false}};
  AdamState state(params, {0.9, 0.999, 1e-8, 0.5});
  adam_step(params, state, 0.1);
  EXPECT_NEAR(a.value()[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-6);
  EXPECT_EQ(b.value()[0], 2.0f);
}

TEST(PolyLr, Endpoints) {
  PolyScheduler s(1e-3, 0.9, 100);
  EXPECT_EQ(poly_lr(s), 1e-3);
  s.set_itr(100);
  EXPECT_EQ(poly_lr(s), 0.0);
}

TEST(PolyLr, Midpoint) {
  PolyScheduler s(1e-3, 0.9, 100);
  s.set_itr(50);
  EXPECT_NEAR(poly_lr(s), 1e-3 * std::pow(0.5, 0.9), 1e-12);
  EXPECT_NEAR(poly_lr(s), 5.359e-4, 1e-7);
}

TEST(PolyLr, StrictlyDecreasingProperty) {
  for (double gamma : {0.1, 0.9, 1.0, 2.5}) {
    PolyScheduler s(0.01, gamma, 37);
    double prev = poly_lr(s);
    for (int i = 1; i <= 37; ++i) {
      s.advance();
      const double lr = poly_lr(s);
      ASSERT_LT(lr, prev);
      prev = lr;
    }
    EXPECT_THROW(s.advance(), ContractError);
  }
}

TEST(PolyLr, RejectsBadConfig) {
  EXPECT_THROW(PolyScheduler(1e-3, 0.0, 10), ConfigError);
  EXPECT_THROW(PolyScheduler(1e-3, 0.9, 0), ConfigError);
  EXPECT_THROW(PolyScheduler(-1.0, 0.9, 10), ConfigError);
}

TEST(Layers, KaimingInitScaleAndZeroBias) {
  Rng rng(19);
  const auto conv = make_conv2d(64, 32, 3, rng);
  double s2 = 0.0;
  for (float v : conv.weight.value().data()) s2 += v * v;
  const double var = s2 / static_cast<double>(conv.weight.value().numel());
  EXPECT_NEAR(var, 2.0 / (64 * 9), 0.1 * 2.0 / (64 * 9));
  for (float v : conv.bias.value().data()) EXPECT_EQ(v, 0.0f);
  const auto bn = make_batchnorm(4);
  for (float v : bn.weight.value().data()) EXPECT_EQ(v, 1.0f);
  for (float v : bn.bn->running_var.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Determinism, ForwardIsBitIdentical) {
  Rng rng(20);
  const auto x = random_tensor({2, 3, 8, 8}, rng), w = random_tensor({4, 3, 3, 3}, rng);
  const auto a = softmax_channel(relu(conv2d(constant(x), constant(w), Var(), {1, 1}))).value();
  const auto b = softmax_channel(relu(conv2d(constant(x), constant(w), Var(), {1, 1}))).value();
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(21);
  std::vector<NamedTensor> blobs{{"a", random_tensor({2, 3, 4, 5}, rng)}, {"b.c", random_tensor({1, 1, 1, 1}, rng)}};
  const auto back = decode_checkpoint(encode_checkpoint(blobs));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].name, "b.c");
  expect_near(back[0].tensor, blobs[0].tensor, 0.0);
}

TEST(Checkpoint, RejectsCorruptBytes) {
  std::vector<NamedTensor> blobs{{"a", Tensor({1, 1, 2, 2}, 1.0f)}};
  auto bytes = encode_checkpoint(blobs);
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), DataError);
  bytes = encode_checkpoint(blobs);
  bytes.pop_back();
  EXPECT_THROW(decode_checkpoint(bytes), DataError);
}

TEST(GradientSuite, EveryOpMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u}) {
    for (const auto& c : camforge::testing::gradient_cases(seed)) {
      const auto r = camforge::testing::grad_check(c.f, c.inputs);
      EXPECT_LT(r.max_rel_error, 1e-3) << c.name << " seed " << seed << " input " << r.worst_input;
    }
  }
}
