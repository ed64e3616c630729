#include "camforge/seg_train.hpp"

#include <algorithm>
#include <numeric>

#include "camforge/nn/optim.hpp"

namespace camforge {

using nn::Tensor;
using nn::Var;

namespace {

std::int64_t correct_pixels(const Tensor& probs, std::span<const LabelMask> targets) {
  const auto& s = probs.shape();
  std::int64_t correct = 0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t i = 0; i < s.plane(); ++i) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < s.c; ++c) {
        if (probs.plane(n, c)[i] > probs.plane(n, best)[i]) best = c;
      }
      correct += best == targets[static_cast<std::size_t>(n)].labels[static_cast<std::size_t>(i)];
    }
  }
  return correct;
}

struct BatchScore {
  double loss = 0.0;
  std::int64_t correct = 0;
};

BatchScore run_batch(MixedUNetModel& model, std::span<const Tensor> images, std::span<const LabelMask> seeds,
                     std::span<const LabelMask> crf, EmptySeedPolicy policy, bool training) {
  const auto fwd = mixed_unet_forward(model, nn::constant(nn::stack(images)), training);
  const auto loss = combined_loss(fwd.probs, SeedRegions::from_masks(seeds), crf, policy);
  if (training) nn::backward(loss.total);
  return {loss.total.value()[0], correct_pixels(fwd.probs.value(), crf)};
}

}  // namespace

std::vector<HistoryRow> train_segmentation(MixedUNetModel& model, std::span<const SegExample> train,
                                           std::span<const SegExample> val, const SegTrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("seg epochs must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("seg batch size must be >= 1");
  if (train.empty() && cfg.epochs > 0) throw ConfigError("segmentation training set is empty");
  if (cfg.augment) cfg.augment_config.validate();

  auto params = model.parameters();
  nn::AdamState adam(params, {.weight_decay = cfg.weight_decay});
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const auto steps = static_cast<std::int64_t>((train.size() + bs - 1) / bs);
  nn::PolyScheduler sched(cfg.lr, cfg.poly_gamma, std::max<std::int64_t>(1, steps * cfg.epochs));

  std::vector<HistoryRow> history;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg.seed, 0x5E6000 + static_cast<std::uint64_t>(epoch));
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::int64_t correct = 0, pixels = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const auto end = std::min(order.size(), start + bs);
      std::vector<Tensor> images;
      std::vector<LabelMask> seeds, crf;
      for (auto k = start; k < end; ++k) {
        const auto& ex = train[order[k]];
        if (cfg.augment) {
          const LabelMask masks[] = {ex.seed, ex.crf};
          auto aug = data::augment(ex.image, masks, cfg.augment_config, rng);
          images.push_back(std::move(aug.image));
          seeds.push_back(std::move(aug.masks[0]));
          crf.push_back(std::move(aug.masks[1]));
        } else {
          images.push_back(ex.image);
          seeds.push_back(ex.seed);
          crf.push_back(ex.crf);
        }
      }
      nn::zero_grad(params);
      const auto score = run_batch(model, images, seeds, crf, cfg.empty_seed, true);
      nn::adam_step(params, adam, poly_lr(sched));
      sched.advance();
      loss_sum += score.loss * static_cast<double>(images.size());
      correct += score.correct;
      pixels += static_cast<std::int64_t>(images.size()) * images.front().shape().plane();
    }
    const double n = std::max<double>(1.0, static_cast<double>(train.size()));
    history.push_back({epoch + 1, "train", loss_sum / n,
                       pixels ? static_cast<double>(correct) / static_cast<double>(pixels) : 0.0});
    if (!val.empty()) {
      nn::NoGradGuard guard;
      double vloss = 0.0;
      std::int64_t vcorrect = 0, vpixels = 0;
      for (std::size_t start = 0; start < val.size(); start += 16) {
        const auto end = std::min(val.size(), start + 16);
        std::vector<Tensor> images;
        std::vector<LabelMask> seeds, crf;
        for (auto k = start; k < end; ++k) {
          images.push_back(val[k].image);
          seeds.push_back(val[k].seed);
          crf.push_back(val[k].crf);
        }
        const auto score = run_batch(model, images, seeds, crf, cfg.empty_seed, false);
        vloss += score.loss * static_cast<double>(images.size());
        vcorrect += score.correct;
        vpixels += static_cast<std::int64_t>(images.size()) * images.front().shape().plane();
      }
      history.push_back({epoch + 1, "val", vloss / static_cast<double>(val.size()),
                         static_cast<double>(vcorrect) / static_cast<double>(vpixels)});
    }
  }
  return history;
}

LabelMask predict_mask(MixedUNetModel& model, const Tensor& image) {
  if (image.n() != 1) throw ShapeError("predict_mask expects one image, got " + image.shape().str());
  nn::NoGradGuard guard;
  const auto fwd = mixed_unet_forward(model, nn::constant(image), false);
  const auto& p = fwd.probs.value();
  LabelMask out(p.h(), p.w());
  for (std::int64_t i = 0; i < p.shape().plane(); ++i) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < p.c(); ++c) {
      if (p.plane(0, c)[i] > p.plane(0, best)[i]) best = c;
    }
    out.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace camforge
