#include "camforge/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "camforge/data/augment.hpp"
#include "camforge/nn/checkpoint.hpp"
#include "camforge/nn/optim.hpp"

namespace camforge {

using nn::Tensor;
using nn::Var;

void ClassifierConfig::validate() const {
  if (in_channels < 1) throw ConfigError("classifier in_channels must be >= 1");
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  if (widths.empty()) throw ConfigError("classifier needs at least one block");
  if (pooled_blocks < 0 || pooled_blocks > static_cast<std::int64_t>(widths.size())) {
    throw ConfigError("classifier pooled_blocks must lie in [0, number of blocks]");
  }
  if (pointwise_blocks < 0 || pointwise_blocks > static_cast<std::int64_t>(widths.size())) {
    throw ConfigError("classifier pointwise_blocks must lie in [0, number of blocks]");
  }
  for (auto w : widths) {
    if (w < 1) throw ConfigError("classifier block widths must be >= 1");
  }
}

std::int64_t ClassifierModel::min_input_size() const {
  std::int64_t s = 1;
  for (const auto& b : blocks) s *= b.pool ? 2 : 1;
  return s;
}

std::vector<nn::NamedParameter> ClassifierModel::parameters() {
  std::vector<nn::NamedParameter> params;
  std::vector<nn::NamedBuffer> unused;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    nn::collect(p + "conv1", blocks[i].conv1, params, unused);
    nn::collect(p + "bn1", blocks[i].bn1, params, unused);
    nn::collect(p + "conv2", blocks[i].conv2, params, unused);
    nn::collect(p + "bn2", blocks[i].bn2, params, unused);
  }
  nn::collect("head", head, params, unused);
  return params;
}

std::vector<nn::NamedBuffer> ClassifierModel::buffers() {
  std::vector<nn::NamedParameter> unused;
  std::vector<nn::NamedBuffer> bufs;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    nn::collect(p + "bn1", blocks[i].bn1, unused, bufs);
    nn::collect(p + "bn2", blocks[i].bn2, unused, bufs);
  }
  return bufs;
}

ClassifierModel make_classifier(const ClassifierConfig& config, std::uint64_t seed) {
  config.validate();
  ClassifierModel m;
  m.config = config;
  Rng rng(seed, 0xC1A55);
  std::int64_t in = config.in_channels;
  for (std::size_t i = 0; i < config.widths.size(); ++i) {
    const auto out = config.widths[i];
    ConvBlock b;
    const auto first_pointwise = config.widths.size() - static_cast<std::size_t>(config.pointwise_blocks);
    b.kernel = i >= first_pointwise ? 1 : 3;
    b.conv1 = nn::make_conv2d(in, out, b.kernel, rng, false);
    b.bn1 = nn::make_batchnorm(out);
    b.conv2 = nn::make_conv2d(out, out, b.kernel, rng, false);
    b.bn2 = nn::make_batchnorm(out);
    b.pool = static_cast<std::int64_t>(i) < config.pooled_blocks;
    m.blocks.push_back(std::move(b));
    in = out;
  }
  m.head = nn::make_linear(in, config.num_classes, rng, false);
  return m;
}

ClassifierForward classifier_forward(ClassifierModel& model, const Var& input, bool training) {
  const auto& s = input.shape();
  if (s.c != model.config.in_channels) {
    throw ShapeError("classifier expects " + std::to_string(model.config.in_channels) +
                     " input channels, got " + s.str());
  }
  const auto min = model.min_input_size();
  if (s.h < min || s.w < min) {
    throw ShapeError("classifier input " + s.str() + " is below the minimum side " +
                     std::to_string(min));
  }
  Var x = input;
  for (auto& b : model.blocks) {
    const int pad = b.kernel / 2;
    x = nn::relu(nn::batchnorm_forward(nn::conv2d_forward(x, b.conv1, 1, pad), b.bn1, training));
    x = nn::relu(nn::batchnorm_forward(nn::conv2d_forward(x, b.conv2, 1, pad), b.bn2, training));
    if (b.pool) x = nn::maxpool2d(x, 2, 2);
  }
  ClassifierForward out;
  out.features = x;
  out.logits = nn::linear_forward(nn::gap(x), model.head);
  return out;
}

namespace {

Tensor replicate_channels(const Tensor& image, std::int64_t channels) {
  const auto& s = image.shape();
  if (s.c == channels) return image;
  if (s.c != 1) {
    throw ShapeError("cannot map " + std::to_string(s.c) + " input channels to " +
                     std::to_string(channels));
  }
  Tensor out({s.n, channels, s.h, s.w});
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < channels; ++c) {
      std::copy_n(image.plane(n, 0), s.plane(), out.plane(n, c));
    }
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(logits[i] - mx);
  for (auto& v : p) v /= z;
  return p;
}

Tensor batch_images(ClassifierModel& model, std::span<const data::Sample* const> samples) {
  std::vector<Tensor> items;
  items.reserve(samples.size());
  for (const auto* s : samples) items.push_back(replicate_channels(s->image, model.config.in_channels));
  return nn::stack(items);
}

}  // namespace

Classification classify(ClassifierModel& model, const Tensor& image) {
  if (image.n() != 1) throw ShapeError("classify expects a single image, got " + image.shape().str());
  nn::NoGradGuard guard;
  const auto fwd = classifier_forward(model, nn::constant(replicate_channels(image, model.config.in_channels)), false);
  Classification out;
  out.logits.assign(fwd.logits.value().data().begin(), fwd.logits.value().data().end());
  out.probs = softmax(out.logits);
  out.features = fwd.features.value();
  return out;
}

SplitScore score_classifier(ClassifierModel& model, std::span<const data::Sample* const> samples) {
  SplitScore score;
  if (samples.empty()) return score;
  nn::NoGradGuard guard;
  constexpr std::size_t kChunk = 32;
  double loss = 0.0;
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); i += kChunk) {
    const auto chunk = samples.subspan(i, std::min(kChunk, samples.size() - i));
    const auto fwd = classifier_forward(model, nn::constant(batch_images(model, chunk)), false);
    const auto& lg = fwd.logits.value();
    const auto c = model.config.num_classes;
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      std::vector<double> row(lg.ptr() + k * c, lg.ptr() + (k + 1) * c);
      const auto p = softmax(row);
      const int label = chunk[k]->label;
      loss += -std::log(std::max(p[static_cast<std::size_t>(label)], 1e-12));
      const auto pred = std::max_element(p.begin(), p.end()) - p.begin();
      correct += pred == label;
    }
  }
  score.loss = loss / static_cast<double>(samples.size());
  score.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return score;
}

std::vector<HistoryRow> train_classifier(ClassifierModel& model, const data::Dataset& dataset,
                                         const ClassifierTrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("classifier epochs must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("classifier batch size must be >= 1");
  const auto train = dataset.split(data::Split::train);
  const auto val = dataset.split(data::Split::val);
  std::vector<int> per_class(static_cast<std::size_t>(model.config.num_classes), 0);
  for (const auto* s : train) {
    if (s->label < 0 || s->label >= model.config.num_classes) {
      throw DataError("label " + std::to_string(s->label) + " of " + s->stem + " is out of range");
    }
    ++per_class[static_cast<std::size_t>(s->label)];
  }
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c] == 0) {
      throw ConfigError("train split has no example of class " + std::to_string(c));
    }
  }

  auto params = model.parameters();
  nn::AdamState adam(params, {.weight_decay = cfg.weight_decay});
  const auto steps_per_epoch =
      static_cast<std::int64_t>((train.size() + cfg.batch_size - 1) / cfg.batch_size);
  nn::PolyScheduler sched(cfg.lr, cfg.poly_gamma, std::max<std::int64_t>(1, steps_per_epoch * cfg.epochs));
  data::AugmentConfig aug;

  std::vector<HistoryRow> history;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg.seed, 0x7000 + static_cast<std::uint64_t>(epoch));
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Tensor> items;
      std::vector<int> labels;
      for (auto k = start; k < end; ++k) {
        const auto* s = train[order[k]];
        Tensor img = s->image;
        if (cfg.augment) img = data::augment(img, {}, aug, rng).image;
        items.push_back(replicate_channels(img, model.config.in_channels));
        labels.push_back(s->label);
      }
      nn::zero_grad(params);
      const auto fwd = classifier_forward(model, nn::constant(nn::stack(items)), true);
      const Var loss = nn::softmax_cross_entropy(fwd.logits, labels);
      nn::backward(loss);
      nn::adam_step(params, adam, poly_lr(sched));
      sched.advance();

      loss_sum += loss.value()[0] * static_cast<double>(labels.size());
      const auto& lg = fwd.logits.value();
      const auto c = model.config.num_classes;
      for (std::size_t k = 0; k < labels.size(); ++k) {
        const float* row = lg.ptr() + k * c;
        correct += (std::max_element(row, row + c) - row) == labels[k];
      }
    }
    const double n = std::max<double>(1.0, static_cast<double>(train.size()));
    history.push_back({epoch + 1, "train", loss_sum / n, static_cast<double>(correct) / n});
    if (!val.empty()) {
      const auto v = score_classifier(model, val);
      history.push_back({epoch + 1, "val", v.loss, v.accuracy});
    }
  }
  return history;
}

namespace {

Tensor scalar_blob(double v) { return Tensor({1, 1, 1, 1}, static_cast<float>(v)); }

const Tensor& find_blob(std::span<const nn::NamedTensor> blobs, const std::string& name) {
  for (const auto& b : blobs) {
    if (b.name == name) return b.tensor;
  }
  throw DataError("checkpoint lacks blob '" + name + "'");
}

}  // namespace

void save_classifier(const std::filesystem::path& path, ClassifierModel& model) {
  const auto params = model.parameters();
  const auto bufs = model.buffers();
  std::vector<nn::NamedTensor> blobs;
  blobs.push_back({"meta.in_channels", scalar_blob(static_cast<double>(model.config.in_channels))});
  blobs.push_back({"meta.num_classes", scalar_blob(static_cast<double>(model.config.num_classes))});
  const auto nb = static_cast<std::int64_t>(model.config.widths.size());
  Tensor widths({1, nb, 1, 1});
  for (std::int64_t i = 0; i < nb; ++i) widths[static_cast<std::size_t>(i)] = static_cast<float>(model.config.widths[static_cast<std::size_t>(i)]);
  blobs.push_back({"meta.widths", widths});
  blobs.push_back({"meta.pooled_blocks", scalar_blob(static_cast<double>(model.config.pooled_blocks))});
  blobs.push_back({"meta.pointwise_blocks", scalar_blob(static_cast<double>(model.config.pointwise_blocks))});
  for (auto& b : nn::export_state(params, bufs)) blobs.push_back(std::move(b));
  nn::save_checkpoint(path, blobs);
}

ClassifierModel load_classifier(const std::filesystem::path& path) {
  const auto blobs = nn::load_checkpoint(path);
  ClassifierConfig cfg;
  cfg.in_channels = static_cast<std::int64_t>(find_blob(blobs, "meta.in_channels")[0]);
  cfg.num_classes = static_cast<std::int64_t>(find_blob(blobs, "meta.num_classes")[0]);
  const auto& widths = find_blob(blobs, "meta.widths");
  cfg.widths.clear();
  for (float w : widths.data()) cfg.widths.push_back(static_cast<std::int64_t>(w));
  cfg.pooled_blocks = static_cast<std::int64_t>(find_blob(blobs, "meta.pooled_blocks")[0]);
  cfg.pointwise_blocks = static_cast<std::int64_t>(find_blob(blobs, "meta.pointwise_blocks")[0]);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("classifier checkpoint has an invalid architecture: ") + e.what());
  }
  auto model = make_classifier(cfg, 0);
  auto params = model.parameters();
  auto bufs = model.buffers();
  nn::import_state(blobs, params, bufs);
  return model;
}

}  // namespace camforge
