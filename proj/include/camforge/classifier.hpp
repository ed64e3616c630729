#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "camforge/data/dataset.hpp"
#include "camforge/history.hpp"
#include "camforge/nn/layers.hpp"

namespace camforge {

struct ClassifierConfig {
  std::int64_t in_channels = 1;
  std::int64_t num_classes = 2;
  std::vector<std::int64_t> widths{16, 32, 64, 64};
  // Leading blocks followed by a 2x2 max pool.
  std::int64_t pooled_blocks = 2;
  // Trailing blocks built from 1x1 convolutions; they widen features
  // without growing the receptive field.
  std::int64_t pointwise_blocks = 2;

  void validate() const;
};

// Two conv + BN + ReLU layers (3x3, or 1x1 when pointwise), optionally
// followed by a 2x2 max pool.
struct ConvBlock {
  nn::LayerParams conv1, bn1, conv2, bn2;
  int kernel = 3;
  bool pool = true;
};

// Conv backbone, global average pooling, and a bias-free linear head whose
// weight rows are the CAM weights of each class.
struct ClassifierModel {
  ClassifierConfig config;
  std::vector<ConvBlock> blocks;
  nn::LayerParams head;  // weight (C, K, 1, 1), no bias

  // Smallest accepted input side: every pooled stage must keep >= 1 pixel.
  std::int64_t min_input_size() const;
  std::int64_t feature_channels() const { return config.widths.back(); }

  std::vector<nn::NamedParameter> parameters();
  std::vector<nn::NamedBuffer> buffers();
};

// Features keep 1/2^pooled_blocks of the input resolution.
ClassifierModel make_classifier(const ClassifierConfig& config, std::uint64_t seed);

struct ClassifierForward {
  nn::Var features;  // A^k, (N, K, h, w)
  nn::Var logits;    // (N, C, 1, 1)
};

ClassifierForward classifier_forward(ClassifierModel& model, const nn::Var& input, bool training);

struct Classification {
  std::vector<double> probs;   // softmax over classes
  std::vector<double> logits;  // pre-softmax class scores Y^c
  nn::Tensor features;         // (1, K, h, w)
};

// Eval-mode inference on one (1, c, H, W) image. Grayscale input is
// replicated when the model expects more channels.
Classification classify(ClassifierModel& model, const nn::Tensor& image);

struct ClassifierTrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-3;
  double poly_gamma = 0.9;
  double weight_decay = 1e-4;
  bool augment = false;
  std::uint64_t seed = 0;
};

struct SplitScore {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mean cross-entropy and accuracy in eval mode.
SplitScore score_classifier(ClassifierModel& model, std::span<const data::Sample* const> samples);

// Trains on the train split, logging train and val rows per epoch. Throws
// ConfigError when the train split lacks an example of some class.
std::vector<HistoryRow> train_classifier(ClassifierModel& model, const data::Dataset& dataset,
                                         const ClassifierTrainConfig& cfg);

void save_classifier(const std::filesystem::path& path, ClassifierModel& model);
ClassifierModel load_classifier(const std::filesystem::path& path);

}  // namespace camforge
