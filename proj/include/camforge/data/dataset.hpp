#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "camforge/data/manifest.hpp"
#include "camforge/label_mask.hpp"
#include "camforge/nn/tensor.hpp"

namespace camforge::data {

struct Sample {
  std::string stem;           // file stem, unique within a dataset
  std::string image_path;     // as listed in the manifest
  nn::Tensor image;           // (1, 1, H, W), intensities in [0, 1]
  int label = 0;
  std::optional<LabelMask> mask;
  Split split = Split::train;
  std::string group;
};

struct Dataset {
  std::vector<std::string> classes;
  std::vector<Sample> samples;  // sorted by image path

  std::vector<const Sample*> split(Split s) const;
  const Sample* find(const std::string& stem) const;
};

// Loads every manifest entry, resizing images (bilinear) and masks (nearest)
// to target_size x target_size when given.
Dataset load_corpus(const std::filesystem::path& manifest_path,
                    std::optional<std::int64_t> target_size = std::nullopt);
Dataset load_corpus(const DatasetManifest& manifest,
                    std::optional<std::int64_t> target_size = std::nullopt);

LabelMask resize_nearest(const LabelMask& mask, std::int64_t h, std::int64_t w);

}  // namespace camforge::data
