#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "camforge/data/manifest.hpp"
#include "camforge/label_mask.hpp"
#include "camforge/nn/tensor.hpp"
#include "camforge/rng.hpp"

namespace camforge::data {

struct CorpusSpec {
  int n_pos = 120;
  int n_neg = 120;
  int size = 64;  // square images; must be divisible by 8
  std::uint64_t seed = 0;
  double train_frac = 0.6;
  double val_frac = 0.2;
  int slices_per_group = 2;
};

// One bright lesion: flat-topped radial profile exp(-ln2 * (d / radius)^4)
// scaled by `amplitude`. The ground-truth footprint is d <= radius.
struct Lesion {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
  double amplitude = 0.0;
};

// Elliptical "brain" field shared by the slices of one group.
struct Anatomy {
  double cx = 0.0, cy = 0.0;  // ellipse center, pixels
  double ax = 0.0, ay = 0.0;  // semi-axes, pixels
  double tissue = 0.0;        // mean tissue intensity
};

struct SyntheticImage {
  nn::Tensor image;  // (1, 1, S, S) in [0, 1], before 8-bit quantization
  LabelMask mask;
  std::vector<Lesion> lesions;
};

Anatomy sample_anatomy(int size, Rng& rng);
// Renders one slice; positive slices carry 1-3 lesions.
SyntheticImage render_slice(int size, const Anatomy& anatomy, bool positive, Rng& rng);

// Writes images/<stem>.png, masks/<stem>.png and manifest.json under out_dir.
// Output depends only on `spec`.
DatasetManifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);

}  // namespace camforge::data
