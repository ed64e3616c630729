#include "camforge/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "camforge/data/image_io.hpp"
#include "camforge/errors.hpp"

namespace camforge::data {

namespace {

constexpr double kBackground = 0.03;
constexpr double kBorderMargin = 0.15;  // fraction of the image side kept lesion-free
constexpr std::uint64_t kGroupStreamBase = 1'000'000;
constexpr std::uint64_t kSplitStream = 2'000'000;

// Smooth low-frequency texture: a sum of random plane waves.
struct Wave {
  double kx, ky, phase, amp;
};

std::string stem_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%04d", index);
  return buf;
}

}  // namespace

Anatomy sample_anatomy(int size, Rng& rng) {
  const double s = size;
  Anatomy a;
  a.cx = s * (0.5 + rng.uniform(-0.03, 0.03));
  a.cy = s * (0.5 + rng.uniform(-0.03, 0.03));
  a.ax = s * rng.uniform(0.30, 0.42);
  a.ay = s * rng.uniform(0.34, 0.45);
  a.tissue = rng.uniform(0.25, 0.45);
  return a;
}

SyntheticImage render_slice(int size, const Anatomy& anatomy, bool positive, Rng& rng) {
  const double s = size;
  std::vector<Wave> waves(3);
  for (auto& wv : waves) {
    const double freq = rng.uniform(1.0, 4.0) * 2.0 * std::numbers::pi / s;
    const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    wv = {freq * std::cos(dir), freq * std::sin(dir), rng.uniform(0.0, 2.0 * std::numbers::pi), 0.025};
  }

  SyntheticImage out;
  if (positive) {
    const int count = 1 + static_cast<int>(rng.below(3));
    const double lo = kBorderMargin * s, hi = (1.0 - kBorderMargin) * s;
    for (int k = 0; k < count; ++k) {
      Lesion les;
      les.radius = rng.uniform(0.03, 0.12) * s;
      les.amplitude = rng.uniform(0.30, 0.45);
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        les.cx = rng.uniform(lo + les.radius, hi - les.radius);
        les.cy = rng.uniform(lo + les.radius, hi - les.radius);
        // Whole disk inside the brain: shrink the ellipse by radius + 1 px.
        const double ex = (les.cx - anatomy.cx) / (anatomy.ax - les.radius - 1.0);
        const double ey = (les.cy - anatomy.cy) / (anatomy.ay - les.radius - 1.0);
        placed = ex * ex + ey * ey <= 1.0;
      }
      if (!placed) {
        les.cx = anatomy.cx;
        les.cy = anatomy.cy;
      }
      out.lesions.push_back(les);
    }
  }

  out.image = nn::Tensor({1, 1, size, size});
  out.mask = LabelMask(size, size);
  const double edge = std::min(anatomy.ax, anatomy.ay);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double ex = (px - anatomy.cx) / anatomy.ax;
      const double ey = (py - anatomy.cy) / anatomy.ay;
      const double inside_px = (1.0 - std::sqrt(ex * ex + ey * ey)) * edge;
      const double wb = std::clamp(0.5 + inside_px / 1.5, 0.0, 1.0);
      double texture = 0.0;
      for (const auto& wv : waves) texture += wv.amp * std::sin(wv.kx * px + wv.ky * py + wv.phase);
      double v = kBackground * (1.0 - wb) + (anatomy.tissue + texture) * wb;
      double lesion = 0.0;
      bool fg = false;
      for (const auto& les : out.lesions) {
        const double dx = px - les.cx, dy = py - les.cy;
        const double d2 = dx * dx + dy * dy;
        const double q = d2 / (les.radius * les.radius);
        lesion = std::max(lesion, les.amplitude * std::exp(-std::numbers::ln2 * q * q));
        fg = fg || d2 <= les.radius * les.radius;
      }
      v += lesion + rng.normal(0.0, 0.01);
      out.image.at(0, 0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      out.mask.at(y, x) = fg ? 1 : 0;
    }
  }
  return out;
}

DatasetManifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.size < 8 || spec.size % 8 != 0) {
    throw ConfigError("image size " + std::to_string(spec.size) + " is not a positive multiple of 8");
  }
  if (spec.n_pos < 0 || spec.n_neg < 0) throw ConfigError("image counts must be >= 0");
  if (spec.slices_per_group < 1) throw ConfigError("slices per group must be >= 1");
  if (spec.train_frac < 0 || spec.val_frac < 0 || spec.train_frac + spec.val_frac > 1.0) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }

  DatasetManifest manifest;
  manifest.classes = {"normal", "lesion"};
  manifest.seed = spec.seed;
  manifest.root = out_dir;
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "masks");

  // Patient groups, stratified by label, are what get split.
  struct Group {
    std::string id;
    int label;
    std::vector<int> images;
  };
  std::vector<Group> groups;
  auto add_images = [&](int count, int label, const char* prefix, int first_index) {
    for (int i = 0; i < count; ++i) {
      const int g = i / spec.slices_per_group;
      if (i % spec.slices_per_group == 0) {
        char id[32];
        std::snprintf(id, sizeof(id), "%s%03d", prefix, g);
        groups.push_back({id, label, {}});
      }
      groups.back().images.push_back(first_index + i);
    }
  };
  add_images(spec.n_pos, 1, "p", 0);
  add_images(spec.n_neg, 0, "n", spec.n_pos);

  std::vector<Split> split_of(groups.size(), Split::train);
  Rng split_rng(spec.seed, kSplitStream);
  for (int label : {1, 0}) {
    std::vector<std::size_t> ids;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].label == label) ids.push_back(g);
    }
    split_rng.shuffle(ids.begin(), ids.end());
    const auto n = ids.size();
    const auto n_train = static_cast<std::size_t>(std::lround(spec.train_frac * n));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::lround(spec.val_frac * n)));
    for (std::size_t k = 0; k < n; ++k) {
      split_of[ids[k]] = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
    }
  }

  for (std::size_t g = 0; g < groups.size(); ++g) {
    Rng group_rng(spec.seed, kGroupStreamBase + g);
    const Anatomy anatomy = sample_anatomy(spec.size, group_rng);
    for (int index : groups[g].images) {
      Rng rng(spec.seed, static_cast<std::uint64_t>(index));
      const SyntheticImage slice = render_slice(spec.size, anatomy, groups[g].label == 1, rng);
      const std::string stem = stem_for(index);
      ManifestEntry e;
      e.image = "images/" + stem + ".png";
      e.mask = "masks/" + stem + ".png";
      e.label = groups[g].label;
      e.split = split_of[g];
      e.group = groups[g].id;
      write_png_gray8(out_dir / e.image, slice.image);
      write_mask_png(out_dir / *e.mask, slice.mask);
      manifest.entries.push_back(std::move(e));
    }
  }
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.image < b.image; });
  write_manifest(out_dir / "manifest.json", manifest);
  return manifest;
}

}  // namespace camforge::data
