#include "camforge/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "camforge/data/image_io.hpp"
#include "camforge/errors.hpp"

namespace camforge::data {

std::vector<const Sample*> Dataset::split(Split s) const {
  std::vector<const Sample*> out;
  for (const auto& sample : samples) {
    if (sample.split == s) out.push_back(&sample);
  }
  return out;
}

const Sample* Dataset::find(const std::string& stem) const {
  for (const auto& s : samples) {
    if (s.stem == stem) return &s;
  }
  return nullptr;
}

LabelMask resize_nearest(const LabelMask& mask, std::int64_t h, std::int64_t w) {
  if (mask.h == h && mask.w == w) return mask;
  LabelMask out(h, w);
  for (std::int64_t y = 0; y < h; ++y) {
    const auto sy = std::min(mask.h - 1, static_cast<std::int64_t>((y + 0.5) * mask.h / h));
    for (std::int64_t x = 0; x < w; ++x) {
      const auto sx = std::min(mask.w - 1, static_cast<std::int64_t>((x + 0.5) * mask.w / w));
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

Dataset load_corpus(const std::filesystem::path& manifest_path,
                    std::optional<std::int64_t> target_size) {
  return load_corpus(read_manifest(manifest_path), target_size);
}

Dataset load_corpus(const DatasetManifest& manifest, std::optional<std::int64_t> target_size) {
  validate_manifest(manifest, true);
  if (target_size && *target_size < 1) throw ConfigError("load_corpus: target size must be >= 1");
  Dataset ds;
  ds.classes = manifest.classes;
  std::vector<const ManifestEntry*> order;
  for (const auto& e : manifest.entries) order.push_back(&e);
  std::sort(order.begin(), order.end(),
            [](const ManifestEntry* a, const ManifestEntry* b) { return a->image < b->image; });
  std::set<std::string> stems;
  for (const auto* e : order) {
    Sample s;
    s.image_path = e->image;
    s.stem = std::filesystem::path(e->image).stem().string();
    if (!stems.insert(s.stem).second) throw DataError("duplicate image stem '" + s.stem + "'");
    s.image = read_png_gray(manifest.resolve(e->image));
    s.label = e->label;
    s.split = e->split;
    s.group = e->group;
    if (e->mask) {
      LabelMask m = read_mask_png(manifest.resolve(*e->mask));
      if (m.h != s.image.h() || m.w != s.image.w()) {
        throw DataError("mask " + *e->mask + " is " + std::to_string(m.h) + "x" + std::to_string(m.w) +
                        " but image " + e->image + " is " + std::to_string(s.image.h()) + "x" +
                        std::to_string(s.image.w()));
      }
      s.mask = std::move(m);
    }
    if (target_size && (s.image.h() != *target_size || s.image.w() != *target_size)) {
      s.image = nn::resize_bilinear(s.image, *target_size, *target_size);
      if (s.mask) s.mask = resize_nearest(*s.mask, *target_size, *target_size);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace camforge::data
