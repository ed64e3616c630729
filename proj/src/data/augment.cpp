#include "camforge/data/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "camforge/errors.hpp"

namespace camforge::data {

namespace {

void check_image(const nn::Tensor& image) {
  const auto& s = image.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("augment expects a (1, 1, H, W) image, got " + s.str());
}

bool close_to(double a, double b) { return std::abs(a - b) < 1e-9; }

// Normalized to [0, 360).
double wrap_degrees(double degrees) {
  double d = std::fmod(degrees, 360.0);
  if (d < 0) d += 360.0;
  return d;
}

// Mirror a continuous coordinate into [0, n - 1] without repeating the edge.
double reflect(double c, std::int64_t n) {
  if (n == 1) return 0.0;
  const double period = 2.0 * static_cast<double>(n - 1);
  c = std::fmod(std::abs(c), period);
  if (c > n - 1) c = period - c;
  return c;
}

// Exact index permutation for quarter turns. Calls f(out_y, out_x, in_y, in_x).
template <typename F>
void quarter_turn(std::int64_t h, std::int64_t w, int quarters, F&& f) {
  const std::int64_t oh = quarters % 2 ? w : h;
  const std::int64_t ow = quarters % 2 ? h : w;
  for (std::int64_t i = 0; i < oh; ++i) {
    for (std::int64_t j = 0; j < ow; ++j) {
      switch (quarters) {
        case 1: f(i, j, j, w - 1 - i); break;
        case 2: f(i, j, h - 1 - i, w - 1 - j); break;
        default: f(i, j, h - 1 - j, i); break;
      }
    }
  }
}

// Source coordinate of output pixel (y, x) for a counter-clockwise rotation.
struct InverseMap {
  double cy, cx, c, s;
  InverseMap(std::int64_t h, std::int64_t w, double degrees)
      : cy((h - 1) / 2.0), cx((w - 1) / 2.0) {
    const double rad = degrees * std::numbers::pi / 180.0;
    c = std::cos(rad);
    s = std::sin(rad);
  }
  void operator()(std::int64_t y, std::int64_t x, double& sy, double& sx) const {
    const double dx = x - cx, dy = y - cy;
    sx = cx + c * dx - s * dy;
    sy = cy + s * dx + c * dy;
  }
};

}  // namespace

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  prob(flip_prob, "flip_prob");
  prob(rotate_prob, "rotate_prob");
  prob(noise_prob, "noise_prob");
  if (!(noise_sigma_min >= 0.0 && noise_sigma_min <= noise_sigma_max && noise_sigma_max <= 1.0)) {
    throw ConfigError("noise sigma range must satisfy 0 <= min <= max <= 1");
  }
  for (double r : rotations) {
    const bool listed = close_to(r, -25.0) || close_to(r, 25.0) || close_to(r, 90.0) ||
                        close_to(r, 180.0) || close_to(r, 270.0);
    if (!listed) throw ConfigError("rotation " + std::to_string(r) + " is not one of -25, 25, 90, 180, 270");
  }
}

nn::Tensor flip_lr(const nn::Tensor& image) {
  check_image(image);
  nn::Tensor out(image.shape());
  const auto h = image.shape().h, w = image.shape().w;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) out.at(0, 0, y, x) = image.at(0, 0, y, w - 1 - x);
  return out;
}

nn::Tensor flip_ud(const nn::Tensor& image) {
  check_image(image);
  nn::Tensor out(image.shape());
  const auto h = image.shape().h, w = image.shape().w;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) out.at(0, 0, y, x) = image.at(0, 0, h - 1 - y, x);
  return out;
}

LabelMask flip_lr(const LabelMask& mask) {
  LabelMask out(mask.h, mask.w);
  for (std::int64_t y = 0; y < mask.h; ++y)
    for (std::int64_t x = 0; x < mask.w; ++x) out.at(y, x) = mask.at(y, mask.w - 1 - x);
  return out;
}

LabelMask flip_ud(const LabelMask& mask) {
  LabelMask out(mask.h, mask.w);
  for (std::int64_t y = 0; y < mask.h; ++y)
    for (std::int64_t x = 0; x < mask.w; ++x) out.at(y, x) = mask.at(mask.h - 1 - y, x);
  return out;
}

nn::Tensor rotate(const nn::Tensor& image, double degrees) {
  check_image(image);
  const auto h = image.shape().h, w = image.shape().w;
  const double d = wrap_degrees(degrees);
  if (d == 0.0) return image;
  for (int q = 1; q <= 3; ++q) {
    if (d == 90.0 * q) {
      nn::Tensor out({1, 1, q % 2 ? w : h, q % 2 ? h : w});
      quarter_turn(h, w, q, [&](auto oy, auto ox, auto iy, auto ix) {
        out.at(0, 0, oy, ox) = image.at(0, 0, iy, ix);
      });
      return out;
    }
  }
  nn::Tensor out(image.shape());
  const InverseMap map(h, w, d);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double sy, sx;
      map(y, x, sy, sx);
      sy = reflect(sy, h);
      sx = reflect(sx, w);
      const auto y0 = static_cast<std::int64_t>(std::floor(sy));
      const auto x0 = static_cast<std::int64_t>(std::floor(sx));
      const auto y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double fy = sy - y0, fx = sx - x0;
      const double top = image.at(0, 0, y0, x0) * (1 - fx) + image.at(0, 0, y0, x1) * fx;
      const double bot = image.at(0, 0, y1, x0) * (1 - fx) + image.at(0, 0, y1, x1) * fx;
      out.at(0, 0, y, x) = static_cast<float>(top * (1 - fy) + bot * fy);
    }
  }
  return out;
}

LabelMask rotate(const LabelMask& mask, double degrees) {
  const double d = wrap_degrees(degrees);
  if (d == 0.0) return mask;
  for (int q = 1; q <= 3; ++q) {
    if (d == 90.0 * q) {
      LabelMask out(q % 2 ? mask.w : mask.h, q % 2 ? mask.h : mask.w);
      quarter_turn(mask.h, mask.w, q, [&](auto oy, auto ox, auto iy, auto ix) {
        out.at(oy, ox) = mask.at(iy, ix);
      });
      return out;
    }
  }
  LabelMask out(mask.h, mask.w);
  const InverseMap map(mask.h, mask.w, d);
  for (std::int64_t y = 0; y < mask.h; ++y) {
    for (std::int64_t x = 0; x < mask.w; ++x) {
      double sy, sx;
      map(y, x, sy, sx);
      const auto iy = std::clamp<std::int64_t>(std::llround(reflect(sy, mask.h)), 0, mask.h - 1);
      const auto ix = std::clamp<std::int64_t>(std::llround(reflect(sx, mask.w)), 0, mask.w - 1);
      out.at(y, x) = mask.at(iy, ix);
    }
  }
  return out;
}

Augmented augment(const nn::Tensor& image, std::span<const LabelMask> masks,
                  const AugmentConfig& cfg, Rng& rng) {
  check_image(image);
  cfg.validate();
  for (const auto& m : masks) {
    if (m.h != image.shape().h || m.w != image.shape().w) {
      throw ShapeError("mask dims do not match image " + image.shape().str());
    }
  }
  Augmented out{image, {masks.begin(), masks.end()}};
  // Draws happen unconditionally so the stream position is independent of outcomes.
  const bool do_flip = rng.bernoulli(cfg.flip_prob) && cfg.flip;
  const bool flip_vertical = rng.bernoulli(0.5);
  const bool do_rotate = rng.bernoulli(cfg.rotate_prob) && !cfg.rotations.empty();
  const auto pick = cfg.rotations.empty() ? 0 : rng.below(cfg.rotations.size());
  const bool do_noise = rng.bernoulli(cfg.noise_prob);
  const double sigma = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max);

  if (do_flip) {
    out.image = flip_vertical ? flip_ud(out.image) : flip_lr(out.image);
    for (auto& m : out.masks) m = flip_vertical ? flip_ud(m) : flip_lr(m);
  }
  if (do_rotate) {
    const double deg = cfg.rotations[pick];
    out.image = rotate(out.image, deg);
    for (auto& m : out.masks) m = rotate(m, deg);
  }
  if (do_noise) {
    for (auto& v : out.image.storage()) v = static_cast<float>(v + rng.normal(0.0, sigma));
  }
  for (auto& v : out.image.storage()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace camforge::data
