#include "camforge/cam.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "camforge/errors.hpp"

namespace camforge {

using nn::Tensor;

nn::Tensor Cam::to_tensor() const { return Tensor({1, 1, h, w}, values); }

void ScaleSet::validate() const {
  if (ratios.empty()) throw ConfigError("scale set is empty");
  for (double r : ratios) {
    if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("scale ratio " + std::to_string(r) + " is not positive");
  }
}

void ThresholdConfig::validate() const {
  if (!(t > 0.0 && t < 1.0)) throw ConfigError("threshold " + std::to_string(t) + " is outside (0, 1)");
}

Cam compute_cam(const Tensor& features, const Tensor& head_weight, int class_id) {
  const auto& fs = features.shape();
  const auto& ws = head_weight.shape();
  if (fs.n != 1) throw ShapeError("compute_cam expects one feature stack, got " + fs.str());
  if (ws.c != fs.c || ws.h != 1 || ws.w != 1) {
    throw ShapeError("head weights " + ws.str() + " do not match features " + fs.str());
  }
  if (class_id < 0 || class_id >= ws.n) {
    throw ContractError("class id " + std::to_string(class_id) + " outside [0, " + std::to_string(ws.n) + ")");
  }
  Cam cam;
  cam.class_id = class_id;
  cam.h = fs.h;
  cam.w = fs.w;
  const auto plane = fs.plane();
  std::vector<double> acc(static_cast<std::size_t>(plane), 0.0);
  for (std::int64_t k = 0; k < fs.c; ++k) {
    const double wk = head_weight[static_cast<std::size_t>(class_id * ws.c + k)];
    const float* a = features.plane(0, k);
    for (std::int64_t i = 0; i < plane; ++i) acc[static_cast<std::size_t>(i)] += wk * a[i];
  }
  cam.values.assign(acc.begin(), acc.end());
  return cam;
}

std::vector<Cam> multi_scale_cams(ClassifierModel& model, const Tensor& image, const ScaleSet& scales,
                                  int class_id) {
  scales.validate();
  const auto& s = image.shape();
  if (s.n != 1) throw ShapeError("multi_scale_cams expects one image, got " + s.str());
  std::vector<Cam> out;
  for (double r : scales.ratios) {
    const auto h = static_cast<std::int64_t>(std::lround(static_cast<double>(s.h) * r));
    const auto w = static_cast<std::int64_t>(std::lround(static_cast<double>(s.w) * r));
    if (h < model.min_input_size() || w < model.min_input_size()) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "scale %g shrinks %lldx%lld below the classifier minimum %lld", r,
                    static_cast<long long>(s.h), static_cast<long long>(s.w),
                    static_cast<long long>(model.min_input_size()));
      throw ConfigError(buf);
    }
    const Tensor scaled = (h == s.h && w == s.w) ? image : nn::resize_bilinear(image, h, w);
    const auto cls = classify(model, scaled);
    Cam cam = compute_cam(cls.features, model.head.weight.value(), class_id);
    const Tensor back = nn::resize_bilinear(cam.to_tensor(), s.h, s.w);
    cam.h = s.h;
    cam.w = s.w;
    cam.values.assign(back.data().begin(), back.data().end());
    cam.scale = r;
    out.push_back(std::move(cam));
  }
  return out;
}

Cam fuse(std::span<const Cam> cams) {
  if (cams.empty()) throw ContractError("cannot fuse an empty list of CAMs");
  const auto& first = cams.front();
  std::vector<double> acc(first.values.size(), 0.0);
  for (const auto& c : cams) {
    if (c.h != first.h || c.w != first.w) throw ShapeError("CAMs to fuse differ in dims");
    if (c.class_id != first.class_id) throw ContractError("CAMs to fuse differ in class");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += c.values[i];
  }
  Cam out;
  out.class_id = first.class_id;
  out.h = first.h;
  out.w = first.w;
  out.values.resize(acc.size());
  const double m = static_cast<double>(cams.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(acc[i] / m);
  return out;
}

Cam normalize(const Cam& cam) {
  Cam out = cam;
  if (cam.values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(cam.values.begin(), cam.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) {
    std::fill(out.values.begin(), out.values.end(), 0.0f);
    return out;
  }
  for (auto& v : out.values) v = static_cast<float>((v - lo) / (hi - lo));
  return out;
}

LabelMask threshold(const Cam& cam, const ThresholdConfig& cfg) {
  cfg.validate();
  constexpr double kSlack = 1e-6;
  // Maps hold floats, so T is compared at float precision: a stored 0.35f
  // meets T = 0.35.
  const float t = static_cast<float>(cfg.t);
  LabelMask mask(cam.h, cam.w);
  for (std::size_t i = 0; i < cam.values.size(); ++i) {
    const double v = cam.values[i];
    if (!(v >= -kSlack && v <= 1.0 + kSlack)) {
      throw ContractError("threshold input is not normalized (value " + std::to_string(v) + ")");
    }
    mask.labels[i] = cam.values[i] >= t ? 1 : 0;
  }
  return mask;
}

CamSet cam_set(ClassifierModel& model, const Tensor& image, const ScaleSet& scales, int class_id,
               bool prefuse_norm) {
  const auto it = std::find(scales.ratios.begin(), scales.ratios.end(), 1.0);
  if (it == scales.ratios.end()) throw ConfigError("scale set must include 1.0");
  CamSet out;
  out.per_scale = multi_scale_cams(model, image, scales, class_id);
  out.origin = normalize(out.per_scale[static_cast<std::size_t>(it - scales.ratios.begin())]);
  if (prefuse_norm) {
    std::vector<Cam> normed;
    for (const auto& c : out.per_scale) normed.push_back(normalize(c));
    out.fused = normalize(fuse(normed));
  } else {
    out.fused = normalize(fuse(out.per_scale));
  }
  return out;
}

}  // namespace camforge
