#include "camforge/crf.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "camforge/errors.hpp"

namespace camforge {

using nn::Tensor;

void CrfParams::validate() const {
  if (iterations < 0) throw ConfigError("crf.iterations must be >= 0");
  if (!(w_app >= 0.0) || !(w_smooth >= 0.0)) throw ConfigError("CRF kernel weights must be >= 0");
  if (!(theta_alpha > 0.0) || !(theta_beta > 0.0) || !(theta_gamma > 0.0)) {
    throw ConfigError("CRF bandwidths must be > 0");
  }
  if (!(unary_clip > 0.0 && unary_clip < 0.5)) throw ConfigError("crf.unary_clip must lie in (0, 0.5)");
}

LabelMask ClassField::argmax() const {
  LabelMask out(h, w);
  const auto n = pixels();
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < classes; ++c) {
      if (at(c, i) > at(best, i)) best = c;
    }
    out.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

UnaryField unary_from_cam(const Cam& cam, double eps) {
  if (!(eps > 0.0 && eps < 0.5)) throw ContractError("unary clip must lie in (0, 0.5)");
  UnaryField u(2, cam.h, cam.w);
  for (std::int64_t i = 0; i < cam.h * cam.w; ++i) {
    const double v = cam.values[static_cast<std::size_t>(i)];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ContractError("CAM value " + std::to_string(v) + " is outside [0, 1]");
    }
    const double p = std::clamp(v, eps, 1.0 - eps);
    u.at(0, i) = -std::log(1.0 - p);
    u.at(1, i) = -std::log(p);
  }
  return u;
}

namespace {

// Writes softmax(-unary - penalty) into q; penalty may be null.
void update_q(const UnaryField& unary, const ClassField* penalty, ClassField& q) {
  const auto n = unary.pixels();
  std::vector<double> e(static_cast<std::size_t>(unary.classes));
  for (std::int64_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::int64_t c = 0; c < unary.classes; ++c) {
      e[c] = -unary.at(c, i) - (penalty ? penalty->at(c, i) : 0.0);
      mx = std::max(mx, e[c]);
    }
    double z = 0.0;
    for (auto& v : e) z += v = std::exp(v - mx);
    for (std::int64_t c = 0; c < unary.classes; ++c) q.at(c, i) = e[c] / z;
  }
}

double intensity_d2(const Tensor& image, std::int64_t i, std::int64_t j) {
  const auto ch = image.c(), plane = image.shape().plane();
  double d2 = 0.0;
  for (std::int64_t c = 0; c < ch; ++c) {
    const double d = static_cast<double>(image[c * plane + i]) - image[c * plane + j];
    d2 += d * d;
  }
  return d2;
}

// Potts: the penalty for label l is the message mass on every other label.
void potts(const ClassField& msg, ClassField& penalty) {
  const auto n = msg.pixels();
  for (std::int64_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::int64_t c = 0; c < msg.classes; ++c) total += msg.at(c, i);
    for (std::int64_t c = 0; c < msg.classes; ++c) penalty.at(c, i) = total - msg.at(c, i);
  }
}

struct KernelTerms {
  double a_pos, a_int, s_pos;  // -1 / (2 theta^2)
  double w_app, w_smooth;
  double operator()(double pos_d2, double int_d2) const {
    return w_app * std::exp(a_pos * pos_d2 + a_int * int_d2) + w_smooth * std::exp(s_pos * pos_d2);
  }
};

KernelTerms kernel_terms(const CrfParams& p) {
  return {-1.0 / (2.0 * p.theta_alpha * p.theta_alpha), -1.0 / (2.0 * p.theta_beta * p.theta_beta),
          -1.0 / (2.0 * p.theta_gamma * p.theta_gamma), p.w_app, p.w_smooth};
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// All-pairs kernel, zero diagonal. Positional factors depend only on
// (|dy|, |dx|) and are tabulated once.
RowMatrix dense_kernel(const Tensor& image, std::int64_t h, std::int64_t w, const KernelTerms& k) {
  const auto n = h * w;
  std::vector<double> app_pos(static_cast<std::size_t>(n)), smooth(static_cast<std::size_t>(n));
  for (std::int64_t dy = 0; dy < h; ++dy) {
    for (std::int64_t dx = 0; dx < w; ++dx) {
      const auto d2 = static_cast<double>(dy * dy + dx * dx);
      app_pos[static_cast<std::size_t>(dy * w + dx)] = k.w_app * std::exp(k.a_pos * d2);
      smooth[static_cast<std::size_t>(dy * w + dx)] = k.w_smooth * std::exp(k.s_pos * d2);
    }
  }
  const bool gray = image.c() == 1;
  const float* px = image.ptr();
  RowMatrix K(n, n);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto yi = i / w, xi = i % w;
    double* row = K.data() + i * n;
    row[i] = 0.0;
    for (std::int64_t j = i + 1; j < n; ++j) {
      const auto dy = j / w - yi;
      const auto dx = std::abs(j % w - xi);
      const auto t = static_cast<std::size_t>(dy * w + dx);
      double id2;
      if (gray) {
        const double d = static_cast<double>(px[i]) - px[j];
        id2 = d * d;
      } else {
        id2 = intensity_d2(image, i, j);
      }
      row[j] = app_pos[t] * std::exp(k.a_int * id2) + smooth[t];
    }
  }
  K.triangularView<Eigen::StrictlyLower>() = K.transpose();
  return K;
}

// Messages with each kernel truncated at 3 theta.
void windowed_messages(const Tensor& image, const ClassField& q, const CrfParams& p, const KernelTerms& k,
                       ClassField& msg) {
  const auto h = q.h, w = q.w;
  const double r_app = 3.0 * p.theta_alpha, r_smooth = 3.0 * p.theta_gamma;
  const double r = std::max(p.w_app > 0 ? r_app : 0.0, p.w_smooth > 0 ? r_smooth : 0.0);
  const auto ri = static_cast<std::int64_t>(std::floor(r));
  std::fill(msg.values.begin(), msg.values.end(), 0.0);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto i = y * w + x;
      for (auto yy = std::max<std::int64_t>(0, y - ri); yy <= std::min(h - 1, y + ri); ++yy) {
        for (auto xx = std::max<std::int64_t>(0, x - ri); xx <= std::min(w - 1, x + ri); ++xx) {
          const auto j = yy * w + xx;
          if (j == i) continue;
          const double d2 = static_cast<double>((yy - y) * (yy - y) + (xx - x) * (xx - x));
          double kv = 0.0;
          if (p.w_app > 0 && d2 <= r_app * r_app) kv += k.w_app * std::exp(k.a_pos * d2 + k.a_int * intensity_d2(image, i, j));
          if (p.w_smooth > 0 && d2 <= r_smooth * r_smooth) kv += k.w_smooth * std::exp(k.s_pos * d2);
          if (kv == 0.0) continue;
          for (std::int64_t c = 0; c < q.classes; ++c) msg.at(c, i) += kv * q.at(c, j);
        }
      }
    }
  }
}

}  // namespace

ClassField softmax_neg(const UnaryField& unary) {
  ClassField q(unary.classes, unary.h, unary.w);
  update_q(unary, nullptr, q);
  return q;
}

ClassField mean_field(const UnaryField& unary, const Tensor& image, const CrfParams& params,
                      const MeanFieldOptions& options) {
  params.validate();
  const auto& s = image.shape();
  if (s.n != 1 || s.h != unary.h || s.w != unary.w) {
    throw ShapeError("CRF image " + s.str() + " does not match unary " + std::to_string(unary.h) + "x" +
                     std::to_string(unary.w));
  }
  if (unary.classes < 1) throw ContractError("unary has no classes");
  ClassField q = softmax_neg(unary);
  if (options.on_iteration) options.on_iteration(0, q);
  const bool pairwise = params.w_app > 0.0 || params.w_smooth > 0.0;
  if (params.iterations == 0 || !pairwise) {
    for (int it = 1; it <= params.iterations && options.on_iteration; ++it) options.on_iteration(it, q);
    return q;
  }

  const auto n = unary.pixels();
  const auto k = kernel_terms(params);
  const bool dense = !options.force_windowed && n <= kExactCrfPixels;
  RowMatrix K;
  if (dense) K = dense_kernel(image, unary.h, unary.w, k);

  ClassField msg(unary.classes, unary.h, unary.w), penalty(unary.classes, unary.h, unary.w);
  ClassField next(unary.classes, unary.h, unary.w);
  for (int it = 1; it <= params.iterations; ++it) {
    if (dense) {
      // Class planes are contiguous, i.e. an N x C column-major matrix.
      const Eigen::Map<const Eigen::MatrixXd> qm(q.values.data(), n, unary.classes);
      Eigen::Map<Eigen::MatrixXd> mm(msg.values.data(), n, unary.classes);
      mm.noalias() = K * qm;
    } else {
      windowed_messages(image, q, params, k, msg);
    }
    potts(msg, penalty);
    update_q(unary, &penalty, next);
    std::swap(q, next);
    if (options.on_iteration) options.on_iteration(it, q);
  }
  return q;
}

LabelMask refine_mask(const LabelMask& seed, const Cam& cam, const Tensor& image, const CrfParams& params,
                      const MeanFieldOptions& options) {
  if (seed.h != cam.h || seed.w != cam.w) throw ShapeError("seed and CAM dims differ");
  Cam blended = cam;
  for (std::size_t i = 0; i < blended.values.size(); ++i) {
    blended.values[i] = 0.5f * (cam.values[i] + static_cast<float>(seed.labels[i] != 0));
  }
  const auto unary = unary_from_cam(blended, params.unary_clip);
  return mean_field(unary, image, params, options).argmax();
}

}  // namespace camforge
