#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "camforge/crf.hpp"
#include "camforge/nn/autograd.hpp"
#include "camforge/nn/tensor.hpp"
#include "camforge/rng.hpp"

namespace camforge::testing {

inline nn::Tensor random_tensor(nn::Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  nn::Tensor t(s);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Values in [lo, hi) that keep at least `gap` away from zero, so kinks at 0
// stay outside the finite-difference stencil.
inline nn::Tensor random_away_from_zero(nn::Shape s, Rng& rng, double gap = 0.05) {
  nn::Tensor t(s);
  for (auto& v : t.data()) {
    const double m = rng.uniform(gap, 1.0);
    v = static_cast<float>(rng.bernoulli(0.5) ? m : -m);
  }
  return t;
}

// Distinct values spaced by at least `spacing` in random order.
inline nn::Tensor random_distinct(nn::Shape s, Rng& rng, double spacing = 0.05) {
  nn::Tensor t(s);
  std::vector<float> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(spacing * (static_cast<double>(i) - v.size() / 2.0));
  rng.shuffle(v.begin(), v.end());
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

struct GradCheck {
  double max_rel_error = 0.0;  // worst per-tensor relative error
  std::size_t worst_input = 0;
};

// Finite differences against reverse mode. Tensors are float32, so each
// scalar evaluation carries ~6e-8 relative rounding. The slope is a least
// squares fit of the odd part a1 t + a3 t^3 to the symmetric differences at
// t = +-h, ..., +-4h, which averages that noise while the cubic term absorbs
// curvature. The error of each input tensor is
// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor).
inline GradCheck grad_check(const std::function<nn::Var(const std::vector<nn::Var>&)>& f,
                            const std::vector<nn::Tensor>& inputs, double step = 2e-2, double floor = 1e-6) {
  std::vector<nn::Var> vars;
  for (const auto& t : inputs) vars.push_back(nn::parameter(t));
  nn::backward(f(vars));
  GradCheck result;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    std::vector<double> analytic(inputs[k].numel(), 0.0);
    if (vars[k].has_grad()) {
      for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = vars[k].grad()[i];
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      auto eval = [&](double delta) {
        nn::NoGradGuard guard;
        std::vector<nn::Var> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          nn::Tensor t = inputs[j];
          if (j == k) t[i] = static_cast<float>(t[i] + delta);
          probe.push_back(nn::constant(std::move(t)));
        }
        return static_cast<double>(f(probe).value()[0]);
      };
      // Normal equations for d_k / 2h = a1 k + c k^3 over k = 1..4.
      double s2 = 0.0, s4 = 0.0, s6 = 0.0, b1 = 0.0, b3 = 0.0;
      for (int m = 1; m <= 4; ++m) {
        const double d = (eval(m * step) - eval(-m * step)) / (2 * step);
        s2 += m * m;
        s4 += std::pow(m, 4);
        s6 += std::pow(m, 6);
        b1 += m * d;
        b3 += m * m * m * d;
      }
      const double numeric = (b1 * s6 - b3 * s4) / (s2 * s6 - s4 * s4);
    diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_input = k;
    }
  }
  return result;
}

// Brute-force mean-field: for every pixel, loop over all other pixels and
// evaluate both Gaussian kernels directly. Calls `visit` with Q after
// initialization and after each iteration.
inline ClassField naive_mean_field(const UnaryField& unary, const nn::Tensor& image, const CrfParams& p,
                                   const std::function<void(int, const ClassField&)>& visit = {}) {
  const auto n = unary.pixels();
  const auto C = unary.classes;
  const auto w = unary.w;
  auto softmax_into = [&](const std::vector<double>& energy_offset, ClassField& q) {
    for (std::int64_t i = 0; i < n; ++i) {
      double mx = -INFINITY;
      std::vector<double> e(C);
      for (std::int64_t c = 0; c < C; ++c) {
        e[c] = -unary.at(c, i) - energy_offset[c * n + i];
        mx = std::max(mx, e[c]);
      }
      double z = 0.0;
      for (auto& v : e) z += (v = std::exp(v - mx));
      for (std::int64_t c = 0; c < C; ++c) q.at(c, i) = e[c] / z;
    }
  };
  ClassField q(C, unary.h, unary.w);
  softmax_into(std::vector<double>(C * n, 0.0), q);
  if (visit) visit(0, q);
  const bool pairwise = p.w_app > 0.0 || p.w_smooth > 0.0;
  for (int it = 1; it <= p.iterations; ++it) {
    if (!pairwise) {
      if (visit) visit(it, q);
      continue;
    }
    std::vector<double> pen(C * n, 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double dy = static_cast<double>(i / w - j / w), dx = static_cast<double>(i % w - j % w);
        const double pos = dy * dy + dx * dx;
        double col = 0.0;
        for (std::int64_t ch = 0; ch < image.c(); ++ch) {
          const double d = static_cast<double>(image[ch * n + i]) - image[ch * n + j];
          col += d * d;
        }
        const double k = p.w_app * std::exp(-pos / (2 * p.theta_alpha * p.theta_alpha) -
                                            col / (2 * p.theta_beta * p.theta_beta)) +
                         p.w_smooth * std::exp(-pos / (2 * p.theta_gamma * p.theta_gamma));
        for (std::int64_t l = 0; l < C; ++l) {
          for (std::int64_t m = 0; m < C; ++m) {
            if (m != l) pen[l * n + i] += k * q.at(m, j);
          }
        }
      }
    }
    ClassField next(C, unary.h, unary.w);
    softmax_into(pen, next);
    q = std::move(next);
    if (visit) visit(it, q);
  }
  return q;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("camforge_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace camforge::testing
