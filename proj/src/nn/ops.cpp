#include "camforge/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "camforge/errors.hpp"

namespace camforge::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::int64_t conv_out(std::int64_t in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Unfolds one (C, H, W) image into a (C*k*k, Ho*Wo) matrix.
void im2col(const float* img, std::int64_t channels, std::int64_t h, std::int64_t w, int kh,
            int kw, int stride, int pad, std::int64_t oh, std::int64_t ow, float* col) {
  const std::int64_t cols = oh * ow;
  for (std::int64_t c = 0; c < channels; ++c) {
    const float* plane = img + c * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        float* row = col + ((c * kh + ky) * kw + kx) * cols;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          float* dst = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, 0.0f);
            continue;
          }
          const float* src = plane + iy * w;
          if (stride == 1) {
            // Contiguous run with zero fill at the borders.
            const std::int64_t x_lo = std::max<std::int64_t>(0, pad - kx);
            const std::int64_t x_hi = std::min<std::int64_t>(ow, w + pad - kx);
            std::int64_t ox = 0;
            for (; ox < std::min(x_lo, ow); ++ox) dst[ox] = 0.0f;
            for (; ox < x_hi; ++ox) dst[ox] = src[ox - pad + kx];
            for (; ox < ow; ++ox) dst[ox] = 0.0f;
          } else {
            for (std::int64_t ox = 0; ox < ow; ++ox) {
              const std::int64_t ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates a (C*k*k, Ho*Wo) matrix into a (C, H, W) image.
void col2im(const float* col, std::int64_t channels, std::int64_t h, std::int64_t w, int kh,
            int kw, int stride, int pad, std::int64_t oh, std::int64_t ow, float* img) {
  const std::int64_t cols = oh * ow;
  for (std::int64_t c = 0; c < channels; ++c) {
    float* plane = img + c * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const float* row = col + ((c * kh + ky) * kw + kx) * cols;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          float* dst = plane + iy * w;
          const float* src = row + oy * ow;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_bias(const Var& bias, std::int64_t channels, const char* op) {
  if (!bias.defined()) return;
  const Shape& s = bias.shape();
  if (s.n != 1 || s.c != channels || s.h != 1 || s.w != 1) {
    throw ShapeError(std::string(op) + ": bias dims " + s.str() + " expected (1, " +
                     std::to_string(channels) + ", 1, 1)");
  }
}

void add_bias(Tensor& out, const Var& bias) {
  if (!bias.defined()) return;
  const Shape s = out.shape();
  const float* b = bias.value().ptr();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      float* p = out.plane(n, c);
      for (std::int64_t i = 0; i < s.plane(); ++i) p[i] += b[c];
    }
  }
}

Tensor bias_grad(const Tensor& g) {
  const Shape s = g.shape();
  Tensor out({1, s.c, 1, 1});
  for (std::int64_t c = 0; c < s.c; ++c) {
    double acc = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
      const float* p = g.plane(n, c);
      for (std::int64_t i = 0; i < s.plane(); ++i) acc += p[i];
    }
    out[static_cast<std::size_t>(c)] = static_cast<float>(acc);
  }
  return out;
}

bool wants_grad(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

// Bilinear sampling tables along one axis (half-pixel centers).
struct AxisTaps {
  std::vector<std::int64_t> lo, hi;
  std::vector<double> frac;
};

AxisTaps make_taps(std::int64_t in, std::int64_t out) {
  AxisTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    const double f = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
    t.lo[i] = static_cast<std::int64_t>(f);
    t.hi[i] = std::min(t.lo[i] + 1, in - 1);
    t.frac[i] = f - static_cast<double>(t.lo[i]);
  }
  return t;
}

}  // namespace

Var conv2d(const Var& input, const Var& weight, const Var& bias, Conv2dOptions opt) {
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  if (opt.stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (opt.padding < 0) throw ContractError("conv2d: padding must be >= 0");
  if (ws.h < 1 || ws.w < 1) throw ShapeError("conv2d: kernel dims must be >= 1");
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) +
                     " channels but weight expects " + std::to_string(ws.c) + " (weight dims " +
                     ws.str() + ")");
  }
  check_bias(bias, ws.n, "conv2d");
  const int kh = static_cast<int>(ws.h), kw = static_cast<int>(ws.w);
  const std::int64_t oh = conv_out(xs.h, kh, opt.stride, opt.padding);
  const std::int64_t ow = conv_out(xs.w, kw, opt.stride, opt.padding);
  if (oh < 1 || ow < 1) {
    throw ShapeError("conv2d: kernel " + ws.str() + " does not fit input " + xs.str());
  }
  const std::int64_t K = xs.c * kh * kw;
  const std::int64_t P = oh * ow;
  const bool direct = (kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0);

  Tensor out({xs.n, ws.n, oh, ow});
  std::vector<float> col(direct ? 0 : static_cast<std::size_t>(K * P));
  ConstMatMap W(weight.value().ptr(), ws.n, K);
  for (std::int64_t n = 0; n < xs.n; ++n) {
    const float* src = input.value().plane(n, 0);
    if (!direct) {
      im2col(src, xs.c, xs.h, xs.w, kh, kw, opt.stride, opt.padding, oh, ow, col.data());
    }
    ConstMatMap C(direct ? src : col.data(), K, P);
    MatMap O(out.plane(n, 0), ws.n, P);
    O.noalias() = W * C;
  }
  add_bias(out, bias);

  return make_result(std::move(out), {input, weight, bias}, [=](Node& self) {
    const auto& xn = self.parents[0];
    const auto& wn = self.parents[1];
    const auto& bn = self.parents[2];
    const Tensor& g = self.grad;
    std::vector<float> colbuf(direct ? 0 : static_cast<std::size_t>(K * P));
    Tensor dx;
    if (wants_grad(xn)) dx = Tensor(xs);
    Tensor dw;
    if (wants_grad(wn)) dw = Tensor(ws);
    ConstMatMap Wm(wn->value.ptr(), ws.n, K);
    for (std::int64_t n = 0; n < xs.n; ++n) {
      ConstMatMap G(g.plane(n, 0), ws.n, P);
      const float* src = xn->value.plane(n, 0);
      if (!dw.empty()) {
        if (!direct) {
          im2col(src, xs.c, xs.h, xs.w, kh, kw, opt.stride, opt.padding, oh, ow, colbuf.data());
        }
        ConstMatMap C(direct ? src : colbuf.data(), K, P);
        MatMap DW(dw.ptr(), ws.n, K);
        DW.noalias() += G * C.transpose();
      }
      if (!dx.empty()) {
        if (direct) {
          MatMap DX(dx.plane(n, 0), K, P);
          DX.noalias() = Wm.transpose() * G;
        } else {
          MatMap DC(colbuf.data(), K, P);
          DC.noalias() = Wm.transpose() * G;
          col2im(colbuf.data(), xs.c, xs.h, xs.w, kh, kw, opt.stride, opt.padding, oh, ow,
                 dx.plane(n, 0));
        }
      }
    }
    if (!dx.empty()) xn->accumulate(dx);
    if (!dw.empty()) wn->accumulate(dw);
    if (wants_grad(bn)) bn->accumulate(bias_grad(g));
  });
}

Var transposed_conv2d(const Var& input, const Var& weight, const Var& bias, Conv2dOptions opt) {
  const Shape xs = input.shape();
  const Shape ws = weight.shape();  // (in, out, kh, kw)
  if (opt.stride < 1) throw ContractError("transposed_conv2d: stride must be >= 1");
  if (opt.padding < 0) throw ContractError("transposed_conv2d: padding must be >= 0");
  if (ws.h < 1 || ws.w < 1) throw ShapeError("transposed_conv2d: kernel dims must be >= 1");
  if (ws.n != xs.c) {
    throw ShapeError("transposed_conv2d: input has " + std::to_string(xs.c) +
                     " channels but weight expects " + std::to_string(ws.n) + " (weight dims " +
                     ws.str() + ")");
  }
  check_bias(bias, ws.c, "transposed_conv2d");
  const int kh = static_cast<int>(ws.h), kw = static_cast<int>(ws.w);
  const std::int64_t oh = (xs.h - 1) * opt.stride - 2 * opt.padding + kh;
  const std::int64_t ow = (xs.w - 1) * opt.stride - 2 * opt.padding + kw;
  if (oh < 1 || ow < 1) {
    throw ShapeError("transposed_conv2d: padding too large for input " + xs.str());
  }
  const std::int64_t cout = ws.c;
  const std::int64_t K = cout * kh * kw;
  const std::int64_t P = xs.h * xs.w;

  Tensor out({xs.n, cout, oh, ow});
  std::vector<float> col(static_cast<std::size_t>(K * P));
  ConstMatMap W(weight.value().ptr(), xs.c, K);
  for (std::int64_t n = 0; n < xs.n; ++n) {
    ConstMatMap X(input.value().plane(n, 0), xs.c, P);
    MatMap C(col.data(), K, P);
    C.noalias() = W.transpose() * X;
    col2im(col.data(), cout, oh, ow, kh, kw, opt.stride, opt.padding, xs.h, xs.w,
           out.plane(n, 0));
  }
  add_bias(out, bias);

  return make_result(std::move(out), {input, weight, bias}, [=](Node& self) {
    const auto& xn = self.parents[0];
    const auto& wn = self.parents[1];
    const auto& bn = self.parents[2];
    const Tensor& g = self.grad;
    std::vector<float> colbuf(static_cast<std::size_t>(K * P));
    Tensor dx;
    if (wants_grad(xn)) dx = Tensor(xs);
    Tensor dw;
    if (wants_grad(wn)) dw = Tensor(ws);
    ConstMatMap Wm(wn->value.ptr(), xs.c, K);
    for (std::int64_t n = 0; n < xs.n; ++n) {
      im2col(g.plane(n, 0), cout, oh, ow, kh, kw, opt.stride, opt.padding, xs.h, xs.w,
             colbuf.data());
      ConstMatMap DC(colbuf.data(), K, P);
      if (!dx.empty()) {
        MatMap DX(dx.plane(n, 0), xs.c, P);
        DX.noalias() = Wm * DC;
      }
      if (!dw.empty()) {
        ConstMatMap X(xn->value.plane(n, 0), xs.c, P);
        MatMap DW(dw.ptr(), xs.c, K);
        DW.noalias() += X * DC.transpose();
      }
    }
    if (!dx.empty()) xn->accumulate(dx);
    if (!dw.empty()) wn->accumulate(dw);
    if (wants_grad(bn)) bn->accumulate(bias_grad(g));
  });
}

Var batchnorm(const Var& input, const Var& gamma, const Var& beta, BatchNormStats& stats,
              bool training) {
  const Shape s = input.shape();
  const std::int64_t count = s.n * s.h * s.w;
  if (count == 0) throw ContractError("batchnorm: zero-size batch " + s.str());
  const Shape cs{1, s.c, 1, 1};
  if (gamma.shape() != cs || beta.shape() != cs || stats.running_mean.shape() != cs ||
      stats.running_var.shape() != cs) {
    throw ShapeError("batchnorm: parameter dims do not match " + std::to_string(s.c) +
                     " channels");
  }
  if (!(stats.eps > 0.0)) throw ContractError("batchnorm: epsilon must be > 0");

  std::vector<double> mean(s.c), invstd(s.c);
  for (std::int64_t c = 0; c < s.c; ++c) {
    double mu, var;
    if (training) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < s.n; ++n) {
        const float* p = input.value().plane(n, c);
        for (std::int64_t i = 0; i < s.plane(); ++i) acc += p[i];
      }
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t n = 0; n < s.n; ++n) {
        const float* p = input.value().plane(n, c);
        for (std::int64_t i = 0; i < s.plane(); ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? var * count / static_cast<double>(count - 1) : var;
      auto& rm = stats.running_mean[static_cast<std::size_t>(c)];
      auto& rv = stats.running_var[static_cast<std::size_t>(c)];
      rm = static_cast<float>((1.0 - stats.momentum) * rm + stats.momentum * mu);
      rv = static_cast<float>((1.0 - stats.momentum) * rv + stats.momentum * unbiased);
    } else {
      mu = stats.running_mean[static_cast<std::size_t>(c)];
      var = std::max(0.0, static_cast<double>(stats.running_var[static_cast<std::size_t>(c)]));
    }
    mean[c] = mu;
    invstd[c] = 1.0 / std::sqrt(var + stats.eps);
  }

  Tensor xhat(s);
  Tensor out(s);
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const float* p = input.value().plane(n, c);
      float* xh = xhat.plane(n, c);
      float* o = out.plane(n, c);
      const double g = gamma.value()[static_cast<std::size_t>(c)];
      const double b = beta.value()[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < s.plane(); ++i) {
        const double v = (p[i] - mean[c]) * invstd[c];
        xh[i] = static_cast<float>(v);
        o[i] = static_cast<float>(g * v + b);
      }
    }
  }

  return make_result(std::move(out), {input, gamma, beta},
                     [=, xhat = std::move(xhat)](Node& self) {
    const auto& xn = self.parents[0];
    const auto& gn = self.parents[1];
    const auto& bn = self.parents[2];
    const Tensor& g = self.grad;
    Tensor dgamma(cs), dbeta(cs);
    Tensor dx;
    if (wants_grad(xn)) dx = Tensor(s);
    for (std::int64_t c = 0; c < s.c; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::int64_t n = 0; n < s.n; ++n) {
        const float* gp = g.plane(n, c);
        const float* xh = xhat.plane(n, c);
        for (std::int64_t i = 0; i < s.plane(); ++i) {
          sum_g += gp[i];
          sum_gx += static_cast<double>(gp[i]) * xh[i];
        }
      }
      dgamma[static_cast<std::size_t>(c)] = static_cast<float>(sum_gx);
      dbeta[static_cast<std::size_t>(c)] = static_cast<float>(sum_g);
      if (dx.empty()) continue;
      const double scale = gn->value[static_cast<std::size_t>(c)] * invstd[c];
      const double mg = sum_g / static_cast<double>(count);
      const double mgx = sum_gx / static_cast<double>(count);
      for (std::int64_t n = 0; n < s.n; ++n) {
        const float* gp = g.plane(n, c);
        const float* xh = xhat.plane(n, c);
        float* d = dx.plane(n, c);
        for (std::int64_t i = 0; i < s.plane(); ++i) {
          d[i] = training ? static_cast<float>(scale * (gp[i] - mg - xh[i] * mgx))
                          : static_cast<float>(scale * gp[i]);
        }
      }
    }
    if (!dx.empty()) xn->accumulate(dx);
    if (wants_grad(gn)) gn->accumulate(dgamma);
    if (wants_grad(bn)) bn->accumulate(dbeta);
  });
}

Var relu(const Var& input) {
  Tensor out(input.shape());
  const auto src = input.value().data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
  return make_result(std::move(out), {input}, [](Node& self) {
    const auto& xn = self.parents[0];
    Tensor dx(xn->value.shape());
    const auto x = xn->value.data();
    const auto g = self.grad.data();
    auto d = dx.data();
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] > 0.0f ? g[i] : 0.0f;
    xn->accumulate(dx);
  });
}

Var maxpool2d(const Var& input, int kernel, int stride, int padding) {
  const Shape s = input.shape();
  if (kernel < 1) throw ContractError("maxpool2d: kernel must be >= 1");
  if (stride < 1) throw ContractError("maxpool2d: stride must be >= 1");
  if (padding < 0 || padding >= kernel) {
    throw ContractError("maxpool2d: padding must be in [0, kernel)");
  }
  if (s.h + 2 * padding < kernel || s.w + 2 * padding < kernel) {
    throw ShapeError("maxpool2d: window " + std::to_string(kernel) + " larger than input " +
                     s.str());
  }
  const std::int64_t oh = conv_out(s.h, kernel, stride, padding);
  const std::int64_t ow = conv_out(s.w, kernel, stride, padding);
  Tensor out({s.n, s.c, oh, ow});
  std::vector<std::int32_t> argmax(static_cast<std::size_t>(out.numel()));
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const float* src = input.value().plane(n, c);
      float* dst = out.plane(n, c);
      std::int32_t* am = argmax.data() + out.offset(n, c, 0, 0);
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          std::int64_t best_i = -1;
          for (int ky = 0; ky < kernel; ++ky) {
            const std::int64_t iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= s.h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const std::int64_t ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= s.w) continue;
              const float v = src[iy * s.w + ix];
              if (best_i < 0 || v > best) {
                best = v;
                best_i = iy * s.w + ix;
              }
            }
          }
          dst[oy * ow + ox] = best;
          am[oy * ow + ox] = static_cast<std::int32_t>(best_i);
        }
      }
    }
  }
  const Shape os = out.shape();
  return make_result(std::move(out), {input},
                     [s, os, argmax = std::move(argmax)](Node& self) {
    const auto& xn = self.parents[0];
    Tensor dx(s);
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        const float* g = self.grad.plane(n, c);
        float* d = dx.plane(n, c);
        const std::int32_t* am = argmax.data() + ((n * os.c + c) * os.h) * os.w;
        for (std::int64_t i = 0; i < os.plane(); ++i) d[am[i]] += g[i];
      }
    }
    xn->accumulate(dx);
  });
}

Var gap(const Var& input) {
  const Shape s = input.shape();
  if (s.h * s.w < 1) throw ShapeError("gap: empty spatial extent " + s.str());
  Tensor out({s.n, s.c, 1, 1});
  const double z = static_cast<double>(s.plane());
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const float* p = input.value().plane(n, c);
      double acc = 0.0;
      for (std::int64_t i = 0; i < s.plane(); ++i) acc += p[i];
      out.at(n, c, 0, 0) = static_cast<float>(acc / z);
    }
  }
  return make_result(std::move(out), {input}, [s, z](Node& self) {
    const auto& xn = self.parents[0];
    Tensor dx(s);
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        const float g = static_cast<float>(self.grad.at(n, c, 0, 0) / z);
        float* d = dx.plane(n, c);
        std::fill(d, d + s.plane(), g);
      }
    }
    xn->accumulate(dx);
  });
}

Var linear(const Var& input, const Var& weight, const Var& bias) {
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  if (xs.h != 1 || xs.w != 1) throw ShapeError("linear: input must be (N, K, 1, 1), got " + xs.str());
  if (ws.h != 1 || ws.w != 1 || ws.c != xs.c) {
    throw ShapeError("linear: weight dims " + ws.str() + " do not match " +
                     std::to_string(xs.c) + " input features");
  }
  check_bias(bias, ws.n, "linear");
  const std::int64_t K = xs.c, C = ws.n;
  Tensor out({xs.n, C, 1, 1});
  const float* x = input.value().ptr();
  const float* w = weight.value().ptr();
  for (std::int64_t n = 0; n < xs.n; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      double acc = bias.defined() ? bias.value()[static_cast<std::size_t>(c)] : 0.0;
      for (std::int64_t k = 0; k < K; ++k) acc += static_cast<double>(w[c * K + k]) * x[n * K + k];
      out[static_cast<std::size_t>(n * C + c)] = static_cast<float>(acc);
    }
  }
  return make_result(std::move(out), {input, weight, bias}, [=](Node& self) {
    const auto& xn = self.parents[0];
    const auto& wn = self.parents[1];
    const auto& bn = self.parents[2];
    const float* g = self.grad.ptr();
    const float* xv = xn->value.ptr();
    const float* wv = wn->value.ptr();
    if (wants_grad(xn)) {
      Tensor dx(xs);
      for (std::int64_t n = 0; n < xs.n; ++n) {
        for (std::int64_t k = 0; k < K; ++k) {
          double acc = 0.0;
          for (std::int64_t c = 0; c < C; ++c) acc += static_cast<double>(g[n * C + c]) * wv[c * K + k];
          dx[static_cast<std::size_t>(n * K + k)] = static_cast<float>(acc);
        }
      }
      xn->accumulate(dx);
    }
    if (wants_grad(wn)) {
      Tensor dw(ws);
      for (std::int64_t c = 0; c < C; ++c) {
        for (std::int64_t k = 0; k < K; ++k) {
          double acc = 0.0;
          for (std::int64_t n = 0; n < xs.n; ++n) acc += static_cast<double>(g[n * C + c]) * xv[n * K + k];
          dw[static_cast<std::size_t>(c * K + k)] = static_cast<float>(acc);
        }
      }
      wn->accumulate(dw);
    }
    if (wants_grad(bn)) bn->accumulate(bias_grad(self.grad));
  });
}

Var softmax_channel(const Var& input) {
  const Shape s = input.shape();
  Tensor out(s);
  const std::int64_t hw = s.plane();
  std::vector<double> e(static_cast<std::size_t>(s.c));
  for (std::int64_t n = 0; n < s.n; ++n) {
    const float* x = input.value().plane(n, 0);
    float* y = out.plane(n, 0);
    for (std::int64_t i = 0; i < hw; ++i) {
      double mx = x[i];
      for (std::int64_t c = 1; c < s.c; ++c) mx = std::max(mx, static_cast<double>(x[c * hw + i]));
      double z = 0.0;
      for (std::int64_t c = 0; c < s.c; ++c) {
        e[c] = std::exp(x[c * hw + i] - mx);
        z += e[c];
      }
      for (std::int64_t c = 0; c < s.c; ++c) y[c * hw + i] = static_cast<float>(e[c] / z);
    }
  }
  return make_result(std::move(out), {input}, [s, hw](Node& self) {
    const auto& xn = self.parents[0];
    Tensor dx(s);
    for (std::int64_t n = 0; n < s.n; ++n) {
      const float* y = self.value.plane(n, 0);
      const float* g = self.grad.plane(n, 0);
      float* d = dx.plane(n, 0);
      for (std::int64_t i = 0; i < hw; ++i) {
        double dot = 0.0;
        for (std::int64_t c = 0; c < s.c; ++c) dot += static_cast<double>(y[c * hw + i]) * g[c * hw + i];
        for (std::int64_t c = 0; c < s.c; ++c) {
          d[c * hw + i] = static_cast<float>(y[c * hw + i] * (g[c * hw + i] - dot));
        }
      }
    }
    xn->accumulate(dx);
  });
}

Var upsample_nearest(const Var& input, int factor) {
  if (factor < 1) throw ContractError("upsample_nearest: factor must be >= 1");
  const Shape s = input.shape();
  const Shape os{s.n, s.c, s.h * factor, s.w * factor};
  Tensor out(os);
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const float* src = input.value().plane(n, c);
      float* dst = out.plane(n, c);
      for (std::int64_t y = 0; y < os.h; ++y) {
        const float* row = src + (y / factor) * s.w;
        for (std::int64_t x = 0; x < os.w; ++x) dst[y * os.w + x] = row[x / factor];
      }
    }
  }
  return make_result(std::move(out), {input}, [s, os, factor](Node& self) {
    const auto& xn = self.parents[0];
    Tensor dx(s);
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        const float* g = self.grad.plane(n, c);
        float* d = dx.plane(n, c);
        for (std::int64_t y = 0; y < os.h; ++y) {
          for (std::int64_t x = 0; x < os.w; ++x) d[(y / factor) * s.w + x / factor] += g[y * os.w + x];
        }
      }
    }
    xn->accumulate(dx);
  });
}

Var upsample_bilinear(const Var& input, std::int64_t out_h, std::int64_t out_w) {
  const Shape s = input.shape();
  Tensor out = resize_bilinear(input.value(), out_h, out_w);
  return make_result(std::move(out), {input}, [s, out_h, out_w](Node& self) {
    const auto& xn = self.parents[0];
    const AxisTaps ty = make_taps(s.h, out_h);
    const AxisTaps tx = make_taps(s.w, out_w);
    Tensor dx(s);
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        const float* g = self.grad.plane(n, c);
        float* d = dx.plane(n, c);
        for (std::int64_t y = 0; y < out_h; ++y) {
          const double wy = ty.frac[y];
          for (std::int64_t x = 0; x < out_w; ++x) {
            const double wx = tx.frac[x];
            const double gv = g[y * out_w + x];
            d[ty.lo[y] * s.w + tx.lo[x]] += static_cast<float>(gv * (1 - wy) * (1 - wx));
            d[ty.lo[y] * s.w + tx.hi[x]] += static_cast<float>(gv * (1 - wy) * wx);
            d[ty.hi[y] * s.w + tx.lo[x]] += static_cast<float>(gv * wy * (1 - wx));
            d[ty.hi[y] * s.w + tx.hi[x]] += static_cast<float>(gv * wy * wx);
          }
        }
      }
    }
    xn->accumulate(dx);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape as = a.shape(), bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw ShapeError("concat_channels: " + as.str() + " vs " + bs.str());
  }
  Tensor out({as.n, as.c + bs.c, as.h, as.w});
  const std::int64_t ap = as.c * as.plane(), bp = bs.c * bs.plane();
  for (std::int64_t n = 0; n < as.n; ++n) {
    std::copy_n(a.value().plane(n, 0), ap, out.plane(n, 0));
    std::copy_n(b.value().plane(n, 0), bp, out.plane(n, as.c));
  }
  return make_result(std::move(out), {a, b}, [as, bs, ap, bp](Node& self) {
    const auto& an = self.parents[0];
    const auto& bn = self.parents[1];
    if (wants_grad(an)) {
      Tensor da(as);
      for (std::int64_t n = 0; n < as.n; ++n) std::copy_n(self.grad.plane(n, 0), ap, da.plane(n, 0));
      an->accumulate(da);
    }
    if (wants_grad(bn)) {
      Tensor db(bs);
      for (std::int64_t n = 0; n < as.n; ++n) std::copy_n(self.grad.plane(n, as.c), bp, db.plane(n, 0));
      bn->accumulate(db);
    }
  });
}

Var center_crop(const Var& input, std::int64_t h, std::int64_t w) {
  const Shape s = input.shape();
  if (h == s.h && w == s.w) return input;
  if (h > s.h || w > s.w || h < 1 || w < 1) {
    throw ShapeError("center_crop: cannot crop " + s.str() + " to " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  const std::int64_t oy = (s.h - h) / 2, ox = (s.w - w) / 2;
  Tensor out({s.n, s.c, h, w});
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      for (std::int64_t y = 0; y < h; ++y) {
        std::copy_n(input.value().plane(n, c) + (y + oy) * s.w + ox, w, out.plane(n, c) + y * w);
      }
    }
  }
  return make_result(std::move(out), {input}, [s, h, w, oy, ox](Node& self) {
    const auto& xn = self.parents[0];
    Tensor dx(s);
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        for (std::int64_t y = 0; y < h; ++y) {
          std::copy_n(self.grad.plane(n, c) + y * w, w, dx.plane(n, c) + (y + oy) * s.w + ox);
        }
      }
    }
    xn->accumulate(dx);
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + a.shape().str() + " vs " + b.shape().str());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (const auto& p : self.parents) {
      if (wants_grad(p)) p->accumulate(self.grad);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: " + a.shape().str() + " vs " + b.shape().str());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const auto& an = self.parents[0];
    const auto& bn = self.parents[1];
    if (wants_grad(an)) {
      Tensor d(an->value.shape());
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] = self.grad[i] * bn->value[i];
      an->accumulate(d);
    }
    if (wants_grad(bn)) {
      Tensor d(bn->value.shape());
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] = self.grad[i] * an->value[i];
      bn->accumulate(d);
    }
  });
}

Var scale(const Var& input, float factor) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = input.value()[i] * factor;
  return make_result(std::move(out), {input}, [factor](Node& self) {
    Tensor d(self.grad.shape());
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = self.grad[i] * factor;
    self.parents[0]->accumulate(d);
  });
}

Var sum(const Var& input) {
  double acc = 0.0;
  for (float v : input.value().data()) acc += v;
  Tensor out({1, 1, 1, 1}, static_cast<float>(acc));
  return make_result(std::move(out), {input}, [](Node& self) {
    const auto& xn = self.parents[0];
    xn->accumulate(Tensor(xn->value.shape(), self.grad[0]));
  });
}

Var mean(const Var& input) {
  const auto count = static_cast<double>(input.value().numel());
  if (count == 0) throw ContractError("mean of an empty tensor");
  double acc = 0.0;
  for (float v : input.value().data()) acc += v;
  Tensor out({1, 1, 1, 1}, static_cast<float>(acc / count));
  return make_result(std::move(out), {input}, [count](Node& self) {
    const auto& xn = self.parents[0];
    xn->accumulate(Tensor(xn->value.shape(), static_cast<float>(self.grad[0] / count)));
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Shape s = logits.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("softmax_cross_entropy: logits must be (N, C, 1, 1)");
  if (static_cast<std::int64_t>(labels.size()) != s.n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(s.n));
  }
  if (s.n == 0) throw ContractError("softmax_cross_entropy: empty batch");
  Tensor probs(s);
  double loss = 0.0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= s.c) throw ContractError("softmax_cross_entropy: label out of range");
    const float* x = logits.value().ptr() + n * s.c;
    double mx = x[0];
    for (std::int64_t c = 1; c < s.c; ++c) mx = std::max(mx, static_cast<double>(x[c]));
    double z = 0.0;
    for (std::int64_t c = 0; c < s.c; ++c) z += std::exp(x[c] - mx);
    for (std::int64_t c = 0; c < s.c; ++c) {
      probs[static_cast<std::size_t>(n * s.c + c)] = static_cast<float>(std::exp(x[c] - mx) / z);
    }
    loss += -(x[y] - mx - std::log(z));
  }
  loss /= static_cast<double>(s.n);
  std::vector<int> ys(labels.begin(), labels.end());
  return make_result(Tensor({1, 1, 1, 1}, static_cast<float>(loss)), {logits},
                     [s, ys = std::move(ys), probs = std::move(probs)](Node& self) {
    Tensor d = probs;
    const float g = self.grad[0] / static_cast<float>(s.n);
    for (std::int64_t n = 0; n < s.n; ++n) {
      d[static_cast<std::size_t>(n * s.c + ys[static_cast<std::size_t>(n)])] -= 1.0f;
    }
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= g;
    self.parents[0]->accumulate(d);
  });
}

}  // namespace camforge::nn
