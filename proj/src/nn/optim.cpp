#include "camforge/nn/optim.hpp"

#include <cmath>

#include "camforge/errors.hpp"

namespace camforge::nn {

AdamState::AdamState(std::span<const NamedParameter> params, AdamOptions options)
    : options_(options) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

void adam_step(std::span<NamedParameter> params, AdamState& state, double lr) {
  if (params.size() != state.m_.size()) {
    throw ContractError("adam_step: parameter list does not match optimizer state");
  }
  const auto& o = state.options_;
  ++state.step_;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step_));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var& var = params[k].var;
    Tensor& value = var.mutable_value();
    Tensor& m = state.m_[k];
    Tensor& v = state.v_[k];
    if (m.shape() != value.shape()) throw ShapeError("adam_step: moment dims changed for " + params[k].name);
    const bool has = var.has_grad();
    const double decay = params[k].decay ? o.weight_decay : 0.0;
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double g = has ? var.grad()[i] : 0.0;
      const double mi = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      const double vi = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      const double w = value[i];
      value[i] = static_cast<float>(w - lr * (mhat / (std::sqrt(vhat) + o.eps) + decay * w));
    }
  }
}

void zero_grad(std::span<NamedParameter> params) {
  for (auto& p : params) p.var.zero_grad();
}

PolyScheduler::PolyScheduler(double l_init, double gamma, std::int64_t max_itr)
    : l_init_(l_init), gamma_(gamma), max_itr_(max_itr) {
  if (!(l_init >= 0.0)) throw ConfigError("poly scheduler: l_init must be >= 0");
  if (!(gamma > 0.0)) throw ConfigError("poly scheduler: gamma must be > 0");
  if (max_itr < 1) throw ConfigError("poly scheduler: max_itr must be >= 1");
}

void PolyScheduler::set_itr(std::int64_t itr) {
  if (itr < 0 || itr > max_itr_) {
    throw ContractError("poly scheduler: itr " + std::to_string(itr) + " outside [0, " +
                        std::to_string(max_itr_) + "]");
  }
  itr_ = itr;
}

void PolyScheduler::advance() { set_itr(itr_ + 1); }

double poly_lr(const PolyScheduler& sched) {
  if (sched.itr() > sched.max_itr()) throw ContractError("poly_lr: itr exceeds max_itr");
  const double progress = static_cast<double>(sched.itr()) / static_cast<double>(sched.max_itr());
  return sched.l_init() * std::pow(1.0 - progress, sched.gamma());
}

}  // namespace camforge::nn
