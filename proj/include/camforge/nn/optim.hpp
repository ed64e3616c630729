#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "camforge/nn/layers.hpp"

namespace camforge::nn {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled, applied to `decay` parameters only
};

// Adam moment buffers, one per parameter in registration order.
class AdamState {
 public:
  explicit AdamState(std::span<const NamedParameter> params, AdamOptions options = {});

  const AdamOptions& options() const { return options_; }
  std::int64_t step_count() const { return step_; }
  const std::vector<Tensor>& first_moment() const { return m_; }
  const std::vector<Tensor>& second_moment() const { return v_; }

 private:
  friend void adam_step(std::span<NamedParameter>, AdamState&, double);
  AdamOptions options_;
  std::int64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

// One bias-corrected Adam update at learning rate `lr`. Parameters without a
// gradient are treated as having a zero gradient.
void adam_step(std::span<NamedParameter> params, AdamState& state, double lr);

void zero_grad(std::span<NamedParameter> params);

// Polynomial learning-rate decay: l_init * (1 - itr / max_itr)^gamma.
class PolyScheduler {
 public:
  PolyScheduler(double l_init, double gamma, std::int64_t max_itr);

  double l_init() const { return l_init_; }
  double gamma() const { return gamma_; }
  std::int64_t max_itr() const { return max_itr_; }
  std::int64_t itr() const { return itr_; }

  void set_itr(std::int64_t itr);
  // Moves to the next iteration; throws past max_itr.
  void advance();

 private:
  double l_init_;
  double gamma_;
  std::int64_t max_itr_;
  std::int64_t itr_ = 0;
};

double poly_lr(const PolyScheduler& sched);

}  // namespace camforge::nn
