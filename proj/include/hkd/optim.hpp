#pragma once

#include <cmath>
#include <vector>

#include <spdlog/spdlog.h>

#include "hkd/tensor.hpp"

namespace hkd {

struct OptimConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 0.01;
  double clip_norm = 5.0;  // 0 disables clipping
  std::size_t warmup_steps = 0;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("optim: lr must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("optim: betas must be in [0, 1)");
    if (!(eps > 0) || weight_decay < 0 || clip_norm < 0) throw ConfigError("optim: invalid eps, weight decay or clip");
  }
};

struct AdamState {
  std::vector<double> m, v;
};

// One bias-corrected Adam update at step t >= 1 with decoupled decay:
// p -= lr*wd*p, then p -= lr * m_hat / (sqrt(v_hat) + eps).
template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamState& state, const OptimConfig& cfg, double lr,
                 std::size_t t, double grad_scale = 1.0) {
  if (param.size() != grad.size()) throw ShapeError("adam_update: parameter/gradient size mismatch");
  if (t == 0) throw ConfigError("adam_update: step counter starts at 1");
  state.m.resize(param.size(), 0.0);
  state.v.resize(param.size(), 0.0);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]) * grad_scale;
    state.m[i] = cfg.beta1 * state.m[i] + (1 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1 - cfg.beta2) * g * g;
    double p = static_cast<double>(param[i]);
    p -= lr * cfg.weight_decay * p;
    p -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + cfg.eps);
    param[i] = static_cast<T>(p);
  }
}

template <class T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, OptimConfig cfg) : params_(std::move(params)), cfg_(cfg), state_(params_.size()) {
    cfg_.validate();
  }

  std::size_t steps() const { return step_; }

  // Returns false when the step was skipped over a non-finite gradient.
  bool step() {
    double norm2 = 0.0;
    std::vector<std::vector<T>> grads;
    grads.reserve(params_.size());
    for (const auto& p : params_) {
      grads.push_back(p.grad());
      for (const T g : grads.back()) norm2 += static_cast<double>(g) * static_cast<double>(g);
    }
    if (!std::isfinite(norm2)) {
      spdlog::warn("adam: non-finite gradient, skipping step {}", step_ + 1);
      return false;
    }
    const double norm = std::sqrt(norm2);
    const double clip = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    ++step_;
    double lr = cfg_.lr;
    if (cfg_.warmup_steps > 0 && step_ < cfg_.warmup_steps)
      lr *= static_cast<double>(step_) / static_cast<double>(cfg_.warmup_steps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto p = params_[i];
      adam_update<T>(p.value(), grads[i], state_[i], cfg_, lr, step_, clip);
    }
    return true;
  }

 private:
  std::vector<Tensor<T>> params_;
  OptimConfig cfg_;
  std::vector<AdamState> state_;
  std::size_t step_ = 0;
};

}  // namespace hkd
