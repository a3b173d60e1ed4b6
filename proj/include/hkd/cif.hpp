#pragma once

// Continuous integrate-and-fire: per-step weights, training-time scaling,
// accumulate/fire with boundary splitting, tail handling, quantity loss.

#include <cmath>
#include <string>
#include <vector>

#include "hkd/nn.hpp"
#include "hkd/ops.hpp"

namespace hkd {

struct CifConfig {
  double beta = 1.0;
  // A leftover accumulator of at least tail_threshold * beta fires one more token.
  double tail_threshold = 0.5;
  bool tail_handling = true;
  // Lets a single step whose weight exceeds the remaining capacity fire more
  // than once. Off: such a step is an error.
  bool allow_multi_fire = false;
  std::size_t conv_kernel = 3;

  void validate() const {
    if (!(beta > 0)) throw ConfigError("cif: beta must be > 0");
    if (!(tail_threshold > 0 && tail_threshold <= 1)) throw ConfigError("cif: tail_threshold must be in (0, 1]");
    if (conv_kernel % 2 == 0) throw ConfigError("cif: conv kernel must be odd");
  }
};

// How encoder steps are allocated to fired tokens.
//
// Token i owns the slice [(i-1)*beta, i*beta) of the running weight sum, so
// entry (u, i) is the overlap of [P(u-1), P(u)] with that slice, where P is
// the prefix sum of the weights. Each entry records which of its two bounds
// move with the prefix sums; backward differentiates through those values
// with the firing pattern held fixed.
struct FiringPlan {
  struct Entry {
    std::size_t step = 0;
    std::size_t token = 0;
    double weight = 0.0;
    bool upper_tracks_prefix = true;  // upper bound is P(step); else token * beta
    bool lower_tracks_prefix = true;  // lower bound is P(step - 1); else (token - 1) * beta
  };

  std::size_t steps = 0;
  std::size_t tokens = 0;
  std::vector<std::size_t> firing_steps;
  std::vector<Entry> entries;
  bool tail_fired = false;
  double residual = 0.0;

  // Dense (steps x tokens) allocation matrix, row-major.
  std::vector<double> allocation() const {
    std::vector<double> m(steps * tokens, 0.0);
    for (const auto& e : entries) m[e.step * tokens + e.token] += e.weight;
    return m;
  }
};

// Builds the firing plan for a weight sequence by scanning the steps in
// order. Firing happens once the accumulator reaches beta (>=).
inline FiringPlan plan_firing(std::span<const double> a, const CifConfig& cfg) {
  cfg.validate();
  FiringPlan plan;
  plan.steps = a.size();
  double acc = 0.0;
  std::size_t open_begin = 0;  // first entry index of the open token
  for (std::size_t u = 0; u < a.size(); ++u) {
    const double w = a[u];
    if (!(w >= 0)) throw NumericError("cif: negative or NaN weight at step " + std::to_string(u));
    if (!cfg.allow_multi_fire && w > cfg.beta)
      throw NumericError("cif: weight exceeds beta at step " + std::to_string(u) + " (" + std::to_string(w) + ")");
    double remaining = w;
    bool first_in_step = true;
    while (acc + remaining >= cfg.beta) {
      const double part = cfg.beta - acc;
      plan.entries.push_back({u, plan.tokens, part, false, first_in_step});
      plan.firing_steps.push_back(u);
      ++plan.tokens;
      open_begin = plan.entries.size();
      remaining -= part;
      acc = 0.0;
      first_in_step = false;
    }
    if (remaining > 0) {
      plan.entries.push_back({u, plan.tokens, remaining, true, first_in_step});
      acc += remaining;
    }
  }
  plan.residual = acc;
  if (cfg.tail_handling && acc > 0 && acc >= cfg.tail_threshold * cfg.beta) {
    plan.firing_steps.push_back(a.size() - 1);
    ++plan.tokens;
    plan.tail_fired = true;
  } else {
    plan.entries.resize(open_begin);
  }
  return plan;
}

template <class T>
struct CifOutput {
  Tensor<T> acoustics;  // (tokens x d)
  FiringPlan plan;
};

// Integrates H (U x d) with weights a (U) into one vector per fired token.
// The weighted sums are accumulated while scanning; the allocation values
// are differentiable in both a and H.
template <class T>
CifOutput<T> integrate_and_fire(const Tensor<T>& a, const Tensor<T>& h, const CifConfig& cfg) {
  if (a.rank() != 1 || h.rank() != 2 || a.dim(0) != h.dim(0))
    throw ShapeError(detail::describe("integrate_and_fire", {a.shape(), h.shape()}));
  const std::size_t steps = h.dim(0), d = h.dim(1);
  const std::vector<double> weights(a.data().begin(), a.data().end());
  FiringPlan plan = plan_firing(weights, cfg);
  std::vector<T> c(plan.tokens * d, T(0));
  for (const auto& e : plan.entries) {
    const T w = static_cast<T>(e.weight);
    const T* hu = h.data().data() + e.step * d;
    T* ci = c.data() + e.token * d;
    for (std::size_t j = 0; j < d; ++j) ci[j] += w * hu[j];
  }
  auto shared = std::make_shared<const FiringPlan>(plan);
  Tensor<T> out = detail::make_op<T>(
      "integrate_and_fire", {plan.tokens, d}, std::move(c), {a, h}, [shared, steps, d](detail::Node<T>& self) {
        const auto& hv = self.parent_value(1);
        T* ga = self.parent_grad(0);
        T* gh = self.parent_grad(1);
        std::vector<double> dprefix(steps, 0.0);
        for (const auto& e : shared->entries) {
          const T* g = self.grad.data() + e.token * d;
          if (gh) {
            const T w = static_cast<T>(e.weight);
            for (std::size_t j = 0; j < d; ++j) gh[e.step * d + j] += w * g[j];
          }
          if (ga) {
            double dw = 0.0;
            for (std::size_t j = 0; j < d; ++j) dw += static_cast<double>(g[j]) * hv[e.step * d + j];
            if (e.upper_tracks_prefix) dprefix[e.step] += dw;
            if (e.lower_tracks_prefix && e.step > 0) dprefix[e.step - 1] -= dw;
          }
        }
        if (ga) {
          double suffix = 0.0;
          for (std::size_t u = steps; u-- > 0;) {
            suffix += dprefix[u];
            ga[u] += static_cast<T>(suffix);
          }
        }
      });
  return {std::move(out), std::move(plan)};
}

// a' = a * (I * beta / sum(a)); the factor is part of the graph.
template <class T>
Tensor<T> scale_weights(const Tensor<T>& a, std::size_t target_length, const CifConfig& cfg) {
  if (target_length == 0) throw ConfigError("scale_weights: target length must be >= 1");
  const Tensor<T> total = sum(a);
  if (!(total.item() > 0)) throw NumericError("scale_weights: degenerate weights (sum is zero)");
  const double target = static_cast<double>(target_length) * cfg.beta;
  const Tensor<T> factor = scale(reciprocal(total), target);
  Tensor<T> scaled = mul(a, factor);
  if (!cfg.allow_multi_fire)
    for (std::size_t u = 0; u < scaled.numel(); ++u)
      if (scaled.at(u) > cfg.beta)
        throw NumericError("scale_weights: weight exceeds beta after scaling at step " + std::to_string(u));
  return scaled;
}

// |sum(a) - I| on unscaled weights.
template <class T>
Tensor<T> quantity_loss(const Tensor<T>& a, std::size_t target_length) {
  return abs(add_scalar(sum(a), -static_cast<double>(target_length)));
}

// sigmoid(FC(conv1d(H))): one weight in (0, 1) per encoder step.
template <class T>
struct CifWeightPredictor {
  Tensor<T> conv_weight, conv_bias;
  Linear<T> fc;

  CifWeightPredictor() = default;
  CifWeightPredictor(ParamStore<T>& store, const std::string& name, std::size_t d, std::size_t channels,
                     std::size_t kernel = 3)
      : conv_weight(store.create(name + ".conv.weight", {kernel, d, channels}, Init::kUniform,
                                 xavier_bound(kernel * d, channels))),
        conv_bias(store.create(name + ".conv.bias", {channels}, Init::kZeros)),
        fc(store, name + ".fc", channels, 1) {}

  Tensor<T> operator()(const Tensor<T>& h) const {
    const Tensor<T> logits = fc(conv1d(h, conv_weight, conv_bias));
    return reshape(sigmoid(logits), {h.dim(0)});
  }
};

}  // namespace hkd
