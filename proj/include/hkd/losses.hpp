#pragma once

#include <optional>
#include <vector>

#include "hkd/ops.hpp"

namespace hkd {

inline constexpr int kPad = 0;
inline constexpr int kEos = 1;
inline constexpr int kBos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kFirstRegularToken = 4;

struct LossConfig {
  double w_ce = 1.0;
  double w_ctc = 0.5;
  double w_qua = 1.0;
  double label_smoothing = 0.1;
  double lambda_ad = 0.0;
  double lambda_ld = 0.0;

  void validate() const {
    if (w_ce < 0 || w_ctc < 0 || w_qua < 0 || lambda_ad < 0 || lambda_ld < 0)
      throw ConfigError("loss weights must be >= 0");
    if (label_smoothing < 0 || label_smoothing >= 1) throw ConfigError("label smoothing must be in [0, 1)");
  }
};

template <class T>
struct LossBundle {
  Tensor<T> ce, ctc, qua, ad, ld, total;
};

// Mean over non-<PAD> rows of the cross-entropy against a smoothed target:
// mass 1 - eps on the true class and eps / (V - 1) on each other class.
template <class T>
Tensor<T> ce_loss_smoothed(const Tensor<T>& logits, const std::vector<int>& targets, double eps) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size())
    throw ShapeError("ce_loss_smoothed: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (v < 2) throw ShapeError("ce_loss_smoothed: need at least two classes");
  std::vector<T> q(n * v, T(0));
  std::size_t counted = 0;
  const T off = static_cast<T>(eps / static_cast<double>(v - 1));
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= v)
      throw ShapeError("ce_loss_smoothed: target id " + std::to_string(t) + " out of range for V=" + std::to_string(v));
    if (t == kPad) continue;
    ++counted;
    for (std::size_t k = 0; k < v; ++k) q[i * v + k] = off;
    q[i * v + static_cast<std::size_t>(t)] = static_cast<T>(1.0 - eps);
  }
  if (counted == 0) throw ShapeError("ce_loss_smoothed: every target is <PAD>");
  const auto weights = Tensor<T>::matrix(n, v, std::move(q));
  return scale(sum(mul(weights, log_softmax(logits))), -1.0 / static_cast<double>(counted));
}

// total = w_ce*ce + w_ctc*ctc + w_qua*qua + lambda_ad*ad + lambda_ld*ld.
// Absent distillation terms are reported as 0 and left out of the sum.
template <class T>
LossBundle<T> total_loss(const Tensor<T>& ce, const Tensor<T>& ctc, const Tensor<T>& qua,
                         const std::optional<Tensor<T>>& ad, const std::optional<Tensor<T>>& ld,
                         const LossConfig& cfg) {
  LossBundle<T> b{ce, ctc, qua, ad.value_or(Tensor<T>::scalar(0)), ld.value_or(Tensor<T>::scalar(0)), {}};
  Tensor<T> total = add(add(scale(ce, cfg.w_ce), scale(ctc, cfg.w_ctc)), scale(qua, cfg.w_qua));
  if (ad && cfg.lambda_ad > 0) total = add(total, scale(*ad, cfg.lambda_ad));
  if (ld && cfg.lambda_ld > 0) total = add(total, scale(*ld, cfg.lambda_ld));
  b.total = total;
  return b;
}

}  // namespace hkd
