#pragma once

// Connectionist temporal classification loss over frame log-probabilities
// with the blank as the last class.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd {

// Frames needed to emit `targets`: one per label plus one blank between repeats.
inline std::size_t ctc_min_frames(const std::vector<int>& targets) {
  std::size_t n = targets.size();
  for (std::size_t i = 1; i < targets.size(); ++i)
    if (targets[i] == targets[i - 1]) ++n;
  return n;
}

namespace detail {

inline double log_add(double a, double b) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace detail

// -log P(targets | frames). `log_probs` is (U x (V+1)), already normalized
// per frame, blank id = V.
template <class T>
Tensor<T> ctc_loss(const Tensor<T>& log_probs, const std::vector<int>& targets) {
  if (log_probs.rank() != 2 || log_probs.dim(1) < 2)
    throw ShapeError(detail::describe("ctc_loss", {log_probs.shape()}));
  const std::size_t frames = log_probs.dim(0), classes = log_probs.dim(1);
  if (frames == 0) throw DataError("CTC length violation: no frames");
  const int blank = static_cast<int>(classes) - 1;
  for (const int t : targets)
    if (t < 0 || t >= blank)
      throw ShapeError("ctc_loss: target id " + std::to_string(t) + " outside [0, " + std::to_string(blank) + ")");
  if (frames < ctc_min_frames(targets))
    throw DataError("CTC length violation: " + std::to_string(frames) + " frames cannot emit " +
                    std::to_string(targets.size()) + " labels");

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<int> ext(2 * targets.size() + 1, blank);
  for (std::size_t i = 0; i < targets.size(); ++i) ext[2 * i + 1] = targets[i];
  const std::size_t states = ext.size();
  auto lp = [&](std::size_t t, int k) { return static_cast<double>(log_probs.data()[t * classes + k]); };
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  // alpha includes the emission at t; beta covers frames after t.
  std::vector<double> alpha(frames * states, kNegInf), beta(frames * states, kNegInf);
  alpha[0] = lp(0, ext[0]);
  if (states > 1) alpha[1] = lp(0, ext[1]);
  for (std::size_t t = 1; t < frames; ++t)
    for (std::size_t s = 0; s < states; ++s) {
      double a = alpha[(t - 1) * states + s];
      if (s >= 1) a = detail::log_add(a, alpha[(t - 1) * states + s - 1]);
      if (can_skip(s)) a = detail::log_add(a, alpha[(t - 1) * states + s - 2]);
      if (a != kNegInf) alpha[t * states + s] = a + lp(t, ext[s]);
    }
  const std::size_t last = (frames - 1) * states;
  beta[last + states - 1] = 0.0;
  if (states > 1) beta[last + states - 2] = 0.0;
  for (std::size_t t = frames - 1; t-- > 0;)
    for (std::size_t s = 0; s < states; ++s) {
      const std::size_t nxt = (t + 1) * states;
      double b = beta[nxt + s] + lp(t + 1, ext[s]);
      if (s + 1 < states) b = detail::log_add(b, beta[nxt + s + 1] + lp(t + 1, ext[s + 1]));
      if (s + 2 < states && can_skip(s + 2)) b = detail::log_add(b, beta[nxt + s + 2] + lp(t + 1, ext[s + 2]));
      beta[t * states + s] = b;
    }
  double log_p = alpha[last + states - 1];
  if (states > 1) log_p = detail::log_add(log_p, alpha[last + states - 2]);
  if (log_p == kNegInf) throw NumericError("ctc_loss: target has zero probability");

  auto grad = std::make_shared<std::vector<double>>(frames * classes, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> acc(classes, kNegInf);
    for (std::size_t s = 0; s < states; ++s)
      acc[ext[s]] = detail::log_add(acc[ext[s]], alpha[t * states + s] + beta[t * states + s]);
    for (std::size_t k = 0; k < classes; ++k)
      if (acc[k] != kNegInf) (*grad)[t * classes + k] = -std::exp(acc[k] - log_p);
  }
  return detail::make_op<T>("ctc_loss", {1}, {static_cast<T>(-log_p)}, {log_probs}, [grad](detail::Node<T>& self) {
    T* g = self.parent_grad(0);
    for (std::size_t i = 0; i < grad->size(); ++i) g[i] += static_cast<T>(self.grad[0] * (*grad)[i]);
  });
}

}  // namespace hkd
