#pragma once

#include <algorithm>
#include <cstdint>
#include <random>

#include "hkd/tensor.hpp"

namespace hkd {

struct AugmentConfig {
  std::size_t freq_width = 27;
  std::size_t freq_masks = 2;
  std::size_t time_width = 50;
  std::size_t time_masks = 2;
  double p = 1.0;  // probability that an utterance is masked at all

  void validate() const {
    if (p < 0 || p > 1) throw ConfigError("augment: p must be in [0, 1]");
  }
};

// Zeroes random frequency and time bands of X (T x F). Band widths are drawn
// from [0, width] and clipped to the utterance.
template <class T>
Tensor<T> spec_augment(const Tensor<T>& x, const AugmentConfig& cfg, std::uint64_t seed) {
  if (x.rank() != 2) throw ShapeError(detail::describe("spec_augment", {x.shape()}));
  std::vector<T> out(x.data());
  std::mt19937_64 rng(seed);
  if (!std::bernoulli_distribution(cfg.p)(rng)) return Tensor<T>::from(x.shape(), std::move(out));
  const std::size_t frames = x.dim(0), bins = x.dim(1);
  auto band = [&](std::size_t width, std::size_t extent) {
    const std::size_t w = std::min(std::uniform_int_distribution<std::size_t>(0, width)(rng), extent);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, extent - w)(rng);
    return std::pair{start, start + w};
  };
  for (std::size_t m = 0; m < cfg.freq_masks; ++m) {
    const auto [lo, hi] = band(cfg.freq_width, bins);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t f = lo; f < hi; ++f) out[t * bins + f] = T(0);
  }
  for (std::size_t m = 0; m < cfg.time_masks; ++m) {
    const auto [lo, hi] = band(cfg.time_width, frames);
    std::fill(out.begin() + static_cast<long>(lo * bins), out.begin() + static_cast<long>(hi * bins), T(0));
  }
  return Tensor<T>::from(x.shape(), std::move(out));
}

}  // namespace hkd
