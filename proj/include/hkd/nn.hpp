#pragma once

// Parameter storage and the small layers shared by encoder, CIF and decoder.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hkd/ops.hpp"

namespace hkd {

enum class Init { kZeros, kOnes, kUniform };

// Named, ordered trainable tensors. Initial values are drawn in double and
// cast, so float and double stores built with the same seed agree.
template <class T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> create(const std::string& name, Shape shape, Init init, double bound = 0.0) {
    for (const auto& [n, _] : entries_)
      if (n == name) throw ConfigError("parameter registered twice: " + name);
    const std::size_t count = shape_numel(shape);
    std::vector<T> data(count, T(0));
    if (init == Init::kOnes) std::fill(data.begin(), data.end(), T(1));
    if (init == Init::kUniform) {
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : data) v = static_cast<T>(dist(rng_));
    }
    auto t = Tensor<T>::from(std::move(shape), std::move(data), true);
    entries_.emplace_back(name, t);
    return t;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }

  Tensor<T> get(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return t;
    throw ConfigError("unknown parameter: " + name);
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

 private:
  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

inline double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <class T>
struct Linear {
  Tensor<T> weight;  // (in x out)
  Tensor<T> bias;    // (out), may be undefined

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, double gain = 1.0,
         bool with_bias = true)
      : weight(store.create(name + ".weight", {in, out}, Init::kUniform, gain * xavier_bound(in, out))) {
    if (with_bias) bias = store.create(name + ".bias", {out}, Init::kZeros);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const Tensor<T> y = matmul(x, weight);
    return bias.defined() ? add(y, broadcast_rows(bias, x.dim(0))) : y;
  }
};

template <class T>
struct LayerNorm {
  Tensor<T> gain, bias;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t d)
      : gain(store.create(name + ".gain", {d}, Init::kOnes)), bias(store.create(name + ".bias", {d}, Init::kZeros)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

template <class T>
struct FeedForward {
  Linear<T> up, down;

  FeedForward() = default;
  FeedForward(ParamStore<T>& store, const std::string& name, std::size_t d, std::size_t hidden)
      : up(store, name + ".up", d, hidden), down(store, name + ".down", hidden, d) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return down(relu(up(x))); }
};

// Additive mask that blocks attention to future positions.
template <class T>
Tensor<T> causal_mask(std::size_t n) {
  std::vector<T> m(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = T(-1e9);
  return Tensor<T>::matrix(n, n, std::move(m));
}

template <class T>
struct MultiHeadAttention {
  Linear<T> query, key, val, out;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, std::size_t d, std::size_t h)
      : query(store, name + ".q", d, d),
        key(store, name + ".k", d, d, 1.0, false),  // a key bias cannot change the softmax
        val(store, name + ".v", d, d),
        out(store, name + ".o", d, d),
        heads(h) {
    if (h == 0 || d % h != 0) throw ConfigError("attention width " + std::to_string(d) + " not divisible by heads");
  }

  Tensor<T> operator()(const Tensor<T>& x, bool causal) const {
    const std::size_t n = x.dim(0), d = x.dim(1), dh = d / heads;
    const Tensor<T> q = query(x), k = key(x), v = val(x);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor<T>> parts;
    parts.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const auto qh = slice(q, 1, hd * dh, (hd + 1) * dh);
      const auto kh = slice(k, 1, hd * dh, (hd + 1) * dh);
      const auto vh = slice(v, 1, hd * dh, (hd + 1) * dh);
      auto scores = scale(matmul(qh, transpose(kh)), inv);
      if (causal) scores = add(scores, causal_mask<T>(n));
      parts.push_back(matmul(softmax(scores), vh));
    }
    return out(heads == 1 ? parts[0] : concat(parts, 1));
  }
};

// Fixed sinusoidal position table (n x d).
template <class T>
Tensor<T> positional_encoding(std::size_t n, std::size_t d) {
  std::vector<T> pe(n * d);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe[pos * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate));
    }
  return Tensor<T>::matrix(n, d, std::move(pe));
}

}  // namespace hkd
