#pragma once

// Primitive differentiable ops. Broadcasting is limited to scalar-tensor
// pairs; anything else needs an explicit reshape or broadcast_rows.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd {

namespace detail {

template <class T>
bool is_scalar(const Tensor<T>& t) {
  return t.numel() == 1;
}

// Result shape for an elementwise binary op, or ShapeError.
template <class T>
Shape binary_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (is_scalar(b)) return a.shape();
  if (is_scalar(a)) return b.shape();
  throw ShapeError(describe(op, {a.shape(), b.shape()}));
}

template <class T>
void require_rank(const char* op, const Tensor<T>& t, std::size_t rank) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
}

// Rows/cols view of a rank-1 or rank-2 tensor; softmax-like ops act on rows.
template <class T>
std::pair<std::size_t, std::size_t> as_rows(const char* op, const Tensor<T>& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Shape shape = detail::binary_shape("add", a, b);
  const std::size_t n = shape_numel(shape);
  const bool sa = a.numel() == 1 && n != 1, sb = b.numel() == 1 && n != 1;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[sa ? 0 : i] + b.data()[sb ? 0 : i];
  return detail::make_op<T>("add", std::move(shape), std::move(out), {a, b},
                            [n, sa, sb](detail::Node<T>& self) {
                              if (T* ga = self.parent_grad(0))
                                for (std::size_t i = 0; i < n; ++i) ga[sa ? 0 : i] += self.grad[i];
                              if (T* gb = self.parent_grad(1))
                                for (std::size_t i = 0; i < n; ++i) gb[sb ? 0 : i] += self.grad[i];
                            });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  Shape shape = detail::binary_shape("sub", a, b);
  const std::size_t n = shape_numel(shape);
  const bool sa = a.numel() == 1 && n != 1, sb = b.numel() == 1 && n != 1;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[sa ? 0 : i] - b.data()[sb ? 0 : i];
  return detail::make_op<T>("sub", std::move(shape), std::move(out), {a, b},
                            [n, sa, sb](detail::Node<T>& self) {
                              if (T* ga = self.parent_grad(0))
                                for (std::size_t i = 0; i < n; ++i) ga[sa ? 0 : i] += self.grad[i];
                              if (T* gb = self.parent_grad(1))
                                for (std::size_t i = 0; i < n; ++i) gb[sb ? 0 : i] -= self.grad[i];
                            });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Shape shape = detail::binary_shape("mul", a, b);
  const std::size_t n = shape_numel(shape);
  const bool sa = a.numel() == 1 && n != 1, sb = b.numel() == 1 && n != 1;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[sa ? 0 : i] * b.data()[sb ? 0 : i];
  return detail::make_op<T>(
      "mul", std::move(shape), std::move(out), {a, b}, [n, sa, sb](detail::Node<T>& self) {
        const auto& av = self.parent_value(0);
        const auto& bv = self.parent_value(1);
        if (T* ga = self.parent_grad(0))
          for (std::size_t i = 0; i < n; ++i) ga[sa ? 0 : i] += self.grad[i] * bv[sb ? 0 : i];
        if (T* gb = self.parent_grad(1))
          for (std::size_t i = 0; i < n; ++i) gb[sb ? 0 : i] += self.grad[i] * av[sa ? 0 : i];
      });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, double s) {
  std::vector<T> out(a.data());
  for (auto& v : out) v = static_cast<T>(v * s);
  return detail::make_op<T>("scale", a.shape(), std::move(out), {a}, [s](detail::Node<T>& self) {
    T* ga = self.parent_grad(0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += static_cast<T>(self.grad[i] * s);
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, double s) {
  std::vector<T> out(a.data());
  for (auto& v : out) v = static_cast<T>(v + s);
  return detail::make_op<T>("add_scalar", a.shape(), std::move(out), {a}, [](detail::Node<T>& self) {
    T* ga = self.parent_grad(0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

namespace detail {

// Unary op where the local derivative is a function of (input, output).
template <class T, class F, class D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D dfdx) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.data()[i]);
  return make_op<T>(op, a.shape(), std::move(out), {a}, [dfdx](Node<T>& self) {
    T* ga = self.parent_grad(0);
    const auto& x = self.parent_value(0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * dfdx(x[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary<T>(
      "sigmoid", a,
      [](T x) {
        return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Tensor<T> reciprocal(const Tensor<T>& a) {
  return detail::unary<T>(
      "reciprocal", a, [](T x) { return T(1) / x; }, [](T, T y) { return -y * y; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

// ---- linear algebra and layout ---------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError(detail::describe("matmul", {a.shape(), b.shape()}));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  const T* av = a.data().data();
  const T* bv = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T x = av[i * k + p];
      if (x == T(0)) continue;
      const T* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += x * brow[j];
    }
  }
  return detail::make_op<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node<T>& self) {
    const T* av = self.parent_value(0).data();
    const T* bv = self.parent_value(1).data();
    const T* g = self.grad.data();
    if (T* ga = self.parent_grad(0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = bv + p * n;
          const T* grow = g + i * n;
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
    if (T* gb = self.parent_grad(1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T x = av[i * k + p];
          if (x == T(0)) continue;
          const T* grow = g + i * n;
          T* gbrow = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += x * grow[j];
        }
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  return detail::make_op<T>("transpose", {c, r}, std::move(out), {a}, [r, c](detail::Node<T>& self) {
    T* ga = self.parent_grad(0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError(detail::describe("reshape", {a.shape(), shape}));
  return detail::make_op<T>("reshape", std::move(shape), a.data(), {a}, [](detail::Node<T>& self) {
    T* ga = self.parent_grad(0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

// (A x B x C) -> (B x A x C).
template <class T>
Tensor<T> swap_leading_axes(const Tensor<T>& x) {
  detail::require_rank("swap_leading_axes", x, 3);
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      std::copy_n(x.data().begin() + (i * b + j) * c, c, out.begin() + (j * a + i) * c);
  return detail::make_op<T>("swap_leading_axes", {b, a, c}, std::move(out), {x}, [a, b, c](detail::Node<T>& self) {
    T* gx = self.parent_grad(0);
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t k = 0; k < c; ++k) gx[(i * b + j) * c + k] += self.grad[(j * a + i) * c + k];
  });
}

// Tiles a length-d vector into `rows` identical rows: (rows x d).
template <class T>
Tensor<T> broadcast_rows(const Tensor<T>& v, std::size_t rows) {
  if (!(v.rank() == 1 || (v.rank() == 2 && v.dim(0) == 1)))
    throw ShapeError(detail::describe("broadcast_rows", {v.shape()}));
  const std::size_t d = v.numel();
  std::vector<T> out(rows * d);
  for (std::size_t r = 0; r < rows; ++r) std::copy(v.data().begin(), v.data().end(), out.begin() + r * d);
  return detail::make_op<T>("broadcast_rows", {rows, d}, std::move(out), {v},
                            [rows, d](detail::Node<T>& self) {
                              T* gv = self.parent_grad(0);
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t j = 0; j < d; ++j) gv[j] += self.grad[r * d + j];
                            });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const bool one_d = parts[0].rank() == 1;
  if (one_d) {
    if (axis != 0) throw ShapeError("concat: axis out of range for rank-1 inputs");
    std::vector<T> out;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
      detail::require_rank("concat", p, 1);
      out.insert(out.end(), p.data().begin(), p.data().end());
      sizes.push_back(p.numel());
    }
    const std::size_t total = out.size();
    return detail::make_op<T>("concat", {total}, std::move(out), parts, [sizes](detail::Node<T>& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < sizes.size(); ++k) {
        if (T* g = self.parent_grad(k))
          for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
        off += sizes[k];
      }
    });
  }
  for (const auto& p : parts) detail::require_rank("concat", p, 2);
  if (axis == 0) {
    const std::size_t c = parts[0].dim(1);
    std::vector<T> out;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
      if (p.dim(1) != c) throw ShapeError(detail::describe("concat", {parts[0].shape(), p.shape()}));
      out.insert(out.end(), p.data().begin(), p.data().end());
      sizes.push_back(p.numel());
    }
    const std::size_t r = out.size() / std::max<std::size_t>(c, 1);
    return detail::make_op<T>("concat", {r, c}, std::move(out), parts, [sizes](detail::Node<T>& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < sizes.size(); ++k) {
        if (T* g = self.parent_grad(k))
          for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
        off += sizes[k];
      }
    });
  }
  if (axis != 1) throw ShapeError("concat: axis out of range");
  const std::size_t r = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != r) throw ShapeError(detail::describe("concat", {parts[0].shape(), p.shape()}));
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(r * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(parts[k].data().begin() + i * widths[k], widths[k], out.begin() + i * total + off);
    off += widths[k];
  }
  return detail::make_op<T>("concat", {r, total}, std::move(out), parts,
                            [r, total, widths](detail::Node<T>& self) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < widths.size(); ++k) {
                                if (T* g = self.parent_grad(k))
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < widths[k]; ++j)
                                      g[i * widths[k] + j] += self.grad[i * total + off + j];
                                off += widths[k];
                              }
                            });
}

// Half-open range [begin, end) along `axis` of a rank-1 or rank-2 tensor.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.rank() || a.rank() > 2 || begin > end || end > a.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape()));
  if (a.rank() == 1 || axis == 0) {
    const std::size_t inner = a.rank() == 1 ? 1 : a.dim(1);
    Shape shape = a.shape();
    shape[0] = end - begin;
    std::vector<T> out(a.data().begin() + begin * inner, a.data().begin() + end * inner);
    const std::size_t off = begin * inner;
    return detail::make_op<T>("slice", std::move(shape), std::move(out), {a}, [off](detail::Node<T>& self) {
      T* ga = self.parent_grad(0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[off + i] += self.grad[i];
    });
  }
  const std::size_t r = a.dim(0), c = a.dim(1), w = end - begin;
  std::vector<T> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(a.data().begin() + i * c + begin, w, out.begin() + i * w);
  return detail::make_op<T>("slice", {r, w}, std::move(out), {a}, [r, c, w, begin](detail::Node<T>& self) {
    T* ga = self.parent_grad(0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * c + begin + j] += self.grad[i * w + j];
  });
}

// ---- reductions --------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (const T v : a.data()) s += v;
  return detail::make_op<T>("sum", {1}, {s}, {a}, [](detail::Node<T>& self) {
    T* ga = self.parent_grad(0);
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// Reduces axis 0 (-> cols) or axis 1 (-> rows) of a matrix.
template <class T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis) {
  detail::require_rank("sum", a, 2);
  if (axis > 1) throw ShapeError("sum: axis out of range");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(axis == 0 ? c : r, T(0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += a.data()[i * c + j];
  const std::size_t n = out.size();
  return detail::make_op<T>("sum_axis", {n}, std::move(out), {a}, [r, c, axis](detail::Node<T>& self) {
    T* ga = self.parent_grad(0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[axis == 0 ? j : i];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis) {
  detail::require_rank("mean", a, 2);
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

// ---- row-wise normalizations ---------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& a) {
  const auto [r, c] = detail::as_rows("softmax", a);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < r; ++i) {
    const T* x = a.data().data() + i * c;
    T* y = out.data() + i * c;
    const T mx = *std::max_element(x, x + c);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  return detail::make_op<T>("softmax", a.shape(), std::move(out), {a}, [r, c](detail::Node<T>& self) {
    T* ga = self.parent_grad(0);
    for (std::size_t i = 0; i < r; ++i) {
      const T* y = self.value.data() + i * c;
      const T* g = self.grad.data() + i * c;
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[j] * (g[j] - dot);
    }
  });
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& a) {
  const auto [r, c] = detail::as_rows("log_softmax", a);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < r; ++i) {
    const T* x = a.data().data() + i * c;
    T* y = out.data() + i * c;
    const T mx = *std::max_element(x, x + c);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(x[j] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) y[j] = x[j] - lz;
  }
  return detail::make_op<T>("log_softmax", a.shape(), std::move(out), {a}, [r, c](detail::Node<T>& self) {
    T* ga = self.parent_grad(0);
    for (std::size_t i = 0; i < r; ++i) {
      const T* y = self.value.data() + i * c;
      const T* g = self.grad.data() + i * c;
      T gs = 0;
      for (std::size_t j = 0; j < c; ++j) gs += g[j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j] - std::exp(y[j]) * gs;
    }
  });
}

// Normalizes each row of x (n x d), then applies gain and bias (d).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps = 1e-5) {
  const auto [r, c] = detail::as_rows("layer_norm", x);
  if (gain.numel() != c || bias.numel() != c)
    throw ShapeError(detail::describe("layer_norm", {x.shape(), gain.shape(), bias.shape()}));
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* xi = x.data().data() + i * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xi[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xi[j] - mu) * is;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  return detail::make_op<T>(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias}, [r, c, xhat, inv_std](detail::Node<T>& self) {
        const auto& gv = self.parent_value(1);
        T* gx = self.parent_grad(0);
        T* gg = self.parent_grad(1);
        T* gb = self.parent_grad(2);
        std::vector<T> dh(c);
        for (std::size_t i = 0; i < r; ++i) {
          const T* g = self.grad.data() + i * c;
          const T* h = xhat->data() + i * c;
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < c; ++j) {
            if (gg) gg[j] += g[j] * h[j];
            if (gb) gb[j] += g[j];
            dh[j] = g[j] * gv[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * h[j];
          }
          if (!gx) continue;
          mean_dh /= static_cast<T>(c);
          mean_dh_h /= static_cast<T>(c);
          for (std::size_t j = 0; j < c; ++j)
            gx[i * c + j] += (*inv_std)[i] * (dh[j] - mean_dh - h[j] * mean_dh_h);
        }
      });
}

// Scales each row (last axis) to unit L2 norm; a zero row is an error.
template <class T>
Tensor<T> l2_normalize(const Tensor<T>& a) {
  const auto [r, c] = detail::as_rows("l2_normalize", a);
  std::vector<T> out(a.numel());
  auto norms = std::make_shared<std::vector<T>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* x = a.data().data() + i * c;
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += x[j] * x[j];
    const T nrm = std::sqrt(s);
    if (!(nrm > 0)) throw NumericError("l2_normalize: zero-norm row " + std::to_string(i));
    (*norms)[i] = nrm;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[j] / nrm;
  }
  return detail::make_op<T>("l2_normalize", a.shape(), std::move(out), {a}, [r, c, norms](detail::Node<T>& self) {
    T* ga = self.parent_grad(0);
    for (std::size_t i = 0; i < r; ++i) {
      const T* y = self.value.data() + i * c;
      const T* g = self.grad.data() + i * c;
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += (g[j] - y[j] * dot) / (*norms)[i];
    }
  });
}

// ---- lookups and convolutions --------------------------------------------------

template <class T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
  detail::require_rank("embedding", table, 2);
  const std::size_t v = table.dim(0), d = table.dim(1), n = ids.size();
  std::vector<T> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table " + shape_str(table.shape()));
    std::copy_n(table.data().begin() + ids[i] * d, d, out.begin() + i * d);
  }
  return detail::make_op<T>("embedding", {n, d}, std::move(out), {table}, [ids, d](detail::Node<T>& self) {
    T* gt = self.parent_grad(0);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[ids[i] * d + j] += self.grad[i * d + j];
  });
}

// 1-D convolution over time, stride 1, zero "same" padding.
// x: (L x Cin), w: (K x Cin x Cout) with K odd, b: (Cout) -> (L x Cout).
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 3 || w.dim(1) != x.dim(1) || w.dim(0) % 2 == 0 || b.numel() != w.dim(2))
    throw ShapeError(detail::describe("conv1d", {x.shape(), w.shape(), b.shape()}));
  const std::size_t len = x.dim(0), cin = x.dim(1), k = w.dim(0), cout = w.dim(2);
  const long half = static_cast<long>(k / 2);
  std::vector<T> out(len * cout);
  for (std::size_t t = 0; t < len; ++t) std::copy(b.data().begin(), b.data().end(), out.begin() + t * cout);
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  for (std::size_t t = 0; t < len; ++t) {
    T* o = out.data() + t * cout;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const long src = static_cast<long>(t) + static_cast<long>(kk) - half;
      if (src < 0 || src >= static_cast<long>(len)) continue;
      for (std::size_t c = 0; c < cin; ++c) {
        const T xs = xv[src * cin + c];
        const T* wr = wv + (kk * cin + c) * cout;
        for (std::size_t j = 0; j < cout; ++j) o[j] += xs * wr[j];
      }
    }
  }
  return detail::make_op<T>(
      "conv1d", {len, cout}, std::move(out), {x, w, b}, [len, cin, k, cout, half](detail::Node<T>& self) {
        const T* xv = self.parent_value(0).data();
        const T* wv = self.parent_value(1).data();
        T* gx = self.parent_grad(0);
        T* gw = self.parent_grad(1);
        T* gb = self.parent_grad(2);
        for (std::size_t t = 0; t < len; ++t) {
          const T* g = self.grad.data() + t * cout;
          if (gb)
            for (std::size_t j = 0; j < cout; ++j) gb[j] += g[j];
          for (std::size_t kk = 0; kk < k; ++kk) {
            const long src = static_cast<long>(t) + static_cast<long>(kk) - half;
            if (src < 0 || src >= static_cast<long>(len)) continue;
            for (std::size_t c = 0; c < cin; ++c) {
              const std::size_t wo = (kk * cin + c) * cout;
              if (gx) {
                T acc = 0;
                for (std::size_t j = 0; j < cout; ++j) acc += g[j] * wv[wo + j];
                gx[src * cin + c] += acc;
              }
              if (gw) {
                const T xs = xv[src * cin + c];
                for (std::size_t j = 0; j < cout; ++j) gw[wo + j] += xs * g[j];
              }
            }
          }
        }
      });
}

// 2-D convolution with zero padding applied before each spatial axis only, so
// a 3x3 kernel at stride 2 with pad 1 maps (H, W) to (floor(H/2), floor(W/2)).
// x: (Cin x H x W) or (H x W) for Cin = 1; w: (Cout x Cin x K x K); b: (Cout).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride = 2,
                 std::size_t pad = 1) {
  const bool flat = x.rank() == 2;
  const std::size_t cin = flat ? 1 : x.dim(0);
  if (!(flat || x.rank() == 3) || w.rank() != 4 || w.dim(1) != cin || w.dim(2) != w.dim(3) ||
      b.numel() != w.dim(0) || stride == 0)
    throw ShapeError(detail::describe("conv2d", {x.shape(), w.shape(), b.shape()}));
  const std::size_t h = flat ? x.dim(0) : x.dim(1), wd = flat ? x.dim(1) : x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (h + pad < k || wd + pad < k) throw ShapeError(detail::describe("conv2d", {x.shape(), w.shape()}));
  const std::size_t ho = (h + pad - k) / stride + 1, wo = (wd + pad - k) / stride + 1;
  std::vector<T> out(cout * ho * wo);
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  const long p = static_cast<long>(pad);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        T acc = b.data()[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t ki = 0; ki < k; ++ki) {
            const long si = static_cast<long>(i * stride + ki) - p;
            if (si < 0 || si >= static_cast<long>(h)) continue;
            for (std::size_t kj = 0; kj < k; ++kj) {
              const long sj = static_cast<long>(j * stride + kj) - p;
              if (sj < 0 || sj >= static_cast<long>(wd)) continue;
              acc += xv[(c * h + si) * wd + sj] * wv[((o * cin + c) * k + ki) * k + kj];
            }
          }
        out[(o * ho + i) * wo + j] = acc;
      }
  return detail::make_op<T>(
      "conv2d", {cout, ho, wo}, std::move(out), {x, w, b},
      [cin, h, wd, cout, k, ho, wo, stride, p](detail::Node<T>& self) {
        const T* xv = self.parent_value(0).data();
        const T* wv = self.parent_value(1).data();
        T* gx = self.parent_grad(0);
        T* gw = self.parent_grad(1);
        T* gb = self.parent_grad(2);
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
              const T g = self.grad[(o * ho + i) * wo + j];
              if (gb) gb[o] += g;
              for (std::size_t c = 0; c < cin; ++c)
                for (std::size_t ki = 0; ki < k; ++ki) {
                  const long si = static_cast<long>(i * stride + ki) - p;
                  if (si < 0 || si >= static_cast<long>(h)) continue;
                  for (std::size_t kj = 0; kj < k; ++kj) {
                    const long sj = static_cast<long>(j * stride + kj) - p;
                    if (sj < 0 || sj >= static_cast<long>(wd)) continue;
                    const std::size_t xi = (c * h + si) * wd + sj;
                    const std::size_t wi = ((o * cin + c) * k + ki) * k + kj;
                    if (gx) gx[xi] += g * wv[wi];
                    if (gw) gw[wi] += g * xv[xi];
                  }
                }
            }
      });
}

// Max over non-overlapping pairs of rows: (L x d) -> (floor(L/2) x d).
template <class T>
Tensor<T> max_pool1d(const Tensor<T>& x) {
  detail::require_rank("max_pool1d", x, 2);
  const std::size_t len = x.dim(0) / 2, d = x.dim(1);
  if (len == 0) throw ShapeError("max_pool1d: input " + shape_str(x.shape()) + " shorter than the window");
  std::vector<T> out(len * d);
  auto arg = std::make_shared<std::vector<std::size_t>>(len * d);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t a = (2 * t) * d + j, b = (2 * t + 1) * d + j;
      const bool first = x.data()[a] >= x.data()[b];
      out[t * d + j] = first ? x.data()[a] : x.data()[b];
      (*arg)[t * d + j] = first ? a : b;
    }
  return detail::make_op<T>("max_pool1d", {len, d}, std::move(out), {x}, [arg](detail::Node<T>& self) {
    T* gx = self.parent_grad(0);
    for (std::size_t i = 0; i < arg->size(); ++i) gx[(*arg)[i]] += self.grad[i];
  });
}

}  // namespace hkd
