#pragma once

// Hierarchical distillation losses: acoustic contrastive distillation with
// in-batch negatives, the MSE and cosine acoustic alternatives, and
// linguistic regression distillation.

#include <spdlog/spdlog.h>

#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hkd/nn.hpp"
#include "hkd/ops.hpp"
#include "hkd/seed.hpp"

namespace hkd {

enum class AdLossKind { kContrastive, kMse, kCos };

inline const char* to_string(AdLossKind k) {
  switch (k) {
    case AdLossKind::kContrastive: return "CONT";
    case AdLossKind::kMse: return "MSE";
    case AdLossKind::kCos: return "COS";
  }
  return "?";
}

inline AdLossKind parse_ad_loss_kind(const std::string& s) {
  if (s == "CONT" || s == "cont") return AdLossKind::kContrastive;
  if (s == "MSE" || s == "mse") return AdLossKind::kMse;
  if (s == "COS" || s == "cos") return AdLossKind::kCos;
  throw ConfigError("unknown acoustic distillation loss '" + s + "' (expected CONT, MSE or COS)");
}

struct DistillConfig {
  double tau = 0.02;
  std::size_t negatives = 700;
  double alpha_mse = 0.01;
  double alpha_mse_ld = 0.01;
  double alpha_cos = 10.0;
  AdLossKind ad_kind = AdLossKind::kContrastive;

  void validate() const {
    if (!(tau > 0)) throw ConfigError("distill: tau must be > 0");
    if (negatives < 1) throw ConfigError("distill: negative count must be >= 1");
    if (alpha_mse < 0 || alpha_mse_ld < 0 || alpha_cos < 0)
      throw ConfigError("distill: loss weights must be >= 0");
  }
};

// Linear map from the student width to the teacher width.
template <class T>
struct ProjectionHead {
  Linear<T> proj;

  ProjectionHead() = default;
  ProjectionHead(ParamStore<T>& store, const std::string& name, std::size_t student_dim, std::size_t teacher_dim)
      : proj(store, name, student_dim, teacher_dim) {}

  std::size_t teacher_dim() const { return proj.weight.dim(1); }
  Tensor<T> operator()(const Tensor<T>& x) const { return proj(x); }
};

template <class T>
Tensor<T> project_and_normalize(const Tensor<T>& x, const ProjectionHead<T>& head) {
  return l2_normalize(head(x));
}

struct TokenRef {
  std::size_t utterance = 0;
  std::size_t position = 0;
  bool operator==(const TokenRef&) const = default;
};

// Every teacher token of the current batch, flattened in (utterance, position) order.
template <class T>
class BatchTokenPool {
 public:
  explicit BatchTokenPool(const std::vector<Tensor<T>>& teacher) {
    if (teacher.empty()) return;
    dim_ = teacher[0].dim(1);
    for (std::size_t n = 0; n < teacher.size(); ++n) {
      if (teacher[n].rank() != 2 || teacher[n].dim(1) != dim_)
        throw ShapeError("token pool: teacher widths differ across utterances");
      offsets_.push_back(refs_.size());
      for (std::size_t i = 0; i < teacher[n].dim(0); ++i) {
        refs_.push_back({n, i});
        rows_.insert(rows_.end(), teacher[n].data().begin() + i * dim_, teacher[n].data().begin() + (i + 1) * dim_);
      }
    }
  }

  std::size_t size() const { return refs_.size(); }
  std::size_t dim() const { return dim_; }
  const TokenRef& ref(std::size_t k) const { return refs_.at(k); }
  std::size_t index_of(const TokenRef& r) const {
    if (r.utterance >= offsets_.size()) throw ShapeError("token pool: utterance out of range");
    const std::size_t k = offsets_[r.utterance] + r.position;
    if (k >= refs_.size() || !(refs_[k] == r)) throw ShapeError("token pool: position out of range");
    return k;
  }
  std::span<const T> row(std::size_t k) const { return {rows_.data() + k * dim_, dim_}; }

  // Rows `indices` stacked into a (count x D) constant.
  Tensor<T> gather(const std::vector<std::size_t>& indices) const {
    std::vector<T> out;
    out.reserve(indices.size() * dim_);
    for (const auto k : indices) out.insert(out.end(), row(k).begin(), row(k).end());
    return Tensor<T>::matrix(indices.size(), dim_, std::move(out));
  }

 private:
  std::size_t dim_ = 0;
  std::vector<TokenRef> refs_;
  std::vector<std::size_t> offsets_;
  std::vector<T> rows_;
};

struct NegativeSample {
  std::vector<std::size_t> indices;  // into the pool
  bool clamped = false;
};

// Uniform draw without replacement from the pool minus the positive. K is
// clamped (with a warning) when fewer candidates exist.
template <class T>
NegativeSample sample_negatives(const BatchTokenPool<T>& pool, const TokenRef& positive, std::size_t k,
                                std::uint64_t seed, bool warn = true) {
  const std::size_t pos = pool.index_of(positive);
  std::vector<std::size_t> candidates;
  candidates.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (i != pos) candidates.push_back(i);
  if (candidates.empty()) throw DataError("sample_negatives: pool is empty after excluding the positive");
  NegativeSample out;
  if (k > candidates.size()) {
    if (warn)
      spdlog::warn("sample_negatives: requested {} negatives but only {} are available; clamping", k,
                   candidates.size());
    k = candidates.size();
    out.clamped = true;
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  out.indices.assign(candidates.begin(), candidates.begin() + static_cast<long>(k));
  return out;
}

namespace detail {

template <class T>
void check_lengths(const char* op, const std::vector<Tensor<T>>& student, const std::vector<Tensor<T>>& teacher) {
  if (student.size() != teacher.size())
    throw ShapeError(std::string(op) + ": batch sizes differ (" + std::to_string(student.size()) + " vs " +
                     std::to_string(teacher.size()) + ")");
  for (std::size_t n = 0; n < student.size(); ++n)
    if (student[n].shape() != teacher[n].shape())
      throw ShapeError(std::string(op) + ": utterance " + std::to_string(n) + " length mismatch " +
                       shape_str(student[n].shape()) + " vs " + shape_str(teacher[n].shape()));
}

// (1/N) sum_n (1/I_n) * per_utterance[n]
template <class T>
Tensor<T> batch_average(std::vector<Tensor<T>> per_utterance, const std::vector<Tensor<T>>& lengths_from) {
  std::vector<Tensor<T>> terms;
  for (std::size_t n = 0; n < per_utterance.size(); ++n)
    terms.push_back(scale(per_utterance[n], 1.0 / static_cast<double>(lengths_from[n].dim(0))));
  return scale(sum(concat(terms, 0)), 1.0 / static_cast<double>(terms.size()));
}

}  // namespace detail

// -(1/N) sum_n (1/I_n) sum_i log[s(c_i, e_i) / (sum_k s(c_i, e_k^-) + s(c_i, e_i))]
// with s(x, y) = exp(<x, y> / tau). negatives[n][i] is a (K x D) constant.
template <class T>
Tensor<T> acd_contrastive_loss(const std::vector<Tensor<T>>& student, const std::vector<Tensor<T>>& teacher,
                               const std::vector<std::vector<Tensor<T>>>& negatives, double tau) {
  if (!(tau > 0)) throw ConfigError("acd_contrastive_loss: tau must be > 0");
  detail::check_lengths("acd_contrastive_loss", student, teacher);
  if (student.empty()) throw ShapeError("acd_contrastive_loss: empty batch");
  if (negatives.size() != student.size()) throw ShapeError("acd_contrastive_loss: negatives batch size mismatch");
  std::vector<Tensor<T>> per_utt;
  for (std::size_t n = 0; n < student.size(); ++n) {
    const std::size_t len = student[n].dim(0), d = student[n].dim(1);
    if (negatives[n].size() != len) throw ShapeError("acd_contrastive_loss: negatives length mismatch");
    std::vector<Tensor<T>> logp;
    for (std::size_t i = 0; i < len; ++i) {
      const Tensor<T>& neg = negatives[n][i];
      if (neg.rank() != 2 || neg.dim(1) != d)
        throw ShapeError(detail::describe("acd_contrastive_loss", {neg.shape(), student[n].shape()}));
      const std::size_t k = neg.dim(0);
      // Candidates as columns: positive first, then the K negatives.
      std::vector<T> cand((k + 1) * d);
      for (std::size_t j = 0; j < d; ++j) {
        cand[j * (k + 1)] = teacher[n].at(i, j);
        for (std::size_t m = 0; m < k; ++m) cand[j * (k + 1) + 1 + m] = neg.at(m, j);
      }
      const auto candidates = Tensor<T>::matrix(d, k + 1, std::move(cand));
      const auto scores = scale(matmul(slice(student[n], 0, i, i + 1), candidates), 1.0 / tau);
      logp.push_back(slice(reshape(log_softmax(scores), {k + 1}), 0, 0, 1));
    }
    per_utt.push_back(sum(concat(logp, 0)));
  }
  return scale(detail::batch_average(per_utt, student), -1.0);
}

// alpha * (1/N) sum_n (1/I_n) sum_i sum_d (x - e)^2; the feature sum is not averaged.
template <class T>
Tensor<T> acd_mse_loss(const std::vector<Tensor<T>>& projected, const std::vector<Tensor<T>>& teacher,
                       double alpha) {
  detail::check_lengths("acd_mse_loss", projected, teacher);
  if (projected.empty()) throw ShapeError("acd_mse_loss: empty batch");
  std::vector<Tensor<T>> per_utt;
  for (std::size_t n = 0; n < projected.size(); ++n) {
    const auto diff = sub(projected[n], teacher[n]);
    per_utt.push_back(sum(mul(diff, diff)));
  }
  return scale(detail::batch_average(per_utt, projected), alpha);
}

// alpha * (1/N) sum_n (1/I_n) sum_i (1 - cosine(x_i, e_i))
template <class T>
Tensor<T> acd_cos_loss(const std::vector<Tensor<T>>& projected, const std::vector<Tensor<T>>& teacher,
                       double alpha) {
  detail::check_lengths("acd_cos_loss", projected, teacher);
  if (projected.empty()) throw ShapeError("acd_cos_loss: empty batch");
  std::vector<Tensor<T>> per_utt;
  for (std::size_t n = 0; n < projected.size(); ++n) {
    const auto cosines = sum(mul(l2_normalize(projected[n]), l2_normalize(teacher[n])));
    per_utt.push_back(add_scalar(scale(cosines, -1.0), static_cast<double>(projected[n].dim(0))));
  }
  return scale(detail::batch_average(per_utt, projected), alpha);
}

// Linguistic regression distillation on projected decoder states.
template <class T>
Tensor<T> lrd_mse_loss(const std::vector<Tensor<T>>& projected_states, const std::vector<Tensor<T>>& teacher,
                       double alpha) {
  detail::check_lengths("lrd_mse_loss", projected_states, teacher);
  return acd_mse_loss(projected_states, teacher, alpha);
}

// Full acoustic contrastive pipeline for one batch: project and normalize the
// student, normalize the teacher, draw K negatives per position from the
// batch pool, evaluate the loss.
template <class T>
Tensor<T> contrastive_distillation(const std::vector<Tensor<T>>& student_acoustics, const ProjectionHead<T>& head,
                                   const std::vector<Tensor<T>>& teacher, const DistillConfig& cfg,
                                   std::uint64_t seed, bool warn_on_clamp = true) {
  std::vector<Tensor<T>> student_bar, teacher_bar;
  for (const auto& c : student_acoustics) student_bar.push_back(project_and_normalize(c, head));
  {
    NoGradGuard guard;
    for (const auto& e : teacher) teacher_bar.push_back(l2_normalize(e));
  }
  const BatchTokenPool<T> pool(teacher_bar);
  std::vector<std::vector<Tensor<T>>> negatives(teacher.size());
  bool warned = !warn_on_clamp;
  for (std::size_t n = 0; n < teacher.size(); ++n)
    for (std::size_t i = 0; i < teacher[n].dim(0); ++i) {
      const auto sample = sample_negatives(pool, {n, i}, cfg.negatives, mix_seed(seed, n, i), !warned);
      warned = warned || sample.clamped;
      negatives[n].push_back(pool.gather(sample.indices));
    }
  return acd_contrastive_loss(student_bar, teacher_bar, negatives, cfg.tau);
}

}  // namespace hkd
