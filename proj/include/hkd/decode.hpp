#pragma once

// Greedy and beam search over a generic next-token scorer, the model-driven
// recognizer, and edit-distance error rates.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "hkd/model.hpp"

namespace hkd {

// Log-probabilities over the vocabulary for the next position given the
// tokens emitted so far.
using StepFn = std::function<std::vector<double>(const std::vector<int>& prefix)>;

struct Hypothesis {
  std::vector<int> tokens;  // includes the final <EOS> when one was emitted
  double log_prob = 0.0;
};

inline Hypothesis greedy_search(const StepFn& step, std::size_t max_length, int eos = kEos) {
  Hypothesis hyp;
  while (hyp.tokens.size() < max_length) {
    const auto lp = step(hyp.tokens);
    const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    hyp.tokens.push_back(best);
    hyp.log_prob += lp[static_cast<std::size_t>(best)];
    if (best == eos) break;
  }
  return hyp;
}

// Length-synchronous beam search. Candidates are ranked by score; ties go to
// the larger last-step log-prob, then to earlier beams and lower token ids, so
// beam 1 follows greedy_search exactly.
inline Hypothesis beam_search(const StepFn& step, std::size_t beam, std::size_t max_length, int eos = kEos,
                              bool length_normalize = false) {
  if (beam == 0) throw ConfigError("beam size must be >= 1");
  auto score = [&](const Hypothesis& h) {
    return length_normalize && !h.tokens.empty() ? h.log_prob / static_cast<double>(h.tokens.size()) : h.log_prob;
  };
  struct Candidate {
    Hypothesis hyp;
    double last;
  };
  std::vector<Hypothesis> live{Hypothesis{}}, finished;
  for (std::size_t t = 0; t < max_length && !live.empty(); ++t) {
    std::vector<Candidate> candidates;
    for (const auto& h : live) {
      const auto lp = step(h.tokens);
      for (std::size_t k = 0; k < lp.size(); ++k) {
        Candidate c{h, lp[k]};
        c.hyp.tokens.push_back(static_cast<int>(k));
        c.hyp.log_prob += lp[k];
        candidates.push_back(std::move(c));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [&](const Candidate& x, const Candidate& y) {
      const double sx = score(x.hyp), sy = score(y.hyp);
      return sx != sy ? sx > sy : x.last > y.last;
    });
    live.clear();
    for (auto& c : candidates) {
      if (live.size() == beam) break;
      if (c.hyp.tokens.back() == eos)
        finished.push_back(std::move(c.hyp));
      else
        live.push_back(std::move(c.hyp));
    }
  }
  finished.insert(finished.end(), live.begin(), live.end());
  if (finished.empty()) return {};
  return *std::max_element(finished.begin(), finished.end(),
                           [&](const Hypothesis& x, const Hypothesis& y) { return score(x) < score(y); });
}

// Next-token scorer of the attention decoder over fired acoustics; the
// prefix is preceded by <BOS>.
template <class T>
StepFn decoder_scorer(const AsrModel<T>& model, const Tensor<T>& acoustics) {
  return [&model, acoustics](const std::vector<int>& prefix) {
    NoGradGuard guard;
    std::vector<int> previous{kBos};
    previous.insert(previous.end(), prefix.begin(), prefix.end());
    const auto out = model.decode_step(slice(acoustics, 0, 0, previous.size()), previous);
    const auto lp = log_softmax(slice(out.logits, 0, previous.size() - 1, previous.size()));
    return std::vector<double>(lp.data().begin(), lp.data().end());
  };
}

// Unscaled CIF with tail handling; the fired count bounds the hypothesis length.
template <class T>
Hypothesis recognize(const AsrModel<T>& model, const Tensor<T>& features, std::size_t beam = 1,
                     bool length_normalize = false) {
  NoGradGuard guard;
  const Tensor<T> h = model.encode(features);
  const auto fired = integrate_and_fire(model.cif_weights(h), h, model.config().cif);
  if (fired.plan.tokens == 0) return {};
  return beam_search(decoder_scorer(model, fired.acoustics), beam, fired.plan.tokens, kEos, length_normalize);
}

inline std::vector<int> strip_special(const std::vector<int>& tokens) {
  std::vector<int> out;
  for (const int t : tokens)
    if (t != kPad && t != kEos && t != kBos) out.push_back(t);
  return out;
}

inline std::size_t edit_distance(const std::vector<int>& hyp, const std::vector<int>& ref) {
  std::vector<std::size_t> row(ref.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (hyp[i - 1] == ref[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[ref.size()];
}

inline double error_rate(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) throw DataError("error_rate: empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

// Total edits over total reference length.
struct ErrorCounter {
  std::size_t edits = 0;
  std::size_t reference_length = 0;

  void add(const std::vector<int>& hyp, const std::vector<int>& ref) {
    const auto h = strip_special(hyp), r = strip_special(ref);
    if (r.empty()) throw DataError("error_rate: empty reference");
    edits += edit_distance(h, r);
    reference_length += r.size();
  }
  double rate() const {
    return reference_length == 0 ? 0.0 : static_cast<double>(edits) / static_cast<double>(reference_length);
  }
};

}  // namespace hkd
