#pragma once

// Finite-difference checks for every differentiable loss and for the
// assembled training objective, all in double precision.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hkd/cif.hpp"
#include "hkd/ctc.hpp"
#include "hkd/distill.hpp"
#include "hkd/gradcheck.hpp"
#include "hkd/losses.hpp"
#include "hkd/model.hpp"
#include "hkd/teacher.hpp"

namespace hkd {

struct SuiteResult {
  std::string name;
  GradCheckReport report;
};

namespace detail {

inline Tensor<double> random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                                    bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

// Weights whose prefix sums stay at least `margin` away from every multiple
// of beta, so small perturbations cannot move a firing.
inline Tensor<double> firing_safe_weights(std::mt19937_64& rng, std::size_t steps, double margin = 0.02) {
  for (;;) {
    auto a = random_tensor(rng, {steps}, 0.15, 0.95);
    double prefix = 0.0;
    bool ok = true;
    for (const double w : a.data()) {
      prefix += w;
      const double frac = prefix - std::floor(prefix);
      ok = ok && frac > margin && frac < 1.0 - margin;
    }
    if (ok && prefix - std::floor(prefix) > 0.5 + margin) return a;
  }
}

}  // namespace detail

inline std::vector<SuiteResult> run_gradient_suite(std::uint64_t seed = 11, double tol = 1e-3) {
  using detail::random_tensor;
  std::mt19937_64 rng(seed);
  std::vector<SuiteResult> out;
  auto run = [&](std::string name, const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params,
                 double h = 1e-6) { out.push_back({std::move(name), grad_check(f, std::move(params), h, tol)}); };

  {
    CifConfig cif;
    const auto a = detail::firing_safe_weights(rng, 9);
    const auto h = random_tensor(rng, {9, 4});
    const auto r = random_tensor(rng, {4, 4}, -1.0, 1.0, false);
    run("cif_integrate_and_fire", [=] {
      const auto c = integrate_and_fire(a, h, cif).acoustics;
      return sum(mul(slice(c, 0, 0, 4), r));
    }, {a, h});
  }
  {
    const auto a = random_tensor(rng, {6}, 0.1, 0.9);
    run("quantity_loss", [=] { return quantity_loss(a, 5); }, {a});
  }

  ParamStore<double> heads(seed);
  const ProjectionHead<double> head(heads, "head", 6, 5);
  const std::vector<std::size_t> lengths = {3, 2};
  std::vector<Tensor<double>> student, teacher;
  for (const auto len : lengths) {
    student.push_back(random_tensor(rng, {len, 6}));
    teacher.push_back(random_tensor(rng, {len, 5}, -1.0, 1.0, false));
  }
  std::vector<Tensor<double>> distill_params = student;
  distill_params.push_back(head.proj.weight);
  distill_params.push_back(head.proj.bias);
  auto projected = [=] {
    std::vector<Tensor<double>> p;
    for (const auto& s : student) p.push_back(head(s));
    return p;
  };
  {
    DistillConfig cfg;
    cfg.tau = 0.1;
    cfg.negatives = 3;
    run("acd_contrastive_loss", [=] { return contrastive_distillation(student, head, teacher, cfg, seed, false); },
        distill_params);
  }
  run("acd_mse_loss", [=] { return acd_mse_loss(projected(), teacher, 0.01); }, distill_params);
  run("acd_cos_loss", [=] { return acd_cos_loss(projected(), teacher, 10.0); }, distill_params);
  run("lrd_mse_loss", [=] { return lrd_mse_loss(projected(), teacher, 0.01); }, distill_params);
  {
    const auto logits = random_tensor(rng, {6, 5}, -2.0, 2.0);
    run("ctc_loss", [=] { return ctc_loss(log_softmax(logits), {1, 2, 2}); }, {logits});
  }
  {
    const auto logits = random_tensor(rng, {5, 6}, -2.0, 2.0);
    run("ce_loss_smoothed", [=] { return ce_loss_smoothed(logits, {4, 5, 1, kPad, 3}, 0.1); }, {logits});
  }
  {
    ModelConfig mc;
    mc.d_model = 8;
    mc.heads = 2;
    mc.encoder_blocks = 1;
    mc.decoder_blocks = 1;
    mc.ffn_multiplier = 2;
    mc.frontend_channels = 2;
    mc.vocab = 8;
    mc.teacher_dim = 4;
    mc.seed = seed;
    auto model = std::make_shared<AsrModel<double>>(mc);
    const SyntheticTeacher synth(mc.vocab, mc.teacher_dim, seed);
    std::vector<BatchItem<double>> batch;
    const std::vector<std::pair<std::size_t, std::vector<int>>> shapes = {{32, {4, 6, kEos}}, {24, {5, kEos}}};
    for (std::size_t n = 0; n < shapes.size(); ++n) {
      const auto x = random_tensor(rng, {shapes[n].first, mc.feature_dim}, -1.0, 1.0, false);
      batch.push_back({x, shapes[n].second, synth.sequence("u" + std::to_string(n), shapes[n].second).tensor<double>()});
    }
    LossConfig lc;
    lc.lambda_ad = 1.0;
    lc.lambda_ld = 1.0;
    DistillConfig dc;
    dc.tau = 0.1;
    run("total_loss_micro_batch",
        [=] { return forward_batch(*model, batch, lc, dc, seed).losses.total; }, model->params().tensors(), 1e-5);
  }
  return out;
}

}  // namespace hkd
