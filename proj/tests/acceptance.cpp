// Acceptance run: one PASS/FAIL line per criterion, INFO lines for numbers
// that are reported but not asserted. Exit status is the number of FAIL lines.
//
// usage: acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hkd/hkd.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using hkd::Tensor;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %-28s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

void info(const std::string& name, const std::string& detail) {
  std::printf("INFO %-28s %s\n", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

void gradient_suite() {
  Stopwatch clock;
  const auto results = hkd::run_gradient_suite(11, 1e-3);
  const double secs = clock.seconds();
  std::size_t passed = 0;
  double worst = 0;
  std::string failed;
  for (const auto& r : results) {
    passed += r.report.passed;
    worst = std::max(worst, r.report.max_rel_error);
    if (!r.report.passed) failed += " " + r.name;
  }
  report("gradient_suite", passed == results.size() && secs < 120,
         fmt::format("{}/{} checks, max rel err {:.2e}, {:.1f} s{}", passed, results.size(), worst, secs,
                     failed.empty() ? "" : ", failed:" + failed));
}

void cif_firing() {
  Stopwatch clock;
  std::mt19937_64 rng(2718);
  std::uniform_int_distribution<std::size_t> steps(1, 80);
  std::uniform_real_distribution<double> weight(0.0, 1.0);
  const hkd::CifConfig cfg = hkd::ModelConfig{}.cif;
  std::size_t exact = 0;
  double worst_col = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t u = steps(rng);
    std::vector<double> a(u);
    for (auto& w : a) w = weight(rng);
    a[0] += 1e-3;  // keep the sum away from zero
    const std::size_t target = std::uniform_int_distribution<std::size_t>(1, u)(rng);
    const auto scaled = hkd::scale_weights(Tensor<double>::vector(a), target, cfg);
    const auto plan = hkd::plan_firing(std::vector<double>(scaled.data().begin(), scaled.data().end()), cfg);
    exact += plan.tokens == target;
    const auto m = plan.allocation();
    for (std::size_t i = 0; i < plan.tokens; ++i) {
      double col = 0;
      for (std::size_t s = 0; s < u; ++s) col += m[s * plan.tokens + i];
      worst_col = std::max(worst_col, std::abs(col - cfg.beta));
    }
  }
  const double secs = clock.seconds();
  report("cif_firing_invariant", exact == 1000 && worst_col <= 1e-4 && secs < 10,
         fmt::format("{}/1000 exact counts, max |column sum - beta| {:.2e}, {:.2f} s", exact, worst_col, secs));
}

void ctc_oracle() {
  Stopwatch clock;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0, 1.5);
  std::size_t matched = 0, total = 0;
  double worst = 0;
  for (std::size_t frames = 1; frames <= 4; ++frames)
    for (std::size_t labels = 1; labels <= 3; ++labels) {
      const std::size_t classes = labels + 1;
      std::vector<double> logits(frames * classes);
      for (auto& x : logits) x = g(rng);
      const auto lp = hkd::log_softmax(Tensor<double>::matrix(frames, classes, logits));
      std::vector<std::vector<int>> targets{{}};
      for (std::size_t a = 0; a < labels; ++a) {
        targets.push_back({static_cast<int>(a)});
        for (std::size_t b = 0; b < labels; ++b) targets.push_back({static_cast<int>(a), static_cast<int>(b)});
      }
      for (const auto& target : targets) {
        ++total;
        const double p = oracle::ctc_brute_force(lp.data(), frames, classes, target);
        if (p == 0.0) {
          try {
            hkd::ctc_loss(lp, target);
          } catch (const hkd::DataError&) {
            ++matched;
          }
          continue;
        }
        const double err = std::abs(hkd::ctc_loss(lp, target).item() + std::log(p));
        worst = std::max(worst, err);
        matched += err <= 1e-5;
      }
    }
  const double secs = clock.seconds();
  report("ctc_oracle", matched == total && secs < 30,
         fmt::format("{}/{} instances, max |diff| {:.2e}, {:.2f} s", matched, total, worst, secs));
}

Tensor<double> unit_rows(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> g(0, 1);
  std::vector<double> v(n * d);
  for (auto& x : v) x = g(rng);
  return hkd::l2_normalize(Tensor<double>::matrix(n, d, v));
}

void contrastive() {
  const double closed = hkd::acd_contrastive_loss<double>({Tensor<double>::matrix(1, 2, {1, 0})},
                                                          {Tensor<double>::matrix(1, 2, {1, 0})},
                                                          {{Tensor<double>::matrix(1, 2, {-1, 0})}}, 1.0)
                            .item();
  const double closed_err = std::abs(closed - std::log1p(std::exp(-2.0)));
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> count(1, 4), len(1, 6), dim(2, 16), k(1, 8);
  std::uniform_real_distribution<double> tau(0.02, 2.0);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = count(rng), d = dim(rng);
    std::vector<Tensor<double>> s, e;
    std::vector<std::vector<Tensor<double>>> neg(n);
    for (std::size_t u = 0; u < n; ++u) {
      const std::size_t l = len(rng);
      s.push_back(unit_rows(rng, l, d));
      e.push_back(unit_rows(rng, l, d));
      for (std::size_t i = 0; i < l; ++i) neg[u].push_back(unit_rows(rng, k(rng), d));
    }
    const double t = tau(rng);
    worst = std::max(worst, std::abs(hkd::acd_contrastive_loss(s, e, neg, t).item() - oracle::contrastive(s, e, neg, t)));
  }
  report("contrastive_closed_form", closed_err <= 1e-5 && worst <= 1e-5,
         fmt::format("closed form {:.6f} (err {:.1e}), 100 random batches max |diff| {:.1e}", closed, closed_err,
                     worst));
}

hkd::RunConfig base_run(const fs::path& data, const fs::path& out) {
  hkd::RunConfig cfg;
  cfg.data_dir = data.string();
  cfg.output_dir = out.string();
  return cfg;
}

void overfit(const fs::path& work, const fs::path& data) {
  auto cfg = base_run(data, work / "overfit");
  cfg.epochs = 200;
  cfg.eval_every = 5;
  cfg.stop_train_cer = 0.05;
  Stopwatch clock;
  hkd::Trainer trainer(cfg);
  const auto r = trainer.run();
  const double secs = clock.seconds();
  report("overfit", r.final_train_cer < 0.05 && secs < 600,
         fmt::format("train CER {:.4f} after {} epochs, {:.1f} s", r.final_train_cer, r.epochs.size(), secs));
  std::size_t falling = 0;
  for (std::size_t e = 1; e < r.epochs.size(); ++e) falling += r.epochs[e].mean_total < r.epochs[e - 1].mean_total;
  const std::size_t pairs = r.epochs.size() - 1;
  info("overfit.loss_trend", fmt::format("mean total loss fell in {}/{} consecutive epoch pairs ({:.0f}%)", falling,
                                         pairs, pairs ? 100.0 * falling / pairs : 0.0));
}

void distillation_pull(const fs::path& work, const fs::path& data) {
  auto cfg = base_run(data, work / "pull");
  cfg.epochs = 200;
  cfg.eval_every = 200;
  cfg.teacher = hkd::TeacherSource::kSynthetic;
  cfg.loss.lambda_ad = 1.0;
  cfg.loss.lambda_ld = 1.0;
  cfg.optim.lr = 1e-3;
  Stopwatch clock;
  hkd::Trainer trainer(cfg);
  const auto& dev = trainer.corpus().dev;
  const auto before = hkd::distill_probe(trainer.model(), dev.data, *dev.teacher);
  trainer.run();
  const auto after = hkd::distill_probe(trainer.model(), dev.data, *dev.teacher);
  const double secs = clock.seconds();
  report("distillation_pull.cosine", before.mean_cosine < 0.3 && after.mean_cosine > 0.8,
         fmt::format("dev mean cosine {:.3f} -> {:.3f} (need < 0.3 -> > 0.8), {} epochs, lr {}, {:.1f} s",
                     before.mean_cosine, after.mean_cosine, cfg.epochs, cfg.optim.lr, secs));
  const double ratio = before.lrd_mse / after.lrd_mse;
  report("distillation_pull.lrd_mse", ratio >= 5.0,
         fmt::format("dev per-dim MSE {:.4f} -> {:.4f} ({:.1f}x, need >= 5x)", before.lrd_mse, after.lrd_mse, ratio));
}

void relative_improvement(const fs::path& work, const fs::path& data) {
  struct Variant {
    const char* name;
    double lambda_ad, lambda_ld;
  };
  const Variant variants[] = {{"baseline", 0, 0}, {"acd", 1, 0}, {"lrd", 0, 1}, {"hkd", 1, 1}};
  std::vector<double> medians;
  Stopwatch clock;
  for (const auto& v : variants) {
    std::vector<double> cers;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto cfg = base_run(data, work / fmt::format("cmp_{}_{}", v.name, seed));
      cfg.epochs = 30;
      cfg.eval_every = 5;
      cfg.seed = seed;
      cfg.model.seed = seed;
      cfg.loss.lambda_ad = v.lambda_ad;
      cfg.loss.lambda_ld = v.lambda_ld;
      if (hkd::distillation_enabled(cfg)) cfg.teacher = hkd::TeacherSource::kSynthetic;
      cers.push_back(hkd::Trainer(cfg).run().best_dev_cer);
    }
    medians.push_back(median3(cers));
    info(fmt::format("dev_cer.{}", v.name),
         fmt::format("seeds 1-3: {:.4f} {:.4f} {:.4f}, median {:.4f}", cers[0], cers[1], cers[2], medians.back()));
  }
  const double base = medians[0], acd = medians[1], lrd = medians[2], hkd_cer = medians[3];
  info("relative_reduction", fmt::format("acd {:+.1f}%, lrd {:+.1f}%, hkd {:+.1f}% vs baseline",
                                         100 * (base - acd) / base, 100 * (base - lrd) / base,
                                         100 * (base - hkd_cer) / base));
  report("hkd_vs_baseline", hkd_cer <= base,
         fmt::format("median dev CER hkd {:.4f} vs baseline {:.4f}, {:.0f} s for 12 runs", hkd_cer, base,
                     clock.seconds()));
}

hkd::StepFn two_step_table() {
  // Greedy takes token 4 (0.6) and ends at 0.6 * 0.4 = 0.24; token 5 (0.4)
  // leads to 0.4 * 0.9 = 0.36.
  return [](const std::vector<int>& prefix) {
    std::vector<double> p(6, 1e-9);
    if (prefix.empty()) {
      p[4] = 0.6;
      p[5] = 0.4;
    } else if (prefix[0] == 4) {
      p[hkd::kEos] = 0.4;
      p[4] = 0.3;
      p[5] = 0.3;
    } else {
      p[hkd::kEos] = 0.9;
      p[4] = 0.1;
    }
    for (auto& x : p) x = std::log(x);
    return p;
  };
}

void beam_search() {
  hkd::ModelConfig mc;
  mc.d_model = 32;
  mc.encoder_blocks = 2;
  mc.seed = 17;
  const hkd::AsrModel<float> model(mc);
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g(0, 1);
  std::uniform_int_distribution<std::size_t> frames(24, 120);
  std::size_t same = 0, total_tokens = 0;
  for (int n = 0; n < 100; ++n) {
    std::vector<float> v(frames(rng) * mc.feature_dim);
    for (auto& x : v) x = g(rng);
    const auto x = Tensor<float>::matrix(v.size() / mc.feature_dim, mc.feature_dim, v);
    hkd::NoGradGuard guard;
    const auto h = model.encode(x);
    const auto fired = hkd::integrate_and_fire(model.cif_weights(h), h, mc.cif);
    const auto greedy = hkd::greedy_search(hkd::decoder_scorer(model, fired.acoustics), fired.plan.tokens);
    const auto beam = hkd::recognize(model, x, 1);
    same += beam.tokens == greedy.tokens && beam.log_prob == greedy.log_prob;
    total_tokens += greedy.tokens.size();
  }
  const auto step = two_step_table();
  const auto g2 = hkd::greedy_search(step, 2);
  const auto b2 = hkd::beam_search(step, 2, 2);
  const bool counter = g2.tokens == std::vector<int>{4, hkd::kEos} && b2.tokens == std::vector<int>{5, hkd::kEos} &&
                       b2.log_prob > g2.log_prob;
  report("beam_search", same == 100 && counter,
         fmt::format("B=1 == greedy on {}/100 inputs ({} tokens); counterexample greedy p={:.2f}, B=2 p={:.2f}", same,
                     total_tokens, std::exp(g2.log_prob), std::exp(b2.log_prob)));
}

void reproducibility(const fs::path& work, const fs::path& data) {
  std::string csv[2];
  for (int run = 0; run < 2; ++run) {
    auto cfg = base_run(data, work / fmt::format("repro_{}", run));
    cfg.epochs = 3;
    cfg.model.d_model = 32;
    cfg.model.encoder_blocks = 2;
    cfg.teacher = hkd::TeacherSource::kSynthetic;
    cfg.loss.lambda_ad = 1;
    cfg.loss.lambda_ld = 1;
    cfg.augment = true;
    hkd::Trainer(cfg).run();
    csv[run] = slurp(fs::path(cfg.output_dir) / "metrics.csv");
  }
  const auto lines = std::count(csv[0].begin(), csv[0].end(), '\n');
  report("reproducibility", !csv[0].empty() && csv[0] == csv[1],
         fmt::format("metrics.csv {} bytes, {} lines, {}", csv[0].size(), lines,
                     csv[0] == csv[1] ? "byte-identical" : "differs"));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? argv[1] : "acceptance_work";
  fs::remove_all(work);
  fs::create_directories(work);
  spdlog::set_level(spdlog::level::warn);

  hkd::SyntheticConfig small;  // V=20, 50/20/20 utterances, 3-8 tokens, 8 frames per token
  hkd::generate_synthetic(small, (work / "data_small").string());
  hkd::SyntheticConfig hard;
  hard.train = 200;
  hard.dev = 40;
  hard.test = 40;
  hard.noise = 0.3;
  hard.seed = 3;
  hkd::generate_synthetic(hard, (work / "data_hard").string());

  try {
    gradient_suite();
    cif_firing();
    ctc_oracle();
    contrastive();
    beam_search();
    reproducibility(work, work / "data_small");
    overfit(work, work / "data_small");
    distillation_pull(work, work / "data_small");
    relative_improvement(work, work / "data_hard");
  } catch (const std::exception& e) {
    report("acceptance_run", false, std::string("aborted: ") + e.what());
  }
  std::printf("%d criteria failed\n", failures);
  return failures;
}
