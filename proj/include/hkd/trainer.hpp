#pragma once

// Training, evaluation and the tau/K sweep over on-disk datasets.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hkd/augment.hpp"
#include "hkd/checkpoint.hpp"
#include "hkd/config.hpp"
#include "hkd/dataset.hpp"
#include "hkd/decode.hpp"
#include "hkd/model.hpp"
#include "hkd/optim.hpp"
#include "hkd/seed.hpp"
#include "hkd/teacher.hpp"

namespace hkd {

struct SplitData {
  Dataset data;
  std::optional<EmbeddingStore> teacher;
};

struct Corpus {
  std::size_t vocab = 0;
  SplitData train, dev, test;
};

inline bool distillation_enabled(const RunConfig& cfg) { return cfg.loss.lambda_ad > 0 || cfg.loss.lambda_ld > 0; }

// Teacher sequences for one split, validated against its targets.
inline std::optional<EmbeddingStore> load_teacher(const RunConfig& cfg, const std::string& split, const Dataset& ds,
                                                  bool required) {
  if (cfg.teacher == TeacherSource::kNone) {
    if (required) throw ConfigError("distillation is enabled but teacher.source is none");
    return std::nullopt;
  }
  EmbeddingStore store(cfg.model.teacher_dim);
  if (cfg.teacher == TeacherSource::kSynthetic) {
    const SyntheticTeacher teacher(cfg.model.vocab, cfg.model.teacher_dim, cfg.teacher_seed);
    for (const auto& u : ds.utterances) store.add(teacher.sequence(u.id, u.targets));
  } else {
    const std::string path = split == "train" && !cfg.teacher_file.empty() ? cfg.teacher_file
                                                                           : cfg.data_dir + "/" + split + ".emb";
    if (!required && !std::filesystem::exists(path)) return std::nullopt;
    store = load_embedding_file(path, cfg.model.teacher_dim);
  }
  for (const auto& u : ds.utterances) align_check(store.at(u.id), u.targets.size());
  return store;
}

inline Corpus load_corpus(const RunConfig& cfg) {
  Corpus c;
  c.vocab = read_vocab(cfg.data_dir + "/vocab.txt").size();
  if (c.vocab != cfg.model.vocab)
    throw ConfigError("vocabulary has " + std::to_string(c.vocab) + " entries but model.vocab is " +
                      std::to_string(cfg.model.vocab));
  SplitData* splits[] = {&c.train, &c.dev, &c.test};
  for (std::size_t s = 0; s < kSplits.size(); ++s) {
    splits[s]->data = load_split(cfg.data_dir, kSplits[s], c.vocab);
    if (splits[s]->data.dim != cfg.model.feature_dim)
      throw DataError("split '" + kSplits[s] + "' has feature dim " + std::to_string(splits[s]->data.dim));
    splits[s]->teacher = load_teacher(cfg, kSplits[s], splits[s]->data, s == 0 && distillation_enabled(cfg));
  }
  if (c.train.data.utterances.empty()) throw DataError("training split is empty");
  return c;
}

// Corpus-level CER with special tokens removed.
template <class T>
double corpus_cer(const AsrModel<T>& model, const Dataset& ds, std::size_t beam = 1) {
  if (ds.utterances.empty()) return std::numeric_limits<double>::quiet_NaN();
  ErrorCounter counter;
  for (std::size_t i = 0; i < ds.utterances.size(); ++i)
    counter.add(recognize(model, ds.features<T>(i), beam).tokens, ds.utterances[i].targets);
  return counter.rate();
}

#ifndef HKD_NO_DISTILL
struct DistillProbe {
  double mean_cosine = 0.0;  // mean <c_bar_i, e_bar_i> over all tokens
  double lrd_mse = 0.0;      // mean over tokens and dims of (s_hat - e)^2
};

// Teacher-forced measurement of how close both distillation sites sit to the teacher.
template <class T>
DistillProbe distill_probe(const AsrModel<T>& model, const Dataset& ds, const EmbeddingStore& teacher) {
  NoGradGuard guard;
  DistillProbe p;
  std::size_t tokens = 0, values = 0;
  for (std::size_t n = 0; n < ds.utterances.size(); ++n) {
    const auto& u = ds.utterances[n];
    const Tensor<T> h = model.encode(ds.features<T>(n));
    const auto fired =
        integrate_and_fire(scale_weights(model.cif_weights(h), u.targets.size(), model.config().cif), h,
                           model.config().cif);
    const Tensor<T> e = teacher.at(u.id).template tensor<T>();
    const auto c_bar = project_and_normalize(fired.acoustics, model.acoustic_head());
    const auto e_bar = l2_normalize(e);
    const auto s_hat = model.linguistic_head()(model.decode_step(fired.acoustics, shift_right(u.targets)).states);
    for (std::size_t i = 0; i < e.numel(); ++i) {
      p.mean_cosine += static_cast<double>(c_bar.data()[i]) * e_bar.data()[i];
      const double d = static_cast<double>(s_hat.data()[i]) - e.data()[i];
      p.lrd_mse += d * d;
    }
    tokens += e.dim(0);
    values += e.numel();
  }
  p.mean_cosine /= static_cast<double>(tokens);
  p.lrd_mse /= static_cast<double>(values);
  return p;
}
#endif

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_total = 0.0;
  double dev_cer = std::numeric_limits<double>::quiet_NaN();
  double train_cer = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  double best_dev_cer = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  double final_train_cer = std::numeric_limits<double>::quiet_NaN();
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
  std::size_t ctc_skipped = 0;  // utterance-steps whose CTC term was infeasible
  double first_ce = std::numeric_limits<double>::quiet_NaN();
};

inline std::string format_metric(double v) {
  return std::isnan(v) ? std::string() : fmt::format("{:.6f}", v);
}

class Trainer {
 public:
  explicit Trainer(RunConfig cfg) : cfg_(std::move(cfg)), corpus_(load_corpus(cfg_)), model_(cfg_.model) {
    cfg_.validate();
  }

  const RunConfig& config() const { return cfg_; }
  const Corpus& corpus() const { return corpus_; }
  const AsrModel<float>& model() const { return model_; }
  AsrModel<float>& model() { return model_; }
  // Parameters with the best dev CER seen so far (the final model before any evaluation).
  const AsrModel<float>& best_model() const { return best_ ? *best_ : model_; }

  // Writes metrics.csv, epochs.csv, config.txt, last.ckpt and best.ckpt under output_dir.
  TrainResult run() {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.output_dir);
    const std::string text = config_text(cfg_);
    std::ofstream(cfg_.output_dir + "/config.txt") << text;
    std::ofstream metrics(cfg_.output_dir + "/metrics.csv");
    std::ofstream epochs(cfg_.output_dir + "/epochs.csv");
    if (!metrics || !epochs) throw DataError("cannot write logs under '" + cfg_.output_dir + "'");
    metrics << "step,epoch,ce,ctc,qua,ad,ld,total,dev_cer\n";
    epochs << "epoch,mean_total,train_cer,dev_cer\n";

    Adam<float> adam(model_.params().tensors(), cfg_.optim);
    const bool distill = distillation_enabled(cfg_);
    const auto& train = corpus_.train.data.utterances;
    TrainResult result;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 shuffle_rng(mix_seed(cfg_.seed, 0x5eed, epoch));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      double epoch_total = 0.0;
      std::size_t epoch_batches = 0;
      std::vector<std::string> rows;
      for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
        std::vector<BatchItem<float>> batch;
        for (std::size_t k = begin; k < std::min(order.size(), begin + cfg_.batch_size); ++k) {
          const std::size_t idx = order[k];
          Tensor<float> x = corpus_.train.data.features<float>(idx);
          if (cfg_.augment) x = spec_augment(x, cfg_.spec, mix_seed(cfg_.seed, epoch, idx));
          BatchItem<float> item{x, train[idx].targets, std::nullopt};
          if (distill) item.teacher = corpus_.train.teacher->at(train[idx].id).tensor<float>();
          batch.push_back(std::move(item));
        }
        ++result.steps;
        const auto out = forward_batch(model_, batch, cfg_.loss,
#ifndef HKD_NO_DISTILL
                                       cfg_.distill,
#endif
                                       mix_seed(cfg_.seed, 0xd157, result.steps), result.steps == 1);
        result.ctc_skipped += out.ctc_skipped;
        if (result.steps == 1) result.first_ce = out.losses.ce.item();
        model_.params().zero_grad();
        backward(out.losses.total);
        if (!adam.step()) ++result.skipped_steps;
        const auto& l = out.losses;
        epoch_total += l.total.item();
        ++epoch_batches;
        rows.push_back(fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},", result.steps, epoch,
                                   l.ce.item(), l.ctc.item(), l.qua.item(), l.ad.item(), l.ld.item(), l.total.item()));
      }
      EpochRecord rec{epoch, epoch_total / static_cast<double>(epoch_batches)};
      const bool last = epoch == cfg_.epochs;
      if (epoch % cfg_.eval_every == 0 || last) {
        if (!corpus_.dev.data.utterances.empty()) {
          rec.dev_cer = corpus_cer(model_, corpus_.dev.data, cfg_.eval_beam);
          rows.back() += format_metric(rec.dev_cer);
          if (rec.dev_cer < result.best_dev_cer) {
            result.best_dev_cer = rec.dev_cer;
            result.best_epoch = epoch;
            best_.emplace(model_.clone());
            save_checkpoint(cfg_.output_dir + "/best.ckpt", model_.params(), text);
          }
        }
        if (cfg_.stop_train_cer >= 0) rec.train_cer = corpus_cer(model_, corpus_.train.data, 1);
      }
      for (const auto& r : rows) metrics << r << '\n';
      metrics.flush();
      epochs << fmt::format("{},{:.6f},{},{}\n", epoch, rec.mean_total, format_metric(rec.train_cer),
                            format_metric(rec.dev_cer));
      epochs.flush();
      result.epochs.push_back(rec);
      spdlog::info("epoch {} mean_total {:.4f} dev_cer {} train_cer {}", epoch, rec.mean_total,
                   format_metric(rec.dev_cer), format_metric(rec.train_cer));
      if (cfg_.stop_train_cer >= 0 && rec.train_cer < cfg_.stop_train_cer) break;
    }
    save_checkpoint(cfg_.output_dir + "/last.ckpt", model_.params(), text);
    if (!best_) save_checkpoint(cfg_.output_dir + "/best.ckpt", model_.params(), text);
    result.final_train_cer = result.epochs.back().train_cer;
    if (result.ctc_skipped > 0)
      spdlog::info("CTC term skipped for {} utterance-steps with too few encoder frames", result.ctc_skipped);
    return result;
  }

 private:
  RunConfig cfg_;
  Corpus corpus_;
  AsrModel<float> model_;
  std::optional<AsrModel<float>> best_;
};

// Rebuilds a model from a checkpoint using its embedded config echo.
inline AsrModel<float> load_model(const std::string& path, RunConfig* echoed = nullptr) {
  const Checkpoint ck = read_checkpoint(path);
  RunConfig cfg;
  apply_config_text(cfg, ck.config_text, path + " (config echo)");
  AsrModel<float> model(cfg.model);
  restore_parameters(ck, model.params());
  if (echoed) *echoed = cfg;
  return model;
}

struct SweepRow {
  double tau = 0;
  std::size_t negatives = 0;
  double dev_cer = std::numeric_limits<double>::quiet_NaN();
  double test_cer = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

#ifndef HKD_NO_DISTILL
// One training run per (tau, K); a failing run is recorded and the grid continues.
inline std::vector<SweepRow> sweep(const RunConfig& base, const std::vector<double>& taus,
                                   const std::vector<std::size_t>& negatives, const std::string& csv_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw DataError("cannot write '" + csv_path + "'");
  csv << "tau,K,dev_cer,test_cer\n";
  std::vector<SweepRow> rows;
  for (const double tau : taus)
    for (const std::size_t k : negatives) {
      SweepRow row;
      row.tau = tau;
      row.negatives = k;
      try {
        RunConfig cfg = base;
        cfg.distill.tau = tau;
        cfg.distill.negatives = k;
        cfg.output_dir = fmt::format("{}/tau{}_K{}", base.output_dir, tau, k);
        Trainer trainer(cfg);
        const auto result = trainer.run();
        row.dev_cer = result.best_dev_cer;
        row.test_cer = corpus_cer(trainer.best_model(), trainer.corpus().test.data, cfg.eval_beam);
      } catch (const std::exception& e) {
        row.error = e.what();
        spdlog::error("sweep tau={} K={} failed: {}", tau, k, e.what());
      }
      csv << fmt::format("{},{},{},{}\n", tau, k, row.error.empty() ? format_metric(row.dev_cer) : "error",
                         row.error.empty() ? format_metric(row.test_cer) : "error");
      csv.flush();
      rows.push_back(row);
    }
  return rows;
}
#endif

}  // namespace hkd
