#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hkd/hkd.hpp"

namespace fs = std::filesystem;
using hkd::Tensor;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hkd_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

hkd::SyntheticConfig tiny_data() {
  hkd::SyntheticConfig g;
  g.vocab = 8;
  g.train = 6;
  g.dev = 3;
  g.test = 3;
  g.max_tokens = 4;
  g.seed = 4;
  return g;
}

hkd::RunConfig tiny_run(const fs::path& root) {
  hkd::RunConfig c;
  c.data_dir = (root / "data").string();
  c.output_dir = (root / "run").string();
  c.epochs = 2;
  c.batch_size = 3;
  c.model.d_model = 16;
  c.model.heads = 2;
  c.model.encoder_blocks = 1;
  c.model.decoder_blocks = 1;
  c.model.frontend_channels = 2;
  c.model.vocab = 8;
  c.model.teacher_dim = 8;
  c.optim.lr = 1e-3;
  return c;
}

}  // namespace

TEST(SpecAugment, ZeroProbabilityIsIdentity) {
  const auto x = Tensor<float>::full({60, 80}, 1.5f);
  hkd::AugmentConfig cfg;
  cfg.p = 0.0;
  EXPECT_EQ(hkd::spec_augment(x, cfg, 9).data(), x.data());
}

TEST(SpecAugment, MasksAreSeededAndBounded) {
  const auto x = Tensor<float>::full({60, 80}, 1.0f);
  hkd::AugmentConfig cfg;
  cfg.freq_masks = 1;
  cfg.time_masks = 0;
  cfg.freq_width = 10;
  const auto a = hkd::spec_augment(x, cfg, 3);
  EXPECT_EQ(a.data(), hkd::spec_augment(x, cfg, 3).data());
  // One frequency band: every frame zeroes the same bins, at most 10 of them.
  std::size_t zeros = 0;
  for (std::size_t f = 0; f < 80; ++f) {
    const bool z = a.at(0, f) == 0.0f;
    zeros += z;
    for (std::size_t t = 1; t < 60; ++t) EXPECT_EQ(a.at(t, f) == 0.0f, z);
  }
  EXPECT_LE(zeros, 10u);
  cfg.p = 1.5;
  EXPECT_THROW(cfg.validate(), hkd::ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto w = Tensor<float>::vector({1.0f, -2.0f}, true);
  hkd::OptimConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0;
  cfg.clip_norm = 0;
  hkd::Adam<float> adam({w}, cfg);
  hkd::backward(hkd::sum(w));
  ASSERT_TRUE(adam.step());
  // m_hat = g and v_hat = g^2 on the first step, so the move is lr * sign(g).
  EXPECT_NEAR(w.at(0), 0.9f, 1e-6);
  EXPECT_NEAR(w.at(1), -2.1f, 1e-6);
}

TEST(Adam, ZeroGradientWithoutDecayLeavesParameters) {
  auto w = Tensor<float>::vector({0.3f, 0.7f}, true);
  hkd::OptimConfig cfg;
  cfg.weight_decay = 0;
  hkd::Adam<float> adam({w}, cfg);
  for (int i = 0; i < 5; ++i) ASSERT_TRUE(adam.step());
  EXPECT_EQ(w.at(0), 0.3f);
  EXPECT_EQ(w.at(1), 0.7f);
}

TEST(Adam, TensorsUpdateIndependently) {
  auto a = Tensor<float>::vector({1.0f}, true);
  auto b = Tensor<float>::vector({1.0f}, true);
  hkd::OptimConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0;
  hkd::Adam<float> adam({a, b}, cfg);
  hkd::backward(hkd::sum(a));
  adam.step();
  EXPECT_NEAR(a.at(0), 0.9f, 1e-6);
  EXPECT_EQ(b.at(0), 1.0f);
}

TEST(Adam, NonFiniteGradientSkipsStep) {
  // Each branch contributes 3e38 to the gradient; their float sum overflows.
  auto w = Tensor<float>::vector({1e-30f}, true);
  hkd::Adam<float> adam({w}, hkd::OptimConfig{});
  hkd::backward(hkd::sum(hkd::add(hkd::scale(w, 3e38), hkd::scale(w, 3e38))));
  ASSERT_TRUE(std::isinf(w.grad()[0]));
  EXPECT_FALSE(adam.step());
  EXPECT_EQ(adam.steps(), 0u);
  EXPECT_EQ(w.at(0), 1e-30f);
}

TEST(Config, ParsesCommentsAndOverrides) {
  hkd::RunConfig c;
  hkd::apply_config_text(c, "# header\ntrain.epochs = 7   # trailing\n\nloss.lambda_ad=0.5\nteacher.source=synthetic\n");
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_DOUBLE_EQ(c.loss.lambda_ad, 0.5);
  EXPECT_EQ(c.teacher, hkd::TeacherSource::kSynthetic);
  hkd::apply_override(c, "distill.tau=0.1");
  EXPECT_DOUBLE_EQ(c.distill.tau, 0.1);
  hkd::apply_override(c, "train.augment=true");
  EXPECT_TRUE(c.augment);
}

TEST(Config, RejectsBadInput) {
  hkd::RunConfig c;
  EXPECT_THROW(hkd::apply_override(c, "train.epochz=3"), hkd::ConfigError);
  EXPECT_THROW(hkd::apply_override(c, "train.epochs"), hkd::ConfigError);
  EXPECT_THROW(hkd::apply_override(c, "train.epochs=three"), hkd::ConfigError);
  EXPECT_THROW(hkd::apply_override(c, "teacher.source=bert"), hkd::ConfigError);
  try {
    hkd::apply_config_text(c, "train.epochs=2\nbogus=1\n", "run.cfg");
    FAIL() << "expected an error";
  } catch (const hkd::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(hkd::load_config("/nonexistent/run.cfg"), hkd::ConfigError);
}

TEST(Config, TextRoundTrips) {
  hkd::RunConfig c;
  c.epochs = 11;
  c.model.d_model = 24;
  c.distill.tau = 0.125;
  c.optim.lr = 3.5e-4;
  c.teacher = hkd::TeacherSource::kFile;
  const std::string text = hkd::config_text(c);
  hkd::RunConfig back;
  hkd::apply_config_text(back, text);
  EXPECT_EQ(hkd::config_text(back), text);
  EXPECT_EQ(back.model.d_model, 24u);
  EXPECT_DOUBLE_EQ(back.optim.lr, 3.5e-4);
}

TEST(Checkpoint, RoundTripRestoresModel) {
  const auto dir = scratch("ckpt");
  hkd::RunConfig cfg = tiny_run(dir);
  cfg.model.seed = 12;
  hkd::AsrModel<float> a(cfg.model);
  save_checkpoint((dir / "m.ckpt").string(), a.params(), hkd::config_text(cfg));
  hkd::RunConfig echoed;
  const auto b = hkd::load_model((dir / "m.ckpt").string(), &echoed);
  EXPECT_EQ(echoed.model.seed, 12u);
  ASSERT_EQ(a.params().entries().size(), b.params().entries().size());
  for (std::size_t i = 0; i < a.params().entries().size(); ++i)
    EXPECT_EQ(a.params().entries()[i].second.data(), b.params().entries()[i].second.data());
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  const auto dir = scratch("ckpt_bad");
  hkd::RunConfig cfg = tiny_run(dir);
  hkd::AsrModel<float> a(cfg.model);
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(path, a.params(), hkd::config_text(cfg));
  cfg.model.d_model = 8;
  hkd::AsrModel<float> other(cfg.model);
  EXPECT_THROW(hkd::restore_parameters(hkd::read_checkpoint(path), other.params()), hkd::DataError);

  const std::string bytes = slurp(path);
  std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(hkd::read_checkpoint(path), hkd::DataError);
  std::ofstream(path, std::ios::binary) << "NOTACKPT";
  EXPECT_THROW(hkd::read_checkpoint(path), hkd::DataError);
}

TEST(Dataset, SameSeedGivesIdenticalFiles) {
  const auto a = scratch("data_a"), b = scratch("data_b");
  hkd::generate_synthetic(tiny_data(), a.string(), 8);
  hkd::generate_synthetic(tiny_data(), b.string(), 8);
  for (const char* f : {"vocab.txt", "train.fea", "train.txt", "dev.fea", "test.txt", "train.emb"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  auto other = tiny_data();
  other.seed = 5;
  const auto c = scratch("data_c");
  hkd::generate_synthetic(other, c.string());
  EXPECT_NE(slurp(a / "train.fea"), slurp(c / "train.fea"));
}

TEST(Dataset, EndSegmentStretchesToFrameBudget) {
  auto g = tiny_data();
  g.jitter = 0;
  g.frames_per_token = 2;
  for (const auto& u : hkd::generate_split(g, "train", 20).utterances) {
    EXPECT_EQ(u.frames, 8 * u.targets.size()) << u.id;
    EXPECT_EQ(u.targets.back(), hkd::kEos);
    EXPECT_GE(u.targets.size(), g.min_tokens);
    EXPECT_LE(u.targets.size(), g.max_tokens);
  }
  g.min_frames_per_target = 0;
  for (const auto& u : hkd::generate_split(g, "train", 20).utterances) EXPECT_EQ(u.frames, 2 * u.targets.size());
}

TEST(Dataset, TemplatesAreDistinct) {
  const auto t = hkd::token_templates(tiny_data());
  for (std::size_t a = 0; a < t.size(); ++a)
    for (std::size_t b = a + 1; b < t.size(); ++b) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t k = 0; k < t[a].size(); ++k) {
        dot += t[a][k] * t[b][k];
        na += t[a][k] * t[a][k];
        nb += t[b][k] * t[b][k];
      }
      EXPECT_LT(std::abs(dot) / std::sqrt(na * nb), 0.9);
    }
}

TEST(Dataset, LoadValidatesFiles) {
  const auto dir = scratch("data_bad");
  hkd::generate_synthetic(tiny_data(), dir.string());
  const auto ds = hkd::load_split(dir.string(), "dev", 8);
  EXPECT_EQ(ds.utterances.size(), 3u);

  EXPECT_THROW(hkd::load_split(dir.string(), "dev", 5), hkd::DataError);  // ids out of range
  std::ofstream(dir / "dev.txt", std::ios::app) << "ghost\t4 1\n";
  EXPECT_THROW(hkd::load_split(dir.string(), "dev", 8), hkd::DataError);
  std::ofstream(dir / "test.txt") << "";
  EXPECT_THROW(hkd::load_split(dir.string(), "test", 8), hkd::DataError);
  const std::string fea = slurp(dir / "train.fea");
  std::ofstream(dir / "train.fea", std::ios::binary) << fea << 'x';
  EXPECT_THROW(hkd::load_split(dir.string(), "train", 8), hkd::DataError);
  EXPECT_THROW(hkd::load_split(dir.string(), "missing", 8), hkd::DataError);
}

TEST(Trainer, BaselineRunLogsZeroDistillation) {
  const auto dir = scratch("train_base");
  hkd::generate_synthetic(tiny_data(), (dir / "data").string());
  hkd::Trainer t(tiny_run(dir));
  const auto r = t.run();
  EXPECT_EQ(r.steps, 4u);
  EXPECT_EQ(r.skipped_steps, 0u);
  EXPECT_NEAR(r.first_ce, std::log(8.0), 0.1 * std::log(8.0));
  std::ifstream metrics(dir / "run" / "metrics.csv");
  std::string line;
  std::getline(metrics, line);
  EXPECT_EQ(line, "step,epoch,ce,ctc,qua,ad,ld,total,dev_cer");
  std::size_t rows = 0;
  while (std::getline(metrics, line)) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    ASSERT_GE(cols.size(), 8u);
    EXPECT_EQ(cols[5], "0.000000");
    EXPECT_EQ(cols[6], "0.000000");
    ++rows;
  }
  EXPECT_EQ(rows, 4u);
  for (const char* f : {"config.txt", "epochs.csv", "best.ckpt", "last.ckpt"}) EXPECT_TRUE(fs::exists(dir / "run" / f));
}

TEST(Trainer, MetricsAreReproducible) {
  const auto dir = scratch("train_repro");
  hkd::generate_synthetic(tiny_data(), (dir / "data").string());
  auto cfg = tiny_run(dir);
  cfg.loss.lambda_ad = 1;
  cfg.loss.lambda_ld = 1;
  cfg.distill.negatives = 5;
  cfg.teacher = hkd::TeacherSource::kSynthetic;
  cfg.augment = true;
  hkd::Trainer(cfg).run();
  const std::string first = slurp(dir / "run" / "metrics.csv");
  hkd::Trainer(cfg).run();
  EXPECT_EQ(slurp(dir / "run" / "metrics.csv"), first);
  EXPECT_EQ(first.find(",0.000000,0.000000,"), std::string::npos);  // distillation terms are live
}

TEST(Trainer, CheckpointReproducesDevError) {
  const auto dir = scratch("train_ckpt");
  hkd::generate_synthetic(tiny_data(), (dir / "data").string());
  hkd::Trainer t(tiny_run(dir));
  t.run();
  const double live = hkd::corpus_cer(t.model(), t.corpus().dev.data);
  const auto loaded = hkd::load_model((dir / "run" / "last.ckpt").string());
  EXPECT_EQ(hkd::corpus_cer(loaded, t.corpus().dev.data), live);
}

TEST(Trainer, RejectsInconsistentSetup) {
  const auto dir = scratch("train_bad");
  hkd::generate_synthetic(tiny_data(), (dir / "data").string());
  auto cfg = tiny_run(dir);
  cfg.loss.lambda_ad = 1;
  EXPECT_THROW(hkd::Trainer{cfg}, hkd::ConfigError);  // no teacher

  // A teacher file whose sequences are one token short fails before training.
  hkd::EmbeddingStore short_store(8);
  for (const auto& u : hkd::load_split((dir / "data").string(), "train", 8).utterances) {
    hkd::TeacherSequence s;
    s.id = u.id;
    s.length = u.targets.size() - 1;
    s.dim = 8;
    s.values.assign(s.length * 8, 0.5f);
    short_store.add(s);
  }
  hkd::write_embedding_file((dir / "short.emb").string(), short_store);
  cfg.teacher = hkd::TeacherSource::kFile;
  cfg.teacher_file = (dir / "short.emb").string();
  EXPECT_THROW(hkd::Trainer{cfg}, hkd::DataError);

  cfg = tiny_run(dir);
  cfg.model.vocab = 9;
  EXPECT_THROW(hkd::Trainer{cfg}, hkd::ConfigError);
}

TEST(Sweep, OneRowPerGridPoint) {
  const auto dir = scratch("sweep");
  hkd::generate_synthetic(tiny_data(), (dir / "data").string());
  auto cfg = tiny_run(dir);
  cfg.epochs = 1;
  cfg.loss.lambda_ad = 1;
  cfg.teacher = hkd::TeacherSource::kSynthetic;
  auto rows = hkd::sweep(cfg, {0.05}, {4}, (dir / "one.csv").string());
  EXPECT_EQ(rows.size(), 1u);
  rows = hkd::sweep(cfg, {0.05, 0.1}, {2, 4}, (dir / "grid.csv").string());
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_TRUE(r.error.empty()) << r.error;
    EXPECT_TRUE(std::isfinite(r.dev_cer));
    EXPECT_TRUE(std::isfinite(r.test_cer));
  }
  std::ifstream csv(dir / "grid.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  EXPECT_EQ(lines, 5u);
}
