#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hkd/gradcheck.hpp"
#include "hkd/model.hpp"
#include "hkd/suite.hpp"

using hkd::Tensor;

namespace {

hkd::ModelConfig small_config(std::uint64_t seed = 5) {
  hkd::ModelConfig mc;
  mc.d_model = 16;
  mc.heads = 2;
  mc.encoder_blocks = 3;
  mc.decoder_blocks = 1;
  mc.vocab = 10;
  mc.teacher_dim = 8;
  mc.seed = seed;
  return mc;
}

template <class T>
Tensor<T> random_features(std::uint64_t seed, std::size_t frames, std::size_t dim = 80) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0, 1);
  std::vector<float> x(frames * dim);
  for (auto& v : x) v = n(rng);
  return Tensor<T>::matrix(frames, dim, std::vector<T>(x.begin(), x.end()));
}

}  // namespace

TEST(Encoder, LengthIsFloorOfEighth) {
  EXPECT_EQ(hkd::encoder_length(80), 10u);
  EXPECT_EQ(hkd::encoder_length(81), 10u);
  const hkd::AsrModel<float> model(small_config());
  EXPECT_EQ(model.encode(random_features<float>(1, 80)).shape(), (hkd::Shape{10, 16}));
  EXPECT_EQ(model.encode(random_features<float>(1, 81)).shape(), (hkd::Shape{10, 16}));
}

TEST(Encoder, ShapeChainOverRandomLengths) {
  const hkd::AsrModel<float> model(small_config());
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> frames(8, 120);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t t = frames(rng);
    const auto h = model.encode(random_features<float>(static_cast<std::uint64_t>(trial), t));
    ASSERT_EQ(h.dim(0), t / 8) << "T=" << t;
    ASSERT_EQ(h.dim(1), 16u);
    const auto fired = hkd::integrate_and_fire(model.cif_weights(h), h, model.config().cif);
    const std::size_t len = fired.plan.tokens;
    if (len == 0) continue;
    std::vector<int> prev(len, hkd::kBos);
    const auto out = model.decode_step(fired.acoustics, prev);
    EXPECT_EQ(out.logits.shape(), (hkd::Shape{len, 10}));
    EXPECT_EQ(out.states.shape(), (hkd::Shape{len, 16}));
  }
}

TEST(Encoder, RejectsShortOrMisshapenInput) {
  const hkd::AsrModel<float> model(small_config());
  EXPECT_THROW(model.encode(random_features<float>(1, 7)), hkd::ShapeError);
  EXPECT_THROW(model.encode(random_features<float>(1, 16, 40)), hkd::ShapeError);
}

TEST(Encoder, EveryBlockHasAttentionConvAndFeedForward) {
  const hkd::AsrModel<float> model(small_config());
  for (const char* part : {"encoder.block0.attn.q.weight", "encoder.block2.conv.weight", "encoder.block1.ffn.up.weight"})
    EXPECT_NO_THROW(model.params().get(part)) << part;
}

TEST(CifPredictor, GoldenSnapshot) {
  const hkd::AsrModel<float> model(small_config());
  const auto a = model.cif_weights(model.encode(random_features<float>(3, 40)));
  const std::vector<float> golden = {0x1.a4be22p-1f, 0x1.b1dc4cp-1f, 0x1.2530bep-1f, 0x1.82ea7cp-1f, 0x1.f722fap-2f};
  EXPECT_EQ(a.data(), golden);
}

TEST(Decoder, GoldenLogitsSnapshot) {
  const hkd::AsrModel<float> model(small_config());
  const auto h = model.encode(random_features<float>(3, 40));
  const auto out = model.decode_step(hkd::slice(h, 0, 0, 3), {hkd::kBos, 5, 6});
  const std::vector<float> golden = {-0x1.8bce8p-4f, 0x1.31426cp-2f, 0x1.fd898p-6f,  0x1.3f012ap-2f, -0x1.48bdfp-3f,
                                     -0x1.6f9278p-3f, 0x1.40a624p-5f, 0x1.c6097ap-6f, 0x1.d40028p-5f, 0x1.627f46p-3f};
  EXPECT_EQ(std::vector<float>(out.logits.data().begin() + 20, out.logits.data().end()), golden);
}

TEST(Decoder, SingleTokenGivesOneRow) {
  const hkd::AsrModel<float> model(small_config());
  const auto h = model.encode(random_features<float>(3, 16));
  EXPECT_EQ(model.decode_step(hkd::slice(h, 0, 0, 1), {hkd::kBos}).logits.shape(), (hkd::Shape{1, 10}));
}

TEST(Decoder, LengthMismatchThrows) {
  const hkd::AsrModel<float> model(small_config());
  const auto h = model.encode(random_features<float>(3, 40));
  EXPECT_THROW(model.decode_step(h, {hkd::kBos}), hkd::ShapeError);
}

TEST(Decoder, IsCausal) {
  const hkd::AsrModel<double> model(small_config());
  const auto h = model.encode(random_features<double>(4, 48));
  const std::vector<int> prev = {hkd::kBos, 4, 5, 6, 7, 8};
  const auto base = model.decode_step(h, prev).logits;
  for (std::size_t j = 1; j < prev.size(); ++j) {
    auto changed = prev;
    changed[j] = 9;
    const auto logits = model.decode_step(h, changed).logits;
    for (std::size_t k = 0; k < j * 10; ++k) EXPECT_EQ(logits.at(k), base.at(k)) << "token " << j;
    bool later_changed = false;
    for (std::size_t k = j * 10; k < logits.numel(); ++k) later_changed = later_changed || logits.at(k) != base.at(k);
    EXPECT_TRUE(later_changed);
  }
}

TEST(Model, SameSeedSameValues) {
  const hkd::AsrModel<float> a(small_config(9)), b(small_config(9)), c(small_config(10));
  const auto x = random_features<float>(2, 32);
  EXPECT_EQ(a.encode(x).data(), b.encode(x).data());
  EXPECT_NE(a.encode(x).data(), c.encode(x).data());
}

TEST(Model, DoubleAndFloatStoresAgree) {
  const hkd::AsrModel<float> f(small_config());
  const hkd::AsrModel<double> d(small_config());
  const auto hf = f.encode(random_features<float>(2, 32));
  const auto hd = d.encode(random_features<double>(2, 32));
  for (std::size_t i = 0; i < hf.numel(); ++i) EXPECT_NEAR(hf.at(i), hd.at(i), 1e-4);
}

TEST(Model, CloneCopiesValues) {
  hkd::AsrModel<float> a(small_config());
  auto first = a.params().tensors()[0];
  first.value()[0] = 42.0f;
  const auto b = a.clone();
  EXPECT_EQ(b.params().tensors()[0].at(0), 42.0f);
  first.value()[0] = 0.0f;
  EXPECT_EQ(b.params().tensors()[0].at(0), 42.0f);
}

TEST(Model, DistillHeadsAreRegisteredLast) {
  const hkd::AsrModel<float> model(small_config());
  const auto& e = model.params().entries();
  ASSERT_GE(e.size(), 4u);
  EXPECT_EQ(e[e.size() - 4].first.rfind("distill.acoustic", 0), 0u);
  EXPECT_EQ(e.back().first.rfind("distill.linguistic", 0), 0u);
}

TEST(Targets, ShiftRightAndCtcLabels) {
  EXPECT_EQ(hkd::shift_right({5, 6, hkd::kEos}), (std::vector<int>{hkd::kBos, 5, 6}));
  EXPECT_EQ(hkd::shift_right({hkd::kEos}), (std::vector<int>{hkd::kBos}));
  EXPECT_EQ(hkd::ctc_targets({5, hkd::kPad, 6, hkd::kEos}), (std::vector<int>{5, 6}));
}

TEST(CrossEntropy, UniformLogits) {
  EXPECT_NEAR(hkd::ce_loss_smoothed(Tensor<double>::zeros({3, 4}), {3, 2, 1}, 0.0).item(), std::log(4.0), 1e-12);
  // Smoothing does not change the loss of a uniform prediction.
  EXPECT_NEAR(hkd::ce_loss_smoothed(Tensor<double>::zeros({3, 4}), {1, 2, 3}, 0.1).item(), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, SaturatedOneHotApproachesZero) {
  EXPECT_LT(hkd::ce_loss_smoothed(Tensor<double>::matrix(1, 3, {0, 0, 60}), {2}, 0.0).item(), 1e-20);
}

TEST(CrossEntropy, SmoothedTwoClassByHand) {
  // 0.9 of the predicted mass on the true class (index 1).
  const auto logits = Tensor<double>::matrix(1, 2, {std::log(0.1), std::log(0.9)});
  EXPECT_NEAR(hkd::ce_loss_smoothed(logits, {1}, 0.1).item(), -(0.9 * std::log(0.9) + 0.1 * std::log(0.1)), 1e-12);
  EXPECT_NEAR(hkd::ce_loss_smoothed(logits, {1}, 0.1).item(), 0.3251, 1e-4);
}

TEST(CrossEntropy, PadRowsAreIgnored) {
  std::mt19937_64 rng(12);
  const auto logits = hkd::detail::random_tensor(rng, {4, 6}, -2, 2, false);
  const double with_pad = hkd::ce_loss_smoothed(logits, {4, hkd::kPad, 5, hkd::kPad}, 0.1).item();
  const auto kept = hkd::concat<double>({hkd::slice(logits, 0, 0, 1), hkd::slice(logits, 0, 2, 3)}, 0);
  EXPECT_NEAR(with_pad, hkd::ce_loss_smoothed(kept, {4, 5}, 0.1).item(), 1e-12);
  EXPECT_THROW(hkd::ce_loss_smoothed(logits, {0, 0, 0, 0}, 0.1), hkd::ShapeError);
}

TEST(CrossEntropy, GradientCheck) {
  std::mt19937_64 rng(13);
  const auto logits = hkd::detail::random_tensor(rng, {5, 7}, -2, 2);
  const auto report = hkd::grad_check([=] { return hkd::ce_loss_smoothed(logits, {4, 5, 1, hkd::kPad, 6}, 0.1); },
                                      {logits}, 1e-6, 1e-4);
  EXPECT_TRUE(report.passed) << hkd::describe(report);
}

TEST(TotalLoss, WeightedSum) {
  hkd::LossConfig cfg;
  cfg.lambda_ad = 1;
  cfg.lambda_ld = 1;
  const auto one = Tensor<double>::scalar(1);
  EXPECT_DOUBLE_EQ(hkd::total_loss<double>(one, one, one, one, one, cfg).total.item(), 4.5);
}

TEST(TotalLoss, ReducesToBaselineWithoutDistillation) {
  const hkd::LossConfig cfg;
  const auto ce = Tensor<double>::scalar(2), ctc = Tensor<double>::scalar(3), qua = Tensor<double>::scalar(0.25);
  const auto b = hkd::total_loss<double>(ce, ctc, qua, Tensor<double>::scalar(7), std::nullopt, cfg);
  EXPECT_DOUBLE_EQ(b.total.item(), 2 + 0.5 * 3 + 0.25);
  EXPECT_DOUBLE_EQ(b.ld.item(), 0.0);
}

TEST(ForwardBatch, FiresOneVectorPerTarget) {
  const hkd::AsrModel<float> model(small_config());
  const hkd::SyntheticTeacher teacher(10, 8, 1);
  std::vector<hkd::BatchItem<float>> batch;
  const std::vector<std::vector<int>> targets = {{4, 5, 6, hkd::kEos}, {7, hkd::kEos}, {8, 8, 9, 4, 5, hkd::kEos}};
  for (std::size_t n = 0; n < targets.size(); ++n)
    batch.push_back({random_features<float>(n, 8 * 8), targets[n],
                     teacher.sequence("u", targets[n]).tensor<float>()});
  hkd::LossConfig lc;
  lc.lambda_ad = 1;
  lc.lambda_ld = 1;
  const auto out = hkd::forward_batch(model, batch, lc, hkd::DistillConfig{}, 3);
  for (std::size_t n = 0; n < targets.size(); ++n) {
    EXPECT_EQ(out.acoustics[n].dim(0), targets[n].size());
    EXPECT_EQ(out.states[n].dim(0), targets[n].size());
  }
  EXPECT_GT(out.losses.ad.item(), 0.0f);
  EXPECT_GT(out.losses.ld.item(), 0.0f);
  EXPECT_TRUE(std::isfinite(out.losses.total.item()));
}

TEST(ForwardBatch, CtcSkippedWhenInfeasible) {
  const hkd::AsrModel<float> model(small_config());
  // 16 frames -> 2 encoder steps cannot emit 3 CTC labels.
  const std::vector<hkd::BatchItem<float>> batch = {{random_features<float>(1, 16), {4, 5, 6, hkd::kEos}, {}}};
  const auto out = hkd::forward_batch(model, batch, hkd::LossConfig{}, hkd::DistillConfig{}, 1);
  EXPECT_EQ(out.ctc_skipped, 1u);
  EXPECT_EQ(out.losses.ctc.item(), 0.0f);
}

TEST(ForwardBatch, MissingTeacherIsAnError) {
  const hkd::AsrModel<float> model(small_config());
  const std::vector<hkd::BatchItem<float>> batch = {{random_features<float>(1, 40), {4, hkd::kEos}, {}}};
  hkd::LossConfig lc;
  lc.lambda_ld = 1;
  EXPECT_THROW(hkd::forward_batch(model, batch, lc, hkd::DistillConfig{}, 1), hkd::DataError);
}

TEST(ForwardBatch, TotalLossGradientOnMicroBatch) {
  const auto results = hkd::run_gradient_suite(11, 1e-3);
  const auto it = std::find_if(results.begin(), results.end(),
                               [](const auto& r) { return r.name == "total_loss_micro_batch"; });
  ASSERT_NE(it, results.end());
  EXPECT_TRUE(it->report.passed) << hkd::describe(it->report);
}
