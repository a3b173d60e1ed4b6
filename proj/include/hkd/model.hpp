#pragma once

// The CIF student: down-sampling encoder, CIF bridge, autoregressive
// decoder, auxiliary CTC head, and (unless HKD_NO_DISTILL is defined) the two
// distillation projection heads.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hkd/cif.hpp"
#include "hkd/ctc.hpp"
#include "hkd/losses.hpp"
#include "hkd/nn.hpp"
#include "hkd/ops.hpp"
#ifndef HKD_NO_DISTILL
#include "hkd/distill.hpp"
#endif

namespace hkd {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t encoder_blocks = 4;
  std::size_t decoder_blocks = 2;
  std::size_t ffn_multiplier = 4;
  std::size_t feature_dim = 80;
  std::size_t vocab = 20;
  std::size_t frontend_channels = 4;
  std::size_t teacher_dim = 64;
  std::uint64_t seed = 1;
  CifConfig cif = [] {
    CifConfig c;
    c.allow_multi_fire = true;
    return c;
  }();

  void validate() const {
    if (d_model == 0 || heads == 0 || d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
    if (vocab < kFirstRegularToken + 1) throw ConfigError("vocab must hold the 4 reserved ids plus at least one token");
    if (feature_dim < 2) throw ConfigError("feature_dim must be >= 2");
    if (frontend_channels == 0 || ffn_multiplier == 0) throw ConfigError("frontend_channels and ffn_multiplier must be >= 1");
    cif.validate();
  }

  // Encoder blocks after which a stride-2 max-pool runs (two pools in total).
  std::vector<std::size_t> pool_positions() const {
    const std::size_t n = encoder_blocks;
    if (n == 0) return {};
    return {std::max<std::size_t>(1, n / 3) - 1, std::max<std::size_t>(1, 2 * n / 3) - 1};
  }
};

// Frames after the encoder: floor(floor(floor(T/2)/2)/2).
inline std::size_t encoder_length(std::size_t frames) { return frames / 2 / 2 / 2; }

template <class T>
struct EncoderBlock {
  LayerNorm<T> ln_attn, ln_conv, ln_ffn;
  MultiHeadAttention<T> attn;
  Tensor<T> conv_weight, conv_bias;
  FeedForward<T> ffn;

  EncoderBlock(ParamStore<T>& s, const std::string& name, const ModelConfig& c)
      : ln_attn(s, name + ".ln_attn", c.d_model),
        ln_conv(s, name + ".ln_conv", c.d_model),
        ln_ffn(s, name + ".ln_ffn", c.d_model),
        attn(s, name + ".attn", c.d_model, c.heads),
        conv_weight(s.create(name + ".conv.weight", {3, c.d_model, c.d_model}, Init::kUniform,
                             xavier_bound(3 * c.d_model, c.d_model))),
        conv_bias(s.create(name + ".conv.bias", {c.d_model}, Init::kZeros)),
        ffn(s, name + ".ffn", c.d_model, c.d_model * c.ffn_multiplier) {}

  Tensor<T> operator()(Tensor<T> x) const {
    x = add(x, attn(ln_attn(x), false));
    x = add(x, relu(conv1d(ln_conv(x), conv_weight, conv_bias)));
    return add(x, ffn(ln_ffn(x)));
  }
};

template <class T>
struct DecoderBlock {
  LayerNorm<T> ln_attn, ln_ffn;
  MultiHeadAttention<T> attn;
  FeedForward<T> ffn;

  DecoderBlock(ParamStore<T>& s, const std::string& name, const ModelConfig& c)
      : ln_attn(s, name + ".ln_attn", c.d_model),
        ln_ffn(s, name + ".ln_ffn", c.d_model),
        attn(s, name + ".attn", c.d_model, c.heads),
        ffn(s, name + ".ffn", c.d_model, c.d_model * c.ffn_multiplier) {}

  Tensor<T> operator()(Tensor<T> x) const {
    x = add(x, attn(ln_attn(x), true));
    return add(x, ffn(ln_ffn(x)));
  }
};

template <class T>
struct DecoderOutput {
  Tensor<T> logits;  // (I x V)
  Tensor<T> states;  // (I x d), before the output projection
};

template <class T>
class AsrModel {
 public:
  explicit AsrModel(const ModelConfig& cfg) : cfg_(cfg), params_(cfg.seed) {
    cfg_.validate();
    auto& s = params_;
    const std::size_t d = cfg_.d_model, ch = cfg_.frontend_channels;
    frontend_weight_ = s.create("encoder.frontend.conv.weight", {ch, 1, 3, 3}, Init::kUniform, xavier_bound(9, 9 * ch));
    frontend_bias_ = s.create("encoder.frontend.conv.bias", {ch}, Init::kZeros);
    frontend_proj_ = Linear<T>(s, "encoder.frontend.proj", ch * (cfg_.feature_dim / 2), d);
    for (std::size_t b = 0; b < cfg_.encoder_blocks; ++b)
      encoder_blocks_.emplace_back(s, "encoder.block" + std::to_string(b), cfg_);
    encoder_norm_ = LayerNorm<T>(s, "encoder.norm", d);
    ctc_head_ = Linear<T>(s, "ctc.head", d, cfg_.vocab + 1);
    weight_predictor_ = CifWeightPredictor<T>(s, "cif", d, d, cfg_.cif.conv_kernel);
    embedding_ = s.create("decoder.embedding", {cfg_.vocab, d}, Init::kUniform, 1.0);
    decoder_input_ = Linear<T>(s, "decoder.input", 2 * d, d);
    for (std::size_t b = 0; b < cfg_.decoder_blocks; ++b)
      decoder_blocks_.emplace_back(s, "decoder.block" + std::to_string(b), cfg_);
    decoder_norm_ = LayerNorm<T>(s, "decoder.norm", d);
    output_ = Linear<T>(s, "decoder.output", d, cfg_.vocab, 0.1);
#ifndef HKD_NO_DISTILL
    // Registered last so the baseline parameters do not depend on them.
    ad_head_ = ProjectionHead<T>(s, "distill.acoustic", d, cfg_.teacher_dim);
    ld_head_ = ProjectionHead<T>(s, "distill.linguistic", d, cfg_.teacher_dim);
#endif
  }

  AsrModel(const AsrModel&) = delete;
  AsrModel& operator=(const AsrModel&) = delete;
  AsrModel(AsrModel&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // X (T x feature_dim) -> H (floor(T/8) x d_model).
  Tensor<T> encode(const Tensor<T>& features) const {
    if (features.rank() != 2 || features.dim(1) != cfg_.feature_dim)
      throw ShapeError("encode: expected (T x " + std::to_string(cfg_.feature_dim) + ") features, got " +
                       shape_str(features.shape()));
    const std::size_t frames = features.dim(0);
    if (frames < 8) throw ShapeError("encode: need at least 8 frames, got " + std::to_string(frames));
    Tensor<T> x = relu(conv2d(features, frontend_weight_, frontend_bias_, 2, 1));
    const std::size_t steps = x.dim(1);
    x = reshape(swap_leading_axes(x), {steps, x.dim(0) * x.dim(2)});
    x = add(frontend_proj_(x), positional_encoding<T>(steps, cfg_.d_model));
    const auto pools = cfg_.pool_positions();
    if (encoder_blocks_.empty()) x = max_pool1d(max_pool1d(x));
    for (std::size_t b = 0; b < encoder_blocks_.size(); ++b) {
      x = encoder_blocks_[b](x);
      for (const auto p : pools)
        if (p == b) x = max_pool1d(x);
    }
    return encoder_norm_(x);
  }

  Tensor<T> cif_weights(const Tensor<T>& encoded) const { return weight_predictor_(encoded); }

  // Frame log-probabilities over V + 1 classes (blank last).
  Tensor<T> ctc_log_probs(const Tensor<T>& encoded) const { return log_softmax(ctc_head_(encoded)); }

  // Teacher-forced decoder pass: position i sees acoustics 0..i and tokens
  // previous[0..i] (previous[0] is <BOS>).
  DecoderOutput<T> decode_step(const Tensor<T>& acoustics, const std::vector<int>& previous) const {
    if (acoustics.rank() != 2 || acoustics.dim(0) != previous.size() || acoustics.dim(1) != cfg_.d_model)
      throw ShapeError("decode_step: " + std::to_string(acoustics.rank() == 2 ? acoustics.dim(0) : 0) +
                       " acoustic vectors for " + std::to_string(previous.size()) + " token positions");
    const std::size_t len = previous.size();
    Tensor<T> x = decoder_input_(concat<T>({acoustics, embedding(embedding_, previous)}, 1));
    x = add(x, positional_encoding<T>(len, cfg_.d_model));
    for (const auto& block : decoder_blocks_) x = block(x);
    Tensor<T> states = decoder_norm_(x);
    return {output_(states), states};
  }

#ifndef HKD_NO_DISTILL
  const ProjectionHead<T>& acoustic_head() const { return ad_head_; }
  const ProjectionHead<T>& linguistic_head() const { return ld_head_; }
#endif

  // Deep copy of the parameters (for evaluation snapshots).
  AsrModel clone() const {
    AsrModel copy(cfg_);
    copy.load_values(params_);
    return copy;
  }

  template <class U>
  void load_values(const ParamStore<U>& other) {
    const auto& src = other.entries();
    const auto& dst = params_.entries();
    if (src.size() != dst.size()) throw ConfigError("parameter count mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i].first != dst[i].first || src[i].second.shape() != dst[i].second.shape())
        throw ConfigError("parameter layout mismatch at " + dst[i].first);
      auto out = dst[i].second;
      auto v = out.value();
      for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<T>(src[i].second.data()[k]);
    }
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  Tensor<T> frontend_weight_, frontend_bias_;
  Linear<T> frontend_proj_;
  std::vector<EncoderBlock<T>> encoder_blocks_;
  LayerNorm<T> encoder_norm_;
  Linear<T> ctc_head_;
  CifWeightPredictor<T> weight_predictor_;
  Tensor<T> embedding_;
  Linear<T> decoder_input_;
  std::vector<DecoderBlock<T>> decoder_blocks_;
  LayerNorm<T> decoder_norm_;
  Linear<T> output_;
#ifndef HKD_NO_DISTILL
  ProjectionHead<T> ad_head_, ld_head_;
#endif
};

// <BOS>-shifted decoder inputs for a target sequence.
inline std::vector<int> shift_right(const std::vector<int>& targets) {
  std::vector<int> prev{kBos};
  prev.insert(prev.end(), targets.begin(), targets.end() - (targets.empty() ? 0 : 1));
  return prev;
}

// CTC labels: the target without <EOS>/<PAD>.
inline std::vector<int> ctc_targets(const std::vector<int>& targets) {
  std::vector<int> out;
  for (const int t : targets)
    if (t != kEos && t != kPad) out.push_back(t);
  return out;
}

template <class T>
struct BatchItem {
  Tensor<T> features;
  std::vector<int> targets;  // ends with <EOS>
  std::optional<Tensor<T>> teacher;
};

template <class T>
struct BatchOutput {
  LossBundle<T> losses;
  std::vector<Tensor<T>> acoustics;  // C per utterance (I x d)
  std::vector<Tensor<T>> states;     // S per utterance (I x d)
  std::size_t ctc_skipped = 0;
};

// Training-mode forward pass over a batch: scaled CIF, teacher forcing, all
// loss terms. Distillation terms are computed only when their weight is > 0.
template <class T>
BatchOutput<T> forward_batch(const AsrModel<T>& model, const std::vector<BatchItem<T>>& batch, const LossConfig& loss_cfg,
#ifndef HKD_NO_DISTILL
                             const DistillConfig& distill_cfg,
#endif
                             std::uint64_t seed, bool warn_on_clamp = false) {
  if (batch.empty()) throw ShapeError("forward_batch: empty batch");
  const auto& cif = model.config().cif;
  BatchOutput<T> out;
  std::vector<Tensor<T>> logits, qua_terms, ctc_terms;
  std::vector<int> all_targets;
  for (const auto& item : batch) {
    const std::size_t len = item.targets.size();
    if (len == 0) throw DataError("forward_batch: empty target sequence");
    const Tensor<T> h = model.encode(item.features);
    const Tensor<T> a = model.cif_weights(h);
    qua_terms.push_back(quantity_loss(a, len));
    const auto fired = integrate_and_fire(scale_weights(a, len, cif), h, cif);
    if (fired.plan.tokens != len)
      throw NumericError("forward_batch: scaled CIF fired " + std::to_string(fired.plan.tokens) + " tokens for " +
                         std::to_string(len) + " targets");
    auto dec = model.decode_step(fired.acoustics, shift_right(item.targets));
    logits.push_back(dec.logits);
    all_targets.insert(all_targets.end(), item.targets.begin(), item.targets.end());
    const auto labels = ctc_targets(item.targets);
    if (h.dim(0) >= ctc_min_frames(labels))
      ctc_terms.push_back(ctc_loss(model.ctc_log_probs(h), labels));
    else
      ++out.ctc_skipped;
    out.acoustics.push_back(fired.acoustics);
    out.states.push_back(dec.states);
  }
  const Tensor<T> ce = ce_loss_smoothed(concat(logits, 0), all_targets, loss_cfg.label_smoothing);
  const Tensor<T> qua = mean(concat(qua_terms, 0));
  const Tensor<T> ctc = ctc_terms.empty() ? Tensor<T>::scalar(0) : mean(concat(ctc_terms, 0));

  std::optional<Tensor<T>> ad, ld;
#ifndef HKD_NO_DISTILL
  if (loss_cfg.lambda_ad > 0 || loss_cfg.lambda_ld > 0) {
    std::vector<Tensor<T>> teacher;
    for (const auto& item : batch) {
      if (!item.teacher) throw DataError("forward_batch: distillation enabled but a teacher sequence is missing");
      if (item.teacher->dim(0) != item.targets.size())
        throw DataError("forward_batch: teacher/target length mismatch");
      teacher.push_back(*item.teacher);
    }
    if (loss_cfg.lambda_ad > 0) {
      const auto& head = model.acoustic_head();
      switch (distill_cfg.ad_kind) {
        case AdLossKind::kContrastive:
          ad = contrastive_distillation(out.acoustics, head, teacher, distill_cfg, seed, warn_on_clamp);
          break;
        case AdLossKind::kMse: {
          std::vector<Tensor<T>> projected;
          for (const auto& c : out.acoustics) projected.push_back(head(c));
          ad = acd_mse_loss(projected, teacher, distill_cfg.alpha_mse);
          break;
        }
        case AdLossKind::kCos: {
          std::vector<Tensor<T>> projected;
          for (const auto& c : out.acoustics) projected.push_back(head(c));
          ad = acd_cos_loss(projected, teacher, distill_cfg.alpha_cos);
          break;
        }
      }
    }
    if (loss_cfg.lambda_ld > 0) {
      std::vector<Tensor<T>> projected;
      for (const auto& s : out.states) projected.push_back(model.linguistic_head()(s));
      ld = lrd_mse_loss(projected, teacher, distill_cfg.alpha_mse_ld);
    }
  }
#else
  (void)seed;
  (void)warn_on_clamp;
#endif
  out.losses = total_loss(ce, ctc, qua, ad, ld, loss_cfg);
  return out;
}

}  // namespace hkd
