#pragma once

// Run configuration: key=value text with '#' comments. Every key maps to one
// field; unknown keys are rejected.

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "hkd/augment.hpp"
#include "hkd/losses.hpp"
#include "hkd/model.hpp"
#include "hkd/optim.hpp"
#ifndef HKD_NO_DISTILL
#include "hkd/distill.hpp"
#endif

namespace hkd {

enum class TeacherSource { kNone, kSynthetic, kFile };

inline const char* to_string(TeacherSource s) {
  switch (s) {
    case TeacherSource::kNone: return "none";
    case TeacherSource::kSynthetic: return "synthetic";
    case TeacherSource::kFile: return "file";
  }
  return "?";
}

struct RunConfig {
  std::string data_dir = "data";
  std::string output_dir = "run";
  std::size_t epochs = 200;
  std::size_t batch_size = 5;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;       // epochs between dev evaluations
  std::size_t eval_beam = 1;        // beam used for dev CER during training
  double stop_train_cer = -1.0;     // stop once train CER falls below; < 0 disables
  bool augment = false;
  TeacherSource teacher = TeacherSource::kNone;
  std::string teacher_file;         // HKDEMB1 for the train split; dev/test use <data_dir>/<split>.emb
  std::uint64_t teacher_seed = 7;

  ModelConfig model;
  LossConfig loss;
#ifndef HKD_NO_DISTILL
  DistillConfig distill;
#endif
  OptimConfig optim;
  AugmentConfig spec;

  void validate() const {
    if (epochs == 0 || batch_size == 0 || eval_every == 0 || eval_beam == 0)
      throw ConfigError("epochs, batch_size, eval_every and eval_beam must be >= 1");
    model.validate();
    loss.validate();
#ifndef HKD_NO_DISTILL
    distill.validate();
#else
    if (loss.lambda_ad > 0 || loss.lambda_ld > 0) throw ConfigError("distillation is not available in this build");
#endif
    optim.validate();
    spec.validate();
  }
};

namespace detail {

struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <class V>
V parse_value(const std::string& key, const std::string& text) {
  std::istringstream ss(text);
  V v{};
  if constexpr (std::is_same_v<V, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
  } else {
    if (!(ss >> v) || !ss.eof()) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
    if constexpr (std::is_unsigned_v<V>)
      if (text.find('-') != std::string::npos) throw ConfigError("config key '" + key + "': must be >= 0");
  }
  return v;
}

template <class V>
std::string format_value(const V& v) {
  if constexpr (std::is_same_v<V, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<V, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<V>) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  } else {
    return std::to_string(v);
  }
}

template <class V>
Field field(std::string key, V& ref) {
  return {key, [&ref, key](const std::string& t) {
            if constexpr (std::is_same_v<V, std::string>)
              ref = t;
            else
              ref = parse_value<V>(key, t);
          },
          [&ref] { return format_value(ref); }};
}

}  // namespace detail

inline std::vector<detail::Field> config_fields(RunConfig& c) {
  std::vector<detail::Field> f = {
      detail::field("data_dir", c.data_dir),
      detail::field("output_dir", c.output_dir),
      detail::field("train.epochs", c.epochs),
      detail::field("train.batch_size", c.batch_size),
      detail::field("train.seed", c.seed),
      detail::field("train.eval_every", c.eval_every),
      detail::field("train.eval_beam", c.eval_beam),
      detail::field("train.stop_train_cer", c.stop_train_cer),
      detail::field("train.augment", c.augment),
      {"teacher.source",
       [&c](const std::string& t) {
         if (t == "none") c.teacher = TeacherSource::kNone;
         else if (t == "synthetic") c.teacher = TeacherSource::kSynthetic;
         else if (t == "file") c.teacher = TeacherSource::kFile;
         else throw ConfigError("teacher.source must be none, synthetic or file");
       },
       [&c] { return std::string(to_string(c.teacher)); }},
      detail::field("teacher.file", c.teacher_file),
      detail::field("teacher.seed", c.teacher_seed),
      detail::field("model.d_model", c.model.d_model),
      detail::field("model.heads", c.model.heads),
      detail::field("model.encoder_blocks", c.model.encoder_blocks),
      detail::field("model.decoder_blocks", c.model.decoder_blocks),
      detail::field("model.ffn_multiplier", c.model.ffn_multiplier),
      detail::field("model.feature_dim", c.model.feature_dim),
      detail::field("model.vocab", c.model.vocab),
      detail::field("model.frontend_channels", c.model.frontend_channels),
      detail::field("model.teacher_dim", c.model.teacher_dim),
      detail::field("model.seed", c.model.seed),
      detail::field("cif.beta", c.model.cif.beta),
      detail::field("cif.tail_threshold", c.model.cif.tail_threshold),
      detail::field("cif.tail_handling", c.model.cif.tail_handling),
      detail::field("cif.allow_multi_fire", c.model.cif.allow_multi_fire),
      detail::field("cif.conv_kernel", c.model.cif.conv_kernel),
      detail::field("loss.w_ce", c.loss.w_ce),
      detail::field("loss.w_ctc", c.loss.w_ctc),
      detail::field("loss.w_qua", c.loss.w_qua),
      detail::field("loss.label_smoothing", c.loss.label_smoothing),
      detail::field("loss.lambda_ad", c.loss.lambda_ad),
      detail::field("loss.lambda_ld", c.loss.lambda_ld),
#ifndef HKD_NO_DISTILL
      detail::field("distill.tau", c.distill.tau),
      detail::field("distill.negatives", c.distill.negatives),
      detail::field("distill.alpha_mse", c.distill.alpha_mse),
      detail::field("distill.alpha_mse_ld", c.distill.alpha_mse_ld),
      detail::field("distill.alpha_cos", c.distill.alpha_cos),
      {"distill.ad_kind", [&c](const std::string& t) { c.distill.ad_kind = parse_ad_loss_kind(t); },
       [&c] { return std::string(to_string(c.distill.ad_kind)); }},
#endif
      detail::field("optim.lr", c.optim.lr),
      detail::field("optim.beta1", c.optim.beta1),
      detail::field("optim.beta2", c.optim.beta2),
      detail::field("optim.eps", c.optim.eps),
      detail::field("optim.weight_decay", c.optim.weight_decay),
      detail::field("optim.clip_norm", c.optim.clip_norm),
      detail::field("optim.warmup_steps", c.optim.warmup_steps),
      detail::field("augment.freq_width", c.spec.freq_width),
      detail::field("augment.freq_masks", c.spec.freq_masks),
      detail::field("augment.time_width", c.spec.time_width),
      detail::field("augment.time_masks", c.spec.time_masks),
      detail::field("augment.p", c.spec.p),
  };
  return f;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (auto& f : config_fields(c))
    if (f.key == key) {
      f.set(value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

// Applies "key=value" (as given to --set).
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set_config_value(c, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

inline void apply_config_text(RunConfig& c, const std::string& text, const std::string& origin = "config") {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_override(c, line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  RunConfig c;
  apply_config_text(c, ss.str(), path);
  return c;
}

// Canonical text with every key, in a fixed order.
inline std::string config_text(const RunConfig& c) {
  RunConfig copy = c;
  std::string out;
  for (const auto& f : config_fields(copy)) out += f.key + "=" + f.get() + "\n";
  return out;
}

}  // namespace hkd
