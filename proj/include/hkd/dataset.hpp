#pragma once

// Utterance datasets on disk and the synthetic corpus generator.
//
// A dataset directory holds, per split S in {train, dev, test}:
//   S.fea  HKDFEA1 features: "HKDFEA1\0" | u32 version=1 | u32 dim | u32 count
//          per record: u32 id_len | id | u32 T | T*dim float32
//   S.txt  transcripts, "id<TAB>space-separated token ids" per line
//   S.emb  optional HKDEMB1 teacher embeddings
// plus vocab.txt (one token per line, line number = id).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hkd/binio.hpp"
#include "hkd/losses.hpp"
#include "hkd/seed.hpp"
#include "hkd/teacher.hpp"

namespace hkd {

inline constexpr char kFeatureMagic[8] = {'H', 'K', 'D', 'F', 'E', 'A', '1', '\0'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline const std::vector<std::string> kSplits = {"train", "dev", "test"};

struct Utterance {
  std::string id;
  std::size_t frames = 0;
  std::vector<float> features;  // frames x dim
  std::vector<int> targets;     // ends with <EOS>
};

struct Dataset {
  std::size_t dim = 80;
  std::vector<Utterance> utterances;

  template <class T>
  Tensor<T> features(std::size_t i) const {
    const auto& u = utterances.at(i);
    return Tensor<T>::matrix(u.frames, dim, std::vector<T>(u.features.begin(), u.features.end()));
  }
};

inline void write_features(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os.write(kFeatureMagic, 8);
  binio::write_u32(os, kFeatureVersion);
  binio::write_u32(os, static_cast<std::uint32_t>(ds.dim));
  binio::write_u32(os, static_cast<std::uint32_t>(ds.utterances.size()));
  for (const auto& u : ds.utterances) {
    binio::write_string(os, u.id);
    binio::write_u32(os, static_cast<std::uint32_t>(u.frames));
    binio::write_f32(os, u.features.data(), u.features.size());
  }
  if (!os) throw DataError("write failed for '" + path + "'");
}

inline void write_transcripts(const std::string& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  for (const auto& u : ds.utterances) {
    os << u.id << '\t';
    for (std::size_t i = 0; i < u.targets.size(); ++i) os << (i ? " " : "") << u.targets[i];
    os << '\n';
  }
}

inline std::vector<std::pair<std::string, std::vector<int>>> read_transcripts(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open transcript file '" + path + "'");
  std::vector<std::pair<std::string, std::vector<int>>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(path + ":" + std::to_string(lineno) + ": missing tab");
    std::vector<int> ids;
    std::istringstream ss(line.substr(tab + 1));
    std::string tok;
    while (ss >> tok) {
      std::size_t used = 0;
      int v = -1;
      try {
        v = std::stoi(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || v < 0) throw DataError(path + ":" + std::to_string(lineno) + ": bad token id '" + tok + "'");
      ids.push_back(v);
    }
    out.emplace_back(line.substr(0, tab), std::move(ids));
  }
  return out;
}

inline void write_vocab(const std::string& path, std::size_t vocab) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  const char* reserved[] = {"<PAD>", "<EOS>", "<BOS>", "<UNK>"};
  for (std::size_t t = 0; t < vocab; ++t)
    os << (t < 4 ? std::string(reserved[t]) : "tok" + std::to_string(t)) << '\n';
}

inline std::vector<std::string> read_vocab(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open vocabulary '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

// Reads S.fea and S.txt and validates ids, targets and feature values.
inline Dataset load_split(const std::string& dir, const std::string& split, std::size_t vocab) {
  const std::string fea = dir + "/" + split + ".fea";
  std::ifstream is(fea, std::ios::binary);
  if (!is) throw DataError("cannot open feature file '" + fea + "'");
  binio::Reader in(is, "feature file '" + fea + "'");
  in.expect_magic(kFeatureMagic, 8);
  if (const auto v = in.u32("version"); v != kFeatureVersion)
    throw DataError("feature file '" + fea + "': unsupported version " + std::to_string(v));
  Dataset ds;
  ds.dim = in.u32("dim");
  const std::size_t count = in.u32("record_count");
  std::map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < count; ++r) {
    Utterance u;
    u.id = in.string("record id");
    u.frames = in.u32("frame count");
    u.features = in.f32(u.frames * ds.dim, "feature payload");
    for (const float x : u.features)
      if (!std::isfinite(x)) throw DataError("feature file '" + fea + "': non-finite value in '" + u.id + "'");
    if (!index.emplace(u.id, ds.utterances.size()).second) throw DataError("duplicate utterance id '" + u.id + "'");
    ds.utterances.push_back(std::move(u));
  }
  if (!in.at_end()) throw DataError("feature file '" + fea + "': trailing bytes after last record");

  std::size_t matched = 0;
  for (auto& [id, targets] : read_transcripts(dir + "/" + split + ".txt")) {
    const auto it = index.find(id);
    if (it == index.end()) throw DataError("transcript for unknown utterance '" + id + "'");
    if (targets.empty() || targets.back() != kEos)
      throw DataError("targets of '" + id + "' must be non-empty and end with <EOS>");
    for (const int t : targets)
      if (static_cast<std::size_t>(t) >= vocab || t == kPad || t == kBos)
        throw DataError("targets of '" + id + "' contain invalid id " + std::to_string(t));
    ds.utterances[it->second].targets = std::move(targets);
    ++matched;
  }
  if (matched != ds.utterances.size()) throw DataError("split '" + split + "': utterances without transcripts");
  return ds;
}

inline void save_split(const std::string& dir, const std::string& split, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  write_features(dir + "/" + split + ".fea", ds);
  write_transcripts(dir + "/" + split + ".txt", ds);
}

struct SyntheticConfig {
  std::size_t vocab = 20;
  std::size_t train = 50;
  std::size_t dev = 20;
  std::size_t test = 20;
  std::size_t min_tokens = 3;  // counts <EOS>
  std::size_t max_tokens = 8;
  double frames_per_token = 8.0;
  double jitter = 0.25;
  double noise = 0.1;
  std::size_t dim = 80;
  std::uint64_t seed = 1;
  // The trailing <EOS> segment is stretched until the utterance has at least
  // this many frames per target token; 0 disables.
  std::size_t min_frames_per_target = 8;

  void validate() const {
    if (vocab < kFirstRegularToken + 1) throw ConfigError("gen-data: vocab must exceed the 4 reserved ids");
    if (min_tokens < 2 || max_tokens < min_tokens) throw ConfigError("gen-data: need 2 <= min_tokens <= max_tokens");
    if (!(frames_per_token >= 1) || jitter < 0 || jitter >= 1 || noise < 0)
      throw ConfigError("gen-data: invalid frame or noise settings");
  }
};

// Per-token N(0, 1) spectral templates, including <EOS>.
inline std::vector<std::vector<float>> token_templates(const SyntheticConfig& cfg) {
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7e3a));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<float>> out(cfg.vocab, std::vector<float>(cfg.dim));
  for (auto& t : out)
    for (auto& v : t) v = static_cast<float>(normal(rng));
  return out;
}

// Each token, <EOS> included, contributes round(mu * (1 + j)) frames of its
// template plus noise, with j uniform in [-jitter, jitter]. The <EOS> segment
// then grows to reach min_frames_per_target * I frames.
inline Dataset generate_split(const SyntheticConfig& cfg, const std::string& split, std::size_t count) {
  cfg.validate();
  const auto templates = token_templates(cfg);
  const auto split_index =
      static_cast<std::size_t>(std::find(kSplits.begin(), kSplits.end(), split) - kSplits.begin());
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x5b1, split_index));
  std::uniform_int_distribution<std::size_t> length(cfg.min_tokens, cfg.max_tokens);
  std::uniform_int_distribution<int> token(kFirstRegularToken, static_cast<int>(cfg.vocab) - 1);
  std::uniform_real_distribution<double> jitter(-cfg.jitter, cfg.jitter);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  Dataset ds;
  ds.dim = cfg.dim;
  for (std::size_t n = 0; n < count; ++n) {
    Utterance u;
    char name[32];
    std::snprintf(name, sizeof name, "%s-%04zu", split.c_str(), n);
    u.id = name;
    const std::size_t len = length(rng);
    for (std::size_t i = 0; i + 1 < len; ++i) u.targets.push_back(token(rng));
    u.targets.push_back(kEos);
    for (const int t : u.targets) {
      const double j = cfg.jitter > 0 ? jitter(rng) : 0.0;
      auto frames = static_cast<std::size_t>(std::max(1.0, std::round(cfg.frames_per_token * (1.0 + j))));
      if (const std::size_t want = cfg.min_frames_per_target * len; t == kEos && u.frames + frames < want)
        frames = want - u.frames;
      for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t k = 0; k < cfg.dim; ++k)
          u.features.push_back(templates[static_cast<std::size_t>(t)][k] + static_cast<float>(noise(rng)));
      u.frames += frames;
    }
    ds.utterances.push_back(std::move(u));
  }
  return ds;
}

// Writes vocab.txt and all three splits; with teacher_dim > 0 also writes
// synthetic-teacher S.emb files.
inline void generate_synthetic(const SyntheticConfig& cfg, const std::string& dir, std::size_t teacher_dim = 0,
                               std::uint64_t teacher_seed = 7) {
  std::filesystem::create_directories(dir);
  write_vocab(dir + "/vocab.txt", cfg.vocab);
  const std::size_t counts[] = {cfg.train, cfg.dev, cfg.test};
  for (std::size_t s = 0; s < kSplits.size(); ++s) {
    const Dataset ds = generate_split(cfg, kSplits[s], counts[s]);
    save_split(dir, kSplits[s], ds);
    if (teacher_dim > 0) {
      const SyntheticTeacher teacher(cfg.vocab, teacher_dim, teacher_seed);
      EmbeddingStore store(teacher_dim);
      for (const auto& u : ds.utterances) store.add(teacher.sequence(u.id, u.targets));
      write_embedding_file(dir + "/" + kSplits[s] + ".emb", store);
    }
  }
}

}  // namespace hkd
