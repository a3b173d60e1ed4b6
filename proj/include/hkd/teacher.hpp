#pragma once

// Teacher token embeddings: the HKDEMB1 store produced offline, the length
// alignment check, and a deterministic synthetic teacher.
//
// HKDEMB1 (little-endian):
//   "HKDEMB1\0" | u32 version=1 | u32 D | u32 record_count
//   per record: u32 id_len | id bytes | u32 I | I*D float32 row-major

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hkd/binio.hpp"
#include "hkd/tensor.hpp"

namespace hkd {

inline constexpr char kEmbeddingMagic[8] = {'H', 'K', 'D', 'E', 'M', 'B', '1', '\0'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

// Teacher outputs for one utterance with the [CLS] position already removed;
// row I-1 is the sentence-final position paired with <EOS>.
struct TeacherSequence {
  std::string id;
  std::size_t length = 0;
  std::size_t dim = 0;
  std::vector<float> values;  // length x dim

  template <class T>
  Tensor<T> tensor() const {
    return Tensor<T>::matrix(length, dim, std::vector<T>(values.begin(), values.end()));
  }
};

class EmbeddingStore {
 public:
  explicit EmbeddingStore(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return records_.size(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  void add(TeacherSequence seq) {
    if (seq.dim != dim_)
      throw DataError("embedding store: record '" + seq.id + "' has D=" + std::to_string(seq.dim) +
                      ", store has D=" + std::to_string(dim_));
    if (seq.values.size() != seq.length * seq.dim)
      throw DataError("embedding store: record '" + seq.id + "' payload size mismatch");
    if (contains(seq.id)) throw DataError("embedding store: duplicate id '" + seq.id + "'");
    index_.emplace(seq.id, records_.size());
    records_.push_back(std::move(seq));
  }

  const TeacherSequence& at(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw DataError("embedding store: no record for utterance '" + id + "'");
    return records_[it->second];
  }

  const std::vector<TeacherSequence>& records() const { return records_; }

 private:
  std::size_t dim_;
  std::vector<TeacherSequence> records_;
  std::map<std::string, std::size_t> index_;
};

inline void write_embedding_file(const std::string& path, const EmbeddingStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os.write(kEmbeddingMagic, 8);
  binio::write_u32(os, kEmbeddingVersion);
  binio::write_u32(os, static_cast<std::uint32_t>(store.dim()));
  binio::write_u32(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& r : store.records()) {
    binio::write_string(os, r.id);
    binio::write_u32(os, static_cast<std::uint32_t>(r.length));
    binio::write_f32(os, r.values.data(), r.values.size());
  }
  if (!os) throw DataError("write failed for '" + path + "'");
}

// Parses and validates an HKDEMB1 file. When `expected_dim` is set, the
// file's D must match it.
inline EmbeddingStore load_embedding_file(const std::string& path, std::optional<std::size_t> expected_dim = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open embedding file '" + path + "'");
  binio::Reader in(is, "embedding file '" + path + "'");
  in.expect_magic(kEmbeddingMagic, 8);
  const auto version = in.u32("version");
  if (version != kEmbeddingVersion) throw DataError("embedding file '" + path + "': unsupported version " + std::to_string(version));
  const std::size_t dim = in.u32("D");
  if (expected_dim && *expected_dim != dim)
    throw DataError("embedding file '" + path + "': D mismatch (file " + std::to_string(dim) + ", config " +
                    std::to_string(*expected_dim) + ")");
  const std::size_t count = in.u32("record_count");
  EmbeddingStore store(dim);
  for (std::size_t r = 0; r < count; ++r) {
    TeacherSequence seq;
    seq.id = in.string("record id");
    seq.length = in.u32("token count");
    seq.dim = dim;
    seq.values = in.f32(seq.length * dim, "record payload");
    store.add(std::move(seq));
  }
  if (!in.at_end()) throw DataError("embedding file '" + path + "': trailing bytes after last record");
  return store;
}

// Teacher length must equal the target length I (targets end with <EOS>).
inline void align_check(const TeacherSequence& teacher, std::size_t target_length) {
  if (teacher.length != target_length)
    throw DataError("teacher/target length mismatch for utterance '" + teacher.id + "': teacher " +
                    std::to_string(teacher.length) + ", target " + std::to_string(target_length));
}

// Context-free teacher: token t always maps to the same seeded unit vector.
class SyntheticTeacher {
 public:
  SyntheticTeacher(std::size_t vocab, std::size_t dim, std::uint64_t seed) : dim_(dim), table_(vocab * dim) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t t = 0; t < vocab; ++t) {
      std::vector<double> v(dim);
      double norm = 0;
      for (auto& x : v) {
        x = normal(rng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < dim; ++j) table_[t * dim + j] = static_cast<float>(v[j] / norm);
    }
  }

  std::size_t dim() const { return dim_; }
  std::size_t vocab() const { return table_.size() / dim_; }

  std::span<const float> vector(int token) const {
    if (token < 0 || static_cast<std::size_t>(token) >= vocab())
      throw DataError("synthetic teacher: token id " + std::to_string(token) + " out of range");
    return {table_.data() + static_cast<std::size_t>(token) * dim_, dim_};
  }

  TeacherSequence sequence(const std::string& id, const std::vector<int>& tokens) const {
    TeacherSequence seq{id, tokens.size(), dim_, {}};
    for (const int t : tokens) {
      const auto v = vector(t);
      seq.values.insert(seq.values.end(), v.begin(), v.end());
    }
    return seq;
  }

 private:
  std::size_t dim_;
  std::vector<float> table_;
};

}  // namespace hkd
