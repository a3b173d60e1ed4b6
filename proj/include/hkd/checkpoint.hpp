#pragma once

// "HKDCKPT1" | u32 version=1 | u32 len + config text | u32 tensor_count
// per tensor: u32 name_len | name | u32 rank | rank * u32 dims | float32 payload

#include <fstream>
#include <string>
#include <vector>

#include "hkd/binio.hpp"
#include "hkd/nn.hpp"

namespace hkd {

inline constexpr char kCheckpointMagic[8] = {'H', 'K', 'D', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string config_text;
  std::vector<NamedTensor> tensors;
};

template <class T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params, const std::string& config_text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint '" + path + "' for writing");
  os.write(kCheckpointMagic, 8);
  binio::write_u32(os, kCheckpointVersion);
  binio::write_string(os, config_text);
  binio::write_u32(os, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& [name, t] : params.entries()) {
    binio::write_string(os, name);
    binio::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (const auto d : t.shape()) binio::write_u32(os, static_cast<std::uint32_t>(d));
    const std::vector<float> v(t.data().begin(), t.data().end());
    binio::write_f32(os, v.data(), v.size());
  }
  if (!os) throw DataError("write failed for checkpoint '" + path + "'");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  binio::Reader in(is, "checkpoint '" + path + "'");
  in.expect_magic(kCheckpointMagic, 8);
  if (const auto v = in.u32("version"); v != kCheckpointVersion)
    throw DataError("checkpoint '" + path + "': unsupported version " + std::to_string(v));
  Checkpoint ck;
  ck.config_text = in.string("config");
  const std::size_t count = in.u32("tensor_count");
  for (std::size_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = in.string("tensor name");
    const std::size_t rank = in.u32("rank");
    for (std::size_t r = 0; r < rank; ++r) t.shape.push_back(in.u32("dim"));
    t.values = in.f32(shape_numel(t.shape), "tensor payload");
    ck.tensors.push_back(std::move(t));
  }
  if (!in.at_end()) throw DataError("checkpoint '" + path + "': trailing bytes");
  return ck;
}

// Copies checkpoint values into a store with the same names and shapes.
template <class T>
void restore_parameters(const Checkpoint& ck, ParamStore<T>& params) {
  const auto& entries = params.entries();
  if (entries.size() != ck.tensors.size())
    throw DataError("checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, model has " +
                    std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& src = ck.tensors[i];
    if (src.name != entries[i].first || src.shape != entries[i].second.shape())
      throw DataError("checkpoint tensor '" + src.name + "' does not match model parameter '" + entries[i].first + "'");
    auto dst = entries[i].second;
    auto v = dst.value();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<T>(src.values[k]);
  }
}

}  // namespace hkd
