#pragma once

// Versioned binary checkpoints: header, config echo, then named parameters
// with shapes.  Layout (little-endian):
//   "SIFLCKPT" | u32 version | u32 scalar bytes | u64 len + config JSON
//   u64 count | per parameter: u32 len + name, u32 ndim, ndim x u64, values

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "siflip/config_io.hpp"
#include "siflip/layers.hpp"

namespace siflip {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint32_t scalar_bytes = 8;
  std::string config_json;
  std::vector<std::string> order;
  std::map<std::string, CheckpointTensor> tensors;
};

namespace detail {
template <typename V>
void put(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename V>
V get(std::istream& in, const std::string& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ParseError("truncated checkpoint: " + path);
  return v;
}
}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<T>& store, const std::string& config_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  out.write("SIFLCKPT", 8);
  detail::put(out, kCheckpointVersion);
  detail::put(out, static_cast<std::uint32_t>(sizeof(T)));
  detail::put(out, static_cast<std::uint64_t>(config_json.size()));
  out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  detail::put(out, static_cast<std::uint64_t>(store.all().size()));
  for (const auto& p : store.all()) {
    detail::put(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put(out, static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) detail::put(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(T)));
  }
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint: " + path.string());
  const std::string p = path.string();
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "SIFLCKPT", 8) != 0) throw ParseError("not a checkpoint file: " + p);
  Checkpoint ck;
  ck.version = detail::get<std::uint32_t>(in, p);
  if (ck.version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(ck.version));
  ck.scalar_bytes = detail::get<std::uint32_t>(in, p);
  if (ck.scalar_bytes != 4 && ck.scalar_bytes != 8) throw ParseError("bad scalar width in checkpoint: " + p);
  ck.config_json.resize(detail::get<std::uint64_t>(in, p));
  in.read(ck.config_json.data(), static_cast<std::streamsize>(ck.config_json.size()));
  const auto count = detail::get<std::uint64_t>(in, p);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(detail::get<std::uint32_t>(in, p), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    CheckpointTensor t;
    t.shape.resize(detail::get<std::uint32_t>(in, p));
    for (auto& d : t.shape) d = detail::get<std::uint64_t>(in, p);
    t.values.resize(ad::numel(t.shape));
    for (auto& v : t.values) v = ck.scalar_bytes == 4 ? detail::get<float>(in, p) : detail::get<double>(in, p);
    ck.order.push_back(name);
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

/// Copies checkpoint values into a store with identical names and shapes.
template <typename T>
void load_into(const Checkpoint& ck, ParameterStore<T>& store) {
  for (auto& p : store.all()) {
    auto it = ck.tensors.find(p.name);
    if (it == ck.tensors.end()) throw ConfigError("checkpoint lacks parameter " + p.name);
    if (it->second.shape != p.shape) throw ConfigError("checkpoint shape mismatch for " + p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(it->second.values[i]);
  }
  if (ck.tensors.size() != store.all().size()) throw ConfigError("checkpoint has parameters the model does not know");
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

}  // namespace siflip
