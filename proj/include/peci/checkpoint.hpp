#pragma once

// Single-file checkpoint:
//   "PECICKPT" | u32 version | u64 header length | JSON header | raw arrays | u32 crc32
// The header lists every tensor (name, shape, kind, byte offset into the
// array section), the model config, dtype and optional optimizer state.
// Arrays are little-endian; the CRC covers every byte before the trailer.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "peci/cin.hpp"
#include "peci/config.hpp"
#include "peci/nn/optim.hpp"

namespace peci::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kMagic[8] = {'P', 'E', 'C', 'I', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

template <class T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

template <class T>
struct Loaded {
  cin::CinModel<T> model;
  std::optional<nn::AdamWState<T>> optimizer;
  nlohmann::json meta;
};

namespace detail {

template <class V>
void put(std::vector<char>& buf, const V& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  buf.insert(buf.end(), p, p + sizeof(V));
}

template <class V>
V take(const std::vector<char>& buf, std::size_t at) {
  V v;
  std::memcpy(&v, buf.data() + at, sizeof(V));
  return v;
}

inline std::uint32_t crc(const char* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace detail

/// Serializes to bytes; identical inputs always produce identical bytes.
template <class T>
std::vector<char> encode(const cin::CinModel<T>& model, const nn::AdamWState<T>* optimizer = nullptr,
                         const nlohmann::json& meta = nlohmann::json::object()) {
  using nlohmann::json;
  struct Entry {
    std::string name, kind;
    std::span<const T> data;
    nn::Shape shape;
  };
  std::vector<Entry> entries;
  const auto params = model.parameters();
  for (const auto& it : params.items()) {
    entries.push_back({it.name, it.trainable ? "param" : "buffer", it.tensor.values(), it.tensor.shape()});
  }
  if (optimizer) {
    std::size_t k = 0;
    for (const auto& it : params.items()) {
      if (!it.trainable) continue;
      if (k >= optimizer->m.size()) fail(ErrorCode::ShapeMismatch, "optimizer state does not cover every parameter");
      entries.push_back({it.name, "adam_m", optimizer->m[k], it.tensor.shape()});
      entries.push_back({it.name, "adam_v", optimizer->v[k], it.tensor.shape()});
      ++k;
    }
    if (k != optimizer->m.size()) fail(ErrorCode::ShapeMismatch, "optimizer state has extra slots");
  }
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    tensors.push_back({{"name", e.name}, {"kind", e.kind}, {"shape", e.shape}, {"offset", offset}});
    offset += e.data.size() * sizeof(T);
  }
  json header{{"dtype", dtype_name<T>()}, {"config", config::to_json(model.config())}, {"tensors", tensors},
              {"meta", meta}};
  if (optimizer) {
    const auto& c = optimizer->config;
    header["optimizer"] = {{"step", optimizer->step},
                           {"beta1", c.beta1},
                           {"beta2", c.beta2},
                           {"eps", c.eps},
                           {"weight_decay", c.weight_decay}};
  }
  const std::string text = header.dump();
  std::vector<char> buf(kMagic, kMagic + 8);
  detail::put(buf, kVersion);
  detail::put(buf, static_cast<std::uint64_t>(text.size()));
  buf.insert(buf.end(), text.begin(), text.end());
  for (const auto& e : entries) {
    const char* p = reinterpret_cast<const char*>(e.data.data());
    buf.insert(buf.end(), p, p + e.data.size() * sizeof(T));
  }
  detail::put(buf, detail::crc(buf.data(), buf.size()));
  return buf;
}

template <class T>
Loaded<T> decode(const std::vector<char>& buf) {
  using nlohmann::json;
  constexpr std::size_t kPrefix = 8 + 4 + 8;
  if (buf.size() < kPrefix + 4 || std::memcmp(buf.data(), kMagic, 8) != 0) {
    fail(ErrorCode::CorruptFile, "not a checkpoint (bad magic or truncated)");
  }
  const auto version = detail::take<std::uint32_t>(buf, 8);
  if (version != kVersion) {
    fail(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                         std::to_string(kVersion));
  }
  const auto stored_crc = detail::take<std::uint32_t>(buf, buf.size() - 4);
  if (detail::crc(buf.data(), buf.size() - 4) != stored_crc) fail(ErrorCode::CorruptFile, "checksum mismatch");
  const auto header_len = detail::take<std::uint64_t>(buf, 12);
  if (header_len > buf.size() - kPrefix - 4) fail(ErrorCode::CorruptFile, "header length exceeds file size");
  json header;
  try {
    header = json::parse(buf.begin() + kPrefix, buf.begin() + kPrefix + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptFile, std::string("bad header: ") + e.what());
  }
  if (header.value("dtype", "") != dtype_name<T>()) {
    fail(ErrorCode::ConfigInvalid, "checkpoint stores " + header.value("dtype", std::string("?")) + ", requested " +
                                       dtype_name<T>());
  }
  const std::size_t payload = kPrefix + header_len;
  const std::size_t payload_len = buf.size() - 4 - payload;

  Loaded<T> out{cin::CinModel<T>(config::cin_from_json(header.at("config"))), std::nullopt,
                header.value("meta", json::object())};
  auto params = out.model.parameters();
  std::map<std::pair<std::string, std::string>, const json*> index;
  for (const auto& t : header.at("tensors")) index[{t.at("name").get<std::string>(), t.at("kind").get<std::string>()}] = &t;

  auto fill = [&](const std::string& name, const std::string& kind, const nn::Shape& shape, std::span<T> dst) {
    auto it = index.find({name, kind});
    if (it == index.end()) fail(ErrorCode::CorruptFile, "checkpoint lacks " + kind + " '" + name + "'");
    const json& t = *it->second;
    if (t.at("shape").get<nn::Shape>() != shape) {
      fail(ErrorCode::CorruptFile, "shape mismatch for '" + name + "': stored " +
                                       nn::shape_str(t.at("shape").get<nn::Shape>()) + ", model " +
                                       nn::shape_str(shape));
    }
    const auto off = t.at("offset").get<std::uint64_t>();
    const std::size_t bytes = dst.size() * sizeof(T);
    if (off > payload_len || bytes > payload_len - off) fail(ErrorCode::CorruptFile, "tensor '" + name + "' out of bounds");
    std::memcpy(dst.data(), buf.data() + payload + off, bytes);
  };
  std::size_t n_params = 0;
  for (auto& it : params.items()) {
    fill(it.name, it.trainable ? "param" : "buffer", it.tensor.shape(), it.tensor.values());
    ++n_params;
  }
  if (header.contains("optimizer")) {
    const auto& o = header["optimizer"];
    nn::AdamWConfig cfg{o.at("beta1").get<double>(), o.at("beta2").get<double>(), o.at("eps").get<double>(),
                        o.at("weight_decay").get<double>()};
    auto trainable = params.trainable();
    auto state = nn::AdamWState<T>::for_params(trainable, cfg);
    state.step = o.at("step").get<long long>();
    std::size_t k = 0;
    for (const auto& it : params.items()) {
      if (!it.trainable) continue;
      fill(it.name, "adam_m", it.tensor.shape(), state.m[k]);
      fill(it.name, "adam_v", it.tensor.shape(), state.v[k]);
      ++k;
    }
    out.optimizer = std::move(state);
  }
  const std::size_t expected = n_params + (out.optimizer ? 2 * params.trainable().size() : 0);
  if (header.at("tensors").size() != expected) fail(ErrorCode::CorruptFile, "checkpoint has unexpected tensors");
  return out;
}

template <class T>
void save(const std::filesystem::path& path, const cin::CinModel<T>& model,
          const nn::AdamWState<T>* optimizer = nullptr, const nlohmann::json& meta = nlohmann::json::object()) {
  const auto bytes = encode(model, optimizer, meta);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "failed writing " + path.string());
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::MissingFile, path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
Loaded<T> load(const std::filesystem::path& path) {
  return decode<T>(read_file(path));
}

}  // namespace peci::checkpoint
