// Model checkpoint file:
//   "DTKT" | u32 LE format version | u32 LE metadata length | metadata JSON |
//   raw little-endian float32 payloads in manifest order.
// The JSON metadata carries the model config, the write mode the checkpoint
// was produced under, and a parameter manifest (name, shape, byte offset into
// the payload region).
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtkt/model.hpp"

namespace dtkt::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'D', 'T', 'K', 'T'};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32_le(std::ostream& os, const float* data, std::size_t n) {
  static_assert(sizeof(float) == 4);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    put_u32(os, bits);
  }
}

inline void get_f32_le(std::istream& is, float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(is, "parameter payload");
    std::memcpy(&data[i], &bits, 4);
  }
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& params, WriteMode mode, const std::string& path) {
  nlohmann::json meta;
  meta["config"] = {{"num_questions", params.config.num_questions},
                    {"slots", params.config.slots},
                    {"key_dim", params.config.key_dim},
                    {"value_dim", params.config.value_dim},
                    {"summary_dim", params.config.summary_dim}};
  meta["mode"] = write_mode_name(mode);
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for_each_param(params, [&](const char* name, const num::TensorF& t) {
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel() * 4;
  });
  meta["params"] = std::move(manifest);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write(kCheckpointMagic, 4);
  detail::put_u32(os, kCheckpointVersion);
  const std::string meta_str = meta.dump();
  detail::put_u32(os, static_cast<std::uint32_t>(meta_str.size()));
  os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  for_each_param(params,
                 [&](const char*, const num::TensorF& t) { detail::put_f32_le(os, t.data(), t.numel()); });
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

struct Checkpoint {
  ModelParams params;
  WriteMode mode = WriteMode::AddErase;
};

inline num::Shape expected_param_shape(const ModelConfig& c, const std::string& name) {
  const std::size_t q = c.num_questions, n = c.slots, dk = c.key_dim, dv = c.value_dim,
                    df = c.summary_dim;
  if (name == "question_key") return {q, dk};
  if (name == "interaction_value") return {2 * q, dv};
  if (name == "key_memory") return {n, dk};
  if (name == "init_value_memory") return {n, dv};
  if (name == "erase_weight") return {dv, dv};
  if (name == "erase_bias") return {dv};
  if (name == "add_weight") return {dv, dv};
  if (name == "add_bias") return {dv};
  if (name == "summary_weight") return {df, dv + dk};
  if (name == "summary_bias") return {df};
  if (name == "output_weight") return {std::size_t(1), df};
  if (name == "output_bias") return {std::size_t(1)};
  throw std::logic_error("unknown parameter name: " + name);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);

  char magic[4];
  if (!is.read(magic, 4)) throw std::runtime_error("checkpoint: truncated magic in " + path);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path + ", expected \"DTKT\"");
  const std::uint32_t version = detail::get_u32(is, "version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version) +
                             ", expected " + std::to_string(kCheckpointVersion));
  const std::uint32_t meta_len = detail::get_u32(is, "metadata length");
  std::string meta_str(meta_len, '\0');
  if (!is.read(meta_str.data(), meta_len))
    throw std::runtime_error("checkpoint: truncated metadata in " + path);

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: invalid metadata JSON in " + path + ": " + e.what());
  }

  Checkpoint out;
  const auto& c = meta.at("config");
  out.params.config = ModelConfig{c.at("num_questions").get<std::size_t>(),
                                  c.at("slots").get<std::size_t>(),
                                  c.at("key_dim").get<std::size_t>(),
                                  c.at("value_dim").get<std::size_t>(),
                                  c.at("summary_dim").get<std::size_t>()};
  out.params.config.validate();
  out.mode = write_mode_from_name(meta.at("mode").get<std::string>());

  // `out` only escapes on success, so a truncated file never yields partial state.
  const auto& manifest = meta.at("params");
  std::size_t idx = 0;
  std::size_t expect_offset = 0;
  for_each_param(out.params, [&](const char* name, num::TensorF& t) {
    if (idx >= manifest.size())
      throw std::runtime_error("checkpoint: manifest missing parameter " + std::string(name));
    const auto& entry = manifest.at(idx++);
    if (entry.at("name").get<std::string>() != name)
      throw std::runtime_error("checkpoint: manifest order mismatch at " + std::string(name));
    const auto shape = entry.at("shape").get<num::Shape>();
    if (shape != expected_param_shape(out.params.config, name))
      throw std::runtime_error("checkpoint: parameter " + std::string(name) + " has shape " +
                               num::shape_str(shape) + " inconsistent with the stored config");
    if (entry.at("offset").get<std::size_t>() != expect_offset)
      throw std::runtime_error("checkpoint: bad payload offset for " + std::string(name));
    t = num::TensorF(shape);
    detail::get_f32_le(is, t.data(), t.numel());
    expect_offset += t.numel() * 4;
  });
  if (idx != manifest.size())
    throw std::runtime_error("checkpoint: manifest lists unknown extra parameters");
  if (is.peek() != std::char_traits<char>::eof())
    throw std::runtime_error("checkpoint: trailing bytes after payload in " + path);
  return out;
}

}  // namespace dtkt::model
