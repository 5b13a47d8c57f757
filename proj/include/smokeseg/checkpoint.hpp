#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "smokeseg/errors.hpp"
#include "smokeseg/net.hpp"
#include "smokeseg/net_json.hpp"
#include "smokeseg/png_io.hpp"  // read_file/write_file byte helpers

// Checkpoint container: "DSSN" magic, u32 format version, length-prefixed
// NetConfig JSON, u32 parameter count, then per parameter a length-prefixed
// name, u32 rank (always 4), u32 dims and raw float32 values. All integers
// little-endian, all floats IEEE-754 binary32, independent of host byte
// order. Embedding the config means a load can rebuild the exact graph and
// verify every name and shape against it before anything is installed.

namespace smokeseg {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'D', 'S', 'S', 'N'};

namespace detail {

inline void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline void put_f32_le(std::vector<std::uint8_t>& out, float v) {
  put_u32_le(out, std::bit_cast<std::uint32_t>(v));
}

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw CheckpointError(CheckpointError::Code::Truncated,
                            "checkpoint truncated: need " + std::to_string(n) + " bytes at offset " +
                                std::to_string(pos_) + ", file has " +
                                std::to_string(bytes_.size()));
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string str(std::size_t n) {
    const std::uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Values persist as float32 whatever precision the network runs at.
template <typename F>
inline std::vector<std::uint8_t> serialize_checkpoint(const Network<F>& net) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_u32_le(out, kCheckpointVersion);

  const std::string cfg = net_config_to_json(net.config()).dump();
  detail::put_u32_le(out, static_cast<std::uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());

  detail::put_u32_le(out, static_cast<std::uint32_t>(net.params().size()));
  for (const auto& p : net.params()) {
    detail::put_u32_le(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    detail::put_u32_le(out, 4);  // rank
    for (int d = 0; d < 4; ++d) {
      detail::put_u32_le(out, static_cast<std::uint32_t>(p.value.shape.d[d]));
    }
    for (const F v : p.value.data) detail::put_f32_le(out, static_cast<float>(v));
  }
  return out;
}

/// All-or-nothing: any failure throws before a network is returned.
inline Network<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::CheckpointReader r(bytes);

  if (std::memcmp(r.take(4), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(CheckpointError::Code::BadMagic, "not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Code::VersionMismatch,
                          "checkpoint format version " + std::to_string(version) +
                              ", this build reads version " + std::to_string(kCheckpointVersion));
  }

  const std::string cfg_text = r.str(r.u32());
  NetConfig cfg;
  try {
    cfg = net_config_from_json(nlohmann::json::parse(cfg_text));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Code::BadPayload,
                          std::string("checkpoint config is not valid JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Code::BadPayload,
                          std::string("checkpoint config rejected: ") + e.what());
  }

  Network<float> net = Network<float>::build(cfg);
  auto& params = net.params();

  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw CheckpointError(CheckpointError::Code::ShapeMismatch,
                          "checkpoint has " + std::to_string(count) + " parameters, the embedded "
                              "config builds " + std::to_string(params.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    if (name != params[i].name) {
      throw CheckpointError(CheckpointError::Code::ShapeMismatch,
                            "parameter " + std::to_string(i) + " named \"" + name +
                                "\", graph expects \"" + params[i].name + "\"");
    }
    const std::uint32_t rank = r.u32();
    if (rank != 4) {
      throw CheckpointError(CheckpointError::Code::BadPayload,
                            "parameter \"" + name + "\" has rank " + std::to_string(rank) +
                                ", expected 4");
    }
    Shape shape;
    for (int d = 0; d < 4; ++d) shape.d[d] = static_cast<int>(r.u32());
    if (shape != params[i].value.shape) {
      throw CheckpointError(CheckpointError::Code::ShapeMismatch,
                            "parameter \"" + name + "\" has shape " + shape.str() +
                                ", graph expects " + params[i].value.shape.str());
    }
    for (auto& v : params[i].value.data) v = r.f32();
  }
  if (r.pos() != r.size()) {
    throw CheckpointError(CheckpointError::Code::BadPayload,
                          "checkpoint has " + std::to_string(r.size() - r.pos()) +
                              " trailing bytes");
  }
  return net;
}

template <typename F>
inline void save_checkpoint(const Network<F>& net, const std::filesystem::path& path) {
  png::write_file(path, serialize_checkpoint(net));
}

inline Network<float> load_checkpoint(const std::filesystem::path& path) {
  try {
    return deserialize_checkpoint(png::read_file(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace smokeseg
