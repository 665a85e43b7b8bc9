#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlfn/model.hpp"

namespace rlfn {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

inline constexpr char kCheckpointMagic[8] = {'R', 'L', 'F', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_blocks", c.num_blocks},     {"channels", c.channels},         {"esa_channels", c.esa_channels},
          {"scale", c.scale},               {"in_channels", c.in_channels},   {"out_channels", c.out_channels},
          {"block_kind", to_string(c.block_kind)}, {"esa_convs", c.esa_convs}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.num_blocks = j.at("num_blocks").get<int>();
    c.channels = j.at("channels").get<int>();
    c.esa_channels = j.at("esa_channels").get<int>();
    c.scale = j.at("scale").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    c.block_kind = parse_block_kind(j.at("block_kind").get<std::string>());
    c.esa_convs = j.value("esa_convs", 1);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad config in header: ") + e.what());
  }
}

namespace detail {

template <typename U>
U byteswap(U v) {
  if constexpr (sizeof(U) == 4) return __builtin_bswap32(v);
  else return __builtin_bswap64(v);
}

template <typename U>
void write_le(std::ostream& os, U v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename U>
U read_le(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw CheckpointError("checkpoint: truncated header");
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  return v;
}

}  // namespace detail

/// Writes magic, u32 version, u64 header length, a JSON header (config, tensor manifest, extra
/// metadata) and then every tensor as raw little-endian f32 in manifest order.
inline void save_checkpoint(const Model& model, const std::filesystem::path& path,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  const auto tensors = model.named_tensors();
  for (const auto& [name, t] : tensors) {
    const Shape& s = t.shape();
    manifest.push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}});
    offset += t.numel() * sizeof(float);
  }
  const nlohmann::json header = {
      {"config", to_json(model.config)}, {"tensors", manifest}, {"payload_bytes", offset}, {"extra", extra}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot open '" + path.string() + "' for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  detail::write_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors) {
    if constexpr (std::endian::native == std::endian::little) {
      os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    } else {
      for (float v : t.data()) detail::write_le(os, std::bit_cast<std::uint32_t>(v));
    }
  }
  if (!os) throw CheckpointError("checkpoint: write failed for '" + path.string() + "'");
}

struct CheckpointFile {
  ModelConfig config;
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

inline CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("checkpoint: '" + path.string() + "' is not an RLFN checkpoint (bad magic)");
  }
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto header_len = detail::read_le<std::uint64_t>(is);
  if (header_len > (1u << 26)) throw CheckpointError("checkpoint: corrupted header length");
  std::string text(header_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw CheckpointError("checkpoint: truncated header");

  CheckpointFile out;
  try {
    out.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: corrupted header: ") + e.what());
  }
  if (!out.header.contains("config") || !out.header.contains("tensors")) {
    throw CheckpointError("checkpoint: header lacks config or tensor manifest");
  }
  out.config = model_config_from_json(out.header["config"]);

  const auto payload_start = is.tellg();
  try {
    for (const auto& entry : out.header.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const auto dims = entry.at("shape").get<std::vector<int>>();
      if (dims.size() != 4) throw CheckpointError("checkpoint: tensor '" + name + "' is not 4-D");
      const Shape shape{dims[0], dims[1], dims[2], dims[3]};
      const auto offset = entry.at("offset").get<std::uint64_t>();
      std::vector<float> values(shape.numel());
      is.seekg(payload_start + static_cast<std::streamoff>(offset));
      if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
      } else {
        for (float& v : values) v = std::bit_cast<float>(detail::read_le<std::uint32_t>(is));
      }
      if (!is) throw CheckpointError("checkpoint: payload truncated at tensor '" + name + "'");
      out.tensors.emplace_back(name, Tensor(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: corrupted manifest: ") + e.what());
  }
  return out;
}

/// Copies checkpoint tensors into `model`. The name sets and shapes must agree exactly; the
/// error names every missing, extra or mis-shaped tensor, first mismatch first.
inline void load_weights(Model& model, const CheckpointFile& file) {
  const auto target = model.named_tensors();
  std::vector<std::string> problems;
  std::size_t i = 0;
  for (; i < target.size() && i < file.tensors.size(); ++i) {
    const auto& [want, t] = target[i];
    const auto& [have, src] = file.tensors[i];
    if (want != have) {
      problems.push_back("expected '" + want + "' but found '" + have + "'");
    } else if (t.shape() != src.shape()) {
      problems.push_back("'" + want + "' has shape " + src.shape().str() + ", model expects " + t.shape().str());
    }
  }
  for (std::size_t j = i; j < target.size(); ++j) problems.push_back("missing '" + target[j].first + "'");
  for (std::size_t j = i; j < file.tensors.size(); ++j) problems.push_back("extra '" + file.tensors[j].first + "'");
  if (!problems.empty()) {
    std::string msg = "checkpoint: does not match model:";
    for (std::size_t k = 0; k < problems.size() && k < 8; ++k) msg += "\n  " + problems[k];
    if (problems.size() > 8) msg += "\n  ... " + std::to_string(problems.size() - 8) + " more";
    throw CheckpointError(msg);
  }
  for (std::size_t k = 0; k < target.size(); ++k) {
    Tensor dst = target[k].second;
    std::span<const float> src = file.tensors[k].second.data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

inline void load_weights(Model& model, const std::filesystem::path& path) { load_weights(model, read_checkpoint(path)); }

inline Model load_checkpoint(const std::filesystem::path& path) {
  CheckpointFile file = read_checkpoint(path);
  Model model = build_model(file.config, 0);
  load_weights(model, file);
  return model;
}

}  // namespace rlfn
