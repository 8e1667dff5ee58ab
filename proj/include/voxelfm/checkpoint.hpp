#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "voxelfm/encoder.hpp"
#include "voxelfm/io.hpp"

namespace voxelfm {

// Checkpoint layout:
//   8 bytes   magic "VFMCKPT1"
//   u64 LE    header length H
//   H bytes   JSON {config, seed, epoch, tensors:[{name, shape}]}
//   float32 LE tensor payloads, concatenated in header (name-sorted) order
inline constexpr char kCheckpointMagic[] = "VFMCKPT1";

inline json to_json(const EncoderConfig& c) {
  return json{{"patch", c.patch},
              {"stages", c.stages},
              {"base_channels", c.base_channels},
              {"embed_dim", c.embed_dim},
              {"proj_dim", c.proj_dim}};
}

inline EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.patch = j.value("patch", c.patch);
  c.stages = j.value("stages", c.stages);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.embed_dim = j.value("embed_dim", c.feature_channels());
  c.proj_dim = j.value("proj_dim", c.proj_dim);
  c.validate();
  return c;
}

struct Checkpoint {
  EncoderState<float> state;
  int epoch = 0;
};

inline std::string serialize_checkpoint(const EncoderState<float>& state, int epoch) {
  json tensors = json::array();
  for (const auto& [name, p] : state.params) tensors.push_back({{"name", name}, {"shape", p.shape}});
  const std::string header =
      json{{"config", to_json(state.config)}, {"seed", state.seed}, {"epoch", epoch}, {"tensors", tensors}}.dump();
  std::string out(kCheckpointMagic, 8);
  le::put<std::uint64_t>(out, header.size());
  out += header;
  for (const auto& [name, p] : state.params)
    for (float v : p.values) le::put<float>(out, v);
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  require(bytes.size() >= 16 && bytes.substr(0, 8) == std::string_view(kCheckpointMagic, 8),
          ErrorCode::corrupt_file, "not a checkpoint (bad magic)");
  const auto header_len = le::get<std::uint64_t>(bytes.data() + 8);
  require(16 + header_len <= bytes.size(), ErrorCode::corrupt_file, "truncated checkpoint header");
  json header;
  try {
    header = json::parse(bytes.substr(16, header_len));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::corrupt_file, std::string("bad checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  ck.state.config = encoder_config_from_json(header.at("config"));
  ck.state.seed = header.value("seed", std::uint64_t{0});
  ck.epoch = header.value("epoch", 0);
  const auto expected = nn::parameter_shapes(ck.state.config);
  std::size_t offset = 16 + header_len;
  for (const auto& t : header.at("tensors")) {
    ParamTensor<float> p;
    const auto name = t.at("name").get<std::string>();
    p.shape = t.at("shape").get<std::vector<int>>();
    require(expected.contains(name) && expected.at(name) == p.shape, ErrorCode::corrupt_file,
            "checkpoint tensor '" + name + "' does not match its config");
    const std::size_t n = nn::shape_size(p.shape);
    require(offset + 4 * n <= bytes.size(), ErrorCode::corrupt_file, "truncated checkpoint payload");
    p.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      p.values[i] = le::get<float>(bytes.data() + offset + 4 * i);
      require(std::isfinite(p.values[i]), ErrorCode::non_finite, "non-finite checkpoint value in " + name);
    }
    offset += 4 * n;
    ck.state.params.emplace(name, std::move(p));
  }
  require(ck.state.params.size() == expected.size(), ErrorCode::corrupt_file, "checkpoint is missing tensors");
  require(offset == bytes.size(), ErrorCode::corrupt_file, "trailing bytes after checkpoint payload");
  return ck;
}

inline void save_checkpoint(const EncoderState<float>& state, int epoch, const fs::path& path) {
  write_file(path, serialize_checkpoint(state, epoch));
}

inline Checkpoint load_checkpoint(const fs::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace voxelfm
