#pragma once

#include <nlohmann/json.hpp>

#include "dancemeld/io/binary.hpp"
#include "dancemeld/nn/optim.hpp"

namespace dancemeld::io {

// Checkpoint container:
//   "DMCK" | u32 version = 1 | u64 header length | UTF-8 JSON header |
//   tensor payloads, float32 little-endian, in header order.
// The header carries {"format_version", "kind", "tensors": [{name, rows, cols}], ...}
// plus any caller metadata (config echo, loss weights, statistics).
inline constexpr std::array<char, 4> kCheckpointMagic{'D', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  nn::NamedTensors<float> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }

  const Tensor<float>& at(const std::string& name) const {
    const auto* t = find(name);
    DM_THROW_IF(t == nullptr, FormatError, "checkpoint has no tensor named " + name);
    return *t;
  }
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  nlohmann::json header = ck.header;
  header["format_version"] = kCheckpointVersion;
  auto& list = header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : ck.tensors) list.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  const std::string text = header.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  for (const auto& [name, t] : ck.tensors)
    for (float v : t.storage()) put_f32(out, v);
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& context) {
  ByteReader r(bytes, context);
  const auto magic = r.take(4);
  DM_THROW_IF(!std::equal(magic.begin(), magic.end(), kCheckpointMagic.begin()), FormatError,
              context + ": not a checkpoint file");
  const auto version = r.u32();
  DM_THROW_IF(version != kCheckpointVersion, FormatError, context + ": unsupported checkpoint version");
  const auto text = r.take(std::size_t(r.u64()));
  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(text);
    for (const auto& entry : ck.header.at("tensors")) {
      Tensor<float> t(entry.at("rows").get<std::size_t>(), entry.at("cols").get<std::size_t>());
      for (auto& v : t.storage()) v = r.f32();
      ck.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, context + ": bad checkpoint header: " + e.what());
  }
  DM_THROW_IF(r.remaining() != 0, FormatError, context + ": trailing bytes after tensors");
  return ck;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) { write_file_atomic(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path), path.string()); }

// Parameter sets travel through checkpoints as float32.
template <typename T>
void append_parameters(Checkpoint& ck, const nn::ParameterSet<T>& params, const std::string& prefix = "") {
  for (const auto& [name, v] : params.items()) ck.tensors.emplace_back(prefix + name, v.value().template cast<float>());
}

template <typename T>
void load_parameters(const Checkpoint& ck, nn::ParameterSet<T>& params, const std::string& prefix = "") {
  for (const auto& [name, v] : params.items()) {
    const auto& t = ck.at(prefix + name);
    DM_THROW_IF(t.rows() != v.rows() || t.cols() != v.cols(), ShapeMismatch,
                "checkpoint tensor " + name + " is " + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) +
                    ", model expects " + std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
    ag::Var<T> h = v;
    h.mutable_value() = t.template cast<T>();
  }
}

template <typename T>
void append_tensors(Checkpoint& ck, const nn::NamedTensors<T>& tensors) {
  for (const auto& [name, t] : tensors) ck.tensors.emplace_back(name, t.template cast<float>());
}

// Tensors whose names start with prefix.
template <typename T>
nn::NamedTensors<T> tensors_with_prefix(const Checkpoint& ck, const std::string& prefix) {
  nn::NamedTensors<T> out;
  for (const auto& [name, t] : ck.tensors)
    if (name.rfind(prefix, 0) == 0) out.emplace_back(name, t.template cast<T>());
  return out;
}

}  // namespace dancemeld::io
