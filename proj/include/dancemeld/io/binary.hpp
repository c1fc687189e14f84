#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dancemeld/autograd/tensor.hpp"

namespace dancemeld::io {

namespace fs = std::filesystem;

// Writes through a sibling temporary and renames it into place, so readers
// never observe a partially written file.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::random_device rd;
  const fs::path tmp = path.string() + ".tmp-" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    DM_THROW_IF(!out, IoError, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    DM_THROW_IF(!out, IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(ErrorKind::IoError, "cannot rename into " + path.string() + ": " + ec.message());
  }
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  DM_THROW_IF(!in, IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(bytes_[pos_ + std::size_t(i)])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(bytes_[pos_ + std::size_t(i)])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    DM_THROW_IF(bytes_.size() - pos_ < n, FormatError, context_ + ": truncated payload");
  }
  std::string_view bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

// Frame-array container shared by music feature files ("DMFT") and motion
// files ("DMMO"): magic, u32 version = 1, u32 rows, u32 cols, u32 fps, then
// rows*cols little-endian float32 values, row-major.
struct FrameArrayHeader {
  std::array<char, 4> magic;
  std::uint32_t version = 1;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t fps = 60;
};

inline constexpr std::array<char, 4> kFeatureMagic{'D', 'M', 'F', 'T'};
inline constexpr std::array<char, 4> kMotionMagic{'D', 'M', 'M', 'O'};

inline std::string encode_frame_array(std::array<char, 4> magic, const Tensor<float>& data, std::uint32_t fps) {
  std::string out(magic.begin(), magic.end());
  put_u32(out, 1);
  put_u32(out, std::uint32_t(data.rows()));
  put_u32(out, std::uint32_t(data.cols()));
  put_u32(out, fps);
  out.reserve(out.size() + data.size() * 4);
  for (float v : data.storage()) put_f32(out, v);
  return out;
}

inline std::pair<FrameArrayHeader, Tensor<float>> decode_frame_array(std::array<char, 4> magic, std::string_view bytes,
                                                                     const std::string& context) {
  ByteReader r(bytes, context);
  FrameArrayHeader h;
  const auto m = r.take(4);
  std::copy(m.begin(), m.end(), h.magic.begin());
  DM_THROW_IF(h.magic != magic, FormatError,
              context + ": bad magic, expected " + std::string(magic.begin(), magic.end()));
  h.version = r.u32();
  DM_THROW_IF(h.version != 1, FormatError, context + ": unsupported version " + std::to_string(h.version));
  h.rows = r.u32();
  h.cols = r.u32();
  h.fps = r.u32();
  const std::size_t n = std::size_t(h.rows) * std::size_t(h.cols);
  DM_THROW_IF(r.remaining() != n * 4, FormatError,
              context + ": payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
                  std::to_string(n * 4));
  Tensor<float> t(h.rows, h.cols);
  for (std::size_t i = 0; i < n; ++i) t[i] = r.f32();
  return {h, std::move(t)};
}

}  // namespace dancemeld::io
