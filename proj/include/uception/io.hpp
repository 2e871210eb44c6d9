#pragma once

// Little-endian byte buffers and whole-file helpers shared by the volume and
// checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uception/error.hpp"

namespace uception {

using Bytes = std::vector<std::uint8_t>;

template <class U>
U byteswap_value(U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::uint8_t b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
  std::memcpy(&v, b, sizeof(U));
  return v;
}

// Value of type U stored at p with the given byte order.
template <class U>
U load(const std::uint8_t* p, bool big_endian = false) {
  U v;
  std::memcpy(&v, p, sizeof(U));
  const bool host_big = std::endian::native == std::endian::big;
  return big_endian != host_big ? byteswap_value(v) : v;
}

template <class U>
void store(std::uint8_t* p, U v, bool big_endian = false) {
  const bool host_big = std::endian::native == std::endian::big;
  if (big_endian != host_big) v = byteswap_value(v);
  std::memcpy(p, &v, sizeof(U));
}

class ByteWriter {
 public:
  template <class U>
  void put(U v) {
    const std::size_t at = buf_.size();
    buf_.resize(at + sizeof(U));
    store(buf_.data() + at, v);
  }
  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }
  template <class U>
  void put_array(std::span<const U> values) {
    const std::size_t at = buf_.size();
    buf_.resize(at + values.size() * sizeof(U));
    if constexpr (std::endian::native == std::endian::little) {
      if (!values.empty()) std::memcpy(buf_.data() + at, values.data(), values.size() * sizeof(U));
    } else {
      for (std::size_t i = 0; i < values.size(); ++i) store(buf_.data() + at + i * sizeof(U), values[i]);
    }
  }
  Bytes take() { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

 private:
  Bytes buf_;
};

// Bounds-checked reader; running out of bytes raises `short_code`.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what,
             ErrorCode short_code = ErrorCode::PayloadLength)
      : bytes_(bytes), what_(std::move(what)), short_code_(short_code) {}

  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) {
      throw Error(short_code_, what_, "unexpected end of data at byte " + std::to_string(pos_));
    }
  }
  template <class U>
  U get() {
    need(sizeof(U));
    const U v = load<U>(bytes_.data() + pos_);
    pos_ += sizeof(U);
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string get_string(std::size_t max_len = 1 << 16) {
    const auto n = get<std::uint32_t>();
    if (n > max_len) throw Error(ErrorCode::MalformedHeader, what_, "string length out of range");
    return get_bytes(n);
  }
  template <class U>
  void get_array(std::span<U> out) {
    if (out.size() > (bytes_.size() - pos_) / sizeof(U)) need(bytes_.size() + 1);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = load<U>(bytes_.data() + pos_ + i * sizeof(U));
    pos_ += out.size() * sizeof(U);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
  ErrorCode short_code_;
};

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, path.string(), "cannot open for reading");
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  if (size < 0) throw Error(ErrorCode::Io, path.string(), "cannot determine file size");
  Bytes data(static_cast<std::size_t>(size));
  in.seekg(0);
  if (!data.empty()) in.read(reinterpret_cast<char*>(data.data()), size);
  if (!in) throw Error(ErrorCode::Io, path.string(), "read failed");
  return data;
}

// Writes through a temporary sibling and renames, so readers never observe a
// half-written file.
inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorCode::Io, path.parent_path().string(), "cannot create directory");
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, path.string(), "cannot open for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error(ErrorCode::Io, path.string(), "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, path.string(), "cannot move file into place");
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace uception
