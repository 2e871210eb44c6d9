#pragma once

// MetaImage (.mha with a LOCAL payload, .mhd + raw sibling) for the subset of
// tags we need, and the internal UVOL raw format.
//
// UVOL layout (little-endian): "UVOL", u32 depth, u32 height, u32 width,
// f64 spacing d/h/w in mm, then depth*height*width float32 values.

#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uception/error.hpp"
#include "uception/io.hpp"
#include "uception/volume.hpp"

namespace uception {

enum class MetaElementType { UChar, Short, UShort, Float };

constexpr std::string_view to_string(MetaElementType t) {
  switch (t) {
    case MetaElementType::UChar: return "MET_UCHAR";
    case MetaElementType::Short: return "MET_SHORT";
    case MetaElementType::UShort: return "MET_USHORT";
    case MetaElementType::Float: return "MET_FLOAT";
  }
  return "?";
}

constexpr std::size_t element_size(MetaElementType t) {
  switch (t) {
    case MetaElementType::UChar: return 1;
    case MetaElementType::Short:
    case MetaElementType::UShort: return 2;
    case MetaElementType::Float: return 4;
  }
  return 0;
}

inline std::optional<MetaElementType> parse_element_type(std::string_view s) {
  for (auto t : {MetaElementType::UChar, MetaElementType::Short, MetaElementType::UShort,
                 MetaElementType::Float})
    if (s == to_string(t)) return t;
  return std::nullopt;
}

struct MetaImageHeader {
  std::string object_type = "Image";
  int ndims = 3;
  std::array<std::size_t, 3> dim_size{};       // x y z, i.e. width height depth
  MetaElementType element_type = MetaElementType::Float;
  std::array<double, 3> element_spacing{1, 1, 1};  // x y z
  bool has_spacing = false;
  bool msb = false;
  std::string element_data_file = "LOCAL";
};

struct MetaImage {
  Volume volume;
  MetaImageHeader header;
};

// Resolves a non-LOCAL ElementDataFile to its bytes.
using ExternalLoader = std::function<Bytes(const std::string&)>;

namespace detail {

constexpr std::size_t kMaxHeaderBytes = 1 << 16;
constexpr std::size_t kMaxExtent = 1 << 16;
constexpr std::size_t kMaxVoxels = std::size_t{1} << 31;

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <class U>
bool parse_number(std::string_view s, U& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && p == end;
}

inline bool parse_bool(std::string_view s, bool& out) {
  std::string lower(s);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "true" || lower == "1") return out = true, true;
  if (lower == "false" || lower == "0") return out = false, true;
  return false;
}

[[noreturn]] inline void bad_value(const std::string& key, const std::string& why) {
  throw Error(ErrorCode::MalformedHeader, key, why);
}

struct RawHeader {
  std::map<std::string, std::string, std::less<>> fields;
  std::size_t payload_offset = 0;
};

// Splits "Key = Value" lines up to and including ElementDataFile.
inline RawHeader scan_header(std::span<const std::uint8_t> bytes) {
  RawHeader h;
  std::size_t pos = 0, line_no = 0;
  const std::size_t limit = std::min(bytes.size(), kMaxHeaderBytes);
  while (true) {
    if (pos >= limit) {
      if (bytes.size() > kMaxHeaderBytes && pos >= kMaxHeaderBytes) {
        throw Error(ErrorCode::MalformedHeader, "header", "header exceeds 64 KiB");
      }
      throw Error(ErrorCode::MissingKey, "ElementDataFile", "header ended without ElementDataFile");
    }
    std::size_t end = pos;
    while (end < limit && bytes[end] != '\n') ++end;
    const bool terminated = end < limit;
    ++line_no;
    std::string_view line(reinterpret_cast<const char*>(bytes.data() + pos), end - pos);
    for (char c : line) {
      const auto u = static_cast<unsigned char>(c);
      if ((u < 0x20 && c != '\t' && c != '\r') || u > 0x7E) {
        throw Error(ErrorCode::MalformedHeader, "line " + std::to_string(line_no),
                    "header line contains non-ASCII or control bytes");
      }
    }
    pos = terminated ? end + 1 : end;
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::MalformedHeader, "line " + std::to_string(line_no),
                  "expected 'Key = Value'");
    }
    const auto key = std::string(trim(line.substr(0, eq)));
    const auto value = std::string(trim(line.substr(eq + 1)));
    if (key.empty()) {
      throw Error(ErrorCode::MalformedHeader, "line " + std::to_string(line_no), "empty key");
    }
    if (!h.fields.emplace(key, value).second) {
      throw Error(ErrorCode::MalformedHeader, key, "duplicate key");
    }
    if (key == "ElementDataFile") {
      h.payload_offset = pos;
      return h;
    }
  }
}

inline const std::string& required(const RawHeader& h, std::string_view key) {
  auto it = h.fields.find(key);
  if (it == h.fields.end()) {
    throw Error(ErrorCode::MissingKey, std::string(key), "required key missing");
  }
  return it->second;
}

inline const std::string* optional_field(const RawHeader& h, std::string_view key) {
  auto it = h.fields.find(key);
  return it == h.fields.end() ? nullptr : &it->second;
}

inline MetaImageHeader interpret(const RawHeader& raw) {
  MetaImageHeader h;
  if (const auto* v = optional_field(raw, "ObjectType")) {
    if (*v != "Image") bad_value("ObjectType", "only ObjectType = Image is supported");
    h.object_type = *v;
  }
  if (!parse_number(required(raw, "NDims"), h.ndims)) bad_value("NDims", "not an integer");
  if (h.ndims != 3) bad_value("NDims", "only 3-D images are supported");

  const auto dims = split_ws(required(raw, "DimSize"));
  if (dims.size() != 3) bad_value("DimSize", "expected three extents");
  std::size_t voxels = 1;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!parse_number(dims[i], h.dim_size[i]) || h.dim_size[i] == 0 ||
        h.dim_size[i] > kMaxExtent) {
      bad_value("DimSize", "extents must be integers in [1, 65536]");
    }
    voxels *= h.dim_size[i];
    if (voxels > kMaxVoxels) bad_value("DimSize", "image too large");
  }

  const auto& type = required(raw, "ElementType");
  const auto parsed = parse_element_type(type);
  if (!parsed) {
    throw Error(ErrorCode::UnsupportedElementType, "ElementType",
                "unsupported element type '" + type + "'");
  }
  h.element_type = *parsed;

  if (const auto* v = optional_field(raw, "ElementSpacing")) {
    const auto parts = split_ws(*v);
    if (parts.size() != 3) bad_value("ElementSpacing", "expected three spacings");
    for (std::size_t i = 0; i < 3; ++i) {
      if (!parse_number(parts[i], h.element_spacing[i]) || !(h.element_spacing[i] > 0.0) ||
          !std::isfinite(h.element_spacing[i])) {
        bad_value("ElementSpacing", "spacings must be positive finite numbers");
      }
    }
    h.has_spacing = true;
  }

  std::optional<bool> msb;
  for (const char* key : {"ElementByteOrderMSB", "BinaryDataByteOrderMSB"}) {
    if (const auto* v = optional_field(raw, key)) {
      bool b;
      if (!parse_bool(*v, b)) bad_value(key, "expected True or False");
      if (msb && *msb != b) bad_value(key, "conflicting byte-order keys");
      msb = b;
    }
  }
  h.msb = msb.value_or(false);

  if (const auto* v = optional_field(raw, "BinaryData")) {
    bool b;
    if (!parse_bool(*v, b) || !b) bad_value("BinaryData", "only binary payloads are supported");
  }
  if (const auto* v = optional_field(raw, "CompressedData")) {
    bool b;
    if (!parse_bool(*v, b) || b) bad_value("CompressedData", "compressed payloads are not supported");
  }
  if (const auto* v = optional_field(raw, "ElementNumberOfChannels")) {
    int c;
    if (!parse_number(*v, c) || c != 1) bad_value("ElementNumberOfChannels", "only one channel");
  }

  h.element_data_file = required(raw, "ElementDataFile");
  if (h.element_data_file.empty()) bad_value("ElementDataFile", "empty file name");
  if (h.element_data_file != "LOCAL") {
    const std::filesystem::path p(h.element_data_file);
    if (p.is_absolute() || h.element_data_file.find("..") != std::string::npos) {
      bad_value("ElementDataFile", "data file must be a plain relative name");
    }
  }
  return h;
}

inline Volume decode_payload(const MetaImageHeader& h, std::span<const std::uint8_t> payload) {
  const Extent3 e{h.dim_size[2], h.dim_size[1], h.dim_size[0]};
  const std::size_t n = voxel_count(e);
  const std::size_t esize = element_size(h.element_type);
  if (payload.size() != n * esize) {
    throw Error(ErrorCode::PayloadLength, "ElementDataFile",
                "payload has " + std::to_string(payload.size()) + " bytes, expected " +
                    std::to_string(n * esize));
  }
  std::vector<float> data(n);
  const std::uint8_t* p = payload.data();
  switch (h.element_type) {
    case MetaElementType::UChar:
      for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(p[i]);
      break;
    case MetaElementType::Short:
      for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(load<std::int16_t>(p + 2 * i, h.msb));
      break;
    case MetaElementType::UShort:
      for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(load<std::uint16_t>(p + 2 * i, h.msb));
      break;
    case MetaElementType::Float:
      for (std::size_t i = 0; i < n; ++i) {
        data[i] = load<float>(p + 4 * i, h.msb);
        if (!std::isfinite(data[i])) {
          throw Error(ErrorCode::NonFinite, "payload", "voxel " + std::to_string(i) + " is not finite");
        }
      }
      break;
  }
  const Spacing s{h.element_spacing[2], h.element_spacing[1], h.element_spacing[0]};
  return Volume(e, s, std::move(data));
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

inline MetaImage read_metaimage(std::span<const std::uint8_t> bytes,
                                const ExternalLoader& load_external = {}) {
  const auto raw = detail::scan_header(bytes);
  MetaImage out;
  out.header = detail::interpret(raw);
  if (out.header.element_data_file == "LOCAL") {
    out.volume = detail::decode_payload(out.header, bytes.subspan(raw.payload_offset));
  } else {
    if (!load_external) {
      throw Error(ErrorCode::Io, out.header.element_data_file, "no loader for an external data file");
    }
    const Bytes payload = load_external(out.header.element_data_file);
    out.volume = detail::decode_payload(out.header, payload);
  }
  return out;
}

inline std::string metaimage_header_text(const Volume& v, MetaElementType type,
                                         const std::string& data_file = "LOCAL") {
  using detail::format_double;
  std::string s;
  s += "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n";
  s += "CompressedData = False\n";
  s += "ElementSpacing = " + format_double(v.spacing.w) + " " + format_double(v.spacing.h) + " " +
       format_double(v.spacing.d) + "\n";
  s += "DimSize = " + std::to_string(v.extents.w) + " " + std::to_string(v.extents.h) + " " +
       std::to_string(v.extents.d) + "\n";
  s += "ElementType = " + std::string(to_string(type)) + "\n";
  s += "ElementDataFile = " + data_file + "\n";
  return s;
}

// Little-endian payload; integer types round to nearest and saturate.
inline Bytes metaimage_payload(const Volume& v, MetaElementType type) {
  ByteWriter w;
  auto saturate = [](float x, double lo, double hi) {
    return std::clamp(std::nearbyint(static_cast<double>(x)), lo, hi);
  };
  switch (type) {
    case MetaElementType::UChar:
      for (float x : v.data) w.put<std::uint8_t>(static_cast<std::uint8_t>(saturate(x, 0, 255)));
      break;
    case MetaElementType::Short:
      for (float x : v.data) w.put<std::int16_t>(static_cast<std::int16_t>(saturate(x, -32768, 32767)));
      break;
    case MetaElementType::UShort:
      for (float x : v.data) w.put<std::uint16_t>(static_cast<std::uint16_t>(saturate(x, 0, 65535)));
      break;
    case MetaElementType::Float: w.put_array(std::span<const float>(v.data)); break;
  }
  return w.take();
}

// Single-buffer .mha image.
inline Bytes write_metaimage(const Volume& v, MetaElementType type) {
  const std::string header = metaimage_header_text(v, type);
  Bytes out(header.begin(), header.end());
  const Bytes payload = metaimage_payload(v, type);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline MetaImage read_metaimage_file(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  const auto dir = path.parent_path();
  return read_metaimage(bytes, [&](const std::string& name) { return read_file(dir / name); });
}

// .mhd writes a header plus a sibling .raw; anything else a single .mha.
inline void write_metaimage_file(const std::filesystem::path& path, const Volume& v,
                                 MetaElementType type) {
  if (path.extension() == ".mhd") {
    auto raw = path;
    raw.replace_extension(".raw");
    write_file(raw, metaimage_payload(v, type));
    write_text_file(path, metaimage_header_text(v, type, raw.filename().string()));
  } else {
    write_file(path, write_metaimage(v, type));
  }
}

// ---------------------------------------------------------------------------
// UVOL

inline Bytes write_uvol(const Volume& v) {
  ByteWriter w;
  w.put_bytes("UVOL");
  for (std::size_t e : {v.extents.d, v.extents.h, v.extents.w}) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
  for (double s : {v.spacing.d, v.spacing.h, v.spacing.w}) w.put<double>(s);
  w.put_array(std::span<const float>(v.data));
  return w.take();
}

inline Volume read_uvol(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "uvol", ErrorCode::PayloadLength);
  if (bytes.size() < 4 || r.get_bytes(4) != "UVOL") {
    throw Error(ErrorCode::BadMagic, "uvol", "missing UVOL magic");
  }
  std::array<std::size_t, 3> e{};
  std::size_t voxels = 1;
  for (auto& x : e) {
    x = r.get<std::uint32_t>();
    if (x == 0 || x > detail::kMaxExtent) throw Error(ErrorCode::MalformedHeader, "extents", "bad extent");
    voxels *= x;
    if (voxels > detail::kMaxVoxels) throw Error(ErrorCode::MalformedHeader, "extents", "too large");
  }
  Spacing s{r.get<double>(), r.get<double>(), r.get<double>()};
  if (r.remaining() != voxels * sizeof(float)) {
    throw Error(ErrorCode::PayloadLength, "uvol", "payload length does not match extents");
  }
  std::vector<float> data(voxels);
  r.get_array(std::span<float>(data));
  for (float x : data)
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFinite, "uvol", "non-finite voxel");
  try {
    return Volume({e[0], e[1], e[2]}, s, std::move(data));
  } catch (const Error& err) {
    throw Error(ErrorCode::MalformedHeader, "spacing", err.what());
  }
}

// Dispatch on extension: .uvol, otherwise MetaImage.
inline MetaImage read_volume_file(const std::filesystem::path& path) {
  if (path.extension() == ".uvol") {
    MetaImage m;
    m.volume = read_uvol(read_file(path));
    m.header.has_spacing = true;
    m.header.dim_size = {m.volume.extents.w, m.volume.extents.h, m.volume.extents.d};
    m.header.element_spacing = {m.volume.spacing.w, m.volume.spacing.h, m.volume.spacing.d};
    return m;
  }
  return read_metaimage_file(path);
}

inline void write_volume_file(const std::filesystem::path& path, const Volume& v,
                              MetaElementType type = MetaElementType::Float) {
  if (path.extension() == ".uvol") {
    write_file(path, write_uvol(v));
  } else {
    write_metaimage_file(path, v, type);
  }
}

}  // namespace uception
