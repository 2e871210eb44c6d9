#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "uception/metaimage.hpp"

using namespace uception;
namespace fs = std::filesystem;

namespace {

Bytes text_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

Bytes with_payload(std::string header, const Bytes& payload) {
  Bytes b = text_bytes(header);
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

Volume ramp(Extent3 e, Spacing s) {
  Volume v(e, s);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = float(i) * 0.25f - 3.0f;
  return v;
}

ErrorCode code_of(const auto& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::Io;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("uception_mi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kHeader =
    "ObjectType = Image\nNDims = 3\nDimSize = 3 2 2\nElementSpacing = 0.5 0.75 2\n"
    "ElementType = MET_FLOAT\nElementDataFile = LOCAL\n";

}  // namespace

TEST(MetaImage, FloatRoundTripIsBitExact) {
  const auto v = ramp({2, 3, 5}, {2.0, 0.75, 0.5});
  const auto m = read_metaimage(write_metaimage(v, MetaElementType::Float));
  EXPECT_EQ(m.volume, v);
  EXPECT_TRUE(m.header.has_spacing);
  EXPECT_EQ(m.header.dim_size, (std::array<std::size_t, 3>{5, 3, 2}));
}

TEST(MetaImage, AxisOrderIsXFastest) {
  std::vector<float> vals(12);
  for (std::size_t i = 0; i < 12; ++i) vals[i] = float(i);
  Bytes payload(48);
  std::memcpy(payload.data(), vals.data(), 48);
  const auto v = read_metaimage(with_payload(kHeader, payload)).volume;
  EXPECT_EQ(v.extents, (Extent3{2, 2, 3}));
  EXPECT_EQ(v.spacing.d, 2.0);
  EXPECT_EQ(v.spacing.h, 0.75);
  EXPECT_EQ(v.spacing.w, 0.5);
  EXPECT_EQ(v.at(0, 0, 1), 1.0f);
  EXPECT_EQ(v.at(0, 1, 0), 3.0f);
  EXPECT_EQ(v.at(1, 0, 0), 6.0f);
}

TEST(MetaImage, UnsignedCharWidensWithoutRescaling) {
  Bytes payload(12);
  for (std::size_t i = 0; i < 12; ++i) payload[i] = std::uint8_t(i * 23);
  std::string h = kHeader;
  h.replace(h.find("MET_FLOAT"), 9, "MET_UCHAR");
  const auto v = read_metaimage(with_payload(h, payload)).volume;
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(v.data[i], float(i * 23));
  payload[11] = 255;
  EXPECT_EQ(read_metaimage(with_payload(h, payload)).volume.data[11], 255.0f);
}

TEST(MetaImage, SignedShortBigEndian) {
  std::string h = kHeader;
  h.replace(h.find("MET_FLOAT"), 9, "MET_SHORT");
  h.insert(0, "BinaryDataByteOrderMSB = True\n");
  Bytes payload(24, 0);
  payload[0] = 0xFF; payload[1] = 0x38;  // -200
  payload[2] = 0x01; payload[3] = 0x00;  // 256
  const auto v = read_metaimage(with_payload(h, payload)).volume;
  EXPECT_EQ(v.data[0], -200.0f);
  EXPECT_EQ(v.data[1], 256.0f);
}

TEST(MetaImage, IntegerWritersSaturate) {
  Volume v({1, 1, 3}, Spacing{}, std::vector<float>{-5.0f, 127.6f, 900.0f});
  EXPECT_EQ(read_metaimage(write_metaimage(v, MetaElementType::UChar)).volume.data,
            (std::vector<float>{0.0f, 128.0f, 255.0f}));
}

TEST(MetaImage, TruncatedPayloadIsPayloadLength) {
  auto b = write_metaimage(ramp({2, 2, 3}, {}), MetaElementType::Float);
  b.pop_back();
  EXPECT_EQ(code_of([&] { read_metaimage(b); }), ErrorCode::PayloadLength);
  b.push_back(0);
  b.push_back(0);
  EXPECT_EQ(code_of([&] { read_metaimage(b); }), ErrorCode::PayloadLength);
}

TEST(MetaImage, HeaderErrorsCarryTheirCodes) {
  auto make = [](std::string from, std::string to) {
    std::string h = kHeader;
    h.replace(h.find(from), from.size(), to);
    return with_payload(h, Bytes(48, 0));
  };
  EXPECT_EQ(code_of([&] { read_metaimage(make("MET_FLOAT", "MET_DOUBLE")); }),
            ErrorCode::UnsupportedElementType);
  EXPECT_EQ(code_of([&] { read_metaimage(make("NDims = 3\n", "")); }), ErrorCode::MissingKey);
  EXPECT_EQ(code_of([&] { read_metaimage(make("NDims = 3", "NDims = 2")); }), ErrorCode::MalformedHeader);
  EXPECT_EQ(code_of([&] { read_metaimage(make("DimSize = 3 2 2", "DimSize = 3 0 2")); }),
            ErrorCode::MalformedHeader);
  EXPECT_EQ(code_of([&] { read_metaimage(make("ElementSpacing = 0.5", "ElementSpacing = -0.5")); }),
            ErrorCode::MalformedHeader);
  EXPECT_EQ(code_of([&] { read_metaimage(make("NDims = 3\n", "NDims = 3\nNDims = 3\n")); }),
            ErrorCode::MalformedHeader);
  EXPECT_EQ(code_of([&] { read_metaimage(text_bytes("NDims = 3\n")); }), ErrorCode::MissingKey);
}

TEST(MetaImage, NonFiniteFloatVoxelIsRejected) {
  Bytes payload(48, 0);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(payload.data() + 8, &nan, 4);
  EXPECT_EQ(code_of([&] { read_metaimage(with_payload(kHeader, payload)); }), ErrorCode::NonFinite);
}

TEST(MetaImage, ExternalDataFileMustStayBesideTheHeader) {
  std::string h = kHeader;
  h.replace(h.find("LOCAL"), 5, "../secret.raw");
  EXPECT_EQ(code_of([&] { read_metaimage(text_bytes(h)); }), ErrorCode::MalformedHeader);
}

TEST(MetaImage, MhdWithSiblingRawRoundTrips) {
  const auto dir = scratch("mhd");
  const auto v = ramp({3, 4, 2}, {1.5, 0.5, 0.25});
  write_volume_file(dir / "vol.mhd", v);
  EXPECT_TRUE(fs::exists(dir / "vol.raw"));
  EXPECT_EQ(read_volume_file(dir / "vol.mhd").volume, v);
  fs::remove(dir / "vol.raw");
  EXPECT_EQ(code_of([&] { read_volume_file(dir / "vol.mhd"); }), ErrorCode::Io);
  fs::remove_all(dir);
}

TEST(Uvol, RoundTripAndMagic) {
  const auto v = ramp({2, 5, 3}, {0.8, 0.5, 0.5});
  const auto b = write_uvol(v);
  EXPECT_EQ(b.size(), 4 + 12 + 24 + 30 * 4u);
  EXPECT_EQ(read_uvol(b), v);
  auto bad = b;
  bad[0] = 'X';
  EXPECT_EQ(code_of([&] { read_uvol(bad); }), ErrorCode::BadMagic);
  auto shorter = b;
  shorter.resize(b.size() - 3);
  EXPECT_EQ(code_of([&] { read_uvol(shorter); }), ErrorCode::PayloadLength);
  const auto dir = scratch("uvol");
  write_volume_file(dir / "v.uvol", v);
  EXPECT_EQ(read_volume_file(dir / "v.uvol").volume, v);
  fs::remove_all(dir);
}

// Every mutation either parses or raises a typed error; nothing else escapes.
TEST(MetaImageFuzz, ThousandMutationsNeverEscapeUntyped) {
  const auto base = write_metaimage(ramp({2, 3, 4}, {1, 1, 1}), MetaElementType::Float);
  const auto uvol = write_uvol(ramp({2, 3, 4}, {1, 1, 1}));
  std::mt19937_64 gen(2024);
  int parsed = 0, rejected = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Bytes b = (trial % 4 == 3) ? uvol : base;
    const int edits = 1 + int(gen() % 4);
    for (int e = 0; e < edits && !b.empty(); ++e) {
      const std::size_t at = gen() % b.size();
      switch (gen() % 4) {
        case 0: b[at] = std::uint8_t(gen()); break;
        case 1: b.resize(at); break;
        case 2: b.insert(b.begin() + at, std::uint8_t(gen())); break;
        case 3: b.erase(b.begin() + at); break;
      }
    }
    try {
      if (trial % 4 == 3) {
        (void)read_uvol(b);
      } else {
        (void)read_metaimage(b, [](const std::string&) -> Bytes {
          throw Error(ErrorCode::Io, "external", "not available");
        });
      }
      ++parsed;
    } catch (const Error&) {
      ++rejected;
    } catch (const std::exception& e) {
      FAIL() << "trial " << trial << " escaped with " << e.what();
    }
  }
  EXPECT_EQ(parsed + rejected, 1000);
  EXPECT_GT(rejected, 500);
}
