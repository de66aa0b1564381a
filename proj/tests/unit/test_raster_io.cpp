#include <gtest/gtest.h>

#include <filesystem>

#include "regrowth/error.hpp"
#include "regrowth/raster_io.hpp"
#include "regrowth/rng.hpp"
#include "test_util.hpp"

using namespace regrowth;

namespace {

RasterStack random_stack(std::uint64_t seed, std::size_t t, std::size_t h, std::size_t w) {
  Rng rng(seed);
  RasterStack s(t, h, w, {"NDVI", "LST", "QA"});
  for (auto& v : s.data()) v = static_cast<float>(rng.normal());
  for (auto& m : s.missing_mask()) m = rng.uniform() < 0.2 ? 1 : 0;
  return s;
}

}  // namespace

TEST(RasterIo, MinimalStackLayout) {
  RasterStack s(1, 1, 1, {"NDVI"});
  s.at(0, 0, 0, 0) = 0.5f;
  const auto bytes = encode_stack(s);
  // magic, five u32 header words, u16 name length + name, one float, one mask byte
  ASSERT_EQ(bytes.size(), 4u + 20u + 2u + 4u + 4u + 1u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "RST1");
  float v;
  std::memcpy(&v, bytes.data() + 30, 4);
  EXPECT_EQ(v, 0.5f);
  EXPECT_EQ(bytes.back(), 0);
}

TEST(RasterIo, FullSizePayload) {
  RasterStack s(25, 50, 50, default_channels());
  std::size_t names = 0;
  for (const auto& c : s.channels()) names += 2 + c.size();
  const std::size_t payload = 25u * 50 * 50 * 6 * 4;
  EXPECT_EQ(payload, 1'500'000u);
  const std::size_t mask = (25u * 50 * 50 * 6 + 7) / 8;
  EXPECT_EQ(encode_stack(s).size(), 24 + names + payload + mask);
}

TEST(RasterIo, RoundTripIsBitExact) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = random_stack(seed, 3 + seed, 4, 5 + seed);
    EXPECT_TRUE(decode_stack(encode_stack(s)).identical(s));
  }
  test::TempDir dir;
  const auto s = random_stack(9, 2, 7, 3);
  write_stack(s, dir.path() / "a.rst");
  EXPECT_TRUE(read_stack(dir.path() / "a.rst").identical(s));
}

TEST(RasterIo, BadMagic) {
  auto bytes = encode_stack(random_stack(1, 1, 2, 2));
  bytes[0] = 'X';
  EXPECT_THROW(decode_stack(bytes), FormatError);
}

TEST(RasterIo, TruncatedPayload) {
  auto bytes = encode_stack(random_stack(1, 2, 3, 3));
  bytes.resize(bytes.size() - 5);
  EXPECT_THROW(decode_stack(bytes), FormatError);
}

TEST(RasterIo, VersionMismatch) {
  auto bytes = encode_stack(random_stack(1, 1, 2, 2));
  bytes[4] = 9;
  EXPECT_THROW(decode_stack(bytes), FormatError);
}

TEST(RasterIo, MissingFileIsIoError) {
  EXPECT_THROW(read_stack("/nonexistent/dir/x.rst"), IoError);
}

TEST(RasterIo, WindowAndFrames) {
  const auto s = random_stack(3, 4, 6, 6);
  const auto w = s.window(2, 3, 3, 2);
  EXPECT_EQ(w.at(1, 0, 0, 2), s.at(1, 2, 3, 2));
  EXPECT_EQ(w.missing(3, 2, 1, 0), s.missing(3, 4, 4, 0));
  const auto f = s.frames(1, 2);
  EXPECT_EQ(f.t_len(), 2u);
  EXPECT_EQ(f.at(0, 5, 5, 1), s.at(1, 5, 5, 1));
  EXPECT_THROW(s.window(4, 4, 3, 3), ValidationError);
}

TEST(Catalog, ParsesRow) {
  const auto fires = parse_catalog("id,name,lon,lat,containment_month,acres\nF1,Test,-118.1,34.2,2019-10,8799\n");
  ASSERT_EQ(fires.size(), 1u);
  EXPECT_EQ(fires[0].id, "F1");
  EXPECT_DOUBLE_EQ(fires[0].acres, 8799.0);
  EXPECT_DOUBLE_EQ(fires[0].lon, -118.1);
  EXPECT_EQ(fires[0].month_index(), 9);
}

TEST(Catalog, HeaderOnly) { EXPECT_TRUE(parse_catalog("id,name,lon,lat,containment_month,acres\n").empty()); }

TEST(Catalog, BadAcresReportsLine) {
  try {
    parse_catalog("id,name,lon,lat,containment_month,acres\nF1,Test,-118.1,34.2,2019-10,abc\n");
    FAIL() << "expected a parse error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Catalog, RoundTrip) {
  std::vector<FireRecord> fires = {{"A", "Alpha, Fire", -120.5, 36.25, "2018-07", 12000},
                                   {"B", "Beta", -116.0, 33.0, "2020-01", 3000}};
  test::TempDir dir;
  write_catalog(fires, dir.path() / "c.csv");
  const auto back = read_catalog(dir.path() / "c.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "Alpha, Fire");
  EXPECT_DOUBLE_EQ(back[1].lat, 33.0);
  EXPECT_TRUE(meets_size_threshold(back[1]));
}
