#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "wealthmap/csv.hpp"
#include "wealthmap/imageio.hpp"
#include "wealthmap/raster.hpp"

using namespace wealthmap;
namespace fs = std::filesystem;

TEST_CASE("rgb_to_lab hits the CIE anchors") {
  const auto white = raster::rgb_to_lab_px(1.0, 1.0, 1.0);
  CHECK(white.L == Catch::Approx(100.0).margin(1e-9));
  CHECK(white.a == Catch::Approx(0.0).margin(1e-9));
  CHECK(white.b == Catch::Approx(0.0).margin(1e-9));

  const auto black = raster::rgb_to_lab_px(0.0, 0.0, 0.0);
  CHECK(black.L == Catch::Approx(0.0).margin(1e-12));
  CHECK(black.a == Catch::Approx(0.0).margin(1e-12));
  CHECK(black.b == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("mid gray matches the reference CIE evaluation") {
  const auto got = raster::rgb_to_lab_px(0.5, 0.5, 0.5);
  const auto ref = oracle::rgb_to_lab(0.5, 0.5, 0.5);
  CHECK(got.L == Catch::Approx(ref[0]).margin(1e-9));
  CHECK(got.a == Catch::Approx(ref[1]).margin(1e-9));
  CHECK(got.b == Catch::Approx(ref[2]).margin(1e-9));
  // Frozen from the reference implementation.
  CHECK(got.L == Catch::Approx(53.38896474).margin(1e-6));
  CHECK(got.a == Catch::Approx(0.0).margin(1e-9));
  CHECK(got.b == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("lab round trip stays within 1e-3 per channel") {
  Rng rng(123);
  Image img(13, 17, 3);
  for (auto& v : img.v) v = static_cast<float>(rng.uniform());
  const Image back = raster::lab_to_rgb(raster::rgb_to_lab(img));
  float max_err = 0.f;
  for (std::size_t i = 0; i < img.v.size(); ++i) {
    max_err = std::max(max_err, std::abs(img.v[i] - back.v[i]));
  }
  CHECK(max_err < 1e-3f);
}

TEST_CASE("lab conversions agree with the straight-line oracle on random colors") {
  Rng rng(77);
  for (int i = 0; i < 200; ++i) {
    const double r = rng.uniform(), g = rng.uniform(), b = rng.uniform();
    const auto got = raster::rgb_to_lab_px(r, g, b);
    const auto ref = oracle::rgb_to_lab(r, g, b);
    REQUIRE(got.L == Catch::Approx(ref[0]).margin(1e-9));
    REQUIRE(got.a == Catch::Approx(ref[1]).margin(1e-9));
    REQUIRE(got.b == Catch::Approx(ref[2]).margin(1e-9));
  }
}

TEST_CASE("lab_to_rgb clamps out-of-gamut input") {
  float r, g, b;
  raster::lab_to_rgb_px({50.0, 200.0, 0.0}, r, g, b);
  CHECK(r >= 0.f);
  CHECK(r <= 1.f);
  CHECK(g >= 0.f);
  CHECK(g <= 1.f);
  CHECK(b >= 0.f);
  CHECK(b <= 1.f);

  raster::lab_to_rgb_px({100.0, 0.0, 0.0}, r, g, b);
  CHECK(r == Catch::Approx(1.0).margin(1e-6));
  CHECK(g == Catch::Approx(1.0).margin(1e-6));
  CHECK(b == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("nightlight_label thresholds, sums and logs") {
  raster::NightlightPatch p;
  CHECK(raster::nightlight_label(p) == 0.0);

  p.values[3] = 0.4;  // below the 0.5 noise floor
  CHECK(raster::nightlight_label(p) == 0.0);

  p.values[3] = std::exp(1.0) - 1.0;
  CHECK(raster::nightlight_label(p) == Catch::Approx(1.0).margin(1e-12));

  p.values[5] = -0.1;
  CHECK_THROWS_AS(raster::nightlight_label(p), std::invalid_argument);
}

TEST_CASE("nightlight_label is monotone above the noise floor") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    raster::NightlightPatch p;
    for (auto& v : p.values) v = rng.uniform(0.0, 3.0);
    const double base = raster::nightlight_label(p);
    const int k = static_cast<int>(rng.uniform_int(9));
    if (p.values[k] < 0.5) continue;
    p.values[k] += rng.uniform(0.0, 1.0);
    REQUIRE(raster::nightlight_label(p) >= base);
  }
}

namespace {
raster::RasterTile constant_tile(int side, float r, float g, float b) {
  raster::RasterTile t;
  t.pixels.assign(side, side, 3);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      t.pixels.at(y, x, 0) = r;
      t.pixels.at(y, x, 1) = g;
      t.pixels.at(y, x, 2) = b;
    }
  }
  return t;
}
}  // namespace

TEST_CASE("concat_grid places blocks row-major and extract_block inverts it") {
  std::array<raster::RasterTile, 9> tiles;
  for (int i = 0; i < 9; ++i) tiles[i] = constant_tile(8, i / 9.0f, 0.25f, 0.5f);
  const auto grid = raster::concat_grid(tiles);
  REQUIRE(grid.pixels.h == 24);
  REQUIRE(grid.pixels.w == 24);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const auto block = raster::extract_block(grid, i, j);
      for (std::size_t p = 0; p < block.pixels.v.size(); ++p) {
        REQUIRE(block.pixels.v[p] == tiles[i * 3 + j].pixels.v[p]);
      }
    }
  }
}

TEST_CASE("concat_grid rejects mismatched tiles") {
  std::array<raster::RasterTile, 9> tiles;
  for (int i = 0; i < 9; ++i) tiles[i] = constant_tile(8, 0.f, 0.f, 0.f);
  tiles[2].pixels.assign(7, 8, 3);
  CHECK_THROWS_AS(raster::concat_grid(tiles), std::invalid_argument);
}

TEST_CASE("png round trip within quantization error") {
  Rng rng(9);
  Image img(21, 33, 3);
  for (auto& v : img.v) v = static_cast<float>(rng.uniform());
  const fs::path path = fs::temp_directory_path() / "wm_test_roundtrip.png";
  io::write_png(path.string(), img);
  const Image back = io::read_png(path.string());
  REQUIRE(back.h == img.h);
  REQUIRE(back.w == img.w);
  float max_err = 0.f;
  for (std::size_t i = 0; i < img.v.size(); ++i) {
    max_err = std::max(max_err, std::abs(img.v[i] - back.v[i]));
  }
  CHECK(max_err <= 0.5f / 255.0f + 1e-6f);
  fs::remove(path);
}

TEST_CASE("raw float tile round trip is exact") {
  Rng rng(11);
  raster::RasterTile tile;
  tile.pixels.assign(12, 12, 3);
  for (auto& v : tile.pixels.v) v = static_cast<float>(rng.uniform());
  tile.meters_per_pixel = 10.0;
  tile.origin = {{-6.25, 35.5}};
  const fs::path path = fs::temp_directory_path() / "wm_test_tile.f32";
  io::write_raw_tile(path.string(), tile);
  const auto back = io::read_raw_tile(path.string());
  REQUIRE(back.pixels.v == tile.pixels.v);
  CHECK(back.meters_per_pixel == tile.meters_per_pixel);
  REQUIRE(back.origin.has_value());
  CHECK(back.origin->first == -6.25);
  fs::remove(path);
  fs::remove(path.string() + ".json");
}

TEST_CASE("csv quoting round trips embedded json") {
  const std::string json = R"({"a":1,"b":"x,y"})";
  const auto line = io::csv_join({"site_000001", "1.5", json});
  const auto fields = io::csv_split(line);
  REQUIRE(fields.size() == 3);
  CHECK(fields[2] == json);
}
