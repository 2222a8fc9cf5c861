#pragma once

#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wealthmap/common.hpp"
#include "wealthmap/raster.hpp"

static_assert(std::endian::native == std::endian::little,
              "raw tile and checkpoint formats assume a little-endian host");

namespace wealthmap::io {

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline std::uint8_t to_byte(float v) {
  const float s = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
  return static_cast<std::uint8_t>(s * 255.0f + 0.5f);
}
}  // namespace detail

// 8-bit RGB PNG. Gray and alpha sources are expanded / stripped on read;
// values are scaled to [0,1].
inline Image read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: allocation failure reading " + path);
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<std::uint8_t> bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: failed to decode " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  bytes.resize(stride * h);
  row_ptrs.resize(h);
  for (int y = 0; y < h; ++y) row_ptrs[y] = bytes.data() + y * stride;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(h, w, 3);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* s = bytes.data() + y * stride;
    float* d = img.px(y, 0);
    for (int i = 0; i < w * 3; ++i) d[i] = static_cast<float>(s[i]) / 255.0f;
  }
  return img;
}

inline void write_png(const std::string& path, const Image& img, int compression = 2) {
  if (img.c != 3) throw std::invalid_argument("write_png: expected 3 channels");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("png: cannot write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: allocation failure writing " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: failed to encode " + path);
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, compression);
  png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.w) * 3);
  for (int y = 0; y < img.h; ++y) {
    const float* s = img.px(y, 0);
    for (int i = 0; i < img.w * 3; ++i) row[i] = detail::to_byte(s[i]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Raw planar float32 tile: all R values, then G, then B, little-endian,
// with a JSON sidecar (<path>.json) carrying the metadata.
inline void write_raw_tile(const std::string& path, const raster::RasterTile& tile) {
  const Image& img = tile.pixels;
  if (img.c != 3) throw std::invalid_argument("write_raw_tile: expected 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("raw tile: cannot write " + path);
  std::vector<float> plane(static_cast<std::size_t>(img.h) * img.w);
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) plane[static_cast<std::size_t>(y) * img.w + x] = img.at(y, x, ch);
    }
    out.write(reinterpret_cast<const char*>(plane.data()),
              static_cast<std::streamsize>(plane.size() * sizeof(float)));
  }
  nlohmann::json meta;
  meta["width"] = img.w;
  meta["height"] = img.h;
  meta["channels"] = 3;
  meta["dtype"] = "f32le";
  meta["layout"] = "planar";
  meta["meters_per_pixel"] = tile.meters_per_pixel;
  if (tile.origin) meta["origin"] = {tile.origin->first, tile.origin->second};
  std::ofstream side(path + ".json");
  if (!side) throw DataError("raw tile: cannot write sidecar for " + path);
  side << meta.dump(2) << '\n';
}

inline raster::RasterTile read_raw_tile(const std::string& path) {
  std::ifstream side(path + ".json");
  if (!side) throw DataError("raw tile: missing sidecar " + path + ".json");
  nlohmann::json meta = nlohmann::json::parse(side, nullptr, false);
  if (meta.is_discarded()) throw DataError("raw tile: bad sidecar " + path + ".json");
  const int w = meta.at("width").get<int>();
  const int h = meta.at("height").get<int>();

  raster::RasterTile tile;
  tile.pixels.assign(h, w, 3);
  tile.meters_per_pixel = meta.value("meters_per_pixel", 10.0);
  if (meta.contains("origin")) {
    tile.origin = {meta["origin"][0].get<double>(), meta["origin"][1].get<double>()};
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("raw tile: cannot open " + path);
  std::vector<float> plane(static_cast<std::size_t>(h) * w);
  for (int ch = 0; ch < 3; ++ch) {
    in.read(reinterpret_cast<char*>(plane.data()),
            static_cast<std::streamsize>(plane.size() * sizeof(float)));
    if (!in) throw DataError("raw tile: truncated data in " + path);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) tile.pixels.at(y, x, ch) = plane[static_cast<std::size_t>(y) * w + x];
    }
  }
  return tile;
}

}  // namespace wealthmap::io
