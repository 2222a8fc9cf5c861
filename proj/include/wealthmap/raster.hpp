#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "wealthmap/common.hpp"
#include "wealthmap/image.hpp"

namespace wealthmap::raster {

// One model-input tile: H x W x 3 sRGB values in [0,1] plus the geospatial
// metadata the pipeline carries around (source resolution, optional origin).
struct RasterTile {
  Image pixels;  // H x W x 3
  double meters_per_pixel = 10.0;
  std::optional<std::pair<double, double>> origin;  // (lat, lon)

  int width_px() const { return pixels.w; }
  int height_px() const { return pixels.h; }
};

// 3x3 patch of night-time radiances covering the footprint of one tile.
struct NightlightPatch {
  std::array<double, 9> values{};  // row-major
  double meters_per_pixel = 750.0;
};

struct LabPixel {
  double L = 0.0, a = 0.0, b = 0.0;
};

namespace detail {

// sRGB companding per IEC 61966-2-1; XYZ transform under D65. The white
// point is taken as the forward-matrix row sums so that (1,1,1) maps to
// L*=100, a*=b*=0 exactly.
inline constexpr double kM[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};
inline constexpr double kWhite[3] = {
    kM[0][0] + kM[0][1] + kM[0][2],
    kM[1][0] + kM[1][1] + kM[1][2],
    kM[2][0] + kM[2][1] + kM[2][2],
};

constexpr double det3() {
  return kM[0][0] * (kM[1][1] * kM[2][2] - kM[1][2] * kM[2][1]) -
         kM[0][1] * (kM[1][0] * kM[2][2] - kM[1][2] * kM[2][0]) +
         kM[0][2] * (kM[1][0] * kM[2][1] - kM[1][1] * kM[2][0]);
}

// Exact inverse of kM, so in-gamut round trips are limited only by the
// companding and cube-root evaluations.
struct InvMatrix {
  double m[3][3];
};
constexpr InvMatrix inv3() {
  const double d = det3();
  InvMatrix r{};
  r.m[0][0] = (kM[1][1] * kM[2][2] - kM[1][2] * kM[2][1]) / d;
  r.m[0][1] = (kM[0][2] * kM[2][1] - kM[0][1] * kM[2][2]) / d;
  r.m[0][2] = (kM[0][1] * kM[1][2] - kM[0][2] * kM[1][1]) / d;
  r.m[1][0] = (kM[1][2] * kM[2][0] - kM[1][0] * kM[2][2]) / d;
  r.m[1][1] = (kM[0][0] * kM[2][2] - kM[0][2] * kM[2][0]) / d;
  r.m[1][2] = (kM[0][2] * kM[1][0] - kM[0][0] * kM[1][2]) / d;
  r.m[2][0] = (kM[1][0] * kM[2][1] - kM[1][1] * kM[2][0]) / d;
  r.m[2][1] = (kM[0][1] * kM[2][0] - kM[0][0] * kM[2][1]) / d;
  r.m[2][2] = (kM[0][0] * kM[1][1] - kM[0][1] * kM[1][0]) / d;
  return r;
}
inline constexpr InvMatrix kMInv = inv3();

inline double srgb_to_linear(double u) {
  return u <= 0.04045 ? u / 12.92 : std::pow((u + 0.055) / 1.055, 2.4);
}
inline double linear_to_srgb(double v) {
  return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

inline constexpr double kDelta = 6.0 / 29.0;

inline double lab_f(double t) {
  return t > kDelta * kDelta * kDelta
             ? std::cbrt(t)
             : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}
inline double lab_f_inv(double t) {
  return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

inline float clamp01(double v) {
  return static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
}

}  // namespace detail

inline LabPixel rgb_to_lab_px(double r, double g, double b) {
  using namespace detail;
  const double lr = srgb_to_linear(r), lg = srgb_to_linear(g), lb = srgb_to_linear(b);
  const double X = kM[0][0] * lr + kM[0][1] * lg + kM[0][2] * lb;
  const double Y = kM[1][0] * lr + kM[1][1] * lg + kM[1][2] * lb;
  const double Z = kM[2][0] * lr + kM[2][1] * lg + kM[2][2] * lb;
  const double fx = lab_f(X / kWhite[0]);
  const double fy = lab_f(Y / kWhite[1]);
  const double fz = lab_f(Z / kWhite[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

// Out-of-gamut results are clamped to [0,1].
inline void lab_to_rgb_px(const LabPixel& p, float& r, float& g, float& b) {
  using namespace detail;
  const double fy = (p.L + 16.0) / 116.0;
  const double fx = fy + p.a / 500.0;
  const double fz = fy - p.b / 200.0;
  const double X = kWhite[0] * lab_f_inv(fx);
  const double Y = kWhite[1] * lab_f_inv(fy);
  const double Z = kWhite[2] * lab_f_inv(fz);
  const double lr = kMInv.m[0][0] * X + kMInv.m[0][1] * Y + kMInv.m[0][2] * Z;
  const double lg = kMInv.m[1][0] * X + kMInv.m[1][1] * Y + kMInv.m[1][2] * Z;
  const double lb = kMInv.m[2][0] * X + kMInv.m[2][1] * Y + kMInv.m[2][2] * Z;
  r = clamp01(linear_to_srgb(lr));
  g = clamp01(linear_to_srgb(lg));
  b = clamp01(linear_to_srgb(lb));
}

// Per-pixel CIE L*a*b* image (channels L, a, b).
inline Image rgb_to_lab(const Image& rgb) {
  if (rgb.c != 3) throw std::invalid_argument("rgb_to_lab: expected 3 channels");
  Image out(rgb.h, rgb.w, 3);
  for (int y = 0; y < rgb.h; ++y) {
    const float* s = rgb.px(y, 0);
    float* d = out.px(y, 0);
    for (int x = 0; x < rgb.w; ++x, s += 3, d += 3) {
      const LabPixel p = rgb_to_lab_px(s[0], s[1], s[2]);
      d[0] = static_cast<float>(p.L);
      d[1] = static_cast<float>(p.a);
      d[2] = static_cast<float>(p.b);
    }
  }
  return out;
}

inline Image lab_to_rgb(const Image& lab) {
  if (lab.c != 3) throw std::invalid_argument("lab_to_rgb: expected 3 channels");
  Image out(lab.h, lab.w, 3);
  for (int y = 0; y < lab.h; ++y) {
    const float* s = lab.px(y, 0);
    float* d = out.px(y, 0);
    for (int x = 0; x < lab.w; ++x, s += 3, d += 3) {
      lab_to_rgb_px({s[0], s[1], s[2]}, d[0], d[1], d[2]);
    }
  }
  return out;
}

// Radiances below noise_floor are zeroed, the patch is summed, and the
// label is ln(1 + sum).
inline double nightlight_label(const NightlightPatch& patch, double noise_floor = 0.5) {
  double s = 0.0;
  for (double v : patch.values) {
    if (v < 0.0) throw std::invalid_argument("nightlight_label: negative radiance");
    if (v >= noise_floor) s += v;
  }
  return std::log1p(s);
}

// Row-major 3x3 placement; tiles[4] (the survey-site tile) lands at grid
// position (1,1). All nine tiles must be square and equally sized.
inline RasterTile concat_grid(const std::array<RasterTile, 9>& tiles) {
  const int side = tiles[0].pixels.h;
  for (const auto& t : tiles) {
    if (t.pixels.h != side || t.pixels.w != side || t.pixels.c != 3) {
      throw std::invalid_argument("concat_grid: tiles must be equal-size squares");
    }
  }
  RasterTile out;
  out.pixels.assign(3 * side, 3 * side, 3);
  out.meters_per_pixel = tiles[4].meters_per_pixel;
  out.origin = tiles[4].origin;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      paste(out.pixels, tiles[i * 3 + j].pixels, i * side, j * side);
    }
  }
  return out;
}

// Inverse of concat_grid for block (i, j) of a 3x3 concatenation.
inline RasterTile extract_block(const RasterTile& grid, int i, int j) {
  if (i < 0 || i > 2 || j < 0 || j > 2) {
    throw std::invalid_argument("extract_block: block index out of range");
  }
  if (grid.pixels.h % 3 != 0 || grid.pixels.w % 3 != 0) {
    throw std::invalid_argument("extract_block: grid side not divisible by 3");
  }
  const int side = grid.pixels.h / 3;
  RasterTile out;
  out.pixels = crop(grid.pixels, i * side, j * side, side, side);
  out.meters_per_pixel = grid.meters_per_pixel;
  return out;
}

}  // namespace wealthmap::raster
