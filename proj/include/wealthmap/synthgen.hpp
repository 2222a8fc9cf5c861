#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wealthmap/common.hpp"
#include "wealthmap/csv.hpp"
#include "wealthmap/imageio.hpp"
#include "wealthmap/raster.hpp"

namespace wealthmap::synth {

// Procedural satellite-like scenes with a known latent wealth signal.
// A site is a 3x3 neighborhood of 224 px tiles rendered as one 672 px
// scene: low-frequency vegetation/dryland background, thin field lines,
// roads, and 2-3 px buildings. Wealth is a declared monotone function of
// building and road counts; night lights follow wealth through a noisy
// exponential link, so the lights are a proxy exactly as in the transfer
// setup the corpus stands in for.

struct SceneParams {
  int building_count = 0;
  int building_size_px = 2;  // edge length, 2-3
  int road_count = 0;
  int road_width_px = 1;  // 1-2
  double vegetation_fraction = 0.3;
  double tint_a = 14.0, tint_b = 26.0;  // dryland chromaticity (a*, b*)
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (building_count < 0 || road_count < 0) {
      throw std::invalid_argument("scene params: negative counts");
    }
    if (vegetation_fraction < 0.0 || vegetation_fraction > 1.0) {
      throw std::invalid_argument("scene params: vegetation fraction outside [0,1]");
    }
  }

  nlohmann::json to_json() const {
    return {{"building_count", building_count}, {"building_size_px", building_size_px},
            {"road_count", road_count},         {"road_width_px", road_width_px},
            {"vegetation_fraction", vegetation_fraction},
            {"tint_a", tint_a},                 {"tint_b", tint_b},
            {"rng_seed", rng_seed}};
  }
};

struct SyntheticSite {
  std::array<raster::RasterTile, 9> tiles;
  double latent_wealth = 0.0;
  raster::NightlightPatch nightlight;
};

inline constexpr int kTilePx = 224;
inline constexpr int kScenePx = 3 * kTilePx;

// Declared wealth link: monotone in both counts, baseline -2 for an empty
// scene. Logged in the corpus manifest.
inline double latent_wealth_of(int building_count, int road_count) {
  return -2.0 + 1.1 * std::log1p(static_cast<double>(building_count)) +
         0.45 * std::log1p(static_cast<double>(road_count));
}

// Affine-exponential light link: near zero for low wealth (heavy zero
// inflation below the radiance noise floor), hundreds at the top end.
inline constexpr double kLightA = -1.85;
inline constexpr double kLightB = 1.25;
inline constexpr double kLightNoise = 0.1;  // multiplicative, uniform +-10%

inline double nightlight_link(double wealth) { return std::exp(kLightA + kLightB * wealth); }

// Wealth-units equivalent of the light noise; used by tests relating the
// latent spread to the proxy noise.
inline double light_noise_wealth_scale() { return std::log1p(kLightNoise) / kLightB; }

namespace detail {

struct Rgb {
  float r, g, b;
};

inline Rgb lab_rgb(double L, double a, double b) {
  Rgb c{};
  raster::lab_to_rgb_px({L, a, b}, c.r, c.g, c.b);
  return c;
}

inline void blend(Image& img, int y, int x, const Rgb& c, float alpha) {
  if (y < 0 || y >= img.h || x < 0 || x >= img.w || alpha <= 0.f) return;
  float* p = img.px(y, x);
  p[0] += (c.r - p[0]) * alpha;
  p[1] += (c.g - p[1]) * alpha;
  p[2] += (c.b - p[2]) * alpha;
}

// Anti-aliased thick segment: coverage from distance to the segment.
template <class Mark>
void draw_segment(Image& img, double x0, double y0, double x1, double y1, double width,
                  const Rgb& color, Mark&& mark) {
  const double pad = width * 0.5 + 1.0;
  const int ylo = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - pad)));
  const int yhi = std::min(img.h - 1, static_cast<int>(std::ceil(std::max(y0, y1) + pad)));
  const int xlo = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - pad)));
  const int xhi = std::min(img.w - 1, static_cast<int>(std::ceil(std::max(x0, x1) + pad)));
  const double dx = x1 - x0, dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  for (int y = ylo; y <= yhi; ++y) {
    for (int x = xlo; x <= xhi; ++x) {
      const double px = x + 0.5 - x0, py = y + 0.5 - y0;
      double t = len2 > 0.0 ? (px * dx + py * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double ex = px - t * dx, ey = py - t * dy;
      const double dist = std::sqrt(ex * ex + ey * ey);
      const double cov = std::clamp(width * 0.5 + 0.5 - dist, 0.0, 1.0);
      if (cov > 0.0) {
        blend(img, y, x, color, static_cast<float>(cov * 0.92));
        if (cov > 0.5) mark(y, x);
      }
    }
  }
}

inline double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace detail

inline SyntheticSite generate_site(const SceneParams& params) {
  params.validate();
  using detail::Rgb;

  const Rgb dry = detail::lab_rgb(62.0, params.tint_a, params.tint_b);
  const Rgb veg = detail::lab_rgb(48.0, -22.0, 24.0);
  const Rgb building_col = detail::lab_rgb(22.0, 2.0, 2.0);
  const Rgb road_col = detail::lab_rgb(30.0, 3.0, 4.0);
  const Rgb field_col = detail::lab_rgb(44.0, params.tint_a * 0.8, params.tint_b * 0.8);

  Rng blob_rng(derive_seed(params.rng_seed, 10));
  Rng road_rng(derive_seed(params.rng_seed, 11));
  Rng building_rng(derive_seed(params.rng_seed, 12));
  Rng field_rng(derive_seed(params.rng_seed, 13));
  Rng noise_rng(derive_seed(params.rng_seed, 14));
  Rng light_rng(derive_seed(params.rng_seed, 15));

  // Vegetation field on a 1/4 grid (it is low-frequency by construction),
  // bilinearly upsampled during composition.
  const int gs = kScenePx / 4;
  std::vector<float> field(static_cast<std::size_t>(gs) * gs, 0.f);
  const int n_blobs = static_cast<int>(std::lround(2.0 + params.vegetation_fraction * 26.0));
  for (int i = 0; i < n_blobs; ++i) {
    const double cx = blob_rng.uniform(0.0, gs);
    const double cy = blob_rng.uniform(0.0, gs);
    const double sigma = blob_rng.uniform(10.0, 33.0);  // in grid units (40-132 px)
    const double amp = blob_rng.uniform(0.55, 1.05);
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    const int ylo = std::max(0, static_cast<int>(cy) - r), yhi = std::min(gs - 1, static_cast<int>(cy) + r);
    const int xlo = std::max(0, static_cast<int>(cx) - r), xhi = std::min(gs - 1, static_cast<int>(cx) + r);
    for (int y = ylo; y <= yhi; ++y) {
      for (int x = xlo; x <= xhi; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        field[static_cast<std::size_t>(y) * gs + x] +=
            static_cast<float>(amp * std::exp(-d2 / (2.0 * sigma * sigma)));
      }
    }
  }

  // Base composition: dryland/vegetation mix plus a gentle illumination
  // wave and per-pixel luminance noise (all uninformative about wealth).
  Image scene(kScenePx, kScenePx, 3);
  const double wave_phase = noise_rng.uniform(0.0, 6.283185307179586);
  const double wave_dir = noise_rng.uniform(0.0, 6.283185307179586);
  const double wx = std::cos(wave_dir) / kScenePx, wy = std::sin(wave_dir) / kScenePx;
  for (int y = 0; y < kScenePx; ++y) {
    for (int x = 0; x < kScenePx; ++x) {
      const double gxf = std::min(static_cast<double>(gs - 1), x * 0.25);
      const double gyf = std::min(static_cast<double>(gs - 1), y * 0.25);
      const int gx = static_cast<int>(gxf), gy = static_cast<int>(gyf);
      const double fx = gxf - gx, fy = gyf - gy;
      const int gx1 = std::min(gs - 1, gx + 1), gy1 = std::min(gs - 1, gy + 1);
      const double f00 = field[static_cast<std::size_t>(gy) * gs + gx];
      const double f01 = field[static_cast<std::size_t>(gy) * gs + gx1];
      const double f10 = field[static_cast<std::size_t>(gy1) * gs + gx];
      const double f11 = field[static_cast<std::size_t>(gy1) * gs + gx1];
      const double f = (f00 * (1 - fx) + f01 * fx) * (1 - fy) + (f10 * (1 - fx) + f11 * fx) * fy;
      const double mix = detail::smoothstep(0.52, 0.68, f);
      const double lum = 1.0 + 0.035 * std::sin(wave_phase + 6.283185307179586 * (wx * x + wy * y) * 2.2) +
                         noise_rng.uniform(-0.028, 0.028);
      float* p = scene.px(y, x);
      p[0] = std::clamp(static_cast<float>((dry.r + (veg.r - dry.r) * mix) * lum), 0.f, 1.f);
      p[1] = std::clamp(static_cast<float>((dry.g + (veg.g - dry.g) * mix) * lum), 0.f, 1.f);
      p[2] = std::clamp(static_cast<float>((dry.b + (veg.b - dry.b) * mix) * lum), 0.f, 1.f);
    }
  }

  std::vector<std::uint8_t> infra(static_cast<std::size_t>(kScenePx) * kScenePx, 0);
  auto mark_infra = [&](int y, int x) { infra[static_cast<std::size_t>(y) * kScenePx + x] = 1; };
  auto mark_none = [](int, int) {};

  // Field boundaries: thin dryland-toned lines whose density tracks the
  // built counts, so some wealth signal survives in lightness even when
  // chromaticity is removed.
  const int n_fields = std::min(
      40, static_cast<int>(std::lround(
              1.6 * std::log1p(static_cast<double>(params.building_count)) *
                  field_rng.uniform(0.7, 1.3) +
              0.8 * params.road_count)));
  for (int i = 0; i < n_fields; ++i) {
    const double x0 = field_rng.uniform(0.0, kScenePx);
    const double y0 = field_rng.uniform(0.0, kScenePx);
    const double ang = field_rng.uniform(0.0, 6.283185307179586);
    const double len = field_rng.uniform(50.0, 160.0);
    detail::draw_segment(scene, x0, y0, x0 + len * std::cos(ang), y0 + len * std::sin(ang), 1.0,
                         field_col, mark_none);
  }

  // Roads: wandering polylines entering from one edge.
  constexpr double kPi = 3.14159265358979323846;
  std::vector<std::pair<double, double>> road_points;
  for (int r = 0; r < params.road_count; ++r) {
    const int edge = static_cast<int>(road_rng.uniform_int(4));
    double x = road_rng.uniform(0.0, kScenePx), y = road_rng.uniform(0.0, kScenePx);
    double heading = 0.0;  // dx = cos, dy = sin
    switch (edge) {
      case 0: y = 0; heading = road_rng.uniform(0.3, kPi - 0.3); break;
      case 1: y = kScenePx - 1; heading = road_rng.uniform(kPi + 0.3, 2 * kPi - 0.3); break;
      case 2: x = 0; heading = road_rng.uniform(-kPi / 2 + 0.3, kPi / 2 - 0.3); break;
      default: x = kScenePx - 1; heading = road_rng.uniform(kPi / 2 + 0.3, 3 * kPi / 2 - 0.3);
    }
    const double width = params.road_width_px + road_rng.uniform(-0.2, 0.4);
    for (int seg = 0; seg < 24; ++seg) {
      const double len = road_rng.uniform(40.0, 90.0);
      const double nx = x + len * std::cos(heading);
      const double ny = y + len * std::sin(heading);
      detail::draw_segment(scene, x, y, nx, ny, width, road_col, mark_infra);
      road_points.emplace_back((x + nx) * 0.5, (y + ny) * 0.5);
      x = nx;
      y = ny;
      heading += road_rng.uniform(-0.45, 0.45);
      if (x < -20 || x > kScenePx + 20 || y < -20 || y > kScenePx + 20) break;
    }
  }

  // Buildings: small rectangles, mostly clustered into settlements near
  // roads (or the scene center when there are none).
  std::vector<std::pair<double, double>> settlements;
  const int n_settle = 1 + static_cast<int>(building_rng.uniform_int(3));
  for (int s = 0; s < n_settle; ++s) {
    if (!road_points.empty()) {
      settlements.push_back(road_points[building_rng.uniform_int(road_points.size())]);
    } else {
      settlements.emplace_back(building_rng.uniform(0.25 * kScenePx, 0.75 * kScenePx),
                               building_rng.uniform(0.25 * kScenePx, 0.75 * kScenePx));
    }
  }
  for (int bIdx = 0; bIdx < params.building_count; ++bIdx) {
    double cx, cy;
    if (building_rng.uniform() < 0.65 && !settlements.empty()) {
      const auto& s = settlements[building_rng.uniform_int(settlements.size())];
      cx = s.first + building_rng.normal() * 42.0;
      cy = s.second + building_rng.normal() * 42.0;
    } else {
      cx = building_rng.uniform(2.0, kScenePx - 2.0);
      cy = building_rng.uniform(2.0, kScenePx - 2.0);
    }
    const int sz = params.building_size_px + static_cast<int>(building_rng.uniform_int(2));
    const int x0 = static_cast<int>(cx) - sz / 2, y0 = static_cast<int>(cy) - sz / 2;
    Rgb c = building_col;
    const float jit = static_cast<float>(building_rng.uniform(-0.05, 0.07));
    c.r = std::clamp(c.r + jit, 0.f, 1.f);
    c.g = std::clamp(c.g + jit, 0.f, 1.f);
    c.b = std::clamp(c.b + jit, 0.f, 1.f);
    for (int y = y0; y < y0 + sz; ++y) {
      for (int x = x0; x < x0 + sz; ++x) {
        if (y < 0 || y >= kScenePx || x < 0 || x >= kScenePx) continue;
        detail::blend(scene, y, x, c, 0.96f);
        mark_infra(y, x);
      }
    }
  }

  SyntheticSite site;
  site.latent_wealth = latent_wealth_of(params.building_count, params.road_count);

  // Night lights cover the center tile (3x3 radiance cells ~= one tile);
  // the total follows the declared link, split by built mass per cell.
  const double total =
      std::max(0.0, nightlight_link(site.latent_wealth) *
                        (1.0 + light_rng.uniform(-kLightNoise, kLightNoise)));
  std::array<double, 9> mass{};
  const int b0 = kTilePx, b1 = kTilePx + 75, b2 = kTilePx + 149, b3 = 2 * kTilePx;
  const std::array<int, 4> edges{b0, b1, b2, b3};
  for (int iy = 0; iy < 3; ++iy) {
    for (int ix = 0; ix < 3; ++ix) {
      double m = 0.0;
      for (int y = edges[iy]; y < edges[iy + 1]; ++y) {
        for (int x = edges[ix]; x < edges[ix + 1]; ++x) {
          m += infra[static_cast<std::size_t>(y) * kScenePx + x];
        }
      }
      mass[iy * 3 + ix] = m;
    }
  }
  double mass_sum = 0.0;
  for (double& m : mass) {
    m += 1.0;  // floor so empty scenes still split the (tiny) total
    mass_sum += m;
  }
  for (int i = 0; i < 9; ++i) site.nightlight.values[i] = total * mass[i] / mass_sum;

  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      raster::RasterTile t;
      t.pixels = crop(scene, i * kTilePx, j * kTilePx, kTilePx, kTilePx);
      t.meters_per_pixel = 10.0;
      site.tiles[i * 3 + j] = std::move(t);
    }
  }
  return site;
}

// ---- Corpus sampling ----

struct CorpusStats {
  int n_sites = 0;
  int n_dark = 0;  // thresholded nightlight sum < 1
};

inline SceneParams sample_params(std::uint64_t corpus_seed, int site_index) {
  Rng rng(derive_seed(corpus_seed, 0x5170000ULL + static_cast<std::uint64_t>(site_index)));
  SceneParams p;
  if (rng.uniform() < 0.5) {
    p.building_count = static_cast<int>(rng.uniform_int(9));
  } else {
    p.building_count = static_cast<int>(std::lround(std::exp(rng.uniform(std::log(4.0), std::log(380.0)))));
  }
  p.road_count = std::min<int>(12, static_cast<int>(rng.uniform_int(3)) +
                                       static_cast<int>(std::floor(
                                           0.75 * std::log1p(static_cast<double>(p.building_count)) *
                                           rng.uniform(0.3, 1.2))));
  p.building_size_px = 2 + (rng.uniform() < 0.4 ? 1 : 0);
  p.road_width_px = 1 + (rng.uniform() < 0.35 ? 1 : 0);
  p.vegetation_fraction = rng.uniform(0.05, 0.8);
  p.tint_a = rng.uniform(10.0, 20.0);
  p.tint_b = rng.uniform(22.0, 34.0);
  p.rng_seed = derive_seed(corpus_seed, 0xA11CE000ULL + static_cast<std::uint64_t>(site_index));
  return p;
}

inline std::string site_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "site_%06d", index);
  return buf;
}

inline std::string phase_name(int index) { return "p" + std::to_string(index % 3 + 1); }

// In-memory generation for tests and small runs.
inline std::vector<SyntheticSite> generate_corpus(int n_sites, std::uint64_t seed) {
  if (n_sites < 1) throw std::invalid_argument("generate_corpus: need n >= 1");
  std::vector<SyntheticSite> sites(n_sites);
  for (int i = 0; i < n_sites; ++i) sites[i] = generate_site(sample_params(seed, i));
  return sites;
}

// Streams a corpus to disk: per-site tile PNGs, a manifest with the latent
// labels, and the nightlight patch table.
inline CorpusStats write_corpus(const std::string& corpus_dir, int n_sites, std::uint64_t seed,
                                int jobs = 0) {
  if (n_sites < 1) throw std::invalid_argument("write_corpus: need n >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(corpus_dir) / "tiles");

  std::vector<std::vector<std::string>> manifest_rows(n_sites);
  std::vector<std::vector<std::string>> light_rows(n_sites);
  std::vector<int> dark_flags(n_sites, 0);

  parallel_for(n_sites, jobs, [&](std::int64_t i) {
    const int idx = static_cast<int>(i);
    const SceneParams params = sample_params(seed, idx);
    const SyntheticSite site = generate_site(params);
    const std::string id = site_name(idx);
    const fs::path dir = fs::path(corpus_dir) / "tiles" / id;
    fs::create_directories(dir);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        io::write_png((dir / ("r" + std::to_string(r) + "c" + std::to_string(c) + ".png")).string(),
                      site.tiles[r * 3 + c].pixels);
      }
    }
    double raw_sum = 0.0;
    for (double v : site.nightlight.values) raw_sum += v;
    // Dark in the downsampling sense: thresholded nightlight sum below 1.
    dark_flags[idx] = raster::nightlight_label(site.nightlight) < std::log(2.0) ? 1 : 0;

    manifest_rows[idx] = {id, io::fmt(site.latent_wealth), io::fmt(raw_sum), phase_name(idx),
                          params.to_json().dump()};
    std::vector<std::string> lr{id};
    for (double v : site.nightlight.values) lr.push_back(io::fmt(v));
    light_rows[idx] = std::move(lr);
  });

  io::CsvTable manifest;
  manifest.header = {"site_id", "latent_wealth", "nightlight_sum", "phase", "params"};
  manifest.rows = std::move(manifest_rows);
  io::write_csv((fs::path(corpus_dir) / "manifest.csv").string(), manifest);

  io::CsvTable lights;
  lights.header = {"site_id"};
  for (int i = 0; i < 9; ++i) lights.header.push_back("v" + std::to_string(i));
  lights.rows = std::move(light_rows);
  io::write_csv((fs::path(corpus_dir) / "nightlights.csv").string(), lights);

  CorpusStats stats;
  stats.n_sites = n_sites;
  for (int f : dark_flags) stats.n_dark += f;
  return stats;
}

}  // namespace wealthmap::synth
