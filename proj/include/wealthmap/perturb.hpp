#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <string>
#include <vector>

#include "wealthmap/common.hpp"
#include "wealthmap/csv.hpp"
#include "wealthmap/fft.hpp"
#include "wealthmap/head.hpp"
#include "wealthmap/metrics.hpp"
#include "wealthmap/raster.hpp"

namespace wealthmap::perturb {

// ---- Grid shuffling ----

struct ShuffleSpec {
  int tile_px = 1;
  std::uint64_t rng_seed = 0;
  int repetitions = 5;
};

// Divides the image into tile_px squares and permutes them uniformly.
// The pixel multiset is preserved exactly; tile_px must divide the side.
inline Image grid_shuffle(const Image& img, const ShuffleSpec& spec) {
  if (img.h != img.w) throw std::invalid_argument("grid_shuffle: image must be square");
  if (spec.tile_px < 1 || img.h % spec.tile_px != 0) {
    throw std::invalid_argument("grid_shuffle: tile size must divide the image side");
  }
  const int n = img.h / spec.tile_px;
  std::vector<int> perm(static_cast<std::size_t>(n) * n);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  Rng rng(spec.rng_seed);
  rng.shuffle(perm);

  Image out(img.h, img.w, img.c);
  const int t = spec.tile_px;
  for (int dst = 0; dst < n * n; ++dst) {
    const int src = perm[dst];
    const int sy = (src / n) * t, sx = (src % n) * t;
    const int dy = (dst / n) * t, dx = (dst % n) * t;
    for (int y = 0; y < t; ++y) {
      const float* s = img.px(sy + y, sx);
      float* d = out.px(dy + y, dx);
      for (int i = 0; i < t * img.c; ++i) d[i] = s[i];
    }
  }
  return out;
}

// ---- Frequency-domain Gaussian filtering ----

enum class FilterKind { Low, High, Band };

struct FilterSpec {
  FilterKind kind = FilterKind::Low;
  double sigma_px = 1.0;  // signal-domain standard deviation
  int n = 224;            // image side the spec applies to
};

inline const char* filter_name(FilterKind k) {
  switch (k) {
    case FilterKind::Low: return "low";
    case FilterKind::High: return "high";
    case FilterKind::Band: return "band";
  }
  return "?";
}

// Per-channel FFT filtering with Gaussian transfer functions. The
// frequency-space standard deviation is D = N / (2*pi*sigma); high-pass is
// the complement of low-pass and band-pass the difference of the sigma and
// 1.5*sigma Gaussians. High- and band-pass outputs are re-centered on
// mid-gray. clamp_output=false skips the [0,1] clamp (used by the
// complement-identity check).
inline Image freq_filter(const Image& img, const FilterSpec& spec, bool clamp_output = true) {
  if (img.h != img.w) throw std::invalid_argument("freq_filter: image must be square");
  if (img.h != spec.n) throw std::invalid_argument("freq_filter: spec.n does not match image");
  if (spec.sigma_px <= 0.0) throw std::invalid_argument("freq_filter: sigma must be positive");

  const int n = img.h;
  const double d_lo = static_cast<double>(n) / (2.0 * 3.14159265358979323846 * spec.sigma_px);
  const double d_hi = d_lo / 1.5;  // band upper scale (1.5*sigma in signal space)

  std::vector<double> transfer(static_cast<std::size_t>(n) * n);
  for (int u = 0; u < n; ++u) {
    const int fu = u <= n / 2 ? u : u - n;
    for (int v = 0; v < n; ++v) {
      const int fv = v <= n / 2 ? v : v - n;
      const double r2 = static_cast<double>(fu) * fu + static_cast<double>(fv) * fv;
      const double g_lo = std::exp(-r2 / (2.0 * d_lo * d_lo));
      double h = 0.0;
      switch (spec.kind) {
        case FilterKind::Low: h = g_lo; break;
        case FilterKind::High: h = 1.0 - g_lo; break;
        case FilterKind::Band: h = g_lo - std::exp(-r2 / (2.0 * d_hi * d_hi)); break;
      }
      transfer[static_cast<std::size_t>(u) * n + v] = h;
    }
  }

  const double offset = spec.kind == FilterKind::Low ? 0.0 : 0.5;
  Image out(n, n, img.c);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(n) * n);
  for (int ch = 0; ch < img.c; ++ch) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        buf[static_cast<std::size_t>(y) * n + x] = img.at(y, x, ch);
      }
    }
    fft::dft2d(n, n, buf.data(), FFTW_FORWARD);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] *= transfer[i];
    fft::dft2d(n, n, buf.data(), FFTW_BACKWARD);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        double v = buf[static_cast<std::size_t>(y) * n + x].real() + offset;
        if (clamp_output) v = std::clamp(v, 0.0, 1.0);
        out.at(y, x, ch) = static_cast<float>(v);
      }
    }
  }
  return out;
}

// ---- L*a*b* chromaticity clustering and ablation ----

struct ColorClusterModel {
  int k = 0;
  std::vector<std::array<double, 3>> centers;  // L*, a*, b*; clustering uses (a*, b*)
  std::vector<int> k_candidates;
  std::vector<double> elbow_sse;  // mean within-cluster SSE per candidate
};

namespace detail {

struct KmeansOut {
  std::vector<std::array<double, 2>> centers;
  double sse = 0.0;
};

inline int nearest(const std::vector<std::array<double, 2>>& centers, double a, double b) {
  int best = 0;
  double bd = 1e300;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double da = a - centers[c][0], db = b - centers[c][1];
    const double d = da * da + db * db;
    if (d < bd) {
      bd = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

// Lloyd iterations from a k-means++ seeding; empty clusters are reseeded
// at the point farthest from its center.
inline KmeansOut kmeans_ab(const std::vector<std::array<double, 2>>& pts, int k, Rng& rng) {
  KmeansOut out;
  const std::size_t n = pts.size();
  std::vector<std::array<double, 2>> centers;
  centers.push_back(pts[rng.uniform_int(n)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest(centers, pts[i][0], pts[i][1]);
      const double da = pts[i][0] - centers[c][0], db = pts[i][1] - centers[c][1];
      d2[i] = da * da + db * db;
      total += d2[i];
    }
    if (total <= 0.0) {
      centers.push_back(pts[rng.uniform_int(n)]);
      continue;
    }
    double target = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= d2[i];
      if (target <= 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(pts[pick]);
  }

  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest(centers, pts[i][0], pts[i][1]);
      if (c != assign[i]) {
        assign[i] = c;
        changed = true;
      }
    }
    std::vector<std::array<double, 2>> sums(k, {0.0, 0.0});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums[assign[i]][0] += pts[i][0];
      sums[assign[i]][1] += pts[i][1];
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        std::size_t far_i = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double da = pts[i][0] - centers[assign[i]][0];
          const double db = pts[i][1] - centers[assign[i]][1];
          if (da * da + db * db > far_d) {
            far_d = da * da + db * db;
            far_i = i;
          }
        }
        centers[c] = pts[far_i];
        changed = true;
      } else {
        centers[c] = {sums[c][0] / counts[c], sums[c][1] / counts[c]};
      }
    }
    if (!changed) break;
  }

  out.centers = centers;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = nearest(centers, pts[i][0], pts[i][1]);
    const double da = pts[i][0] - centers[c][0], db = pts[i][1] - centers[c][1];
    out.sse += da * da + db * db;
  }
  out.sse /= static_cast<double>(n);
  return out;
}

}  // namespace detail

// k-means over pooled (a*, b*) chromaticities of sampled pixels; k picked
// by the elbow rule (largest second difference of within-cluster SSE).
inline ColorClusterModel fit_color_clusters(const std::vector<const Image*>& corpus,
                                            int k_min = 1, int k_max = 8,
                                            int sample_per_image = 1000,
                                            std::uint64_t seed = 0) {
  if (corpus.empty()) throw std::invalid_argument("fit_color_clusters: empty corpus");
  if (k_min < 1 || k_max < k_min) throw std::invalid_argument("fit_color_clusters: bad k range");

  Rng rng(derive_seed(seed, 0xC1));
  std::vector<std::array<double, 2>> pts;
  std::vector<double> lum;
  for (const Image* img : corpus) {
    const std::size_t n_px = static_cast<std::size_t>(img->h) * img->w;
    const std::size_t take = std::min<std::size_t>(sample_per_image, n_px);
    for (std::size_t s = 0; s < take; ++s) {
      const std::size_t p = rng.uniform_int(n_px);
      const float* px = &img->v[p * img->c];
      const auto lab = raster::rgb_to_lab_px(px[0], px[1], px[2]);
      pts.push_back({lab.a, lab.b});
      lum.push_back(lab.L);
    }
  }

  std::size_t distinct = 0;
  {
    auto sorted = pts;
    std::sort(sorted.begin(), sorted.end());
    distinct = static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
  }
  std::vector<int> candidates;
  for (int k = k_min; k <= k_max; ++k) {
    if (static_cast<std::size_t>(k) <= distinct) candidates.push_back(k);
  }
  if (candidates.empty()) {
    throw std::invalid_argument("fit_color_clusters: fewer distinct pixels than k");
  }

  std::vector<double> sse;
  std::vector<std::vector<std::array<double, 2>>> centers_by_k;
  for (int k : candidates) {
    detail::KmeansOut best;
    best.sse = 1e300;
    for (int restart = 0; restart < 4; ++restart) {
      Rng krng(derive_seed(seed, 0xB000 + 16 * k + restart));
      auto res = detail::kmeans_ab(pts, k, krng);
      if (res.sse < best.sse) best = std::move(res);
    }
    sse.push_back(best.sse);
    centers_by_k.push_back(std::move(best.centers));
  }

  // Elbow: pick the candidate with the largest positive curvature of the
  // SSE curve; degenerate curves (already near zero) pick the smallest k.
  std::size_t pick = 0;
  if (sse[0] < 1e-9) {
    pick = 0;
  } else if (candidates.size() >= 3) {
    double best_curv = -1e300;
    for (std::size_t i = 1; i + 1 < candidates.size(); ++i) {
      const double curv = sse[i - 1] - 2.0 * sse[i] + sse[i + 1];
      if (curv > best_curv) {
        best_curv = curv;
        pick = i;
      }
    }
  } else {
    pick = candidates.size() - 1;
  }

  ColorClusterModel model;
  model.k = candidates[pick];
  model.k_candidates = candidates;
  model.elbow_sse = sse;
  std::vector<double> lsum(model.k, 0.0);
  std::vector<std::size_t> lcount(model.k, 0);
  const auto& centers = centers_by_k[pick];
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const int c = detail::nearest(centers, pts[i][0], pts[i][1]);
    lsum[c] += lum[i];
    ++lcount[c];
  }
  for (int c = 0; c < model.k; ++c) {
    model.centers.push_back({lcount[c] ? lsum[c] / lcount[c] : 50.0, centers[c][0], centers[c][1]});
  }
  return model;
}

inline int assign_cluster(const ColorClusterModel& model, double a, double b) {
  int best = 0;
  double bd = 1e300;
  for (int c = 0; c < model.k; ++c) {
    const double da = a - model.centers[c][1], db = b - model.centers[c][2];
    const double d = da * da + db * db;
    if (d < bd) {
      bd = d;
      best = c;
    }
  }
  return best;
}

// Pixels outside the kept cluster lose their chromaticity (a* = b* = 0);
// lightness is preserved. keep == -1 ablates every cluster.
inline Image ablate_chromaticity(const Image& img, const ColorClusterModel& model, int keep) {
  if (keep < -1 || keep >= model.k) throw std::invalid_argument("ablate: bad cluster id");
  Image out(img.h, img.w, 3);
  for (int y = 0; y < img.h; ++y) {
    const float* s = img.px(y, 0);
    float* d = out.px(y, 0);
    for (int x = 0; x < img.w; ++x, s += 3, d += 3) {
      auto lab = raster::rgb_to_lab_px(s[0], s[1], s[2]);
      if (assign_cluster(model, lab.a, lab.b) != keep) {
        lab.a = 0.0;
        lab.b = 0.0;
        raster::lab_to_rgb_px(lab, d[0], d[1], d[2]);
      } else {
        d[0] = s[0];
        d[1] = s[1];
        d[2] = s[2];
      }
    }
  }
  return out;
}

// Pixels outside the kept cluster are blanked to mid-gray; keep == -1
// blanks everything.
inline Image ablate_gray(const Image& img, const ColorClusterModel& model, int keep) {
  if (keep < -1 || keep >= model.k) throw std::invalid_argument("ablate: bad cluster id");
  Image out(img.h, img.w, 3);
  for (int y = 0; y < img.h; ++y) {
    const float* s = img.px(y, 0);
    float* d = out.px(y, 0);
    for (int x = 0; x < img.w; ++x, s += 3, d += 3) {
      const auto lab = raster::rgb_to_lab_px(s[0], s[1], s[2]);
      if (assign_cluster(model, lab.a, lab.b) != keep) {
        d[0] = d[1] = d[2] = 0.5f;
      } else {
        d[0] = s[0];
        d[1] = s[1];
        d[2] = s[2];
      }
    }
  }
  return out;
}

// ---- Sweep harness ----

struct SweepSite {
  double wealth = 0.0;
  bool is_train = true;
  TensorHWC<std::uint8_t> image;  // stored 8-bit, converted per evaluation
};

struct SweepPoint {
  double param = 0.0;
  double r2_mean = 0.0, r2_std = 0.0;
  double spearman_mean = 0.0, spearman_std = 0.0;
  std::vector<double> r2_reps, spearman_reps;
};

struct SweepResult {
  std::string family;
  double baseline_r2 = 0.0, baseline_spearman = 0.0;
  std::vector<SweepPoint> points;

  void write_csv(const std::string& path) const {
    io::CsvTable t;
    t.header = {"param", "metric", "mean", "std", "reps"};
    auto push = [&](double param, const char* metric, double mean, double sd,
                    const std::vector<double>& reps) {
      std::string r;
      for (std::size_t i = 0; i < reps.size(); ++i) {
        if (i) r += ';';
        r += io::fmt(reps[i]);
      }
      t.rows.push_back({io::fmt(param), metric, io::fmt(mean), io::fmt(sd), r});
    };
    push(-1.0, "baseline_r2", baseline_r2, 0.0, {});
    push(-1.0, "baseline_spearman", baseline_spearman, 0.0, {});
    for (const auto& p : points) {
      push(p.param, "r2", p.r2_mean, p.r2_std, p.r2_reps);
      push(p.param, "spearman", p.spearman_mean, p.spearman_std, p.spearman_reps);
    }
    io::write_csv(path, t);
  }
};

struct SweepOptions {
  std::vector<double> params;
  int repetitions = 1;
  std::uint64_t seed = 0;
  int jobs = 0;
  std::vector<double> lambda_grid = head::default_lambda_grid();
  int folds = 5;
};

namespace detail {
inline Image to_float(const TensorHWC<std::uint8_t>& u8) {
  Image img(u8.h, u8.w, u8.c);
  for (std::size_t i = 0; i < u8.v.size(); ++i) img.v[i] = static_cast<float>(u8.v[i]) / 255.0f;
  return img;
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double m = metrics::mean(v);
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}
}  // namespace detail

// For each (parameter, repetition): transform every site image, recompute
// features with the frozen network, refit the ridge head on the
// transformed training features, and score R^2 / Spearman on the held-out
// sites. The baseline row runs the identical path without a transform.
//
// transform: Image(const Image&, double param, Rng&)
// feature:   std::vector<double>(const Image&)
template <class TransformFn, class FeatureFn>
SweepResult perturbation_sweep(const std::string& family, const std::vector<SweepSite>& sites,
                               TransformFn&& transform, FeatureFn&& feature,
                               const SweepOptions& opt) {
  if (opt.params.empty()) throw std::invalid_argument("sweep: empty parameter grid");
  if (opt.repetitions < 1) throw std::invalid_argument("sweep: repetitions < 1");
  std::size_t n_train = 0, n_test = 0;
  for (const auto& s : sites) (s.is_train ? n_train : n_test)++;
  if (n_train < static_cast<std::size_t>(opt.folds) || n_test < 2) {
    throw std::invalid_argument("sweep: need folds train sites and >= 2 test sites");
  }
  const std::uint64_t ridge_seed = derive_seed(opt.seed, 0x51D9E);

  auto evaluate = [&](bool identity, double param, std::uint64_t cell_seed,
                      double& r2_out, double& sp_out) {
    std::vector<std::vector<double>> feats(sites.size());
    parallel_for(static_cast<std::int64_t>(sites.size()), opt.jobs, [&](std::int64_t i) {
      Image img = detail::to_float(sites[i].image);
      if (!identity) {
        Rng site_rng(derive_seed(cell_seed, static_cast<std::uint64_t>(i)));
        img = transform(img, param, site_rng);
      }
      feats[i] = feature(img);
    });
    std::vector<head::FeatureRow> train_rows;
    std::vector<std::vector<double>> test_feats;
    std::vector<double> test_wealth;
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (sites[i].is_train) {
        train_rows.push_back({std::to_string(i), feats[i], sites[i].wealth, ""});
      } else {
        test_feats.push_back(feats[i]);
        test_wealth.push_back(sites[i].wealth);
      }
    }
    const auto ridge = head::fit_ridge(train_rows, opt.lambda_grid, opt.folds, ridge_seed);
    std::vector<double> pred;
    pred.reserve(test_feats.size());
    for (const auto& f : test_feats) pred.push_back(head::predict(ridge, f));
    r2_out = metrics::r2(test_wealth, pred);
    sp_out = metrics::spearman(test_wealth, pred);
  };

  SweepResult result;
  result.family = family;
  evaluate(true, 0.0, 0, result.baseline_r2, result.baseline_spearman);

  for (std::size_t pi = 0; pi < opt.params.size(); ++pi) {
    SweepPoint pt;
    pt.param = opt.params[pi];
    for (int rep = 0; rep < opt.repetitions; ++rep) {
      const std::uint64_t cell_seed =
          derive_seed(opt.seed, 0xCE110000ULL + pi * 64 + static_cast<std::uint64_t>(rep));
      double r2v = 0.0, spv = 0.0;
      evaluate(false, pt.param, cell_seed, r2v, spv);
      pt.r2_reps.push_back(r2v);
      pt.spearman_reps.push_back(spv);
    }
    std::tie(pt.r2_mean, pt.r2_std) = detail::mean_std(pt.r2_reps);
    std::tie(pt.spearman_mean, pt.spearman_std) = detail::mean_std(pt.spearman_reps);
    result.points.push_back(std::move(pt));
  }
  return result;
}

// Divisors of 224 up to half the side; the shuffle sweep grid.
inline std::vector<int> default_shuffle_grid() {
  return {1, 2, 4, 7, 8, 14, 16, 28, 32, 56, 112};
}

}  // namespace wealthmap::perturb
