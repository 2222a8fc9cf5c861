#pragma once

// Explanation stages: color-cluster ablation, attribution maps, feature
// visualization, and the cross-period evaluation harness.

#include "wealthmap/pipeline.hpp"

namespace wealthmap::pipeline {

namespace detail {

inline Image quantize_to_float(const TensorHWC<std::uint8_t>& u8) {
  Image img(u8.h, u8.w, u8.c);
  for (std::size_t i = 0; i < u8.v.size(); ++i) img.v[i] = static_cast<float>(u8.v[i]) / 255.0f;
  return img;
}

struct VariantScore {
  double r2 = 0.0, r2_std = 0.0;
  double spearman = 0.0, spearman_std = 0.0;
};

// Scores one fixed image transform with the sweep protocol (transform,
// re-extract features, refit ridge on train, score held-out sites);
// uncertainty comes from bootstrap resampling of the held-out sites.
template <class TransformFn>
VariantScore score_variant(const RunConfig& cfg, const std::vector<perturb::SweepSite>& sites,
                           const model::ConvNet<float>& net, TransformFn&& transform,
                           std::uint64_t seed) {
  std::vector<std::vector<double>> feats(sites.size());
  parallel_for(static_cast<std::int64_t>(sites.size()), cfg.jobs, [&](std::int64_t i) {
    feats[i] = tile_features(net, transform(quantize_to_float(sites[i].image)));
  });
  std::vector<head::FeatureRow> train_rows;
  std::vector<double> y_true, y_pred;
  {
    std::vector<std::vector<double>> test_feats;
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (sites[i].is_train) {
        train_rows.push_back({std::to_string(i), feats[i], sites[i].wealth, ""});
      } else {
        test_feats.push_back(feats[i]);
        y_true.push_back(sites[i].wealth);
      }
    }
    const auto ridge =
        head::fit_ridge(train_rows, head::default_lambda_grid(), cfg.cv_folds, seed);
    for (const auto& f : test_feats) y_pred.push_back(head::predict(ridge, f));
  }

  VariantScore score;
  score.r2 = metrics::r2(y_true, y_pred);
  score.spearman = metrics::spearman(y_true, y_pred);

  // Bootstrap over held-out sites.
  Rng rng(derive_seed(seed, 0xB0075));
  const int reps = 200;
  std::vector<double> r2s, sps;
  for (int rep = 0; rep < reps; ++rep) {
    std::vector<double> bt, bp;
    for (std::size_t k = 0; k < y_true.size(); ++k) {
      const std::size_t j = rng.uniform_int(y_true.size());
      bt.push_back(y_true[j]);
      bp.push_back(y_pred[j]);
    }
    bool degenerate = true;
    for (double v : bt) {
      if (v != bt[0]) degenerate = false;
    }
    if (degenerate) continue;
    r2s.push_back(metrics::r2(bt, bp));
    sps.push_back(metrics::spearman(bt, bp));
  }
  auto sd = [](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = metrics::mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1));
  };
  score.r2_std = sd(r2s);
  score.spearman_std = sd(sps);
  return score;
}

inline std::string lab_hex(double L, double a, double b) {
  float r = 0.f, g = 0.f, bl = 0.f;
  raster::lab_to_rgb_px({L, a, b}, r, g, bl);
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(std::lround(r * 255)),
                static_cast<int>(std::lround(g * 255)), static_cast<int>(std::lround(bl * 255)));
  return buf;
}

}  // namespace detail

inline void run_explain_color(const RunConfig& cfg) {
  const std::string hash = detail::fnv1a(
      detail::train_hash(cfg) + "|color|" + std::to_string(cfg.color_sample_images) + "|" +
      std::to_string(cfg.kmeans_sample_per_image) + "|" + std::to_string(cfg.sweep_sites) + "|" +
      std::to_string(cfg.mosaic_sweep_sites));
  const std::vector<fs::path> outputs{cfg.out("explain/clusters.json"),
                                      cfg.out("explain/color_ablation.csv"),
                                      cfg.out("explain/fig4_color_1x1.svg"),
                                      cfg.out("explain/fig4_color_3x3.svg")};
  if (detail::stage_fresh(cfg, "explain_color", hash, outputs)) return;
  fs::create_directories(cfg.out("explain"));

  const auto sites = load_corpus(cfg);
  const auto net = load_net(cfg);

  // Cluster the pixel chromaticities of a training-tile sample.
  std::vector<Image> sample_tiles;
  for (const auto& s : sites) {
    if (!s.is_train) continue;
    sample_tiles.push_back(load_tile(s.tile_paths[4]));
    if (static_cast<int>(sample_tiles.size()) >= cfg.color_sample_images) break;
  }
  std::vector<const Image*> sample_ptrs;
  for (const auto& img : sample_tiles) sample_ptrs.push_back(&img);
  const auto clusters = perturb::fit_color_clusters(sample_ptrs, 1, 8,
                                                    cfg.kmeans_sample_per_image,
                                                    derive_seed(cfg.seed, 0xC013));
  {
    nlohmann::json j;
    j["k"] = clusters.k;
    j["k_candidates"] = clusters.k_candidates;
    j["elbow_sse"] = clusters.elbow_sse;
    j["centers_lab"] = clusters.centers;
    std::vector<std::string> hex;
    for (const auto& c : clusters.centers) hex.push_back(detail::lab_hex(c[0], c[1], c[2]));
    j["centers_hex"] = hex;
    std::ofstream(cfg.out("explain/clusters.json")) << j.dump(2) << '\n';
  }

  io::CsvTable table;
  table.header = {"mode",   "variant", "keep",        "center_L", "center_a", "center_b",
                  "r2",     "r2_std",  "spearman",    "spearman_std"};

  for (const auto& [mode, total] : {std::pair{"1x1", cfg.sweep_sites},
                                    std::pair{"3x3", cfg.mosaic_sweep_sites}}) {
    const auto sweep_sites = std::string(mode) == "1x1"
                                 ? detail::sweep_sites_1x1(cfg, sites, total)
                                 : detail::sweep_sites_3x3(cfg, sites, total);
    const std::uint64_t seed = derive_seed(cfg.seed, std::string(mode) == "1x1" ? 0xAB1 : 0xAB3);

    const auto base = detail::score_variant(cfg, sweep_sites, net,
                                            [](Image img) { return img; }, seed);
    table.rows.push_back({mode, "baseline", "-1", "", "", "", io::fmt(base.r2),
                          io::fmt(base.r2_std), io::fmt(base.spearman),
                          io::fmt(base.spearman_std)});

    std::vector<plot::Bar> chroma_bars, gray_bars;
    for (int keep = 0; keep < clusters.k; ++keep) {
      const auto& c = clusters.centers[keep];
      const auto chroma = detail::score_variant(
          cfg, sweep_sites, net,
          [&](Image img) { return perturb::ablate_chromaticity(img, clusters, keep); }, seed);
      const auto gray = detail::score_variant(
          cfg, sweep_sites, net,
          [&](Image img) { return perturb::ablate_gray(img, clusters, keep); }, seed);
      table.rows.push_back({mode, "keep_chroma", std::to_string(keep), io::fmt(c[0]),
                            io::fmt(c[1]), io::fmt(c[2]), io::fmt(chroma.r2),
                            io::fmt(chroma.r2_std), io::fmt(chroma.spearman),
                            io::fmt(chroma.spearman_std)});
      table.rows.push_back({mode, "keep_gray", std::to_string(keep), io::fmt(c[0]), io::fmt(c[1]),
                            io::fmt(c[2]), io::fmt(gray.r2), io::fmt(gray.r2_std),
                            io::fmt(gray.spearman), io::fmt(gray.spearman_std)});
      const std::string hex = detail::lab_hex(c[0], c[1], c[2]);
      chroma_bars.push_back({"keep " + std::to_string(keep), hex, chroma.r2, chroma.r2_std});
      gray_bars.push_back({"keep " + std::to_string(keep), hex, gray.r2, gray.r2_std});
    }

    std::vector<plot::Bar> bars;
    for (std::size_t i = 0; i < chroma_bars.size(); ++i) {
      auto cb = chroma_bars[i];
      cb.label += " chroma";
      bars.push_back(cb);
      auto gb = gray_bars[i];
      gb.label += " gray";
      bars.push_back(gb);
    }
    plot::save_svg(cfg.out(std::string("explain/fig4_color_") + mode + ".svg").string(),
                   plot::bar_chart(std::string("Color cluster ablation (") + mode +
                                       "), dashed = unmodified",
                                   "R^2", bars, base.r2));
  }
  io::write_csv(cfg.out("explain/color_ablation.csv").string(), table);
  detail::stage_mark(cfg, "explain_color", hash);
}

// ---- attribution maps ----

namespace detail {

inline Image overlay_heat(const Image& tile, const attrib::AttributionMap& map) {
  float max_abs = 0.f;
  for (float v : map.values.v) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs == 0.f) max_abs = 1.f;

  Image out(tile.h, tile.w, 3);
  for (int y = 0; y < tile.h; ++y) {
    for (int x = 0; x < tile.w; ++x) {
      // Alignment-aware bilinear sample of the map at this pixel.
      const double u = (y - map.offset) / map.scale;
      const double v = (x - map.offset) / map.scale;
      const double uc = std::clamp(u, 0.0, static_cast<double>(map.values.h - 1));
      const double vc = std::clamp(v, 0.0, static_cast<double>(map.values.w - 1));
      const int y0 = static_cast<int>(uc), x0 = static_cast<int>(vc);
      const int y1 = std::min(y0 + 1, map.values.h - 1), x1 = std::min(x0 + 1, map.values.w - 1);
      const double fy = uc - y0, fx = vc - x0;
      const double m = (map.values.at(y0, x0, 0) * (1 - fx) + map.values.at(y0, x1, 0) * fx) *
                           (1 - fy) +
                       (map.values.at(y1, x0, 0) * (1 - fx) + map.values.at(y1, x1, 0) * fx) * fy;
      const double t = std::clamp(m / max_abs, -1.0, 1.0);

      const float* px = tile.px(y, x);
      const float gray = 0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2];
      float r = gray, g = gray, b = gray;
      if (t >= 0) {  // supportive regions in red
        r += static_cast<float>(t) * (1.f - r);
        g *= 1.f - 0.6f * static_cast<float>(t);
        b *= 1.f - 0.6f * static_cast<float>(t);
      } else {  // suppressive regions in blue
        b += static_cast<float>(-t) * (1.f - b);
        r *= 1.f - 0.6f * static_cast<float>(-t);
        g *= 1.f - 0.6f * static_cast<float>(-t);
      }
      out.at(y, x, 0) = std::clamp(r, 0.f, 1.f);
      out.at(y, x, 1) = std::clamp(g, 0.f, 1.f);
      out.at(y, x, 2) = std::clamp(b, 0.f, 1.f);
    }
  }
  return out;
}

inline void save_map(const fs::path& base, const attrib::AttributionMap& map) {
  std::ofstream out(base.string() + ".f32", std::ios::binary);
  out.write(reinterpret_cast<const char*>(map.values.v.data()),
            static_cast<std::streamsize>(map.values.v.size() * sizeof(float)));
  nlohmann::json j;
  j["height"] = map.values.h;
  j["width"] = map.values.w;
  j["scale"] = map.scale;
  j["offset"] = map.offset;
  j["method"] = map.method;
  j["signedness"] = map.nonnegative ? "nonnegative" : "signed";
  std::ofstream(base.string() + ".json") << j.dump(2) << '\n';
}

template <class T>
attrib::AttributionMap compute_map(const RunConfig& cfg, const model::ConvNet<T>& net,
                                   const TensorHWC<T>& tile, const std::string& method) {
  if (method == "occlusion") {
    return attrib::occlusion_map(net, tile, {cfg.occl_patch, cfg.occl_stride}, 1);
  }
  if (method == "gradcam") return attrib::grad_cam(net, tile);
  if (method == "guidedbp") return attrib::guided_backprop(net, tile);
  if (method == "guidedgradcam") return attrib::guided_grad_cam(net, tile);
  throw std::invalid_argument("unknown attribution method: " + method);
}

// 3 lowest, 3 nearest-median, 3 highest wealth sites of the held-out
// split, in ascending target order.
inline std::vector<const SiteEntry*> panel_sites(const std::vector<SiteEntry>& sites) {
  std::vector<const SiteEntry*> test;
  for (const auto& s : sites) {
    if (!s.is_train) test.push_back(&s);
  }
  if (test.size() < 9) throw DataError("attribution: need >= 9 held-out sites");
  std::sort(test.begin(), test.end(),
            [](const SiteEntry* a, const SiteEntry* b) { return a->wealth < b->wealth; });
  const std::size_t mid = test.size() / 2;
  std::vector<const SiteEntry*> out(test.begin(), test.begin() + 3);
  out.insert(out.end(), {test[mid - 1], test[mid], test[mid + 1]});
  out.insert(out.end(), test.end() - 3, test.end());
  return out;
}

}  // namespace detail

inline void run_explain_attribution(const RunConfig& cfg, const std::string& method,
                                    const std::vector<std::string>& site_ids = {}) {
  const std::string hash = detail::fnv1a(detail::train_hash(cfg) + "|" + method + "|" +
                                         std::to_string(cfg.attribution_sites) + "|" +
                                         std::to_string(cfg.occl_patch) + "|" +
                                         std::to_string(cfg.occl_stride) + "|" +
                                         [&] {
                                           std::string s;
                                           for (const auto& id : site_ids) s += id + ",";
                                           return s;
                                         }());
  const std::vector<fs::path> outputs{cfg.out("explain/fig_attribution_" + method + ".svg")};
  if (detail::stage_fresh(cfg, "explain_" + method, hash, outputs)) return;

  const auto sites = load_corpus(cfg);
  const auto net = load_net(cfg);
  const fs::path dir = cfg.out("explain/" + method);
  fs::create_directories(dir);

  std::vector<const SiteEntry*> chosen;
  if (site_ids.empty()) {
    chosen = detail::panel_sites(sites);
  } else {
    for (const auto& id : site_ids) {
      const auto it = std::find_if(sites.begin(), sites.end(),
                                   [&](const SiteEntry& s) { return s.id == id; });
      if (it == sites.end()) throw DataError("attribution: unknown site id " + id);
      chosen.push_back(&*it);
    }
    std::sort(chosen.begin(), chosen.end(),
              [](const SiteEntry* a, const SiteEntry* b) { return a->wealth < b->wealth; });
  }

  std::vector<std::vector<plot::Panel>> rows(chosen.size());
  parallel_for(static_cast<std::int64_t>(chosen.size()), cfg.jobs, [&](std::int64_t i) {
    const auto& site = *chosen[i];
    const Image tile = load_tile(site.tile_paths[4]);
    const auto map = detail::compute_map(cfg, net, tile, method);
    const double output = static_cast<double>(model::forward(net, tile).output);

    const fs::path base = dir / site.id;
    io::write_png(base.string() + "_input.png", tile);
    io::write_png(base.string() + "_overlay.png", detail::overlay_heat(tile, map));
    detail::save_map(base, map);

    char cap[96];
    std::snprintf(cap, sizeof(cap), "%s w=%.2f out=%.2f", site.id.c_str(), site.wealth, output);
    rows[i] = {{base.string() + "_input.png", site.id},
               {base.string() + "_overlay.png", cap}};
  });

  plot::save_svg(cfg.out("explain/fig_attribution_" + method + ".svg").string(),
                 plot::panel_grid("Attribution (" + method + "), sites in ascending wealth",
                                  {"lowest", "lowest", "lowest", "median", "median", "median",
                                   "highest", "highest", "highest"},
                                  rows));

  // Summed-map / output correlation over a held-out sample (the gradient
  // methods; occlusion is priced out at this patch grid).
  if (method != "occlusion") {
    std::vector<const SiteEntry*> test;
    for (const auto& s : sites) {
      if (!s.is_train) test.push_back(&s);
    }
    if (static_cast<int>(test.size()) > cfg.attribution_sites) test.resize(cfg.attribution_sites);
    std::vector<attrib::AttributionMap> maps(test.size());
    std::vector<double> outputs_v(test.size());
    parallel_for(static_cast<std::int64_t>(test.size()), cfg.jobs, [&](std::int64_t i) {
      const Image tile = load_tile(test[i]->tile_paths[4]);
      maps[i] = detail::compute_map(cfg, net, tile, method);
      outputs_v[i] = static_cast<double>(model::forward(net, tile).output);
    });
    const double r = attrib::attribution_output_correlation(maps, outputs_v);
    io::CsvTable t;
    t.header = {"method", "n_sites", "pearson_r"};
    t.rows.push_back({method, std::to_string(test.size()), io::fmt(r)});
    io::write_csv(cfg.out("explain/correlation_" + method + ".csv").string(), t);
  }
  detail::stage_mark(cfg, "explain_" + method, hash);
}

inline void run_explain_featviz(const RunConfig& cfg) {
  const std::string hash = detail::fnv1a(detail::train_hash(cfg) + "|featviz|" +
                                         std::to_string(cfg.viz_seeds) + "|" +
                                         std::to_string(cfg.viz_steps) + "|" +
                                         io::fmt(cfg.viz_step_size) + "|" +
                                         std::to_string(cfg.viz_jitter) + "|" + io::fmt(cfg.viz_tv));
  const std::vector<fs::path> outputs{cfg.out("explain/fig5_featviz.svg"),
                                      cfg.out("explain/featviz_trajectories.csv")};
  if (detail::stage_fresh(cfg, "explain_featviz", hash, outputs)) return;
  const auto net = load_net(cfg);
  const fs::path dir = cfg.out("explain/featviz");
  fs::create_directories(dir);

  std::vector<featviz::VizResult> results(cfg.viz_seeds);
  parallel_for(cfg.viz_seeds, cfg.jobs, [&](std::int64_t i) {
    featviz::VizSpec spec;
    spec.unit = model::Unit::Output;
    spec.steps = cfg.viz_steps;
    spec.step_size = cfg.viz_step_size;
    spec.jitter_px = cfg.viz_jitter;
    spec.smoothness_weight = cfg.viz_tv;
    spec.seed = derive_seed(cfg.seed, 0xF500 + static_cast<std::uint64_t>(i));
    results[i] = featviz::visualize_unit(net, spec);
  });

  io::CsvTable traj;
  traj.header = {"seed_index", "step", "unit_value"};
  std::vector<plot::Panel> panels;
  for (int i = 0; i < cfg.viz_seeds; ++i) {
    const auto png = (dir / ("seed" + std::to_string(i) + ".png")).string();
    io::write_png(png, results[i].image.pixels);
    char cap[64];
    std::snprintf(cap, sizeof(cap), "seed %d (max %.2f)", i,
                  *std::max_element(results[i].trajectory.begin(), results[i].trajectory.end()));
    panels.push_back({png, cap});
    for (std::size_t s = 0; s < results[i].trajectory.size(); ++s) {
      traj.rows.push_back({std::to_string(i), std::to_string(s), io::fmt(results[i].trajectory[s])});
    }
  }
  io::write_csv(cfg.out("explain/featviz_trajectories.csv").string(), traj);
  plot::save_svg(cfg.out("explain/fig5_featviz.svg").string(),
                 plot::panel_grid("Inputs maximizing the wealth output unit", {"optimized"},
                                  {panels}, 200));
  detail::stage_mark(cfg, "explain_featviz", hash);
}

inline void run_eval_cross_period(const RunConfig& cfg) {
  const std::string hash = detail::fnv1a(detail::head_hash(cfg) + "|xp");
  const std::vector<fs::path> outputs{cfg.out("cross_period.csv"),
                                      cfg.out("table2_cross_period.md")};
  if (detail::stage_fresh(cfg, "eval_cross_period", hash, outputs)) return;
  const auto feat_path = cfg.out("features_3x3.csv");
  if (!fs::exists(feat_path)) {
    throw DataError("missing stage: fit-head (no " + feat_path.string() + ")");
  }
  const auto rows = head::read_feature_csv(feat_path.string());
  const auto grid = metrics::cross_period_eval(rows, cfg.cv_folds, derive_seed(cfg.seed, 0xE7a1));

  io::CsvTable t;
  t.header = {"train_phase", "test_phase", "r2", "spearman"};
  for (std::size_t i = 0; i < grid.phases.size(); ++i) {
    for (std::size_t j = 0; j < grid.phases.size(); ++j) {
      t.rows.push_back({grid.phases[i], grid.phases[j], io::fmt(grid.cells[i][j].r2),
                        io::fmt(grid.cells[i][j].spearman)});
    }
  }
  io::write_csv(cfg.out("cross_period.csv").string(), t);
  std::ofstream(cfg.out("table2_cross_period.md")) << metrics::cross_period_markdown(grid);
  detail::stage_mark(cfg, "eval_cross_period", hash);
}

}  // namespace wealthmap::pipeline
