#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wealthmap/attribution.hpp"
#include "wealthmap/common.hpp"
#include "wealthmap/csv.hpp"
#include "wealthmap/eval.hpp"
#include "wealthmap/featviz.hpp"
#include "wealthmap/head.hpp"
#include "wealthmap/imageio.hpp"
#include "wealthmap/metrics.hpp"
#include "wealthmap/model.hpp"
#include "wealthmap/perturb.hpp"
#include "wealthmap/raster.hpp"
#include "wealthmap/svgplot.hpp"
#include "wealthmap/synthgen.hpp"
#include "wealthmap/train.hpp"

namespace wealthmap::pipeline {

namespace fs = std::filesystem;

// One knob set drives every stage; all randomness fans out from `seed`.
struct RunConfig {
  std::string corpus_dir = "corpus";
  std::string out_dir = "out";
  std::uint64_t seed = 42;
  int jobs = 0;

  // corpus
  int n_sites = 2000;
  double test_fraction = 0.2;

  // model + training
  int feature_dim = 64;
  model::TrainSchedule sched;

  // wealth head
  int cv_folds = 5;

  // perturbation sweeps
  std::vector<double> shuffle_tiles = {1, 2, 4, 7, 8, 14, 16, 28, 32, 56, 112};
  int shuffle_reps = 5;
  int sweep_sites = 400;
  int mosaic_sweep_sites = 160;  // 3x3 fused-input sweeps
  int mosaic_shuffle_reps = 3;
  std::vector<double> filter_sigmas = {0.5, 1, 1.5, 2, 3, 4, 6, 8, 12, 16, 24, 32};

  // color clustering
  int color_sample_images = 150;
  int kmeans_sample_per_image = 1000;

  // attribution
  int attribution_sites = 200;
  int occl_patch = 16;
  int occl_stride = 8;

  // feature visualization
  int viz_seeds = 3;
  int viz_steps = 512;
  double viz_step_size = 1e-2;
  int viz_jitter = 2;
  double viz_tv = 1e-3;

  fs::path out(const std::string& rel) const { return fs::path(out_dir) / rel; }
};

// ---- corpus index ----

struct SiteEntry {
  std::string id;
  double wealth = 0.0;       // latent wealth index (ground truth)
  double light_label = 0.0;  // ln(1 + thresholded nightlight sum)
  std::string phase;
  bool is_train = true;
  std::array<std::string, 9> tile_paths;
};

inline std::vector<SiteEntry> load_corpus(const RunConfig& cfg) {
  const fs::path dir(cfg.corpus_dir);
  if (!fs::exists(dir / "manifest.csv")) {
    throw DataError("corpus: missing " + (dir / "manifest.csv").string() +
                    " (run `generate` first)");
  }
  const auto manifest = io::read_csv((dir / "manifest.csv").string());
  const auto lights = io::read_csv((dir / "nightlights.csv").string());
  if (manifest.rows.size() != lights.rows.size()) {
    throw DataError("corpus: manifest and nightlights row counts differ");
  }
  const int id_col = manifest.col("site_id");
  const int wealth_col = manifest.col("latent_wealth");
  const int phase_col = manifest.col("phase");

  std::vector<SiteEntry> sites(manifest.rows.size());
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    SiteEntry& s = sites[i];
    s.id = manifest.rows[i][id_col];
    s.wealth = std::stod(manifest.rows[i][wealth_col]);
    s.phase = manifest.rows[i][phase_col];
    if (lights.rows[i][0] != s.id) throw DataError("corpus: nightlights misaligned at row " + std::to_string(i));
    raster::NightlightPatch patch;
    for (int k = 0; k < 9; ++k) patch.values[k] = std::stod(lights.rows[i][k + 1]);
    s.light_label = raster::nightlight_label(patch);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        s.tile_paths[r * 3 + c] =
            (dir / "tiles" / s.id / ("r" + std::to_string(r) + "c" + std::to_string(c) + ".png"))
                .string();
      }
    }
  }

  // Held-out split by site, fixed by the top-level seed.
  std::vector<std::size_t> order(sites.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, 0x5917));
  rng.shuffle(order);
  const std::size_t n_test = static_cast<std::size_t>(cfg.test_fraction * sites.size());
  for (std::size_t i = 0; i < order.size(); ++i) sites[order[i]].is_train = i >= n_test;
  return sites;
}

inline Image load_tile(const std::string& path) { return io::read_png(path); }

inline Image load_mosaic(const SiteEntry& site) {
  std::array<raster::RasterTile, 9> tiles;
  for (int k = 0; k < 9; ++k) tiles[k].pixels = load_tile(site.tile_paths[k]);
  return raster::concat_grid(tiles).pixels;
}

// ---- stage stamps (content-addressed resumability) ----

namespace detail {

inline std::string fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline fs::path stamp_path(const RunConfig& cfg, const std::string& stage) {
  return cfg.out("state/" + stage + ".json");
}

inline bool stage_fresh(const RunConfig& cfg, const std::string& stage, const std::string& hash,
                        const std::vector<fs::path>& outputs) {
  std::ifstream in(stamp_path(cfg, stage));
  if (!in) return false;
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || j.value("hash", "") != hash) return false;
  for (const auto& p : outputs) {
    if (!fs::exists(p)) return false;
  }
  return true;
}

inline void stage_mark(const RunConfig& cfg, const std::string& stage, const std::string& hash) {
  fs::create_directories(cfg.out("state"));
  nlohmann::json j{{"stage", stage}, {"hash", hash}};
  std::ofstream out(stamp_path(cfg, stage));
  out << j.dump(2) << '\n';
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += io::fmt(x) + ",";
  return s;
}

inline std::string corpus_hash(const RunConfig& cfg) {
  return fnv1a(cfg.corpus_dir + "|" + std::to_string(cfg.n_sites) + "|" +
               std::to_string(cfg.seed));
}

inline std::string train_hash(const RunConfig& cfg) {
  const auto& s = cfg.sched;
  std::ostringstream os;
  os << corpus_hash(cfg) << '|' << cfg.feature_dim << '|' << s.stage1_epochs << '|'
     << s.stage2_epochs << '|' << io::fmt(s.stage1_lr) << '|' << io::fmt(s.stage2_lr) << '|'
     << io::fmt(s.l2) << '|' << s.batch_size << '|' << io::fmt(s.val_fraction) << '|'
     << s.dark_downsample << '|' << io::fmt(s.dark_fraction) << '|' << io::fmt(cfg.test_fraction);
  return fnv1a(os.str());
}

inline std::string head_hash(const RunConfig& cfg) {
  return fnv1a(train_hash(cfg) + "|" + std::to_string(cfg.cv_folds));
}

}  // namespace detail

// ---- feature computation ----

struct FeatureTables {
  std::vector<head::FeatureRow> f1;  // center tile
  std::vector<head::FeatureRow> f3;  // mean over the 3x3 neighborhood
};

inline std::vector<double> tile_features(const model::ConvNet<float>& net, const Image& img) {
  const auto fw = model::forward(net, img);
  return std::vector<double>(fw.features.begin(), fw.features.end());
}

inline FeatureTables compute_features(const RunConfig& cfg, const model::ConvNet<float>& net,
                                      const std::vector<SiteEntry>& sites) {
  FeatureTables tables;
  tables.f1.resize(sites.size());
  tables.f3.resize(sites.size());
  parallel_for(static_cast<std::int64_t>(sites.size()), cfg.jobs, [&](std::int64_t i) {
    std::vector<std::vector<double>> per_tile(9);
    for (int k = 0; k < 9; ++k) {
      per_tile[k] = tile_features(net, load_tile(sites[i].tile_paths[k]));
    }
    head::FeatureRow row;
    row.site_id = sites[i].id;
    row.wealth_index = sites[i].wealth;
    row.phase = sites[i].phase;
    row.features = per_tile[4];
    tables.f1[i] = row;
    row.features = head::pool_features(per_tile);
    tables.f3[i] = std::move(row);
  });
  return tables;
}

// ---- stages ----

inline void run_generate(const RunConfig& cfg) {
  const fs::path meta_path = fs::path(cfg.corpus_dir) / "corpus_meta.json";
  nlohmann::json want{{"n_sites", cfg.n_sites}, {"seed", cfg.seed}};
  if (fs::exists(meta_path) && fs::exists(fs::path(cfg.corpus_dir) / "manifest.csv")) {
    std::ifstream in(meta_path);
    nlohmann::json have = nlohmann::json::parse(in, nullptr, false);
    if (!have.is_discarded() && have == want) return;  // resumable no-op
  }
  fs::create_directories(cfg.corpus_dir);
  synth::write_corpus(cfg.corpus_dir, cfg.n_sites, cfg.seed, cfg.jobs);
  std::ofstream out(meta_path);
  out << want.dump(2) << '\n';
}

inline void run_train(const RunConfig& cfg) {
  const std::string hash = detail::train_hash(cfg);
  const std::vector<fs::path> outputs{cfg.out("checkpoint.bin"), cfg.out("loss_history.csv"),
                                      cfg.out("fig1_training_loss.svg")};
  if (detail::stage_fresh(cfg, "train", hash, outputs)) return;
  fs::create_directories(cfg.out_dir);

  const auto sites = load_corpus(cfg);
  std::vector<model::LabeledTile> corpus;
  std::vector<const SiteEntry*> train_sites;
  for (const auto& s : sites) {
    if (s.is_train) train_sites.push_back(&s);
  }
  if (train_sites.empty()) throw DataError("train: empty training split");
  corpus.resize(train_sites.size());
  parallel_for(static_cast<std::int64_t>(train_sites.size()), cfg.jobs, [&](std::int64_t i) {
    corpus[i].tile = load_tile(train_sites[i]->tile_paths[4]);  // center tile
    corpus[i].label = train_sites[i]->light_label;
  });

  auto net = model::make_convnet<float>(cfg.feature_dim, synth::kTilePx,
                                        derive_seed(cfg.seed, 0x1817));
  const auto hist = model::train_two_stage(net, corpus, cfg.sched, derive_seed(cfg.seed, 0x7a19),
                                           cfg.jobs);
  model::save_checkpoint(cfg.out("checkpoint.bin").string(), net);
  hist.write_csv(cfg.out("loss_history.csv").string());

  // Training/validation loss curves with the fine-tuning boundary marked.
  plot::Series train_s{"train", "#1f77b4"}, val_s{"validation", "#ff7f0e"};
  double boundary = std::nan("");
  for (std::size_t i = 0; i < hist.epochs.size(); ++i) {
    const auto& e = hist.epochs[i];
    train_s.x.push_back(static_cast<double>(i + 1));
    train_s.y.push_back(e.train_mse);
    val_s.x.push_back(static_cast<double>(i + 1));
    val_s.y.push_back(e.val_mse);
    if (std::isnan(boundary) && e.stage == 2) boundary = static_cast<double>(i) + 0.5;
  }
  std::string svg = plot::line_chart("Nightlight training loss", "epoch", "MSE",
                                     {train_s, val_s});
  if (!std::isnan(boundary)) {
    // Vertical bar at the start of fine-tuning.
    const std::string marker = "<line x1='{X}' y1='40' x2='{X}' y2='368' stroke='#d62728' "
                               "stroke-width='2' stroke-dasharray='4,3'/>\n</svg>\n";
    const double unit = (boundary - 1.0) / (std::max<std::size_t>(hist.epochs.size(), 2) - 1.0);
    const double xpix = 64 + unit * (640 - 64 - 16);
    std::string m = marker;
    const std::string xs = plot::detail::f2(xpix);
    while (m.find("{X}") != std::string::npos) m.replace(m.find("{X}"), 3, xs);
    svg.replace(svg.rfind("</svg>"), 7, m);
  }
  plot::save_svg(cfg.out("fig1_training_loss.svg").string(), svg);
  detail::stage_mark(cfg, "train", hash);
}

inline model::ConvNet<float> load_net(const RunConfig& cfg) {
  const auto path = cfg.out("checkpoint.bin");
  if (!fs::exists(path)) {
    throw DataError("missing stage: train (no checkpoint at " + path.string() + ")");
  }
  return model::load_checkpoint<float>(path.string());
}

inline void run_fit_head(const RunConfig& cfg) {
  const std::string hash = detail::head_hash(cfg);
  const std::vector<fs::path> outputs{cfg.out("features_1x1.csv"), cfg.out("features_3x3.csv"),
                                      cfg.out("head_1x1.json"),    cfg.out("head_3x3.json"),
                                      cfg.out("eval_head.json"),   cfg.out("table1_wealth_eval.md")};
  if (detail::stage_fresh(cfg, "fit_head", hash, outputs)) return;

  const auto sites = load_corpus(cfg);
  const auto net = load_net(cfg);
  const auto tables = compute_features(cfg, net, sites);
  head::write_feature_csv(cfg.out("features_1x1.csv").string(), tables.f1);
  head::write_feature_csv(cfg.out("features_3x3.csv").string(), tables.f3);

  nlohmann::json eval_json;
  std::string table_md = "| features | R^2 | rank corr. |\n|---|---|---|\n";
  for (const auto& [name, rows] : {std::pair{"1x1", &tables.f1}, std::pair{"3x3", &tables.f3}}) {
    std::vector<head::FeatureRow> train_rows;
    std::vector<double> y_true, y_pred;
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (sites[i].is_train) train_rows.push_back((*rows)[i]);
    }
    const auto ridge = head::fit_ridge(train_rows, head::default_lambda_grid(), cfg.cv_folds,
                                       derive_seed(cfg.seed, 0x41d6e));
    head::save_ridge(cfg.out(std::string("head_") + name + ".json").string(), ridge);
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (sites[i].is_train) continue;
      y_true.push_back(sites[i].wealth);
      y_pred.push_back(head::predict(ridge, (*rows)[i].features));
    }
    const auto report = metrics::make_eval_report(y_true, y_pred);
    eval_json[name] = metrics::eval_report_json(report);
    eval_json[name]["lambda"] = ridge.lambda;

    char buf[96];
    std::snprintf(buf, sizeof(buf), "| %s | %.3f | %.3f |\n", name, report.r2, report.spearman);
    table_md += buf;

    io::CsvTable conf;
    conf.header = {"true\\pred", "1", "2", "3", "4", "5"};
    for (int r = 0; r < 5; ++r) {
      std::vector<std::string> row{std::to_string(r + 1)};
      for (int c = 0; c < 5; ++c) row.push_back(std::to_string(report.confusion[r][c]));
      conf.rows.push_back(row);
    }
    io::write_csv(cfg.out(std::string("confusion_") + name + ".csv").string(), conf);
  }
  std::ofstream(cfg.out("eval_head.json")) << eval_json.dump(2) << '\n';
  std::ofstream(cfg.out("table1_wealth_eval.md")) << table_md;
  detail::stage_mark(cfg, "fit_head", hash);
}

// ---- sweep helpers ----

namespace detail {

inline TensorHWC<std::uint8_t> quantize8(const Image& img) {
  TensorHWC<std::uint8_t> u8(img.h, img.w, img.c);
  for (std::size_t i = 0; i < img.v.size(); ++i) {
    const float v = std::clamp(img.v[i], 0.f, 1.f);
    u8.v[i] = static_cast<std::uint8_t>(std::lround(v * 255.f));
  }
  return u8;
}

// Deterministic sweep subset: first n_train train sites and a
// proportional count of test sites, in corpus order.
inline std::vector<const SiteEntry*> sweep_subset(const std::vector<SiteEntry>& sites, int total,
                                                  double test_fraction) {
  const int want_test = std::max(2, static_cast<int>(std::lround(total * test_fraction)));
  const int want_train = std::max(1, total - want_test);
  std::vector<const SiteEntry*> out;
  int n_train = 0, n_test = 0;
  for (const auto& s : sites) {
    if (s.is_train && n_train < want_train) {
      out.push_back(&s);
      ++n_train;
    } else if (!s.is_train && n_test < want_test) {
      out.push_back(&s);
      ++n_test;
    }
  }
  return out;
}

inline std::vector<perturb::SweepSite> sweep_sites_1x1(const RunConfig& cfg,
                                                       const std::vector<SiteEntry>& sites,
                                                       int total) {
  const auto subset = sweep_subset(sites, total, cfg.test_fraction);
  std::vector<perturb::SweepSite> out(subset.size());
  parallel_for(static_cast<std::int64_t>(subset.size()), cfg.jobs, [&](std::int64_t i) {
    out[i].wealth = subset[i]->wealth;
    out[i].is_train = subset[i]->is_train;
    out[i].image = quantize8(load_tile(subset[i]->tile_paths[4]));
  });
  return out;
}

inline std::vector<perturb::SweepSite> sweep_sites_3x3(const RunConfig& cfg,
                                                       const std::vector<SiteEntry>& sites,
                                                       int total) {
  const auto subset = sweep_subset(sites, total, cfg.test_fraction);
  std::vector<perturb::SweepSite> out(subset.size());
  parallel_for(static_cast<std::int64_t>(subset.size()), cfg.jobs, [&](std::int64_t i) {
    out[i].wealth = subset[i]->wealth;
    out[i].is_train = subset[i]->is_train;
    out[i].image = quantize8(load_mosaic(*subset[i]));
  });
  return out;
}

inline plot::Series sweep_series(const perturb::SweepResult& res, bool spearman,
                                 const std::string& label, const std::string& color) {
  plot::Series s{label, color};
  for (const auto& p : res.points) {
    s.x.push_back(p.param);
    s.y.push_back(spearman ? p.spearman_mean : p.r2_mean);
    s.ystd.push_back(spearman ? p.spearman_std : p.r2_std);
  }
  return s;
}

}  // namespace detail

inline void run_explain_shuffle(const RunConfig& cfg) {
  const std::string hash = detail::fnv1a(detail::train_hash(cfg) + "|shuffle|" +
                                         detail::join(cfg.shuffle_tiles) + "|" +
                                         std::to_string(cfg.shuffle_reps) + "|" +
                                         std::to_string(cfg.sweep_sites) + "|" +
                                         std::to_string(cfg.mosaic_sweep_sites) + "|" +
                                         std::to_string(cfg.mosaic_shuffle_reps));
  const std::vector<fs::path> outputs{cfg.out("explain/shuffle_1x1.csv"),
                                      cfg.out("explain/shuffle_3x3.csv"),
                                      cfg.out("explain/fig2_shuffle_r2.svg"),
                                      cfg.out("explain/fig2_shuffle_rank.svg")};
  if (detail::stage_fresh(cfg, "explain_shuffle", hash, outputs)) return;
  fs::create_directories(cfg.out("explain"));

  const auto sites = load_corpus(cfg);
  const auto net = load_net(cfg);
  const auto transform = [](const Image& img, double param, Rng& rng) {
    return perturb::grid_shuffle(img, {static_cast<int>(param), rng.next_u64(), 1});
  };
  const auto feature = [&](const Image& img) { return tile_features(net, img); };

  perturb::SweepOptions opt;
  opt.params = cfg.shuffle_tiles;
  opt.repetitions = cfg.shuffle_reps;
  opt.seed = derive_seed(cfg.seed, 0x54F1);
  opt.jobs = cfg.jobs;
  opt.folds = cfg.cv_folds;

  const auto sites1 = detail::sweep_sites_1x1(cfg, sites, cfg.sweep_sites);
  const auto res1 = perturb::perturbation_sweep("shuffle_1x1", sites1, transform, feature, opt);
  res1.write_csv(cfg.out("explain/shuffle_1x1.csv").string());

  opt.repetitions = cfg.mosaic_shuffle_reps;
  opt.seed = derive_seed(cfg.seed, 0x54F3);
  const auto sites3 = detail::sweep_sites_3x3(cfg, sites, cfg.mosaic_sweep_sites);
  const auto res3 = perturb::perturbation_sweep("shuffle_3x3", sites3, transform, feature, opt);
  res3.write_csv(cfg.out("explain/shuffle_3x3.csv").string());

  for (bool spearman : {false, true}) {
    const auto svg = plot::line_chart(
        "Wealth estimation under grid shuffling", "tile size (px)",
        spearman ? "rank correlation" : "R^2",
        {detail::sweep_series(res1, spearman, "1x1 input", "#1f77b4"),
         detail::sweep_series(res3, spearman, "3x3 input", "#ff7f0e")},
        true);
    plot::save_svg(
        cfg.out(spearman ? "explain/fig2_shuffle_rank.svg" : "explain/fig2_shuffle_r2.svg")
            .string(),
        svg);
  }
  detail::stage_mark(cfg, "explain_shuffle", hash);
}

inline void run_explain_filter(const RunConfig& cfg) {
  const std::string hash =
      detail::fnv1a(detail::train_hash(cfg) + "|filter|" + detail::join(cfg.filter_sigmas) + "|" +
                    std::to_string(cfg.sweep_sites));
  const std::vector<fs::path> outputs{
      cfg.out("explain/filter_low.csv"), cfg.out("explain/filter_high.csv"),
      cfg.out("explain/filter_band.csv"), cfg.out("explain/fig3_filter_r2.svg")};
  if (detail::stage_fresh(cfg, "explain_filter", hash, outputs)) return;
  fs::create_directories(cfg.out("explain"));

  const auto sites = load_corpus(cfg);
  const auto net = load_net(cfg);
  const auto feature = [&](const Image& img) { return tile_features(net, img); };
  const auto sites1 = detail::sweep_sites_1x1(cfg, sites, cfg.sweep_sites);

  std::vector<plot::Series> series;
  const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c"};
  int color_idx = 0;
  for (perturb::FilterKind kind :
       {perturb::FilterKind::Low, perturb::FilterKind::High, perturb::FilterKind::Band}) {
    const auto transform = [kind](const Image& img, double sigma, Rng&) {
      return perturb::freq_filter(img, {kind, sigma, img.h});
    };
    perturb::SweepOptions opt;
    opt.params = cfg.filter_sigmas;
    opt.repetitions = 1;  // deterministic transform
    opt.seed = derive_seed(cfg.seed, 0xF117);
    opt.jobs = cfg.jobs;
    opt.folds = cfg.cv_folds;
    const auto res = perturb::perturbation_sweep(
        std::string("filter_") + perturb::filter_name(kind), sites1, transform, feature, opt);
    res.write_csv(cfg.out(std::string("explain/filter_") + perturb::filter_name(kind) + ".csv")
                      .string());
    series.push_back(detail::sweep_series(res, false,
                                          std::string(perturb::filter_name(kind)) + "-pass",
                                          colors[color_idx++]));
  }
  plot::save_svg(cfg.out("explain/fig3_filter_r2.svg").string(),
                 plot::line_chart("Wealth estimation under frequency filtering",
                                  "signal-space sigma (px)", "R^2", series, true));
  detail::stage_mark(cfg, "explain_filter", hash);
}

}  // namespace wealthmap::pipeline

#include "wealthmap/pipeline_explain.hpp"
#include "wealthmap/report.hpp"
