// wealthmap: synthetic satellite wealth-mapping pipeline.
//
// Subcommands mirror the pipeline stages:
//   generate | train | fit-head | explain METHOD | eval-cross-period | report
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "wealthmap/pipeline.hpp"

using wealthmap::pipeline::RunConfig;

int main(int argc, char** argv) {
  RunConfig cfg;
  CLI::App app{"Synthetic satellite wealth mapping and explanation toolkit"};
  app.set_config("--config", "", "Read options from a TOML-like config file");
  app.option_defaults()->always_capture_default();

  app.add_option("--corpus", cfg.corpus_dir, "Corpus directory");
  app.add_option("--out", cfg.out_dir, "Output directory");
  app.add_option("--seed", cfg.seed, "Top-level seed; every stage derives from it");
  app.add_option("--jobs", cfg.jobs, "Worker threads (0 = hardware default)");

  auto* gen = app.add_subcommand("generate", "Render the synthetic corpus");
  gen->add_option("--n-sites", cfg.n_sites, "Number of sites");

  auto* train = app.add_subcommand("train", "Two-stage nightlight training");
  train->add_option("--feature-dim", cfg.feature_dim, "Penultimate feature width");
  train->add_option("--stage1-epochs", cfg.sched.stage1_epochs, "Head-only epochs");
  train->add_option("--stage2-epochs", cfg.sched.stage2_epochs, "Fine-tune epochs");
  train->add_option("--stage1-lr", cfg.sched.stage1_lr, "Stage 1 learning rate");
  train->add_option("--stage2-lr", cfg.sched.stage2_lr, "Stage 2 learning rate");
  train->add_option("--l2", cfg.sched.l2, "Stage 2 L2 penalty");
  train->add_option("--batch-size", cfg.sched.batch_size, "Batch size");
  train->add_option("--val-fraction", cfg.sched.val_fraction, "Validation split");
  train->add_option("--dark-fraction", cfg.sched.dark_fraction,
                    "Target share of dark tiles per epoch");
  train->add_flag("--no-dark-downsample", [&](std::int64_t) { cfg.sched.dark_downsample = false; },
                  "Disable dark-tile downsampling");

  auto* fit = app.add_subcommand("fit-head", "Fit the ridge wealth head (1x1 and 3x3)");
  fit->add_option("--cv-folds", cfg.cv_folds, "Cross-validation folds");

  auto* explain = app.add_subcommand("explain", "Run one explanation method");
  std::string method;
  std::vector<std::string> site_ids;
  explain->add_option("method", method, "Explanation method")
      ->required()
      ->check(CLI::IsMember({"shuffle", "filter", "color", "occlusion", "gradcam", "guidedbp",
                             "guidedgradcam", "featviz"}));
  explain->add_option("--sites", site_ids, "Explicit site ids for attribution panels")
      ->delimiter(',');
  explain->add_option("--sweep-sites", cfg.sweep_sites, "Sites in 1x1 sweeps");
  explain->add_option("--mosaic-sweep-sites", cfg.mosaic_sweep_sites, "Sites in 3x3 sweeps");
  explain->add_option("--shuffle-reps", cfg.shuffle_reps, "Shuffle repetitions per tile size");
  explain->add_option("--viz-seeds", cfg.viz_seeds, "Feature-visualization restarts");
  explain->add_option("--viz-steps", cfg.viz_steps, "Ascent steps per restart");

  auto* xp = app.add_subcommand("eval-cross-period", "Train/test matrix across survey phases");
  xp->add_option("--cv-folds", cfg.cv_folds, "Folds for the diagonal cells");

  app.add_subcommand("report", "Assemble the consolidated Markdown report");

  app.require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) wealthmap::pipeline::run_generate(cfg);
    if (train->parsed()) wealthmap::pipeline::run_train(cfg);
    if (fit->parsed()) wealthmap::pipeline::run_fit_head(cfg);
    if (explain->parsed()) {
      if (method == "shuffle") wealthmap::pipeline::run_explain_shuffle(cfg);
      else if (method == "filter") wealthmap::pipeline::run_explain_filter(cfg);
      else if (method == "color") wealthmap::pipeline::run_explain_color(cfg);
      else if (method == "featviz") wealthmap::pipeline::run_explain_featviz(cfg);
      else wealthmap::pipeline::run_explain_attribution(cfg, method, site_ids);
    }
    if (xp->parsed()) wealthmap::pipeline::run_eval_cross_period(cfg);
    if (app.get_subcommand("report")->parsed()) wealthmap::pipeline::run_report(cfg);
  } catch (const wealthmap::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const wealthmap::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
