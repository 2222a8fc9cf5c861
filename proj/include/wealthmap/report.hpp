#pragma once

// Consolidated Markdown report over every pipeline stage output.

#include "wealthmap/pipeline.hpp"

namespace wealthmap::pipeline {

namespace detail {

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("report: cannot open " + p.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace detail

inline void run_report(const RunConfig& cfg) {
  struct Artifact {
    const char* stage;
    std::string rel;
  };
  const std::vector<Artifact> required = {
      {"train", "loss_history.csv"},
      {"train", "fig1_training_loss.svg"},
      {"train", "checkpoint.bin"},
      {"fit-head", "features_1x1.csv"},
      {"fit-head", "features_3x3.csv"},
      {"fit-head", "eval_head.json"},
      {"fit-head", "table1_wealth_eval.md"},
      {"fit-head", "confusion_1x1.csv"},
      {"fit-head", "confusion_3x3.csv"},
      {"eval-cross-period", "cross_period.csv"},
      {"eval-cross-period", "table2_cross_period.md"},
      {"explain shuffle", "explain/shuffle_1x1.csv"},
      {"explain shuffle", "explain/shuffle_3x3.csv"},
      {"explain shuffle", "explain/fig2_shuffle_r2.svg"},
      {"explain shuffle", "explain/fig2_shuffle_rank.svg"},
      {"explain filter", "explain/filter_low.csv"},
      {"explain filter", "explain/filter_high.csv"},
      {"explain filter", "explain/filter_band.csv"},
      {"explain filter", "explain/fig3_filter_r2.svg"},
      {"explain color", "explain/clusters.json"},
      {"explain color", "explain/color_ablation.csv"},
      {"explain color", "explain/fig4_color_1x1.svg"},
      {"explain color", "explain/fig4_color_3x3.svg"},
      {"explain occlusion", "explain/fig_attribution_occlusion.svg"},
      {"explain gradcam", "explain/fig_attribution_gradcam.svg"},
      {"explain gradcam", "explain/correlation_gradcam.csv"},
      {"explain guidedbp", "explain/fig_attribution_guidedbp.svg"},
      {"explain guidedbp", "explain/correlation_guidedbp.csv"},
      {"explain guidedgradcam", "explain/fig_attribution_guidedgradcam.svg"},
      {"explain guidedgradcam", "explain/correlation_guidedgradcam.csv"},
      {"explain featviz", "explain/fig5_featviz.svg"},
      {"explain featviz", "explain/featviz_trajectories.csv"},
  };

  std::vector<std::string> missing;
  for (const auto& a : required) {
    if (!fs::exists(cfg.out(a.rel))) missing.push_back(std::string(a.stage) + " (" + a.rel + ")");
  }
  if (!missing.empty()) {
    std::string msg = "missing stage outputs:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }

  const auto sites = load_corpus(cfg);
  int n_train = 0, n_dark = 0;
  for (const auto& s : sites) {
    n_train += s.is_train;
    n_dark += s.light_label < std::log(2.0);
  }

  std::ostringstream md;
  md << "# Wealth mapping report\n\n";
  md << "Synthetic corpus: " << sites.size() << " sites (" << n_train << " train / "
     << sites.size() - n_train << " held out), " << n_dark
     << " dark sites (thresholded nightlight sum < 1).\n\n";
  md << "Top-level seed: " << cfg.seed << ". All stage outputs below are relative to `"
     << cfg.out_dir << "`.\n\n";

  md << "## Nightlight transfer training\n\n";
  md << "![training loss](fig1_training_loss.svg)\n\n";
  md << "Loss history: [loss_history.csv](loss_history.csv); checkpoint: "
        "[checkpoint.bin](checkpoint.bin).\n\n";

  md << "## Wealth estimation (held-out sites)\n\n";
  md << detail::slurp(cfg.out("table1_wealth_eval.md")) << "\n";
  md << "Feature tables: [features_1x1.csv](features_1x1.csv), "
        "[features_3x3.csv](features_3x3.csv); ridge heads: [head_1x1.json](head_1x1.json), "
        "[head_3x3.json](head_3x3.json); full metrics: [eval_head.json](eval_head.json).\n\n";

  {
    std::ifstream in(cfg.out("eval_head.json"));
    nlohmann::json ev = nlohmann::json::parse(in);
    md << "Quintile dichotomy MCC (confusions: [confusion_1x1.csv](confusion_1x1.csv), "
          "[confusion_3x3.csv](confusion_3x3.csv)):\n\n";
    md << "| features | 1 vs 2-5 | 1-2 vs 3-5 | 1-3 vs 4-5 | 1-4 vs 5 |\n|---|---|---|---|---|\n";
    for (const std::string name : {"1x1", "3x3"}) {
      md << "| " << name << " |";
      for (const auto& v : ev[name]["dichotomy_mcc"]) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), " %.3f |", v.get<double>());
        md << buf;
      }
      md << "\n";
    }
    md << "\n";
  }

  md << "## Estimation across survey phases\n\n";
  md << detail::slurp(cfg.out("table2_cross_period.md"));
  md << "Raw grid: [cross_period.csv](cross_period.csv).\n\n";

  md << "## Grid shuffling\n\n";
  md << "![shuffle r2](explain/fig2_shuffle_r2.svg)\n\n";
  md << "![shuffle rank](explain/fig2_shuffle_rank.svg)\n\n";
  md << "Curves: [shuffle_1x1.csv](explain/shuffle_1x1.csv), "
        "[shuffle_3x3.csv](explain/shuffle_3x3.csv).\n\n";

  md << "## Frequency-domain filtering\n\n";
  md << "![filter r2](explain/fig3_filter_r2.svg)\n\n";
  md << "Curves: [filter_low.csv](explain/filter_low.csv), "
        "[filter_high.csv](explain/filter_high.csv), "
        "[filter_band.csv](explain/filter_band.csv).\n\n";

  md << "## Chromaticity cluster ablation\n\n";
  {
    std::ifstream in(cfg.out("explain/clusters.json"));
    nlohmann::json cj = nlohmann::json::parse(in);
    md << "k = " << cj["k"].get<int>() << " clusters (elbow over within-cluster SSE). Centers:\n\n";
    md << "| cluster | L* | a* | b* | color |\n|---|---|---|---|---|\n";
    for (std::size_t i = 0; i < cj["centers_lab"].size(); ++i) {
      const auto& c = cj["centers_lab"][i];
      char buf[128];
      std::snprintf(buf, sizeof(buf), "| %zu | %.1f | %.1f | %.1f | %s |\n", i,
                    c[0].get<double>(), c[1].get<double>(), c[2].get<double>(),
                    cj["centers_hex"][i].get<std::string>().c_str());
      md << buf;
    }
    md << "\n";
  }
  md << "![color 1x1](explain/fig4_color_1x1.svg)\n\n";
  md << "![color 3x3](explain/fig4_color_3x3.svg)\n\n";
  md << "Scores: [color_ablation.csv](explain/color_ablation.csv); clusters: "
        "[clusters.json](explain/clusters.json).\n\n";

  md << "## Feature attribution\n\n";
  for (const std::string m : {"occlusion", "gradcam", "guidedbp", "guidedgradcam"}) {
    md << "![" << m << "](explain/fig_attribution_" << m << ".svg)\n\n";
    md << "Per-site maps under `explain/" << m << "/`.\n\n";
  }
  md << "Correlation between summed attributions and the network output:\n\n";
  md << "| method | sites | Pearson r |\n|---|---|---|\n";
  for (const std::string m : {"gradcam", "guidedbp", "guidedgradcam"}) {
    const auto t = io::read_csv(cfg.out("explain/correlation_" + m + ".csv").string());
    char buf[96];
    std::snprintf(buf, sizeof(buf), "| %s | %s | %.3f |\n", m.c_str(), t.rows[0][1].c_str(),
                  std::stod(t.rows[0][2]));
    md << buf;
  }
  md << "\nRows: [correlation_gradcam.csv](explain/correlation_gradcam.csv), "
        "[correlation_guidedbp.csv](explain/correlation_guidedbp.csv), "
        "[correlation_guidedgradcam.csv](explain/correlation_guidedgradcam.csv).\n\n";

  md << "## Feature visualization\n\n";
  md << "![featviz](explain/fig5_featviz.svg)\n\n";
  md << "Trajectories: [featviz_trajectories.csv](explain/featviz_trajectories.csv).\n\n";

  md << "## Artifact index\n\n";
  for (const auto& a : required) md << "- `" << a.rel << "`\n";
  md << "\n";

  std::ofstream out(cfg.out("report.md"));
  if (!out) throw DataError("report: cannot write report.md");
  out << md.str();
}

}  // namespace wealthmap::pipeline
