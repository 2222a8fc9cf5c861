#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wealthmap/head.hpp"
#include "wealthmap/metrics.hpp"

namespace wealthmap::metrics {

// Full wealth-estimation report for one prediction set: R^2, rank
// correlation, quintile confusion and the four dichotomy MCCs.
inline EvalReport make_eval_report(const std::vector<double>& y_true,
                                   const std::vector<double>& y_pred) {
  EvalReport rep;
  rep.r2 = r2(y_true, y_pred);
  rep.spearman = spearman(y_true, y_pred);
  const auto tg = head::quintile_assign(y_true);
  const auto pg = head::quintile_assign(y_pred);
  rep.confusion = confusion_matrix(tg, pg);
  rep.dichotomy_mcc = dichotomy_mcc(tg, pg);
  return rep;
}

inline nlohmann::json eval_report_json(const EvalReport& r) {
  nlohmann::json j;
  j["r2"] = r.r2;
  j["spearman"] = r.spearman;
  j["dichotomy_mcc"] = r.dichotomy_mcc;
  j["confusion"] = r.confusion;
  return j;
}

struct CrossPeriodCell {
  double r2 = 0.0;
  double spearman = 0.0;
};

struct CrossPeriodGrid {
  std::vector<std::string> phases;  // sorted
  std::vector<std::vector<CrossPeriodCell>> cells;  // [train][test]
};

// One train-phase/test-phase evaluation. Distinct phases: fit on all rows
// of the train phase, score the test phase. Same phase: k-fold
// cross-validation with held-out predictions pooled before scoring.
inline CrossPeriodCell cross_period_cell(const std::vector<head::FeatureRow>& rows,
                                         const std::string& train_phase,
                                         const std::string& test_phase, int folds = 5,
                                         std::uint64_t seed = 0,
                                         const std::vector<double>& lambda_grid =
                                             head::default_lambda_grid()) {
  std::vector<head::FeatureRow> train, test;
  for (const auto& r : rows) {
    if (r.phase == train_phase) train.push_back(r);
    if (r.phase == test_phase) test.push_back(r);
  }
  if (train.empty()) throw DataError("cross_period: no rows for phase '" + train_phase + "'");
  if (test.empty()) throw DataError("cross_period: no rows for phase '" + test_phase + "'");

  std::vector<double> y_true, y_pred;
  if (train_phase != test_phase) {
    const auto model = head::fit_ridge(train, lambda_grid, folds, derive_seed(seed, 0xCE));
    for (const auto& r : test) {
      y_true.push_back(r.wealth_index);
      y_pred.push_back(head::predict(model, r.features));
    }
  } else {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0xCF));
    rng.shuffle(order);
    for (int f = 0; f < folds; ++f) {
      std::vector<head::FeatureRow> fit_rows;
      std::vector<const head::FeatureRow*> held;
      for (std::size_t i = 0; i < order.size(); ++i) {
        if (static_cast<int>(i % folds) == f) held.push_back(&train[order[i]]);
        else fit_rows.push_back(train[order[i]]);
      }
      if (held.empty() || fit_rows.size() < static_cast<std::size_t>(folds)) continue;
      const auto model = head::fit_ridge(fit_rows, lambda_grid, folds, derive_seed(seed, 0xD0 + f));
      for (const auto* r : held) {
        y_true.push_back(r->wealth_index);
        y_pred.push_back(head::predict(model, r->features));
      }
    }
  }
  CrossPeriodCell cell;
  cell.r2 = r2(y_true, y_pred);
  cell.spearman = spearman(y_true, y_pred);
  return cell;
}

// Full train-phase x test-phase matrix over the phases present.
inline CrossPeriodGrid cross_period_eval(const std::vector<head::FeatureRow>& rows, int folds = 5,
                                         std::uint64_t seed = 0,
                                         const std::vector<double>& lambda_grid =
                                             head::default_lambda_grid()) {
  std::set<std::string> phase_set;
  for (const auto& r : rows) phase_set.insert(r.phase);
  CrossPeriodGrid grid;
  grid.phases.assign(phase_set.begin(), phase_set.end());
  if (grid.phases.empty()) throw DataError("cross_period: no rows");
  for (const auto& tr : grid.phases) {
    std::vector<CrossPeriodCell> row;
    for (const auto& te : grid.phases) {
      row.push_back(cross_period_cell(rows, tr, te, folds, seed, lambda_grid));
    }
    grid.cells.push_back(std::move(row));
  }
  return grid;
}

inline std::string cross_period_markdown(const CrossPeriodGrid& grid) {
  std::string md;
  auto table = [&](const char* title, auto value) {
    md += std::string("**") + title + "**\n\n| train \\ test |";
    for (const auto& p : grid.phases) md += " " + p + " |";
    md += "\n|---|";
    for (std::size_t i = 0; i < grid.phases.size(); ++i) md += "---|";
    md += "\n";
    for (std::size_t i = 0; i < grid.phases.size(); ++i) {
      md += "| " + grid.phases[i] + " |";
      for (std::size_t j = 0; j < grid.phases.size(); ++j) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), " %.3f |", value(grid.cells[i][j]));
        md += buf;
      }
      md += "\n";
    }
    md += "\n";
  };
  table("R^2 by period", [](const CrossPeriodCell& c) { return c.r2; });
  table("Rank correlation by period", [](const CrossPeriodCell& c) { return c.spearman; });
  return md;
}

}  // namespace wealthmap::metrics
