#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "wealthmap/common.hpp"

namespace wealthmap::metrics {

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Coefficient of determination, 1 - SS_res / SS_tot.
inline double r2(const std::vector<double>& y_true, const std::vector<double>& y_pred) {
  if (y_true.size() != y_pred.size() || y_true.size() < 2) {
    throw std::invalid_argument("r2: need equal lengths >= 2");
  }
  const double m = mean(y_true);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    ss_res += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
    ss_tot += (y_true[i] - m) * (y_true[i] - m);
  }
  if (ss_tot == 0.0) throw std::invalid_argument("r2: constant y_true");
  return 1.0 - ss_res / ss_tot;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("pearson: need equal lengths >= 2");
  }
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw std::invalid_argument("pearson: zero variance");
  return sab / std::sqrt(saa * sbb);
}

// Mid-ranks with ties averaged, 1-based.
inline std::vector<double> midranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// Spearman rank correlation: Pearson correlation of mid-ranks.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(midranks(a), midranks(b));
}

// Matthews correlation coefficient. Any zero denominator factor yields 0
// by convention (degenerate confusion matrices carry no signal).
inline double mcc(double tp, double fp, double fn, double tn) {
  if (tp + fp + fn + tn <= 0.0) throw std::invalid_argument("mcc: empty confusion");
  const double d1 = tp + fp, d2 = tp + fn, d3 = tn + fp, d4 = tn + fn;
  if (d1 == 0.0 || d2 == 0.0 || d3 == 0.0 || d4 == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(d1 * d2 * d3 * d4);
}

using Confusion5 = std::array<std::array<int, 5>, 5>;  // [true][pred]

inline Confusion5 confusion_matrix(const std::vector<int>& true_groups,
                                   const std::vector<int>& pred_groups) {
  if (true_groups.size() != pred_groups.size()) {
    throw std::invalid_argument("confusion_matrix: length mismatch");
  }
  Confusion5 m{};
  for (std::size_t i = 0; i < true_groups.size(); ++i) {
    const int t = true_groups[i], p = pred_groups[i];
    if (t < 1 || t > 5 || p < 1 || p > 5) {
      throw std::invalid_argument("confusion_matrix: groups must be in 1..5");
    }
    ++m[t - 1][p - 1];
  }
  return m;
}

// MCC for the four cumulative splits of five wealth groups:
// {1}|{2-5}, {1,2}|{3-5}, {1-3}|{4,5}, {1-4}|{5}.
inline std::array<double, 4> dichotomy_mcc(const std::vector<int>& true_groups,
                                           const std::vector<int>& pred_groups) {
  if (true_groups.size() != pred_groups.size()) {
    throw std::invalid_argument("dichotomy_mcc: length mismatch");
  }
  std::array<double, 4> out{};
  for (int cut = 1; cut <= 4; ++cut) {
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < true_groups.size(); ++i) {
      const bool t_low = true_groups[i] <= cut;
      const bool p_low = pred_groups[i] <= cut;
      if (t_low && p_low) ++tp;
      else if (!t_low && p_low) ++fp;
      else if (t_low && !p_low) ++fn;
      else ++tn;
    }
    out[cut - 1] = mcc(tp, fp, fn, tn);
  }
  return out;
}

struct EvalReport {
  double r2 = 0.0;
  double spearman = 0.0;
  Confusion5 confusion{};
  std::array<double, 4> dichotomy_mcc{};
};

}  // namespace wealthmap::metrics
