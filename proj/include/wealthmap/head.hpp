#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wealthmap/common.hpp"
#include "wealthmap/csv.hpp"
#include "wealthmap/metrics.hpp"

namespace wealthmap::head {

struct FeatureRow {
  std::string site_id;
  std::vector<double> features;
  double wealth_index = 0.0;
  std::string phase;
};

struct RidgeModel {
  std::vector<double> weights;  // original (unstandardized) feature space
  double intercept = 0.0;
  double lambda = 0.0;
  std::vector<double> lambda_grid;
  int cv_folds = 5;
};

inline std::vector<double> default_lambda_grid() {
  // 13 log-spaced values covering 1e-4 .. 1e2.
  std::vector<double> g(13);
  for (int i = 0; i < 13; ++i) g[i] = std::pow(10.0, -4.0 + 0.5 * i);
  return g;
}

// Component-wise arithmetic mean of the nine per-tile feature vectors.
inline std::vector<double> pool_features(const std::vector<std::vector<double>>& per_tile) {
  if (per_tile.size() != 9) throw std::invalid_argument("pool_features: expected 9 vectors");
  const std::size_t d = per_tile[0].size();
  for (const auto& v : per_tile) {
    if (v.size() != d) throw std::invalid_argument("pool_features: length mismatch");
  }
  std::vector<double> out(d, 0.0);
  for (const auto& v : per_tile) {
    for (std::size_t i = 0; i < d; ++i) out[i] += v[i];
  }
  for (double& x : out) x /= 9.0;
  return out;
}

namespace detail {

// Solves A x = b for symmetric positive definite A (in-place Cholesky).
inline std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (d <= 0.0) throw NumericError("ridge: normal matrix not positive definite");
    const double l = std::sqrt(d);
    a[j * n + j] = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / l;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {  // L y = b
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
    b[i] = s / a[i * n + i];
  }
  for (std::size_t ii = n; ii-- > 0;) {  // L^T x = y
    double s = b[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= a[k * n + ii] * b[k];
    b[ii] = s / a[ii * n + ii];
  }
  return b;
}

struct Standardizer {
  std::vector<double> mu, sigma;

  void fit(const std::vector<const FeatureRow*>& rows) {
    const std::size_t d = rows[0]->features.size();
    mu.assign(d, 0.0);
    sigma.assign(d, 0.0);
    for (const auto* r : rows) {
      for (std::size_t j = 0; j < d; ++j) mu[j] += r->features[j];
    }
    for (double& m : mu) m /= static_cast<double>(rows.size());
    for (const auto* r : rows) {
      for (std::size_t j = 0; j < d; ++j) {
        const double c = r->features[j] - mu[j];
        sigma[j] += c * c;
      }
    }
    for (double& s : sigma) {
      s = std::sqrt(s / static_cast<double>(rows.size()));
      if (s < 1e-12) s = 1.0;  // constant feature: leave unscaled
    }
  }
};

// Ridge on standardized features with centered target; intercept is not
// penalized. Returns weights/intercept in the original feature space.
inline void fit_at_lambda(const std::vector<const FeatureRow*>& rows, double lambda,
                          std::vector<double>& w_out, double& b_out) {
  const std::size_t n = rows.size();
  const std::size_t d = rows[0]->features.size();
  Standardizer st;
  st.fit(rows);
  double ybar = 0.0;
  for (const auto* r : rows) ybar += r->wealth_index;
  ybar /= static_cast<double>(n);

  std::vector<double> xtx(d * d, 0.0), xty(d, 0.0), z(d);
  for (const auto* r : rows) {
    for (std::size_t j = 0; j < d; ++j) z[j] = (r->features[j] - st.mu[j]) / st.sigma[j];
    const double yc = r->wealth_index - ybar;
    for (std::size_t j = 0; j < d; ++j) {
      xty[j] += z[j] * yc;
      for (std::size_t k = j; k < d; ++k) xtx[j * d + k] += z[j] * z[k];
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < j; ++k) xtx[j * d + k] = xtx[k * d + j];
    xtx[j * d + j] += lambda;
  }
  std::vector<double> w = solve_spd(std::move(xtx), std::move(xty), d);

  w_out.assign(d, 0.0);
  double b = ybar;
  for (std::size_t j = 0; j < d; ++j) {
    w_out[j] = w[j] / st.sigma[j];
    b -= w_out[j] * st.mu[j];
  }
  b_out = b;
}

}  // namespace detail

inline double predict(const RidgeModel& model, std::span<const double> features) {
  if (features.size() != model.weights.size()) {
    throw std::invalid_argument("predict: feature dimension mismatch");
  }
  double s = model.intercept;
  for (std::size_t j = 0; j < features.size(); ++j) s += model.weights[j] * features[j];
  return s;
}

// Cross-validated ridge fit: lambda is picked from the grid by mean
// validation R^2 over shuffled folds, then the model is refit on all rows
// at the chosen lambda. Standardization happens inside each fold.
inline RidgeModel fit_ridge(const std::vector<FeatureRow>& rows,
                            std::vector<double> lambda_grid = default_lambda_grid(),
                            int folds = 5, std::uint64_t seed = 0) {
  if (folds < 2) throw std::invalid_argument("fit_ridge: need >= 2 folds");
  if (rows.size() < static_cast<std::size_t>(folds)) {
    throw std::invalid_argument("fit_ridge: need at least `folds` rows");
  }
  {
    double y0 = rows[0].wealth_index;
    bool constant = true;
    for (const auto& r : rows) {
      if (r.features.size() != rows[0].features.size()) {
        throw std::invalid_argument("fit_ridge: inconsistent feature dimensions");
      }
      if (r.wealth_index != y0) constant = false;
    }
    if (constant) throw std::invalid_argument("fit_ridge: constant target");
  }

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x9d6e));
  rng.shuffle(order);

  double best_lambda = lambda_grid.front();
  double best_score = -1e300;
  for (double lambda : lambda_grid) {
    double score_sum = 0.0;
    int scored = 0;
    for (int f = 0; f < folds; ++f) {
      std::vector<const FeatureRow*> train;
      std::vector<const FeatureRow*> val;
      for (std::size_t i = 0; i < order.size(); ++i) {
        if (static_cast<int>(i % folds) == f) val.push_back(&rows[order[i]]);
        else train.push_back(&rows[order[i]]);
      }
      if (train.empty() || val.size() < 2) continue;
      std::vector<double> w;
      double b = 0.0;
      detail::fit_at_lambda(train, lambda, w, b);
      std::vector<double> y_true, y_pred;
      for (const auto* r : val) {
        y_true.push_back(r->wealth_index);
        double p = b;
        for (std::size_t j = 0; j < w.size(); ++j) p += w[j] * r->features[j];
        y_pred.push_back(p);
      }
      bool constant_val = true;
      for (double y : y_true) {
        if (y != y_true[0]) constant_val = false;
      }
      if (constant_val) continue;
      score_sum += metrics::r2(y_true, y_pred);
      ++scored;
    }
    const double score = scored > 0 ? score_sum / scored : -1e300;
    if (score > best_score) {
      best_score = score;
      best_lambda = lambda;
    }
  }

  std::vector<const FeatureRow*> all;
  all.reserve(rows.size());
  for (const auto& r : rows) all.push_back(&r);
  RidgeModel model;
  model.lambda = best_lambda;
  model.lambda_grid = std::move(lambda_grid);
  model.cv_folds = folds;
  detail::fit_at_lambda(all, best_lambda, model.weights, model.intercept);
  return model;
}

// Rank-based quintiles, poorest (1) to wealthiest (5); ties resolved by
// stable input order, so group sizes differ by at most one.
inline std::vector<int> quintile_assign(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 5) throw std::invalid_argument("quintile_assign: need at least 5 values");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<int> groups(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t rank = pos + 1;
    groups[order[pos]] = static_cast<int>((5 * rank + n - 1) / n);  // ceil(5*rank/n)
  }
  return groups;
}

inline void save_ridge(const std::string& path, const RidgeModel& m) {
  nlohmann::json j;
  j["weights"] = m.weights;
  j["intercept"] = m.intercept;
  j["lambda"] = m.lambda;
  j["lambda_grid"] = m.lambda_grid;
  j["cv_folds"] = m.cv_folds;
  j["feature_dim"] = m.weights.size();
  std::ofstream out(path);
  if (!out) throw DataError("ridge: cannot write " + path);
  out << j.dump(2) << '\n';
}

inline RidgeModel load_ridge(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("ridge: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("ridge: bad JSON in " + path);
  RidgeModel m;
  m.weights = j.at("weights").get<std::vector<double>>();
  m.intercept = j.at("intercept").get<double>();
  m.lambda = j.at("lambda").get<double>();
  m.lambda_grid = j.value("lambda_grid", std::vector<double>{});
  m.cv_folds = j.value("cv_folds", 5);
  return m;
}

inline void write_feature_csv(const std::string& path, const std::vector<FeatureRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("write_feature_csv: no rows");
  io::CsvTable t;
  t.header.push_back("site_id");
  for (std::size_t j = 0; j < rows[0].features.size(); ++j) {
    t.header.push_back("f" + std::to_string(j));
  }
  t.header.push_back("wealth_index");
  t.header.push_back("phase");
  for (const auto& r : rows) {
    std::vector<std::string> row;
    row.push_back(r.site_id);
    for (double f : r.features) row.push_back(io::fmt(f));
    row.push_back(io::fmt(r.wealth_index));
    row.push_back(r.phase);
    t.rows.push_back(std::move(row));
  }
  io::write_csv(path, t);
}

inline std::vector<FeatureRow> read_feature_csv(const std::string& path) {
  io::CsvTable t = io::read_csv(path);
  if (t.header.size() < 3 || t.header.front() != "site_id") {
    throw DataError("feature csv: unexpected header in " + path);
  }
  const int wcol = t.col("wealth_index");
  const int pcol = t.col("phase");
  std::vector<FeatureRow> rows;
  rows.reserve(t.rows.size());
  for (const auto& raw : t.rows) {
    FeatureRow r;
    r.site_id = raw.at(0);
    for (int j = 1; j < wcol; ++j) r.features.push_back(std::stod(raw.at(j)));
    r.wealth_index = std::stod(raw.at(wcol));
    r.phase = raw.at(pcol);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace wealthmap::head
