#include <catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "oracles.hpp"
#include "wealthmap/head.hpp"

using namespace wealthmap;

namespace {

std::vector<head::FeatureRow> random_rows(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<head::FeatureRow> rows(n);
  for (int i = 0; i < n; ++i) {
    rows[i].site_id = "s" + std::to_string(i);
    rows[i].features.resize(d);
    for (auto& f : rows[i].features) f = rng.uniform(-1, 1);
    rows[i].wealth_index = rng.uniform(-2, 2);
  }
  return rows;
}

}  // namespace

TEST_CASE("pool_features averages componentwise") {
  std::vector<std::vector<double>> nine(9, std::vector<double>{1.0, 2.0, 3.0});
  CHECK(head::pool_features(nine) == std::vector<double>{1.0, 2.0, 3.0});

  // Standard basis vectors e1..e9 with D=9.
  std::vector<std::vector<double>> basis(9, std::vector<double>(9, 0.0));
  for (int i = 0; i < 9; ++i) basis[i][i] = 1.0;
  for (double v : head::pool_features(basis)) CHECK(v == Catch::Approx(1.0 / 9.0).margin(1e-15));

  Rng rng(3);
  std::vector<std::vector<double>> rand9(9, std::vector<double>(5));
  for (auto& v : rand9) {
    for (auto& x : v) x = rng.uniform(-1, 1);
  }
  const auto pooled = head::pool_features(rand9);
  for (int j = 0; j < 5; ++j) {
    double s = 0.0;
    for (int i = 0; i < 9; ++i) s += rand9[i][j];
    REQUIRE(pooled[j] == Catch::Approx(s / 9.0).margin(1e-7));
  }

  rand9[4].resize(4);
  CHECK_THROWS_AS(head::pool_features(rand9), std::invalid_argument);
}

TEST_CASE("ridge at fixed lambda matches the closed-form oracle") {
  auto rows = random_rows(10, 5, 77);
  const double lambda = 0.1;
  // Pin the grid to one value so CV selection is a no-op.
  const auto model = head::fit_ridge(rows, {lambda}, 5, 1);

  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& r : rows) {
    x.push_back(r.features);
    y.push_back(r.wealth_index);
  }
  // The library standardizes features internally; the oracle works on raw
  // features, so compare on standardized data via predictions instead of
  // coefficients... both are affine, so comparing predictions everywhere
  // pins the same function. Standardization changes the lambda geometry,
  // so evaluate the oracle on pre-standardized inputs.
  std::vector<double> mu(5, 0.0), sd(5, 0.0);
  for (const auto& r : x) {
    for (int j = 0; j < 5; ++j) mu[j] += r[j];
  }
  for (auto& m : mu) m /= x.size();
  for (const auto& r : x) {
    for (int j = 0; j < 5; ++j) sd[j] += (r[j] - mu[j]) * (r[j] - mu[j]);
  }
  for (auto& s : sd) s = std::sqrt(s / x.size());
  std::vector<std::vector<double>> xs = x;
  for (auto& r : xs) {
    for (int j = 0; j < 5; ++j) r[j] = (r[j] - mu[j]) / sd[j];
  }
  std::vector<double> w_ref;
  double b_ref = 0.0;
  oracle::ridge_closed_form(xs, y, lambda, w_ref, b_ref);

  for (std::size_t i = 0; i < x.size(); ++i) {
    double oracle_pred = b_ref;
    for (int j = 0; j < 5; ++j) oracle_pred += w_ref[j] * xs[i][j];
    REQUIRE(head::predict(model, x[i]) == Catch::Approx(oracle_pred).margin(1e-8));
  }
}

TEST_CASE("lambda zero interpolates a full-rank square system") {
  auto rows = random_rows(5, 5, 99);
  const auto model = head::fit_ridge(rows, {0.0}, 5, 1);
  for (const auto& r : rows) {
    REQUIRE(head::predict(model, r.features) == Catch::Approx(r.wealth_index).margin(1e-7));
  }
}

TEST_CASE("huge lambda shrinks to the mean predictor") {
  auto rows = random_rows(30, 4, 13);
  const auto model = head::fit_ridge(rows, {1e12}, 5, 1);
  double ybar = 0.0;
  for (const auto& r : rows) ybar += r.wealth_index;
  ybar /= rows.size();
  for (double w : model.weights) CHECK(std::abs(w) < 1e-6);
  CHECK(head::predict(model, rows[0].features) == Catch::Approx(ybar).margin(1e-5));
}

TEST_CASE("fit_ridge rejects degenerate input") {
  auto rows = random_rows(10, 3, 5);
  for (auto& r : rows) r.wealth_index = 1.0;
  CHECK_THROWS_AS(head::fit_ridge(rows), std::invalid_argument);
  CHECK_THROWS_AS(head::fit_ridge(random_rows(3, 2, 5), head::default_lambda_grid(), 5, 0),
                  std::invalid_argument);
}

TEST_CASE("predictions are invariant to feature reordering") {
  auto rows = random_rows(40, 6, 321);
  const auto model = head::fit_ridge(rows, head::default_lambda_grid(), 5, 7);

  // Reverse the feature order everywhere and refit with the same seed.
  auto rev_rows = rows;
  for (auto& r : rev_rows) std::reverse(r.features.begin(), r.features.end());
  const auto rev_model = head::fit_ridge(rev_rows, head::default_lambda_grid(), 5, 7);

  for (int i = 0; i < 10; ++i) {
    auto rev_feat = rows[i].features;
    std::reverse(rev_feat.begin(), rev_feat.end());
    REQUIRE(head::predict(rev_model, rev_feat) ==
            Catch::Approx(head::predict(model, rows[i].features)).margin(1e-9));
  }
}

TEST_CASE("fold seed perturbs held-out R2 only slightly") {
  // Features carry real signal, so CV selection should be stable.
  Rng rng(55);
  std::vector<head::FeatureRow> rows(120);
  for (int i = 0; i < 120; ++i) {
    rows[i].features.resize(6);
    for (auto& f : rows[i].features) f = rng.uniform(-1, 1);
    rows[i].wealth_index = 2.0 * rows[i].features[0] - rows[i].features[3] + 0.1 * rng.normal();
  }
  std::vector<head::FeatureRow> train(rows.begin(), rows.begin() + 90);
  std::vector<head::FeatureRow> test(rows.begin() + 90, rows.end());

  std::vector<double> scores;
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    const auto model = head::fit_ridge(train, head::default_lambda_grid(), 5, seed);
    std::vector<double> yt, yp;
    for (const auto& r : test) {
      yt.push_back(r.wealth_index);
      yp.push_back(head::predict(model, r.features));
    }
    scores.push_back(metrics::r2(yt, yp));
  }
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  CHECK(*hi - *lo < 0.05);
}

TEST_CASE("quintile_assign matches rank rule and sort oracle") {
  std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(head::quintile_assign(v) == std::vector<int>{1, 1, 2, 2, 3, 3, 4, 4, 5, 5});

  std::vector<double> equal(7, 2.5);
  const auto groups = head::quintile_assign(equal);
  std::array<int, 6> counts{};
  for (int g : groups) ++counts[g];
  for (int g = 1; g <= 5; ++g) CHECK(std::abs(counts[g] - 7.0 / 5.0) <= 1.0);
  CHECK(std::is_sorted(groups.begin(), groups.end()));  // stable order on ties

  Rng rng(17);
  std::vector<double> rand_v(33);
  for (auto& x : rand_v) x = rng.uniform(-5, 5);
  const auto got = head::quintile_assign(rand_v);
  // Sort oracle: position in the stable-sorted order determines the group.
  std::vector<std::size_t> order(rand_v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rand_v[a] < rand_v[b]; });
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const int want = static_cast<int>((5 * (pos + 1) + rand_v.size() - 1) / rand_v.size());
    REQUIRE(got[order[pos]] == want);
  }

  CHECK_THROWS_AS(head::quintile_assign({1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("quintile_assign is monotone") {
  Rng rng(19);
  std::vector<double> v(50);
  for (auto& x : v) x = rng.uniform(0, 1);
  const auto g = head::quintile_assign(v);
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[i] < v[j]) REQUIRE(g[i] <= g[j]);
    }
  }
}

TEST_CASE("ridge model json and feature csv round trip") {
  auto rows = random_rows(12, 4, 555);
  rows[0].phase = "p1";
  const auto model = head::fit_ridge(rows, {0.5}, 4, 3);
  const auto dir = std::filesystem::temp_directory_path();
  const auto mpath = (dir / "wm_model.json").string();
  head::save_ridge(mpath, model);
  const auto loaded = head::load_ridge(mpath);
  CHECK(loaded.weights == model.weights);
  CHECK(loaded.intercept == model.intercept);
  CHECK(loaded.lambda == model.lambda);

  const auto fpath = (dir / "wm_feats.csv").string();
  head::write_feature_csv(fpath, rows);
  const auto back = head::read_feature_csv(fpath);
  REQUIRE(back.size() == rows.size());
  CHECK(back[0].site_id == rows[0].site_id);
  CHECK(back[0].phase == "p1");
  REQUIRE(back[0].features.size() == rows[0].features.size());
  for (std::size_t j = 0; j < rows[0].features.size(); ++j) {
    CHECK(back[0].features[j] == Catch::Approx(rows[0].features[j]).margin(1e-7));
  }
  std::filesystem::remove(mpath);
  std::filesystem::remove(fpath);
}
