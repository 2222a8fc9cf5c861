#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "wealthmap/common.hpp"
#include "wealthmap/metrics.hpp"

using namespace wealthmap;

namespace {

// Direct-formula oracles, written independently of metrics.hpp.

double oracle_r2(const std::vector<double>& yt, const std::vector<double>& yp) {
  double m = 0;
  for (double y : yt) m += y;
  m /= yt.size();
  double num = 0, den = 0;
  for (std::size_t i = 0; i < yt.size(); ++i) {
    num += (yt[i] - yp[i]) * (yt[i] - yp[i]);
    den += (yt[i] - m) * (yt[i] - m);
  }
  return 1.0 - num / den;
}

std::vector<double> oracle_ranks(const std::vector<double>& v) {
  // Brute force: rank = count(below) + (count(equal)+1)/2.
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double below = 0, equal = 0;
    for (double x : v) {
      if (x < v[i]) ++below;
      if (x == v[i]) ++equal;
    }
    r[i] = below + (equal + 1.0) / 2.0;
  }
  return r;
}

double oracle_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("r2 anchors") {
  std::vector<double> y{1.0, 2.0, 3.5, -1.0};
  CHECK(metrics::r2(y, y) == 1.0);
  std::vector<double> mean_pred(y.size(), (1.0 + 2.0 + 3.5 - 1.0) / 4.0);
  CHECK(metrics::r2(y, mean_pred) == Catch::Approx(0.0).margin(1e-15));
  CHECK_THROWS_AS(metrics::r2({1.0, 1.0}, {0.5, 0.7}), std::invalid_argument);
}

TEST_CASE("r2 matches the direct formula on random vectors") {
  Rng rng(21);
  std::vector<double> yt(20), yp(20);
  for (int i = 0; i < 20; ++i) {
    yt[i] = rng.uniform(-2, 2);
    yp[i] = rng.uniform(-2, 2);
  }
  CHECK(metrics::r2(yt, yp) == Catch::Approx(oracle_r2(yt, yp)).margin(1e-12));
}

TEST_CASE("spearman anchors and tie handling") {
  std::vector<double> a{1, 2, 3, 4, 5};
  std::vector<double> up{10, 20, 30, 40, 50};
  std::vector<double> down{5, 4, 3, 2, 1};
  CHECK(metrics::spearman(a, up) == Catch::Approx(1.0).margin(1e-12));
  CHECK(metrics::spearman(a, down) == Catch::Approx(-1.0).margin(1e-12));

  Rng rng(31);
  std::vector<double> x(25), y(25);
  for (int i = 0; i < 25; ++i) {
    x[i] = std::floor(rng.uniform(0, 6));  // plenty of ties
    y[i] = std::floor(rng.uniform(0, 6));
  }
  const double got = metrics::spearman(x, y);
  const double want = oracle_pearson(oracle_ranks(x), oracle_ranks(y));
  CHECK(got == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("spearman is invariant under strictly increasing maps") {
  Rng rng(41);
  std::vector<double> y(30);
  for (auto& v : y) v = rng.uniform(-3, 3);
  std::vector<double> fy(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) fy[i] = std::exp(0.7 * y[i]) + 2.0;
  CHECK(metrics::spearman(y, fy) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("mcc anchors, convention and symmetry") {
  CHECK(metrics::mcc(7, 0, 0, 5) == 1.0);
  CHECK(metrics::mcc(2, 1, 1, 2) == Catch::Approx(1.0 / 3.0).margin(1e-15));
  CHECK(metrics::mcc(10, 5, 0, 0) == 0.0);  // all predictions one class
  // Symmetric under simultaneous class swap: (tp,fp,fn,tn) -> (tn,fn,fp,tp).
  Rng rng(51);
  for (int i = 0; i < 40; ++i) {
    const double tp = std::floor(rng.uniform(0, 9)), fp = std::floor(rng.uniform(0, 9));
    const double fn = std::floor(rng.uniform(0, 9)), tn = std::floor(rng.uniform(0, 9));
    if (tp + fp + fn + tn == 0) continue;
    REQUIRE(metrics::mcc(tp, fp, fn, tn) == Catch::Approx(metrics::mcc(tn, fn, fp, tp)).margin(1e-14));
  }
}

TEST_CASE("dichotomy_mcc composes binarization with mcc") {
  std::vector<int> truth{1, 2, 3, 4, 5, 1, 2, 3, 4, 5};
  const auto perfect = metrics::dichotomy_mcc(truth, truth);
  for (double v : perfect) CHECK(v == 1.0);

  std::vector<int> constant(truth.size(), 3);
  const auto degen = metrics::dichotomy_mcc(truth, constant);
  for (double v : degen) CHECK(v == 0.0);

  Rng rng(61);
  std::vector<int> t(30), p(30);
  for (int i = 0; i < 30; ++i) {
    t[i] = 1 + static_cast<int>(rng.uniform_int(5));
    p[i] = 1 + static_cast<int>(rng.uniform_int(5));
  }
  const auto got = metrics::dichotomy_mcc(t, p);
  for (int cut = 1; cut <= 4; ++cut) {
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (int i = 0; i < 30; ++i) {
      const bool tl = t[i] <= cut, pl = p[i] <= cut;
      tp += tl && pl;
      fp += !tl && pl;
      fn += tl && !pl;
      tn += !tl && !pl;
    }
    REQUIRE(got[cut - 1] == metrics::mcc(tp, fp, fn, tn));
  }
}

TEST_CASE("confusion matrix row sums count true groups") {
  std::vector<int> t{1, 1, 2, 3, 5, 5, 5};
  std::vector<int> p{1, 2, 2, 3, 4, 5, 5};
  const auto m = metrics::confusion_matrix(t, p);
  int row_sum = 0;
  for (int c = 0; c < 5; ++c) row_sum += m[4][c];
  CHECK(row_sum == 3);
  CHECK(m[0][0] == 1);
  CHECK(m[0][1] == 1);
}
