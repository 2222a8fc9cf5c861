#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "wealthmap/perturb.hpp"
#include "wealthmap/raster.hpp"

using namespace wealthmap;

namespace {
Image random_image(int side, std::uint64_t seed) {
  Rng rng(seed);
  Image img(side, side, 3);
  for (auto& v : img.v) v = static_cast<float>(rng.uniform());
  return img;
}
}  // namespace

TEST_CASE("grid_shuffle basics") {
  const Image img = random_image(16, 3);

  // One tile covering the whole image: identity.
  const Image same = perturb::grid_shuffle(img, {16, 7, 1});
  CHECK(same.v == img.v);

  // Any spec: exact pixel multiset preservation, per channel.
  const Image shuffled = perturb::grid_shuffle(img, {2, 11, 1});
  for (int c = 0; c < 3; ++c) {
    std::vector<float> a, b;
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        a.push_back(img.at(y, x, c));
        b.push_back(shuffled.at(y, x, c));
      }
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    REQUIRE(a == b);
  }

  // Fixed seed: identical permutation across runs.
  CHECK(perturb::grid_shuffle(img, {4, 5, 1}).v == perturb::grid_shuffle(img, {4, 5, 1}).v);

  CHECK_THROWS_AS(perturb::grid_shuffle(img, {3, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(perturb::grid_shuffle(img, {0, 1, 1}), std::invalid_argument);
}

TEST_CASE("near-delta low-pass is the identity") {
  const Image img = random_image(32, 13);
  const Image out = perturb::freq_filter(img, {perturb::FilterKind::Low, 0.01, 32});
  float max_err = 0.f;
  for (std::size_t i = 0; i < img.v.size(); ++i) {
    max_err = std::max(max_err, std::abs(img.v[i] - out.v[i]));
  }
  CHECK(max_err < 1e-3f);
}

TEST_CASE("low- and high-pass are complements before clamping") {
  const Image img = random_image(32, 17);
  for (double sigma : {0.8, 2.0, 6.0}) {
    const Image lo = perturb::freq_filter(img, {perturb::FilterKind::Low, sigma, 32}, false);
    const Image hi = perturb::freq_filter(img, {perturb::FilterKind::High, sigma, 32}, false);
    for (std::size_t i = 0; i < img.v.size(); ++i) {
      REQUIRE(lo.v[i] + hi.v[i] - 0.5 == Catch::Approx(img.v[i]).margin(1e-5));
    }
  }
}

TEST_CASE("fft low-pass equals circular spatial convolution") {
  const Image img = random_image(32, 19);
  for (double sigma : {1.5, 3.0}) {
    const Image fft_out = perturb::freq_filter(img, {perturb::FilterKind::Low, sigma, 32}, false);
    const Image ref = oracle::gaussian_lowpass_spatial(img, sigma);
    float max_err = 0.f;
    for (std::size_t i = 0; i < img.v.size(); ++i) {
      max_err = std::max(max_err, std::abs(fft_out.v[i] - ref.v[i]));
    }
    REQUIRE(max_err < 1e-4f);
  }
}

TEST_CASE("band-pass of a constant image is mid-gray and transfer stays in [0,1]") {
  Image img(32, 32, 3);
  for (auto& v : img.v) v = 0.37f;
  const Image band = perturb::freq_filter(img, {perturb::FilterKind::Band, 2.0, 32});
  for (float v : band.v) REQUIRE(v == Catch::Approx(0.5).margin(1e-6));

  // Difference-of-Gaussians transfer: wider minus narrower is in [0,1].
  const double d_lo = 32.0 / (2 * 3.14159265358979 * 2.0);
  const double d_hi = d_lo / 1.5;
  for (double r2 = 0.0; r2 < 600.0; r2 += 7.3) {
    const double h = std::exp(-r2 / (2 * d_lo * d_lo)) - std::exp(-r2 / (2 * d_hi * d_hi));
    REQUIRE(h >= 0.0);
    REQUIRE(h <= 1.0);
  }

  CHECK_THROWS_AS(perturb::freq_filter(img, {perturb::FilterKind::Low, -1.0, 32}),
                  std::invalid_argument);
}

namespace {
// Three well-separated chromaticity blobs with known Lab centers.
Image blob_image(std::uint64_t seed) {
  const std::array<std::array<double, 3>, 3> lab_centers{{
      {55.0, 15.0, 28.0},   // orange
      {50.0, -22.0, 22.0},  // green
      {30.0, 2.0, 2.0},     // dark gray
  }};
  Rng rng(seed);
  Image img(30, 30, 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const auto& c = lab_centers[rng.uniform_int(3)];
      float r, g, b;
      raster::lab_to_rgb_px({c[0] + rng.uniform(-1.0, 1.0), c[1] + rng.uniform(-0.8, 0.8),
                             c[2] + rng.uniform(-0.8, 0.8)},
                            r, g, b);
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  }
  return img;
}
}  // namespace

TEST_CASE("color clustering recovers separated blobs and the elbow picks 3") {
  const Image img = blob_image(23);
  const auto model = perturb::fit_color_clusters({&img}, 1, 8, 900, 5);
  REQUIRE(model.k == 3);

  // Each known blob center has a recovered center nearby.
  for (const auto& want : {std::pair{15.0, 28.0}, std::pair{-22.0, 22.0}, std::pair{2.0, 2.0}}) {
    double best = 1e9;
    for (const auto& c : model.centers) {
      best = std::min(best, std::hypot(c[1] - want.first, c[2] - want.second));
    }
    REQUIRE(best < 1.0);  // sampling noise over ~300 points per blob
  }

  // Deterministic under the seed.
  const auto again = perturb::fit_color_clusters({&img}, 1, 8, 900, 5);
  REQUIRE(again.centers == model.centers);
}

TEST_CASE("single-color corpus picks k = 1") {
  Image img(10, 10, 3);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 10; ++x) {
      img.at(y, x, 0) = 0.4f;
      img.at(y, x, 1) = 0.5f;
      img.at(y, x, 2) = 0.6f;
    }
  }
  const auto model = perturb::fit_color_clusters({&img}, 1, 8, 200, 1);
  CHECK(model.k == 1);
}

TEST_CASE("ablation keeps a consistent partition between variants") {
  const Image img = blob_image(31);
  const auto model = perturb::fit_color_clusters({&img}, 1, 8, 900, 7);
  REQUIRE(model.k == 3);

  // Union over kept clusters restores every pixel exactly once.
  std::vector<int> kept_count(img.h * img.w, 0);
  for (int keep = 0; keep < model.k; ++keep) {
    const Image gray = perturb::ablate_gray(img, model, keep);
    const Image chroma = perturb::ablate_chromaticity(img, model, keep);
    for (int p = 0; p < img.h * img.w; ++p) {
      const bool kept_gray = gray.v[3 * p] == img.v[3 * p] && gray.v[3 * p + 1] == img.v[3 * p + 1] &&
                             gray.v[3 * p + 2] == img.v[3 * p + 2];
      const bool kept_chroma = chroma.v[3 * p] == img.v[3 * p] &&
                               chroma.v[3 * p + 1] == img.v[3 * p + 1] &&
                               chroma.v[3 * p + 2] == img.v[3 * p + 2];
      REQUIRE(kept_gray == kept_chroma);  // shared assignment
      kept_count[p] += kept_gray;
    }
  }
  for (int c : kept_count) REQUIRE(c >= 1);

  // keep = -1 (none): gray variant is uniform mid-gray.
  const Image none = perturb::ablate_gray(img, model, -1);
  for (float v : none.v) REQUIRE(v == 0.5f);

  // keep = -1 chroma variant: grayscale with L* preserved.
  const Image achroma = perturb::ablate_chromaticity(img, model, -1);
  for (int p = 0; p < img.h * img.w; ++p) {
    const auto before = raster::rgb_to_lab_px(img.v[3 * p], img.v[3 * p + 1], img.v[3 * p + 2]);
    const auto after =
        raster::rgb_to_lab_px(achroma.v[3 * p], achroma.v[3 * p + 1], achroma.v[3 * p + 2]);
    REQUIRE(after.L == Catch::Approx(before.L).margin(1e-3 * 100));
    REQUIRE(std::abs(after.a) < 0.02);
    REQUIRE(std::abs(after.b) < 0.02);
  }

  // Achromatic pixels are unchanged by chroma removal.
  Image gray_img(6, 6, 3);
  for (auto& v : gray_img.v) v = 0.42f;
  const auto gray_model = perturb::fit_color_clusters({&gray_img}, 1, 8, 36, 3);
  const Image unchanged = perturb::ablate_chromaticity(gray_img, gray_model, -1);
  for (std::size_t i = 0; i < gray_img.v.size(); ++i) {
    REQUIRE(unchanged.v[i] == Catch::Approx(gray_img.v[i]).margin(2e-3));
  }

  // keep covering all pixels (k=1 model, keep=0): both variants are identity.
  const Image id_gray = perturb::ablate_gray(gray_img, gray_model, 0);
  REQUIRE(id_gray.v == gray_img.v);
}

TEST_CASE("sweep with identity transform reproduces the baseline exactly") {
  // Feature function: channel means plus local contrast, enough for the
  // ridge to latch onto.
  auto feature = [](const Image& img) {
    std::vector<double> f(4, 0.0);
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        f[0] += img.at(y, x, 0);
        f[1] += img.at(y, x, 1);
        f[2] += img.at(y, x, 2);
        if (x > 0) f[3] += std::abs(img.at(y, x, 0) - img.at(y, x - 1, 0));
      }
    }
    for (auto& v : f) v /= img.h * img.w;
    return f;
  };

  Rng rng(41);
  std::vector<perturb::SweepSite> sites(40);
  for (int i = 0; i < 40; ++i) {
    Image img = random_image(16, 100 + i);
    const double wealth = rng.uniform(-1, 1);
    // Inject signal: brighten red channel with wealth.
    for (int p = 0; p < 16 * 16; ++p) {
      img.v[3 * p] = std::clamp(img.v[3 * p] + static_cast<float>(0.2 * wealth), 0.f, 1.f);
    }
    sites[i].wealth = wealth;
    sites[i].is_train = i < 30;
    sites[i].image = TensorHWC<std::uint8_t>(16, 16, 3);
    for (std::size_t j = 0; j < img.v.size(); ++j) {
      sites[i].image.v[j] = static_cast<std::uint8_t>(std::lround(img.v[j] * 255.f));
    }
  }

  perturb::SweepOptions opt;
  opt.params = {1.0, 2.0};
  opt.repetitions = 2;
  opt.seed = 5;
  opt.folds = 5;

  const auto identity = [](const Image& img, double, Rng&) { return img; };
  const auto res = perturb::perturbation_sweep("identity", sites, identity, feature, opt);
  for (const auto& pt : res.points) {
    for (double v : pt.r2_reps) REQUIRE(v == res.baseline_r2);
    for (double v : pt.spearman_reps) REQUIRE(v == res.baseline_spearman);
  }

  // Shuffling with tile = side is also the identity.
  const auto shuffle_full = [](const Image& img, double, Rng& rng2) {
    return perturb::grid_shuffle(img, {img.h, rng2.next_u64(), 1});
  };
  const auto res2 = perturb::perturbation_sweep("shuffle", sites, shuffle_full, feature, opt);
  for (const auto& pt : res2.points) {
    for (double v : pt.r2_reps) REQUIRE(v == res2.baseline_r2);
  }

  // CSV emission shape.
  const auto path = (std::filesystem::temp_directory_path() / "wm_sweep.csv").string();
  res.write_csv(path);
  const auto table = io::read_csv(path);
  CHECK(table.rows.size() == 2 + 2 * res.points.size());
  std::filesystem::remove(path);
}
