#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "wealthmap/head.hpp"
#include "wealthmap/model.hpp"
#include "wealthmap/train.hpp"

using namespace wealthmap;

namespace {

template <class T>
TensorHWC<T> random_input(int side, std::uint64_t seed, int c = 3) {
  Rng rng(seed);
  TensorHWC<T> img(side, side, c);
  for (auto& v : img.v) v = static_cast<T>(rng.uniform());
  return img;
}

// Linear pipeline (no ReLU anywhere).
model::ConvNet<double> linear_net(std::uint64_t seed) {
  model::ConvNet<double> net;
  net.input_px = 8;
  Rng rng(seed);
  model::Layer<double> conv;
  conv.kind = model::LayerKind::Conv3x3;
  conv.in_ch = 3;
  conv.out_ch = 4;
  conv.stride = 2;
  conv.w.resize(4 * 9 * 3);
  conv.b.assign(4, 0.05);
  for (auto& v : conv.w) v = rng.uniform(-0.5, 0.5);
  net.layers.push_back(std::move(conv));
  net.layers.push_back({model::LayerKind::AvgPool2, 4, 4, 1, {}, {}});
  net.layers.push_back({model::LayerKind::GlobalAvgPool, 4, 4, 1, {}, {}});
  model::Layer<double> dense;
  dense.kind = model::LayerKind::Dense;
  dense.in_ch = 4;
  dense.out_ch = 1;
  dense.w.resize(4);
  dense.b.assign(1, 0.0);
  for (auto& v : dense.w) v = rng.uniform(-1, 1);
  net.layers.push_back(std::move(dense));
  return net;
}

}  // namespace

TEST_CASE("forward matches the naive straight-line evaluation on a 224 tile") {
  const auto net = model::make_convnet<float>(16, 224, 42);
  const auto input = random_input<float>(224, 7);
  const auto fw = model::forward(net, input);
  std::vector<float> feats_ref;
  const auto out_ref = oracle::naive_forward_all(net, input, &feats_ref);
  REQUIRE(std::abs(fw.output - out_ref.v[0]) < 1e-5f);
  REQUIRE(feats_ref.size() == fw.features.size());
  for (std::size_t i = 0; i < feats_ref.size(); ++i) {
    REQUIRE(std::abs(fw.features[i] - feats_ref[i]) < 1e-5f);
  }
}

TEST_CASE("forward basics") {
  auto net = model::make_convnet<float>(8, 32, 1);
  const auto zero = TensorHWC<float>(32, 32, 3);

  // Zero head: output equals the head bias regardless of the image.
  auto& dense = net.layers[net.dense_index()];
  std::fill(dense.w.begin(), dense.w.end(), 0.f);
  dense.b[0] = 0.7f;
  CHECK(model::forward(net, zero).output == Catch::Approx(0.7).margin(1e-7));

  const auto img = random_input<float>(32, 5);
  CHECK(model::forward(net, img).output == model::forward(net, img).output);

  CHECK_THROWS_AS(model::forward(net, random_input<float>(48, 1)), std::invalid_argument);
  CHECK_NOTHROW(model::forward(net, random_input<float>(96, 1)));  // 3x mosaic
}

namespace {

// Central finite difference with a kink guard: the network is piecewise
// linear, so a nonzero second difference means a ReLU kink sits inside the
// (x-h, x+h) stencil and the coordinate cannot be used for the check.
template <class Eval>
int fd_check(TensorHWC<double>& input, const TensorHWC<double>& grad, Eval&& eval,
             std::uint64_t seed, int want, double h = 1e-3) {
  Rng rng(seed);
  int checked = 0;
  const double mid = eval(input);
  for (int trial = 0; trial < 200 && checked < want; ++trial) {
    const std::size_t i = rng.uniform_int(input.v.size());
    const double keep = input.v[i];
    input.v[i] = keep + h;
    const double up = eval(input);
    input.v[i] = keep - h;
    const double dn = eval(input);
    input.v[i] = keep;
    if (std::abs(up - 2 * mid + dn) > 1e-9 * std::max(1.0, std::abs(mid))) continue;  // kink
    const double fd = (up - dn) / (2 * h);
    const double an = grad.v[i];
    if (std::abs(fd) < 1e-9 && std::abs(an) < 1e-9) continue;
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    REQUIRE(rel < 1e-3);
    ++checked;
  }
  return checked;
}

}  // namespace

TEST_CASE("input gradient passes finite differences on every layer type") {
  // The default stack contains stride-1/stride-2 convs, ReLU, average
  // pooling, global pooling and the dense head.
  const auto net = model::make_convnet<double>(8, 16, 3);
  auto input = random_input<double>(16, 11);
  const auto grad = model::input_gradient(net, input, model::Unit::Output);
  const int checked = fd_check(
      input, grad, [&](const TensorHWC<double>& x) { return model::forward(net, x).output; }, 13,
      24);
  REQUIRE(checked >= 20);
}

TEST_CASE("feature-unit gradients pass finite differences") {
  const auto net = model::make_convnet<double>(8, 16, 21);
  auto input = random_input<double>(16, 23);
  const int unit = 3;
  const auto grad = model::input_gradient(net, input, model::Unit::Feature, unit);
  const int checked = fd_check(
      input, grad,
      [&](const TensorHWC<double>& x) { return model::forward(net, x).features[unit]; }, 29, 20);
  REQUIRE(checked >= 15);
  CHECK_THROWS_AS(model::input_gradient(net, input, model::Unit::Feature, 99),
                  std::invalid_argument);
}

TEST_CASE("layer gradients match finite differences through a sub-network") {
  const auto net = model::make_convnet<double>(8, 16, 31);
  const auto input = random_input<double>(16, 37);
  // Check a conv output, a relu output and a pool output.
  for (int layer_id : {0, 3, 4}) {
    const auto state = model::layer_activations_and_gradients(net, input, layer_id);

    model::ConvNet<double> tail;
    tail.input_px = state.activations.h;
    for (std::size_t i = layer_id + 1; i < net.layers.size(); ++i) {
      tail.layers.push_back(net.layers[i]);
    }
    auto act = state.activations;
    const int checked = fd_check(
        act, state.gradients,
        [&](const TensorHWC<double>& x) { return model::forward(tail, x).output; }, 41 + layer_id,
        12);
    REQUIRE(checked >= 10);
  }
  CHECK_THROWS_AS(model::layer_activations_and_gradients(net, input, 99), std::invalid_argument);
}

TEST_CASE("gap-linear analytic layer gradient") {
  // For a net ending pool -> GAP -> dense(w), the gradient at every
  // spatial cell of channel c at the GAP input is w_c / cells.
  const auto net = model::make_convnet<double>(8, 16, 51);
  const auto input = random_input<double>(16, 53);
  const int gap_in = net.gap_index() - 1;
  const auto state = model::layer_activations_and_gradients(net, input, gap_in);
  const auto& dense = net.layers[net.dense_index()];
  const double cells = state.activations.h * state.activations.w;
  for (int y = 0; y < state.gradients.h; ++y) {
    for (int x = 0; x < state.gradients.w; ++x) {
      for (int c = 0; c < state.gradients.c; ++c) {
        REQUIRE(state.gradients.at(y, x, c) ==
                Catch::Approx(dense.w[c] / cells).margin(1e-12));
      }
    }
  }
}

TEST_CASE("linear net gradient is independent of the input") {
  const auto net = linear_net(61);
  const auto g1 = model::input_gradient(net, random_input<double>(8, 1));
  const auto g2 = model::input_gradient(net, random_input<double>(8, 2));
  for (std::size_t i = 0; i < g1.v.size(); ++i) {
    REQUIRE(g1.v[i] == Catch::Approx(g2.v[i]).margin(1e-12));
  }
}

TEST_CASE("zero head weights give a zero input gradient") {
  auto net = model::make_convnet<double>(8, 16, 71);
  auto& dense = net.layers[net.dense_index()];
  std::fill(dense.w.begin(), dense.w.end(), 0.0);
  const auto g = model::input_gradient(net, random_input<double>(16, 5));
  for (double v : g.v) REQUIRE(v == 0.0);
}

TEST_CASE("mosaic forward equals averaged tile features when kernels have no cross-talk") {
  // 3x3 kernels with only the center tap populated cannot see across tile
  // seams, so the fused mosaic forward must reproduce the per-tile mean.
  auto net = model::make_convnet<double>(8, 32, 81);
  Rng rng(83);
  for (auto& layer : net.layers) {
    if (layer.kind != model::LayerKind::Conv3x3) continue;
    for (int o = 0; o < layer.out_ch; ++o) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          for (int ci = 0; ci < layer.in_ch; ++ci) {
            auto& w = layer.w[((o * 3 + ky) * 3 + kx) * layer.in_ch + ci];
            w = (ky == 1 && kx == 1) ? rng.uniform(-0.6, 0.6) : 0.0;
          }
        }
      }
    }
  }
  TensorHWC<double> mosaic(96, 96, 3);
  std::array<TensorHWC<double>, 9> tiles;
  Rng img_rng(87);
  for (auto& v : mosaic.v) v = img_rng.uniform();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) tiles[i * 3 + j] = crop(mosaic, i * 32, j * 32, 32, 32);
  }
  const auto fused = model::forward(net, mosaic).features;
  std::vector<double> pooled(fused.size(), 0.0);
  for (const auto& t : tiles) {
    const auto f = model::forward(net, t).features;
    for (std::size_t k = 0; k < f.size(); ++k) pooled[k] += f[k] / 9.0;
  }
  for (std::size_t k = 0; k < fused.size(); ++k) {
    REQUIRE(fused[k] == Catch::Approx(pooled[k]).margin(1e-4));
  }
}

TEST_CASE("mosaic forward deviation is bounded for the padded default net") {
  // With zero padding and 3x3 taps the tile seams do cross-talk. At the
  // production geometry (224 tiles / 672 mosaic) the relative L2 gap
  // between fused and pooled features measures ~0.15-0.20 on random-init
  // nets with noise inputs; 0.3 is the documented bound.
  const auto net = model::make_convnet<float>(16, 224, 91);
  TensorHWC<float> mosaic(672, 672, 3);
  Rng rng(93);
  for (auto& v : mosaic.v) v = static_cast<float>(rng.uniform());
  const auto fused = model::forward(net, mosaic).features;
  std::vector<double> pooled(fused.size(), 0.0);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const auto tile = crop(mosaic, i * 224, j * 224, 224, 224);
      const auto f = model::forward(net, tile).features;
      for (std::size_t k = 0; k < f.size(); ++k) pooled[k] += f[k] / 9.0;
    }
  }
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < fused.size(); ++k) {
    num += (fused[k] - pooled[k]) * (fused[k] - pooled[k]);
    den += pooled[k] * pooled[k];
  }
  CHECK(std::sqrt(num / den) < 0.3);
}

TEST_CASE("checkpoint round trip preserves the forward pass") {
  const auto net = model::make_convnet<float>(8, 32, 101);
  const auto path = (std::filesystem::temp_directory_path() / "wm_net.bin").string();
  model::save_checkpoint(path, net);
  const auto loaded = model::load_checkpoint<float>(path);
  const auto img = random_input<float>(32, 103);
  CHECK(model::forward(net, img).output == model::forward(loaded, img).output);
  CHECK(loaded.input_px == 32);
  std::filesystem::remove(path);
}

// ---- training ----

namespace {
std::vector<model::LabeledTile> tiny_corpus(int n, int side, std::uint64_t seed,
                                            double bright_fraction) {
  Rng rng(seed);
  std::vector<model::LabeledTile> corpus(n);
  for (int i = 0; i < n; ++i) {
    corpus[i].tile.assign(side, side, 3);
    const bool bright = rng.uniform() < bright_fraction;
    const float base = bright ? 0.8f : 0.2f;
    for (auto& v : corpus[i].tile.v) v = base + static_cast<float>(rng.uniform(-0.1, 0.1));
    corpus[i].label = bright ? rng.uniform(1.0, 3.0) : rng.uniform(0.0, 0.4);
  }
  return corpus;
}
}  // namespace

TEST_CASE("training overfits a single sample") {
  auto net = model::make_convnet<float>(8, 16, 111);
  std::vector<model::LabeledTile> corpus(1);
  corpus[0].tile = random_input<float>(16, 113);
  corpus[0].label = 1.5;
  model::TrainSchedule sched;
  sched.stage1_epochs = 40;
  sched.stage2_epochs = 80;
  sched.stage1_lr = 0.05;
  sched.stage2_lr = 0.02;
  sched.l2 = 0.0;
  sched.batch_size = 1;
  sched.val_fraction = 0.0;
  sched.dark_downsample = false;
  const auto hist = model::train_two_stage(net, corpus, sched, 1);
  REQUIRE(!hist.epochs.empty());
  const double initial = hist.epochs.front().train_mse;
  const double final = hist.epochs.back().train_mse;
  CHECK(final < 1e-2 * initial);
}

TEST_CASE("zero learning rates leave weights unchanged") {
  auto net = model::make_convnet<float>(8, 16, 121);
  const auto reference = net;
  auto corpus = tiny_corpus(8, 16, 123, 0.5);
  model::TrainSchedule sched;
  sched.stage1_epochs = 2;
  sched.stage2_epochs = 2;
  sched.stage1_lr = 0.0;
  sched.stage2_lr = 0.0;
  sched.l2 = 0.0;
  sched.batch_size = 4;
  sched.val_fraction = 0.0;
  model::train_two_stage(net, corpus, sched, 5);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    REQUIRE(net.layers[i].w == reference.layers[i].w);
    REQUIRE(net.layers[i].b == reference.layers[i].b);
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto corpus = tiny_corpus(12, 16, 131, 0.5);
  model::TrainSchedule sched;
  sched.stage1_epochs = 3;
  sched.stage2_epochs = 3;
  sched.batch_size = 4;
  sched.val_fraction = 0.0;
  sched.dark_downsample = false;

  auto net1 = model::make_convnet<float>(8, 16, 141);
  auto net2 = model::make_convnet<float>(8, 16, 141);
  model::train_two_stage(net1, corpus, sched, 9, 2);
  model::train_two_stage(net2, corpus, sched, 9, 2);
  for (std::size_t i = 0; i < net1.layers.size(); ++i) {
    REQUIRE(net1.layers[i].w == net2.layers[i].w);
    REQUIRE(net1.layers[i].b == net2.layers[i].b);
  }
}

TEST_CASE("dark downsampling keeps the target share per epoch") {
  // 75% of this corpus is dark; downsampling must bring each epoch to
  // 58% +- 2%.
  auto corpus = tiny_corpus(400, 16, 151, 0.25);
  auto net = model::make_convnet<float>(4, 16, 153);
  model::TrainSchedule sched;
  sched.stage1_epochs = 4;
  sched.stage2_epochs = 0;
  sched.batch_size = 50;
  sched.val_fraction = 0.0;
  const auto hist = model::train_two_stage(net, corpus, sched, 11);
  REQUIRE(hist.epochs.size() == 4);
  for (const auto& e : hist.epochs) {
    CHECK(e.dark_share == Catch::Approx(0.58).margin(0.02));
  }
}

TEST_CASE("training raises on empty corpus and non-finite loss") {
  auto net = model::make_convnet<float>(4, 16, 161);
  model::TrainSchedule sched;
  CHECK_THROWS_AS(model::train_two_stage(net, {}, sched, 1), std::invalid_argument);

  std::vector<model::LabeledTile> corpus(2);
  corpus[0].tile = random_input<float>(16, 163);
  corpus[0].label = 1e200;  // drives the squared error to inf
  corpus[1].tile = random_input<float>(16, 165);
  corpus[1].label = 2.0;
  sched.stage1_epochs = 1;
  sched.stage2_epochs = 0;
  sched.val_fraction = 0.0;
  sched.dark_downsample = false;
  CHECK_THROWS_AS(model::train_two_stage(net, corpus, sched, 1), NumericError);
}

TEST_CASE("zero-epoch schedule leaves the net at its initialization") {
  auto net = model::make_convnet<float>(4, 16, 171);
  const auto reference = net;
  auto corpus = tiny_corpus(4, 16, 173, 0.5);
  model::TrainSchedule sched;
  sched.stage1_epochs = 0;
  sched.stage2_epochs = 0;
  sched.val_fraction = 0.0;
  model::train_two_stage(net, corpus, sched, 3);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    REQUIRE(net.layers[i].w == reference.layers[i].w);
  }
}
