#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "wealthmap/common.hpp"
#include "wealthmap/model.hpp"
#include "wealthmap/raster.hpp"

namespace wealthmap::featviz {

struct VizSpec {
  model::Unit unit = model::Unit::Output;
  int unit_index = 0;
  int steps = 512;
  double step_size = 1e-2;
  std::uint64_t seed = 0;
  int jitter_px = 2;
  double smoothness_weight = 1e-3;  // total-variation penalty on the ascent direction

  void validate() const {
    if (steps < 0) throw std::invalid_argument("featviz: negative steps");
    if (step_size <= 0.0) throw std::invalid_argument("featviz: step size must be positive");
  }
};

struct VizResult {
  raster::RasterTile image;          // best iterate
  std::vector<double> trajectory;    // raw unit value per step, entry 0 = init
};

namespace detail {

template <class T>
TensorHWC<T> roll(const TensorHWC<T>& img, int dy, int dx) {
  TensorHWC<T> out(img.h, img.w, img.c);
  for (int y = 0; y < img.h; ++y) {
    const int sy = ((y - dy) % img.h + img.h) % img.h;
    for (int x = 0; x < img.w; ++x) {
      const int sx = ((x - dx) % img.w + img.w) % img.w;
      const T* s = img.px(sy, sx);
      T* d = out.px(y, x);
      for (int c = 0; c < img.c; ++c) d[c] = s[c];
    }
  }
  return out;
}

// Subtracts weight * d(TV)/d(img) from grad, TV being the sum of squared
// forward differences (smooth total variation).
template <class T>
void add_tv_gradient(const TensorHWC<T>& img, double weight, TensorHWC<T>& grad) {
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int c = 0; c < img.c; ++c) {
        if (x + 1 < img.w) {
          const T diff = img.at(y, x + 1, c) - img.at(y, x, c);
          grad.at(y, x + 1, c) -= static_cast<T>(2.0 * weight) * diff;
          grad.at(y, x, c) += static_cast<T>(2.0 * weight) * diff;
        }
        if (y + 1 < img.h) {
          const T diff = img.at(y + 1, x, c) - img.at(y, x, c);
          grad.at(y + 1, x, c) -= static_cast<T>(2.0 * weight) * diff;
          grad.at(y, x, c) += static_cast<T>(2.0 * weight) * diff;
        }
      }
    }
  }
}

}  // namespace detail

// Gradient ascent on the input pixels toward a chosen unit, with per-step
// random spatial jitter and a total-variation penalty shaping the ascent
// direction only; the trajectory records unpenalized unit values. Pixels
// are clamped to [0,1] after each step and the best iterate is returned.
template <class T>
VizResult visualize_unit(const model::ConvNet<T>& net, const VizSpec& spec) {
  spec.validate();
  const int side = net.input_px;
  Rng rng(derive_seed(spec.seed, 0xF347));

  TensorHWC<T> img(side, side, 3);
  for (auto& v : img.v) v = static_cast<T>(rng.uniform());

  auto unit_value = [&](const TensorHWC<T>& x) -> double {
    const auto fw = model::forward(net, x);
    if (spec.unit == model::Unit::Output) return static_cast<double>(fw.output);
    if (spec.unit_index < 0 || spec.unit_index >= static_cast<int>(fw.features.size())) {
      throw std::invalid_argument("featviz: feature index out of range");
    }
    return static_cast<double>(fw.features[spec.unit_index]);
  };

  VizResult res;
  double value = unit_value(img);
  if (!std::isfinite(value)) {
    throw NumericError("featviz: non-finite objective at step 0");
  }
  res.trajectory.push_back(value);
  TensorHWC<T> best_img = img;
  double best_value = value;

  for (int step = 0; step < spec.steps; ++step) {
    const int dy = spec.jitter_px > 0
                       ? static_cast<int>(rng.uniform_int(2 * spec.jitter_px + 1)) - spec.jitter_px
                       : 0;
    const int dx = spec.jitter_px > 0
                       ? static_cast<int>(rng.uniform_int(2 * spec.jitter_px + 1)) - spec.jitter_px
                       : 0;
    TensorHWC<T> shifted = detail::roll(img, dy, dx);
    TensorHWC<T> grad =
        model::input_gradient(net, shifted, spec.unit, spec.unit_index, model::ReluMode::Standard);
    detail::add_tv_gradient(shifted, spec.smoothness_weight, grad);

    T max_abs = T(0);
    for (T g : grad.v) max_abs = std::max(max_abs, static_cast<T>(std::abs(static_cast<double>(g))));
    const T scale = static_cast<T>(spec.step_size) / (max_abs + static_cast<T>(1e-12));
    for (std::size_t i = 0; i < shifted.v.size(); ++i) {
      T v = shifted.v[i] + scale * grad.v[i];
      shifted.v[i] = std::clamp(v, T(0), T(1));
    }
    img = detail::roll(shifted, -dy, -dx);

    value = unit_value(img);
    if (!std::isfinite(value)) {
      throw NumericError("featviz: non-finite objective at step " + std::to_string(step));
    }
    res.trajectory.push_back(value);
    if (value > best_value) {
      best_value = value;
      best_img = img;
    }
  }

  res.image.pixels = best_img.template cast<float>();
  res.image.meters_per_pixel = 10.0;
  return res;
}

}  // namespace wealthmap::featviz
