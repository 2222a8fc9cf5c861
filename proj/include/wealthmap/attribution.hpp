#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "wealthmap/common.hpp"
#include "wealthmap/image.hpp"
#include "wealthmap/metrics.hpp"
#include "wealthmap/model.hpp"

namespace wealthmap::attrib {

// Importance map aligned to an input tile: input pixel center of map cell
// (i, j) is (offset + scale * i, offset + scale * j).
struct AttributionMap {
  Image values;  // H' x W' x 1
  double scale = 1.0;
  double offset = 0.0;
  std::string method;
  bool nonnegative = false;

  double sum() const {
    double s = 0.0;
    for (float v : values.v) s += v;
    return s;
  }
};

struct OcclusionSpec {
  int patch_px = 16;
  int stride_px = 8;
  std::array<float, 3> fill{0.5f, 0.5f, 0.5f};

  void validate(int side) const {
    if (stride_px < 1 || patch_px < stride_px) {
      throw std::invalid_argument("occlusion: need patch >= stride >= 1");
    }
    if (patch_px > side) throw std::invalid_argument("occlusion: patch larger than tile");
  }
};

// Output drop when a gray patch masks each grid position: positive values
// mark regions that support a higher output.
template <class T>
AttributionMap occlusion_map(const model::ConvNet<T>& net, const TensorHWC<T>& tile,
                             const OcclusionSpec& spec, int jobs = 0) {
  spec.validate(tile.h);
  const T base = model::forward(net, tile).output;
  const int cells_y = (tile.h - spec.patch_px) / spec.stride_px + 1;
  const int cells_x = (tile.w - spec.patch_px) / spec.stride_px + 1;

  AttributionMap map;
  map.values.assign(cells_y, cells_x, 1);
  map.scale = spec.stride_px;
  map.offset = spec.patch_px / 2.0;
  map.method = "occlusion";

  parallel_for(static_cast<std::int64_t>(cells_y) * cells_x, jobs, [&](std::int64_t cell) {
    const int cy = static_cast<int>(cell) / cells_x;
    const int cx = static_cast<int>(cell) % cells_x;
    TensorHWC<T> occluded = tile;
    const int y0 = cy * spec.stride_px, x0 = cx * spec.stride_px;
    for (int y = y0; y < y0 + spec.patch_px; ++y) {
      T* p = occluded.px(y, x0);
      for (int x = 0; x < spec.patch_px; ++x) {
        for (int ch = 0; ch < 3; ++ch) p[x * 3 + ch] = static_cast<T>(spec.fill[ch]);
      }
    }
    map.values.v[cell] = static_cast<float>(base - model::forward(net, occluded).output);
  });
  return map;
}

// Gradient-weighted activation map at the last convolutional layer:
// channel weights are the spatial mean of d(output)/d(activation), the map
// is ReLU of the weighted channel sum, at that layer's resolution.
template <class T>
AttributionMap grad_cam(const model::ConvNet<T>& net, const TensorHWC<T>& tile) {
  const int layer = net.last_conv_map_index();
  const auto state = model::layer_activations_and_gradients(net, tile, layer);
  const auto& act = state.activations;
  if (act.h < 1 || act.w < 1 || act.h * act.w <= 1) {
    throw std::invalid_argument("grad_cam: layer has no spatial extent");
  }
  std::vector<double> weights(act.c, 0.0);
  for (int y = 0; y < act.h; ++y) {
    for (int x = 0; x < act.w; ++x) {
      const T* g = state.gradients.px(y, x);
      for (int c = 0; c < act.c; ++c) weights[c] += static_cast<double>(g[c]);
    }
  }
  for (double& w : weights) w /= static_cast<double>(act.h) * act.w;

  AttributionMap map;
  map.values.assign(act.h, act.w, 1);
  map.scale = static_cast<double>(tile.h) / act.h;
  map.offset = map.scale / 2.0 - 0.5;
  map.method = "grad_cam";
  map.nonnegative = true;
  for (int y = 0; y < act.h; ++y) {
    for (int x = 0; x < act.w; ++x) {
      const T* a = act.px(y, x);
      double s = 0.0;
      for (int c = 0; c < act.c; ++c) s += weights[c] * static_cast<double>(a[c]);
      map.values.at(y, x, 0) = static_cast<float>(std::max(0.0, s));
    }
  }
  return map;
}

// Guided backpropagation: ReLU backward passes zero entries whose forward
// pre-activation or incoming backward signal is negative. The three input
// channels are reduced to one by max absolute value.
template <class T>
AttributionMap guided_backprop(const model::ConvNet<T>& net, const TensorHWC<T>& tile) {
  const auto grad =
      model::input_gradient(net, tile, model::Unit::Output, 0, model::ReluMode::Guided);
  AttributionMap map;
  map.values.assign(grad.h, grad.w, 1);
  map.scale = 1.0;
  map.offset = 0.0;
  map.method = "guided_backprop";
  for (int y = 0; y < grad.h; ++y) {
    for (int x = 0; x < grad.w; ++x) {
      const T* g = grad.px(y, x);
      float best = 0.f;
      for (int c = 0; c < grad.c; ++c) {
        const float v = static_cast<float>(g[c]);
        if (std::abs(v) > std::abs(best)) best = v;
      }
      map.values.at(y, x, 0) = best;
    }
  }
  return map;
}

// Bilinear upsampling with corner alignment.
inline Image upsample_bilinear(const Image& src, int oh, int ow) {
  Image out(oh, ow, src.c);
  const double sy = oh > 1 ? static_cast<double>(src.h - 1) / (oh - 1) : 0.0;
  const double sx = ow > 1 ? static_cast<double>(src.w - 1) / (ow - 1) : 0.0;
  for (int y = 0; y < oh; ++y) {
    const double fy = y * sy;
    const int y0 = std::min(static_cast<int>(fy), src.h - 1);
    const int y1 = std::min(y0 + 1, src.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < ow; ++x) {
      const double fx = x * sx;
      const int x0 = std::min(static_cast<int>(fx), src.w - 1);
      const int x1 = std::min(x0 + 1, src.w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < src.c; ++c) {
        const double v = (src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx) * (1 - wy) +
                         (src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx) * wy;
        out.at(y, x, c) = static_cast<float>(v);
      }
    }
  }
  return out;
}

// Pixel-resolution product of the upsampled Grad-CAM map and the guided
// backpropagation map.
template <class T>
AttributionMap guided_grad_cam(const model::ConvNet<T>& net, const TensorHWC<T>& tile) {
  const AttributionMap cam = grad_cam(net, tile);
  const AttributionMap gbp = guided_backprop(net, tile);
  AttributionMap map;
  map.values = upsample_bilinear(cam.values, gbp.values.h, gbp.values.w);
  for (std::size_t i = 0; i < map.values.v.size(); ++i) map.values.v[i] *= gbp.values.v[i];
  map.scale = 1.0;
  map.offset = 0.0;
  map.method = "guided_grad_cam";
  return map;
}

// Pearson correlation between per-site summed map values and the CNN
// outputs (the Table-IV-style check).
inline double attribution_output_correlation(const std::vector<AttributionMap>& maps,
                                             const std::vector<double>& outputs) {
  if (maps.size() != outputs.size() || maps.size() < 3) {
    throw std::invalid_argument("attribution correlation: need >= 3 aligned sites");
  }
  std::vector<double> sums;
  sums.reserve(maps.size());
  for (const auto& m : maps) sums.push_back(m.sum());
  return metrics::pearson(sums, outputs);
}

}  // namespace wealthmap::attrib
