#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wealthmap/common.hpp"
#include "wealthmap/image.hpp"

namespace wealthmap::model {

enum class LayerKind { Conv3x3, Relu, AvgPool2, GlobalAvgPool, Dense };
enum class ReluMode { Standard, Guided };
enum class Unit { Output, Feature };

template <class T>
struct Layer {
  LayerKind kind{};
  int in_ch = 0, out_ch = 0, stride = 1;
  std::vector<T> w;  // Conv3x3: [out][ky][kx][in]; Dense: [out][in]
  std::vector<T> b;  // [out]
};

// Small fully-convolutional regressor: conv/ReLU blocks with average
// pooling, a global average pool producing the feature vector, and an
// affine head mapping features to one scalar. Accepts tiles of side
// input_px and, being fully convolutional, 3*input_px mosaics.
template <class T>
struct ConvNet {
  std::vector<Layer<T>> layers;
  int input_px = 224;

  int dense_index() const {
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
      if (layers[i].kind == LayerKind::Dense) return i;
    }
    throw std::invalid_argument("convnet: no dense head");
  }
  int gap_index() const {
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
      if (layers[i].kind == LayerKind::GlobalAvgPool) return i;
    }
    throw std::invalid_argument("convnet: no global average pool");
  }
  // Activation feeding the global pool; the "last convolutional layer"
  // that region-level attribution hooks.
  int last_conv_map_index() const { return gap_index() - 1; }
  int feature_dim() const { return layers[dense_index()].in_ch; }
  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
  }
};

template <class T>
struct Tape {
  std::vector<TensorHWC<T>> acts;  // acts[i] = output of layers[i]
};

template <class T>
struct ForwardResult {
  std::vector<T> features;
  T output{};
};

template <class T>
struct ParamGrads {
  std::vector<std::vector<T>> w, b;

  void match(const ConvNet<T>& net) {
    w.assign(net.layers.size(), {});
    b.assign(net.layers.size(), {});
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      w[i].assign(net.layers[i].w.size(), T(0));
      b[i].assign(net.layers[i].b.size(), T(0));
    }
  }
  void add(const ParamGrads& o) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (std::size_t j = 0; j < w[i].size(); ++j) w[i][j] += o.w[i][j];
      for (std::size_t j = 0; j < b[i].size(); ++j) b[i][j] += o.b[i][j];
    }
  }
};

namespace detail {

inline int conv_out(int n, int stride) { return (n - 1) / stride + 1; }  // k=3, pad=1

template <class T>
inline T dot(const T* a, const T* b, int n) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Forward uses weights transposed to [ky][kx][ci][co]: the inner loop is
// then an axpy over contiguous output channels, which vectorizes without
// reordering any floating-point accumulation.
template <class T>
void conv3x3_forward(const Layer<T>& L, const TensorHWC<T>& in, TensorHWC<T>& out) {
  const int ci = L.in_ch, co = L.out_ch, s = L.stride;
  const int oh = conv_out(in.h, s), ow = conv_out(in.w, s);
  out.assign(oh, ow, co);

  std::vector<T> wt(L.w.size());
  for (int o = 0; o < co; ++o) {
    for (int k = 0; k < 9; ++k) {
      for (int i = 0; i < ci; ++i) {
        wt[(static_cast<std::size_t>(k) * ci + i) * co + o] =
            L.w[(static_cast<std::size_t>(o) * 9 + k) * ci + i];
      }
    }
  }

  std::vector<T> acc(co);
  const int row3 = 3 * ci;
  for (int oy = 0; oy < oh; ++oy) {
    const int iy0 = oy * s - 1;
    for (int ox = 0; ox < ow; ++ox) {
      const int ix0 = ox * s - 1;
      for (int o = 0; o < co; ++o) acc[o] = L.b[o];
      if (ix0 >= 0 && ix0 + 3 <= in.w) {
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = iy0 + ky;
          if (iy < 0 || iy >= in.h) continue;
          const T* src = in.px(iy, ix0);
          const T* w_row = wt.data() + static_cast<std::size_t>(ky) * row3 * co;
          for (int i = 0; i < row3; ++i) {
            const T x = src[i];
            if (x == T(0)) continue;
            const T* w = w_row + static_cast<std::size_t>(i) * co;
            for (int o = 0; o < co; ++o) acc[o] += x * w[o];
          }
        }
      } else {
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = iy0 + ky;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ix0 + kx;
            if (ix < 0 || ix >= in.w) continue;
            const T* src = in.px(iy, ix);
            const T* w_row = wt.data() + (static_cast<std::size_t>(ky) * 3 + kx) * ci * co;
            for (int i = 0; i < ci; ++i) {
              const T x = src[i];
              if (x == T(0)) continue;
              const T* w = w_row + static_cast<std::size_t>(i) * co;
              for (int o = 0; o < co; ++o) acc[o] += x * w[o];
            }
          }
        }
      }
      T* dst = out.px(oy, ox);
      for (int o = 0; o < co; ++o) dst[o] = acc[o];
    }
  }
}

template <class T, bool WithParams>
void conv3x3_backward_impl(const Layer<T>& L, const TensorHWC<T>& in,
                           const TensorHWC<T>& d_out, TensorHWC<T>& d_in,
                           std::vector<T>* gw, std::vector<T>* gb) {
  const int ci = L.in_ch, co = L.out_ch, s = L.stride;
  d_in.assign(in.h, in.w, ci);
  for (int oy = 0; oy < d_out.h; ++oy) {
    const int iy0 = oy * s - 1;
    for (int ox = 0; ox < d_out.w; ++ox) {
      const int ix0 = ox * s - 1;
      const T* g = d_out.px(oy, ox);
      if constexpr (WithParams) {
        for (int o = 0; o < co; ++o) (*gb)[o] += g[o];
      }
      const bool interior = ix0 >= 0 && ix0 + 3 <= in.w;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = iy0 + ky;
        if (iy < 0 || iy >= in.h) continue;
        if (interior) {
          const int row3 = 3 * ci;
          T* dst = d_in.px(iy, ix0);
          const T* src = in.px(iy, ix0);
          for (int o = 0; o < co; ++o) {
            const T go = g[o];
            if (go == T(0)) continue;
            const T* wt = L.w.data() + (o * 3 + ky) * row3;
            for (int i = 0; i < row3; ++i) dst[i] += go * wt[i];
            if constexpr (WithParams) {
              T* gwp = gw->data() + (o * 3 + ky) * row3;
              for (int i = 0; i < row3; ++i) gwp[i] += go * src[i];
            }
          }
        } else {
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ix0 + kx;
            if (ix < 0 || ix >= in.w) continue;
            T* dst = d_in.px(iy, ix);
            const T* src = in.px(iy, ix);
            for (int o = 0; o < co; ++o) {
              const T go = g[o];
              if (go == T(0)) continue;
              const T* wt = L.w.data() + ((o * 3 + ky) * 3 + kx) * ci;
              for (int i = 0; i < ci; ++i) dst[i] += go * wt[i];
              if constexpr (WithParams) {
                T* gwp = gw->data() + ((o * 3 + ky) * 3 + kx) * ci;
                for (int i = 0; i < ci; ++i) gwp[i] += go * src[i];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void avgpool2_forward(const TensorHWC<T>& in, TensorHWC<T>& out) {
  if (in.h % 2 != 0 || in.w % 2 != 0) {
    throw std::invalid_argument("avgpool2: odd spatial size");
  }
  out.assign(in.h / 2, in.w / 2, in.c);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      const T* a = in.px(2 * y, 2 * x);
      const T* b = in.px(2 * y, 2 * x + 1);
      const T* c = in.px(2 * y + 1, 2 * x);
      const T* d = in.px(2 * y + 1, 2 * x + 1);
      T* o = out.px(y, x);
      for (int ch = 0; ch < in.c; ++ch) {
        o[ch] = (a[ch] + b[ch] + c[ch] + d[ch]) * T(0.25);
      }
    }
  }
}

}  // namespace detail

template <class T>
ConvNet<T> make_convnet(int feature_dim = 64, int input_px = 224, std::uint64_t seed = 1) {
  if (feature_dim < 1 || feature_dim > 1280) {
    throw std::invalid_argument("make_convnet: feature_dim out of range");
  }
  ConvNet<T> net;
  net.input_px = input_px;
  Rng rng(derive_seed(seed, 0xC0DE));

  auto add_conv = [&](int in_ch, int out_ch, int stride) {
    Layer<T> l;
    l.kind = LayerKind::Conv3x3;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.stride = stride;
    l.w.resize(static_cast<std::size_t>(out_ch) * 9 * in_ch);
    l.b.assign(out_ch, T(0));
    const double limit = std::sqrt(6.0 / (9.0 * in_ch));  // fan-in scaled
    for (auto& v : l.w) v = static_cast<T>(rng.uniform(-limit, limit));
    net.layers.push_back(std::move(l));
    net.layers.push_back({LayerKind::Relu, out_ch, out_ch, 1, {}, {}});
  };

  add_conv(3, 8, 1);
  add_conv(8, 16, 2);
  net.layers.push_back({LayerKind::AvgPool2, 16, 16, 1, {}, {}});
  add_conv(16, 32, 1);
  add_conv(32, 32, 2);
  net.layers.push_back({LayerKind::AvgPool2, 32, 32, 1, {}, {}});
  add_conv(32, 64, 1);
  add_conv(64, feature_dim, 2);
  net.layers.push_back({LayerKind::GlobalAvgPool, feature_dim, feature_dim, 1, {}, {}});

  Layer<T> head;
  head.kind = LayerKind::Dense;
  head.in_ch = feature_dim;
  head.out_ch = 1;
  head.w.resize(feature_dim);
  head.b.assign(1, T(0));
  const double limit = std::sqrt(6.0 / feature_dim);
  for (auto& v : head.w) v = static_cast<T>(rng.uniform(-limit, limit));
  net.layers.push_back(std::move(head));
  return net;
}

template <class T>
ForwardResult<T> forward(const ConvNet<T>& net, const TensorHWC<T>& input,
                         Tape<T>* tape = nullptr) {
  if (input.h != input.w || (input.h != net.input_px && input.h != 3 * net.input_px)) {
    throw std::invalid_argument("forward: unsupported input size " + std::to_string(input.h) +
                                "x" + std::to_string(input.w));
  }
  if (input.c != net.layers.front().in_ch) {
    throw std::invalid_argument("forward: channel mismatch");
  }
  if (tape) tape->acts.assign(net.layers.size(), {});

  TensorHWC<T> cur = input;
  ForwardResult<T> res;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer<T>& L = net.layers[i];
    TensorHWC<T> next;
    switch (L.kind) {
      case LayerKind::Conv3x3:
        detail::conv3x3_forward(L, cur, next);
        break;
      case LayerKind::Relu:
        next = cur;
        for (auto& v : next.v) v = v > T(0) ? v : T(0);
        break;
      case LayerKind::AvgPool2:
        detail::avgpool2_forward(cur, next);
        break;
      case LayerKind::GlobalAvgPool: {
        next.assign(1, 1, cur.c);
        const std::size_t cells = static_cast<std::size_t>(cur.h) * cur.w;
        for (int y = 0; y < cur.h; ++y) {
          for (int x = 0; x < cur.w; ++x) {
            const T* s = cur.px(y, x);
            for (int ch = 0; ch < cur.c; ++ch) next.v[ch] += s[ch];
          }
        }
        for (auto& v : next.v) v /= static_cast<T>(cells);
        break;
      }
      case LayerKind::Dense: {
        next.assign(1, 1, L.out_ch);
        for (int o = 0; o < L.out_ch; ++o) {
          next.v[o] = L.b[o] + detail::dot(L.w.data() + static_cast<std::size_t>(o) * L.in_ch,
                                           cur.v.data(), L.in_ch);
        }
        break;
      }
    }
    if (L.kind == LayerKind::GlobalAvgPool) res.features.assign(next.v.begin(), next.v.end());
    cur = std::move(next);
    if (tape) tape->acts[i] = cur;
  }
  res.output = cur.v.at(0);
  return res;
}

// Reverse-mode sweep from the output of layers[seed_layer] (seeded with
// `seed`) down to the output of layers[stop_layer]; stop_layer == -1 gives
// the gradient with respect to the input image. Parameter gradients are
// accumulated into *pgrads when provided.
template <class T>
TensorHWC<T> backprop(const ConvNet<T>& net, const TensorHWC<T>& input, const Tape<T>& tape,
                      int seed_layer, TensorHWC<T> seed, int stop_layer = -1,
                      ReluMode relu = ReluMode::Standard, ParamGrads<T>* pgrads = nullptr) {
  TensorHWC<T> d = std::move(seed);
  for (int i = seed_layer; i > stop_layer; --i) {
    const Layer<T>& L = net.layers[i];
    const TensorHWC<T>& in_act = i == 0 ? input : tape.acts[i - 1];
    TensorHWC<T> d_prev;
    switch (L.kind) {
      case LayerKind::Conv3x3:
        if (pgrads) {
          detail::conv3x3_backward_impl<T, true>(L, in_act, d, d_prev, &pgrads->w[i],
                                                 &pgrads->b[i]);
        } else {
          detail::conv3x3_backward_impl<T, false>(L, in_act, d, d_prev, nullptr, nullptr);
        }
        break;
      case LayerKind::Relu:
        d_prev = std::move(d);
        if (relu == ReluMode::Guided) {
          for (std::size_t j = 0; j < d_prev.v.size(); ++j) {
            if (in_act.v[j] <= T(0) || d_prev.v[j] <= T(0)) d_prev.v[j] = T(0);
          }
        } else {
          for (std::size_t j = 0; j < d_prev.v.size(); ++j) {
            if (in_act.v[j] <= T(0)) d_prev.v[j] = T(0);
          }
        }
        break;
      case LayerKind::AvgPool2:
        d_prev.assign(in_act.h, in_act.w, in_act.c);
        for (int y = 0; y < d.h; ++y) {
          for (int x = 0; x < d.w; ++x) {
            const T* g = d.px(y, x);
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                T* p = d_prev.px(2 * y + dy, 2 * x + dx);
                for (int ch = 0; ch < d.c; ++ch) p[ch] += g[ch] * T(0.25);
              }
            }
          }
        }
        break;
      case LayerKind::GlobalAvgPool: {
        d_prev.assign(in_act.h, in_act.w, in_act.c);
        const T inv = T(1) / static_cast<T>(static_cast<std::size_t>(in_act.h) * in_act.w);
        for (int y = 0; y < in_act.h; ++y) {
          for (int x = 0; x < in_act.w; ++x) {
            T* p = d_prev.px(y, x);
            for (int ch = 0; ch < d.c; ++ch) p[ch] = d.v[ch] * inv;
          }
        }
        break;
      }
      case LayerKind::Dense: {
        d_prev.assign(1, 1, L.in_ch);
        for (int o = 0; o < L.out_ch; ++o) {
          const T go = d.v[o];
          if (pgrads) {
            pgrads->b[i][o] += go;
            for (int j = 0; j < L.in_ch; ++j) {
              pgrads->w[i][static_cast<std::size_t>(o) * L.in_ch + j] += go * in_act.v[j];
            }
          }
          for (int j = 0; j < L.in_ch; ++j) {
            d_prev.v[j] += go * L.w[static_cast<std::size_t>(o) * L.in_ch + j];
          }
        }
        break;
      }
    }
    d = std::move(d_prev);
  }
  return d;
}

// Exact derivative of the selected scalar (network output or one feature)
// with respect to every input pixel.
template <class T>
TensorHWC<T> input_gradient(const ConvNet<T>& net, const TensorHWC<T>& input,
                            Unit unit = Unit::Output, int index = 0,
                            ReluMode relu = ReluMode::Standard) {
  Tape<T> tape;
  forward(net, input, &tape);
  int seed_layer;
  TensorHWC<T> seed;
  if (unit == Unit::Output) {
    seed_layer = net.dense_index();
    if (index != 0) throw std::invalid_argument("input_gradient: output unit index must be 0");
    seed.assign(1, 1, 1);
    seed.v[0] = T(1);
  } else {
    seed_layer = net.gap_index();
    if (index < 0 || index >= net.feature_dim()) {
      throw std::invalid_argument("input_gradient: feature index out of range");
    }
    seed.assign(1, 1, net.feature_dim());
    seed.v[index] = T(1);
  }
  return backprop(net, input, tape, seed_layer, std::move(seed), -1, relu);
}

template <class T>
struct LayerState {
  TensorHWC<T> activations;
  TensorHWC<T> gradients;  // d(output) / d(activations)
};

// Forward activations at layers[layer_id] together with the derivative of
// the network output with respect to them.
template <class T>
LayerState<T> layer_activations_and_gradients(const ConvNet<T>& net, const TensorHWC<T>& input,
                                              int layer_id) {
  if (layer_id < 0 || layer_id >= static_cast<int>(net.layers.size())) {
    throw std::invalid_argument("layer_activations_and_gradients: bad layer id");
  }
  Tape<T> tape;
  forward(net, input, &tape);
  const int dense = net.dense_index();
  TensorHWC<T> seed(1, 1, 1);
  seed.v[0] = T(1);
  LayerState<T> st;
  st.activations = tape.acts[layer_id];
  st.gradients = backprop(net, input, tape, dense, std::move(seed), layer_id);
  return st;
}

namespace detail {
inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv3x3: return "conv3x3";
    case LayerKind::Relu: return "relu";
    case LayerKind::AvgPool2: return "avgpool2";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::Dense: return "dense";
  }
  return "?";
}
inline LayerKind kind_from(const std::string& s) {
  if (s == "conv3x3") return LayerKind::Conv3x3;
  if (s == "relu") return LayerKind::Relu;
  if (s == "avgpool2") return LayerKind::AvgPool2;
  if (s == "gap") return LayerKind::GlobalAvgPool;
  if (s == "dense") return LayerKind::Dense;
  throw DataError("checkpoint: unknown layer kind '" + s + "'");
}
}  // namespace detail

// Checkpoint: little-endian uint32 header length, JSON layer manifest,
// then all weights/biases as little-endian float32 in layer order.
template <class T>
void save_checkpoint(const std::string& path, const ConvNet<T>& net) {
  nlohmann::json j;
  j["format"] = "wealthmap-convnet";
  j["version"] = 1;
  j["input_px"] = net.input_px;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : net.layers) {
    j["layers"].push_back({{"kind", detail::kind_name(l.kind)},
                           {"in", l.in_ch},
                           {"out", l.out_ch},
                           {"stride", l.stride}});
  }
  const std::string header = j.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path);
  const std::uint32_t len = static_cast<std::uint32_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::vector<float> buf;
  for (const auto& l : net.layers) {
    buf.clear();
    for (T v : l.w) buf.push_back(static_cast<float>(v));
    for (T v : l.b) buf.push_back(static_cast<float>(v));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

template <class T>
ConvNet<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  if (!in || len == 0 || len > (1u << 20)) throw DataError("checkpoint: bad header in " + path);
  std::string header(len, '\0');
  in.read(header.data(), len);
  nlohmann::json j = nlohmann::json::parse(header, nullptr, false);
  if (j.is_discarded() || j.value("format", "") != "wealthmap-convnet") {
    throw DataError("checkpoint: unrecognized header in " + path);
  }
  ConvNet<T> net;
  net.input_px = j.at("input_px").get<int>();
  for (const auto& lj : j.at("layers")) {
    Layer<T> l;
    l.kind = detail::kind_from(lj.at("kind").get<std::string>());
    l.in_ch = lj.at("in").get<int>();
    l.out_ch = lj.at("out").get<int>();
    l.stride = lj.at("stride").get<int>();
    if (l.kind == LayerKind::Conv3x3) {
      l.w.resize(static_cast<std::size_t>(l.out_ch) * 9 * l.in_ch);
      l.b.resize(l.out_ch);
    } else if (l.kind == LayerKind::Dense) {
      l.w.resize(static_cast<std::size_t>(l.out_ch) * l.in_ch);
      l.b.resize(l.out_ch);
    }
    net.layers.push_back(std::move(l));
  }
  std::vector<float> buf;
  for (auto& l : net.layers) {
    buf.resize(l.w.size() + l.b.size());
    if (!buf.empty()) {
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (!in) throw DataError("checkpoint: truncated weights in " + path);
    }
    for (std::size_t i = 0; i < l.w.size(); ++i) l.w[i] = static_cast<T>(buf[i]);
    for (std::size_t i = 0; i < l.b.size(); ++i) l.b[i] = static_cast<T>(buf[l.w.size() + i]);
  }
  return net;
}

}  // namespace wealthmap::model
