#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace wealthmap {

// Dense H x W x C tensor, row-major with channels innermost. Image data is
// float; the model layers instantiate the same container with double for
// gradient-check precision.
template <class T>
struct TensorHWC {
  int h = 0, w = 0, c = 0;
  std::vector<T> v;

  TensorHWC() = default;
  TensorHWC(int h_, int w_, int c_, T fill = T(0))
      : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

  void assign(int h_, int w_, int c_, T fill = T(0)) {
    h = h_;
    w = w_;
    c = c_;
    v.assign(static_cast<std::size_t>(h_) * w_ * c_, fill);
  }

  T& at(int y, int x, int ch) {
    return v[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  T at(int y, int x, int ch) const {
    return v[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }

  T* px(int y, int x) { return &v[(static_cast<std::size_t>(y) * w + x) * c]; }
  const T* px(int y, int x) const {
    return &v[(static_cast<std::size_t>(y) * w + x) * c];
  }

  std::size_t size() const { return v.size(); }

  bool same_shape(const TensorHWC& o) const {
    return h == o.h && w == o.w && c == o.c;
  }

  template <class U>
  TensorHWC<U> cast() const {
    TensorHWC<U> out(h, w, c);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

using Image = TensorHWC<float>;

// Copies src into dst with its top-left corner at (y0, x0).
template <class T>
void paste(TensorHWC<T>& dst, const TensorHWC<T>& src, int y0, int x0) {
  assert(dst.c == src.c);
  assert(y0 >= 0 && x0 >= 0 && y0 + src.h <= dst.h && x0 + src.w <= dst.w);
  for (int y = 0; y < src.h; ++y) {
    const T* s = src.px(y, 0);
    T* d = dst.px(y0 + y, x0);
    for (int i = 0; i < src.w * src.c; ++i) d[i] = s[i];
  }
}

template <class T>
TensorHWC<T> crop(const TensorHWC<T>& src, int y0, int x0, int ch, int cw) {
  assert(y0 >= 0 && x0 >= 0 && y0 + ch <= src.h && x0 + cw <= src.w);
  TensorHWC<T> out(ch, cw, src.c);
  for (int y = 0; y < ch; ++y) {
    const T* s = src.px(y0 + y, x0);
    T* d = out.px(y, 0);
    for (int i = 0; i < cw * src.c; ++i) d[i] = s[i];
  }
  return out;
}

}  // namespace wealthmap
