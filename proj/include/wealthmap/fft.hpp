#pragma once

#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <vector>

#include "wealthmap/common.hpp"

namespace wealthmap::fft {

namespace detail {

// FFTW plan creation is not thread-safe; execution via the new-array
// interface is. Plans are cached per (h, w, sign), created with
// FFTW_ESTIMATE (deterministic) and FFTW_UNALIGNED (caller buffers).
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(int h, int w, int sign) {
    std::lock_guard<std::mutex> lock(mu_);
    const auto key = std::make_tuple(h, w, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    std::vector<std::complex<double>> tmp(static_cast<std::size_t>(h) * w);
    fftw_plan p = fftw_plan_dft_2d(h, w, reinterpret_cast<fftw_complex*>(tmp.data()),
                                   reinterpret_cast<fftw_complex*>(tmp.data()), sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!p) throw NumericError("fft: plan creation failed");
    plans_.emplace(key, p);
    return p;
  }

 private:
  PlanCache() = default;
  std::mutex mu_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

}  // namespace detail

// In-place 2-D complex DFT; sign FFTW_FORWARD (-1) or FFTW_BACKWARD (+1).
// The backward transform is normalized by 1/(h*w) here, so
// dft2d(backward(dft2d(x))) == x.
inline void dft2d(int h, int w, std::complex<double>* data, int sign) {
  fftw_plan p = detail::PlanCache::instance().get(h, w, sign);
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(data),
                   reinterpret_cast<fftw_complex*>(data));
  if (sign == FFTW_BACKWARD) {
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) data[i] *= inv;
  }
}

}  // namespace wealthmap::fft
