#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wealthmap {

// Malformed or missing input (files, manifests, user-supplied values).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numeric procedure produced non-finite or otherwise unusable results.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}
}  // namespace detail

// Every random behavior in the toolkit draws from a stream derived with
// derive_seed(parent, tag). Module seeds derive from the top-level seed,
// per-site and per-sweep-cell streams derive from module seeds, so one
// top-level seed pins the entire pipeline.
inline constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return detail::mix64(base + detail::kGolden * (2 * tag + 1));
}

// Small deterministic generator (splitmix64 stream). Distribution code is
// written out here so results do not depend on the standard library build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += detail::kGolden;
    return detail::mix64(state_);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Multiply-shift map; bias is O(n / 2^64).
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

inline int effective_jobs(int jobs) {
#ifdef _OPENMP
  if (jobs > 0) return jobs;
  return omp_get_max_threads();
#else
  (void)jobs;
  return 1;
#endif
}

// Runs body(i) for i in [0, n). Callers keep determinism by writing to
// per-index slots and reducing in index order afterwards.
template <class F>
void parallel_for(std::int64_t n, int jobs, F&& body) {
#ifdef _OPENMP
  const int threads = effective_jobs(jobs);
  if (threads > 1 && n > 1) {
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
#else
  (void)jobs;
#endif
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

}  // namespace wealthmap
