#ifndef GABORSCOPE_TESTS_HELPERS_HPP
#define GABORSCOPE_TESTS_HELPERS_HPP

#include <cmath>
#include <complex>
#include <vector>

#include "gaborscope/rng.hpp"
#include "gaborscope/tensor.hpp"

namespace gaborscope::testing {

inline Tensor<double> randn(std::vector<int> shape, CounterRng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t.data[i] = rng.normal() * scale;
  return t;
}

inline Tensor<double> rand_uniform(std::vector<int> shape, CounterRng& rng, double lo, double hi) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(lo, hi);
  return t;
}

// Textbook sliding-window correlation, written independently of the library
// kernels: y[t] = sum_k w[k] * x[t + k], full-overlap positions only.
inline std::vector<double> naive_valid_correlation(const std::vector<double>& x,
                                                   const std::vector<double>& w) {
  const int lout = static_cast<int>(x.size()) - static_cast<int>(w.size()) + 1;
  std::vector<double> y(lout > 0 ? lout : 0, 0.0);
  for (int t = 0; t < lout; ++t)
    for (std::size_t k = 0; k < w.size(); ++k) y[t] += w[k] * x[t + k];
  return y;
}

// Direct O(n^2) DFT magnitude, the oracle for the fast transform. Returns the
// one-sided half of an n_fft-point transform of x zero-padded to n_fft.
inline std::vector<double> brute_dft_magnitude(const std::vector<double>& x, int n_fft) {
  std::vector<double> mag(n_fft / 2 + 1);
  for (int b = 0; b < static_cast<int>(mag.size()); ++b) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t n = 0; n < x.size(); ++n) {
      const double ang = -2.0 * 3.14159265358979323846 * b * static_cast<double>(n) / n_fft;
      acc += x[n] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    mag[b] = std::abs(acc);
  }
  return mag;
}

}  // namespace gaborscope::testing

#endif
