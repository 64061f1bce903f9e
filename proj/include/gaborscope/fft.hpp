#ifndef GABORSCOPE_FFT_HPP
#define GABORSCOPE_FFT_HPP

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace gaborscope {

// In-place iterative radix-2 FFT. Only power-of-two lengths; the kernel
// spectrum export always uses 1024, so this covers everything we need without
// dragging in an FFT library.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_inplace: length must be a power of two");

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

// Magnitude spectrum of a real signal zero-padded to n_fft. Returns the
// one-sided half (n_fft/2 + 1 bins); bin b is frequency b * fs / n_fft.
inline std::vector<double> magnitude_spectrum(const std::vector<double>& x, std::size_t n_fft) {
  std::vector<std::complex<double>> buf(n_fft, {0.0, 0.0});
  for (std::size_t i = 0; i < x.size() && i < n_fft; ++i) buf[i] = {x[i], 0.0};
  fft_inplace(buf);
  std::vector<double> mag(n_fft / 2 + 1);
  for (std::size_t b = 0; b < mag.size(); ++b) mag[b] = std::abs(buf[b]);
  return mag;
}

}  // namespace gaborscope

#endif
