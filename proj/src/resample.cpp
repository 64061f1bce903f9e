#include "gaborscope/resample.hpp"

#include <cmath>
#include <stdexcept>

namespace gaborscope {

namespace {

constexpr int kHalfWidth = 32;  // taps per side at the lower of the two rates

double sinc(double t) {
  if (std::abs(t) < 1e-12) return 1.0;
  const double pt = M_PI * t;
  return std::sin(pt) / pt;
}

double blackman(double u) {  // u in [-1, 1]
  if (std::abs(u) >= 1.0) return 0.0;
  return 0.42 + 0.5 * std::cos(M_PI * u) + 0.08 * std::cos(2.0 * M_PI * u);
}

// Reflects an index into [0, n-1] without repeating the edge sample.
long mirror(long m, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  m = m % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

}  // namespace

std::vector<double> resample(const std::vector<double>& x, double from_hz, double to_hz) {
  if (from_hz <= 0.0 || to_hz <= 0.0)
    throw std::invalid_argument("sample rates must be positive");
  if (from_hz == to_hz) return x;
  if (x.empty()) return {};

  const long n = static_cast<long>(x.size());
  const auto out_len = static_cast<long>(std::llround(static_cast<double>(n) * to_hz / from_hz));
  std::vector<double> y(static_cast<std::size_t>(out_len));

  // When decimating, the filter cutoff drops to the new Nyquist and the
  // kernel stretches so it still spans kHalfWidth zero crossings.
  const double cutoff = to_hz < from_hz ? to_hz / from_hz : 1.0;
  const double support = static_cast<double>(kHalfWidth) / cutoff;

  for (long i = 0; i < out_len; ++i) {
    const double center = static_cast<double>(i) * from_hz / to_hz;
    const long m_lo = static_cast<long>(std::ceil(center - support));
    const long m_hi = static_cast<long>(std::floor(center + support));
    double acc = 0.0, wsum = 0.0;
    for (long m = m_lo; m <= m_hi; ++m) {
      const double t = static_cast<double>(m) - center;
      const double w = sinc(cutoff * t) * blackman(t / support);
      acc += w * x[static_cast<std::size_t>(mirror(m, n))];
      wsum += w;
    }
    y[static_cast<std::size_t>(i)] = wsum != 0.0 ? acc / wsum : 0.0;
  }
  return y;
}

}  // namespace gaborscope
