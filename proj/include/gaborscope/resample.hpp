#ifndef GABORSCOPE_RESAMPLE_HPP
#define GABORSCOPE_RESAMPLE_HPP

#include <vector>

namespace gaborscope {

// Rate conversion with a Blackman-windowed sinc interpolator. The output has
// round(n * to_hz / from_hz) samples; edges are handled by mirroring the
// signal, and equal rates return the input unchanged.
std::vector<double> resample(const std::vector<double>& x, double from_hz, double to_hz);

}  // namespace gaborscope

#endif
