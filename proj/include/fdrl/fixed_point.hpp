#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace fdrl {

// Fixed-point codec bridging real-valued parameters and the integer domains
// used by the encrypted and masked aggregation paths. Values clamp (saturate)
// at +/- clamp_limit rather than wrapping.
struct FixedPointCodec {
  int scale_bits = 16;
  double clamp_limit = 32768.0;  // 2^15

  double scale() const { return std::ldexp(1.0, scale_bits); }

  bool in_range(double x) const { return x >= -clamp_limit && x <= clamp_limit; }

  int64_t encode(double x) const {
    if (x > clamp_limit) x = clamp_limit;
    if (x < -clamp_limit) x = -clamp_limit;
    return std::llround(x * scale());
  }

  double decode(int64_t v) const { return static_cast<double>(v) / scale(); }

  std::vector<int64_t> encode_vec(std::span<const double> xs) const {
    std::vector<int64_t> out(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) out[i] = encode(xs[i]);
    return out;
  }

  std::vector<double> decode_vec(std::span<const int64_t> vs) const {
    std::vector<double> out(vs.size());
    for (size_t i = 0; i < vs.size(); ++i) out[i] = decode(vs[i]);
    return out;
  }
};

}  // namespace fdrl
