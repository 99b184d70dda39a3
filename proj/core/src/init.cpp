#include "simofdm/wavemath/init.hpp"

#include <cmath>
#include <string>

#include "simofdm/error.hpp"

namespace simofdm::wave {

RMat xavier_init(int fan_in, int fan_out, RngStream& rng) {
  if (fan_in < 1 || fan_out < 1) {
    throw ConfigError("xavier_init: fan_in and fan_out must be >= 1 (got " +
                      std::to_string(fan_in) + ", " + std::to_string(fan_out) + ")");
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  RMat w(fan_out, fan_in);
  for (int r = 0; r < fan_out; ++r) {
    for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-bound, bound);
  }
  return w;
}

RMat bias_init(int fan_in, int n, RngStream& rng) {
  if (fan_in < 1 || n < 1) throw ConfigError("bias_init: sizes must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  RMat b(1, n);
  for (int c = 0; c < n; ++c) b(0, c) = rng.uniform(-bound, bound);
  return b;
}

RMat phase_init(int n, RngStream& rng) {
  RMat p(n, 1);
  for (int i = 0; i < n; ++i) p(i, 0) = rng.uniform(0.0, kTwoPi);
  return p;
}

}  // namespace simofdm::wave
