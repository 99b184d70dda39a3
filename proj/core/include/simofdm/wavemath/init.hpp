#pragma once

#include "simofdm/wavemath/linalg.hpp"
#include "simofdm/wavemath/rng.hpp"

namespace simofdm::wave {

/// fan_out x fan_in weights, uniform on +-sqrt(6 / (fan_in + fan_out)).
RMat xavier_init(int fan_in, int fan_out, RngStream& rng);

/// 1 x n bias, uniform on +-1/sqrt(fan_in).
RMat bias_init(int fan_in, int n, RngStream& rng);

/// n x 1 phases, uniform on [0, 2 pi).
RMat phase_init(int n, RngStream& rng);

}  // namespace simofdm::wave
