#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace simofdm::wave {

/// Counter-based random stream.
///
/// Every output is a pure function of (key, counter): draw n equals
/// mix(key + n * golden). Child streams derive a fresh key from the parent
/// key and a name or index, so independent consumers (bits, noise,
/// scatterers, shadowing, power draws) never share state and any stream can
/// be recreated from the master seed alone.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream() = default;
  explicit RngStream(std::uint64_t seed);

  RngStream child(std::string_view name) const;
  RngStream child(std::uint64_t index) const;

  result_type operator()();
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  double exponential(double mean);
  double beta(double a, double b);
  /// Fair coin in {0, 1}.
  int bit();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void seek(std::uint64_t counter) { counter_ = counter; }

 private:
  RngStream(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace simofdm::wave
