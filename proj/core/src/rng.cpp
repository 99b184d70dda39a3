#include "simofdm/wavemath/rng.hpp"

#include <cmath>
#include <random>

namespace simofdm::wave {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

RngStream::RngStream(std::uint64_t seed) : key_(mix64(seed ^ 0x5EEDULL)), counter_(0) {}

RngStream RngStream::child(std::string_view name) const {
  return RngStream(mix64(key_ ^ mix64(fnv1a64(name))), 0);
}

RngStream RngStream::child(std::uint64_t index) const {
  return RngStream(mix64(key_ + mix64(index + kGolden)), 0);
}

RngStream::result_type RngStream::operator()() {
  const std::uint64_t n = counter_++;
  return mix64(key_ + (n + 1) * kGolden);
}

double RngStream::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(*this);
}

double RngStream::exponential(double mean) {
  std::exponential_distribution<double> dist(1.0 / mean);
  return dist(*this);
}

double RngStream::beta(double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(*this);
  const double y = gb(*this);
  return x / (x + y);
}

int RngStream::bit() { return static_cast<int>((*this)() >> 63); }

}  // namespace simofdm::wave
