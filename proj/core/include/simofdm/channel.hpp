#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "simofdm/metasurface.hpp"
#include "simofdm/wavemath/linalg.hpp"
#include "simofdm/wavemath/rng.hpp"

namespace simofdm::chan {

using meta::PanelLayout;
using meta::Polarization;
using wave::cdouble;
using wave::CMat;
using wave::RngStream;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  bool operator==(const Vec3&) const = default;
};

double distance(const Vec3& a, const Vec3& b);

/// Log-distance path loss with log-normal shadowing.
struct PathLossModel {
  double reference_distance = 1.0;  // d0, meters
  double exponent = 3.5;            // b
  double shadowing_db = 9.0;        // delta, std of X in dB
  double wavelength = 10.7e-3;      // meters
  bool operator==(const PathLossModel&) const = default;
};

/// Statistics of the randomly generated scatterers.
struct ScatterModel {
  int scatterers = 100;                // S
  double rician_factor_db = 10.0;      // LoS power / total NLoS power
  double mean_excess_delay = 100e-9;   // seconds
  bool operator==(const ScatterModel&) const = default;
};

struct Scene {
  Vec3 bs;
  std::vector<Vec3> users;
  PathLossModel path_loss;
  ScatterModel scatter;
};

struct Path {
  cdouble gain;
  double delay = 0.0;
  double tx_elevation = 0.0;
  double tx_azimuth = 0.0;
  double rx_elevation = 0.0;
  double rx_azimuth = 0.0;
  bool los = false;
};

/// Path 0 is the LoS path, paths 1..S are NLoS.
struct PathSet {
  std::vector<Path> paths;
  double path_loss_db = 0.0;  // including the shadowing draw
  double shadowing_db = 0.0;  // the X_delta draw alone
};

/// PL(d) = 20 log10(4 pi d0 / lambda) + 10 b log10(d / d0) + X, X ~ N(0, delta^2).
/// Throws DomainError when d < d0 or d0 <= 0.
double path_loss_db(double d, const PathLossModel& model, RngStream& rng);
double path_loss_db(double d, const PathLossModel& model, std::uint64_t seed);

/// LoS geometry plus S random NLoS paths for user `user`.
PathSet sample_paths(const Scene& scene, int user, RngStream& rng);
PathSet sample_paths(const Scene& scene, int user, std::uint64_t seed);

/// alpha_x(kd sin(el) sin(az)) kron alpha_y(kd cos(el)), k = 2 pi f / c, over
/// the unit grid of `layout` (length units.count()).
CMat steering_vector(const PanelLayout& layout, double elevation, double azimuth, double frequency);

/// G = sum_s g_s e^{-j 2 pi f tau_s} a_r,s a_t,s^H, size rx units x tx units.
CMat channel_matrix(const PathSet& paths, double frequency, const PanelLayout& tx,
                    const PanelLayout& rx);

/// Polarization phases psi^{00}, psi^{01}, psi^{10}, psi^{11}.
struct DualPolPhases {
  std::array<double, 4> psi{};
  static DualPolPhases draw(RngStream& rng);
};

/// XPD = (1 - eps) / eps. Throws DomainError unless 0 < eps <= 1.
double xpd_from_epsilon(double epsilon);

/// [[e^{j psi00} G, e^{j psi01} G / sqrt(XPD)], [e^{j psi10} G / sqrt(XPD), e^{j psi11} G]].
/// eps = 1 gives XPD = 0; the cross blocks are then unbounded and rejected.
CMat dp_channel(const CMat& g, double epsilon, const DualPolPhases& phases);
CMat dp_channel(const CMat& g, double epsilon, std::uint64_t seed);

struct UserChannel {
  PathSet paths;
  std::optional<DualPolPhases> polarization_phases;
  std::vector<CMat> matrices;  // one per subcarrier
};

struct ChannelRealization {
  Polarization polarization = Polarization::kSingle;
  double epsilon = 0.2;
  std::vector<double> frequencies;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  std::vector<UserChannel> users;

  int user_count() const { return static_cast<int>(users.size()); }
  const CMat& at(int user, int subcarrier) const;
};

/// Everything needed to draw channels for one system.
struct ChannelSetup {
  Scene scene;
  PanelLayout tx;
  PanelLayout rx;
  Polarization polarization = Polarization::kSingle;
  double epsilon = 0.2;
  std::vector<double> frequencies;

  void validate() const;
};

/// Draw one realization from stream `rng` (user j uses rng.child(j)).
ChannelRealization realize(const ChannelSetup& setup, const RngStream& rng);

/// Source of channel realizations for training and evaluation.
///
/// Statistical mode: request k returns the realization drawn from
/// root.child(k), so any request can be replayed from the seed. Instantaneous
/// mode: always the stored realization.
class ChannelProvider {
 public:
  enum class Mode { kStatistical, kInstantaneous };

  static ChannelProvider statistical(ChannelSetup setup, std::uint64_t seed);
  static ChannelProvider instantaneous(ChannelRealization fixed);

  ChannelRealization provide();
  /// Statistical mode: realization k without advancing the request counter.
  ChannelRealization realization(std::uint64_t k) const;

  Mode mode() const { return mode_; }
  std::uint64_t requests() const { return next_; }
  std::uint64_t seed() const { return seed_; }
  const std::optional<ChannelSetup>& setup() const { return setup_; }

 private:
  ChannelProvider() : lock_(std::make_unique<std::mutex>()) {}

  Mode mode_ = Mode::kStatistical;
  std::optional<ChannelSetup> setup_;
  std::optional<ChannelRealization> fixed_;
  std::uint64_t seed_ = 0;
  std::uint64_t next_ = 0;
  std::unique_ptr<std::mutex> lock_;
};

/// Versioned JSON text with paths, seeds and full complex matrices.
std::string export_realization(const ChannelRealization& realization);
/// Throws IoError on malformed text or an unknown format version.
ChannelRealization import_realization(const std::string& text);

}  // namespace simofdm::chan
