#include "simofdm/channel.hpp"

#include <cmath>
#include <numbers>

#include "json.hpp"

#include "simofdm/error.hpp"

namespace simofdm::chan {

using wave::kSpeedOfLight;
using wave::kTwoPi;
using json = nlohmann::json;

namespace {
constexpr int kFormatVersion = 1;
constexpr const char* kFormatName = "simofdm-channel";
}  // namespace

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double path_loss_db(double d, const PathLossModel& model, RngStream& rng) {
  if (!(model.reference_distance > 0.0)) throw DomainError("path loss: reference distance must be > 0");
  if (!(model.wavelength > 0.0)) throw DomainError("path loss: wavelength must be > 0");
  if (!(d >= model.reference_distance)) {
    throw DomainError("path loss: distance " + std::to_string(d) + " m below reference distance");
  }
  const double d0 = model.reference_distance;
  const double free_space = 20.0 * std::log10(4.0 * std::numbers::pi * d0 / model.wavelength);
  const double slope = 10.0 * model.exponent * std::log10(d / d0);
  const double shadow = model.shadowing_db > 0.0 ? rng.normal(0.0, model.shadowing_db) : 0.0;
  return free_space + slope + shadow;
}

double path_loss_db(double d, const PathLossModel& model, std::uint64_t seed) {
  RngStream rng(seed);
  return path_loss_db(d, model, rng);
}

namespace {

double wrap_azimuth(double a) {
  double w = std::fmod(a, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  if (w >= kTwoPi) w = 0.0;
  return w;
}

// Elevation from the vertical axis and azimuth in the xy-plane of a direction.
std::pair<double, double> angles_of(double dx, double dy, double dz) {
  const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
  return {std::acos(std::abs(dz) / r), wrap_azimuth(std::atan2(dy, dx))};
}

}  // namespace

PathSet sample_paths(const Scene& scene, int user, RngStream& rng) {
  if (user < 0 || user >= static_cast<int>(scene.users.size())) {
    throw ConfigError("sample_paths: user index out of range");
  }
  if (scene.scatter.scatterers < 0) throw ConfigError("sample_paths: scatterer count must be >= 0");
  const Vec3& ue = scene.users[static_cast<std::size_t>(user)];
  const double d = distance(scene.bs, ue);
  if (!(d > 0.0)) throw DomainError("sample_paths: user coincides with the BS");
  const double dx = ue.x - scene.bs.x;
  const double dy = ue.y - scene.bs.y;
  const double dz = ue.z - scene.bs.z;
  if (dz == 0.0) throw DomainError("sample_paths: user lies in the BS aperture plane");

  RngStream shadow_rng = rng.child("shadowing");
  RngStream nlos_rng = rng.child("scatterers");

  PathSet set;
  set.path_loss_db = path_loss_db(d, scene.path_loss, shadow_rng);
  PathLossModel deterministic = scene.path_loss;
  deterministic.shadowing_db = 0.0;
  RngStream unused;
  set.shadowing_db = set.path_loss_db - path_loss_db(d, deterministic, unused);
  const double los_amplitude = std::sqrt(std::pow(10.0, -set.path_loss_db / 10.0));

  Path los;
  los.los = true;
  los.gain = cdouble(los_amplitude, 0.0);
  los.delay = d / kSpeedOfLight;
  std::tie(los.tx_elevation, los.tx_azimuth) = angles_of(dx, dy, dz);
  std::tie(los.rx_elevation, los.rx_azimuth) = angles_of(-dx, -dy, -dz);
  set.paths.push_back(los);

  const int s_count = scene.scatter.scatterers;
  if (s_count == 0) return set;

  double raw_power = 0.0;
  for (int s = 0; s < s_count; ++s) {
    Path p;
    p.tx_elevation = nlos_rng.uniform(0.0, std::numbers::pi / 2.0);
    p.tx_azimuth = nlos_rng.uniform(0.0, kTwoPi);
    p.rx_elevation = nlos_rng.uniform(0.0, std::numbers::pi / 2.0);
    p.rx_azimuth = nlos_rng.uniform(0.0, kTwoPi);
    p.delay = los.delay + nlos_rng.exponential(scene.scatter.mean_excess_delay);
    const double re = nlos_rng.normal(0.0, std::sqrt(0.5));
    const double im = nlos_rng.normal(0.0, std::sqrt(0.5));
    p.gain = cdouble(re, im);
    raw_power += std::norm(p.gain);
    set.paths.push_back(p);
  }
  const double target = los_amplitude * los_amplitude / wave::db_to_linear(scene.scatter.rician_factor_db);
  const double scale = raw_power > 0.0 ? std::sqrt(target / raw_power) : 0.0;
  for (std::size_t s = 1; s < set.paths.size(); ++s) set.paths[s].gain *= scale;
  return set;
}

PathSet sample_paths(const Scene& scene, int user, std::uint64_t seed) {
  RngStream rng(seed);
  return sample_paths(scene, user, rng);
}

CMat steering_vector(const PanelLayout& layout, double elevation, double azimuth, double frequency) {
  const double k = kTwoPi * frequency * layout.unit_spacing / kSpeedOfLight;
  const double arg_x = k * std::sin(elevation) * std::sin(azimuth);
  const double arg_y = k * std::cos(elevation);
  const int nx = layout.units.x;
  const int ny = layout.units.y;
  CMat a(nx * ny, 1);
  for (int ix = 0; ix < nx; ++ix) {
    const cdouble ax = std::polar(1.0, ix * arg_x);
    for (int iy = 0; iy < ny; ++iy) a(ix * ny + iy, 0) = ax * std::polar(1.0, iy * arg_y);
  }
  return a;
}

CMat channel_matrix(const PathSet& paths, double frequency, const PanelLayout& tx,
                    const PanelLayout& rx) {
  const int n = rx.units.count();
  const int m = tx.units.count();
  const Eigen::Index s_count = static_cast<Eigen::Index>(paths.paths.size());
  CMat ar(n, s_count);
  CMat at(m, s_count);
  Eigen::VectorXcd coeff(s_count);
  for (Eigen::Index s = 0; s < s_count; ++s) {
    const Path& p = paths.paths[static_cast<std::size_t>(s)];
    ar.col(s) = steering_vector(rx, p.rx_elevation, p.rx_azimuth, frequency);
    at.col(s) = steering_vector(tx, p.tx_elevation, p.tx_azimuth, frequency);
    coeff(s) = p.gain * std::polar(1.0, -kTwoPi * frequency * p.delay);
  }
  return ar * coeff.asDiagonal() * at.adjoint();
}

DualPolPhases DualPolPhases::draw(RngStream& rng) {
  DualPolPhases out;
  for (double& p : out.psi) p = rng.uniform(0.0, kTwoPi);
  return out;
}

double xpd_from_epsilon(double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) {
    throw DomainError("polarization conversion ratio must lie in (0, 1]");
  }
  return (1.0 - epsilon) / epsilon;
}

CMat dp_channel(const CMat& g, double epsilon, const DualPolPhases& phases) {
  const double xpd = xpd_from_epsilon(epsilon);
  if (!(xpd > 0.0)) throw DomainError("XPD = 0: cross-polarized blocks are unbounded");
  const double cross = 1.0 / std::sqrt(xpd);
  const Eigen::Index n = g.rows();
  const Eigen::Index m = g.cols();
  CMat out(2 * n, 2 * m);
  out.block(0, 0, n, m) = std::polar(1.0, phases.psi[0]) * g;
  out.block(0, m, n, m) = std::polar(cross, phases.psi[1]) * g;
  out.block(n, 0, n, m) = std::polar(cross, phases.psi[2]) * g;
  out.block(n, m, n, m) = std::polar(1.0, phases.psi[3]) * g;
  return out;
}

CMat dp_channel(const CMat& g, double epsilon, std::uint64_t seed) {
  RngStream rng(seed);
  return dp_channel(g, epsilon, DualPolPhases::draw(rng));
}

const CMat& ChannelRealization::at(int user, int subcarrier) const {
  return users.at(static_cast<std::size_t>(user)).matrices.at(static_cast<std::size_t>(subcarrier));
}

void ChannelSetup::validate() const {
  tx.validate();
  rx.validate();
  if (scene.users.empty()) throw ConfigError("channel: at least one user required");
  if (frequencies.empty()) throw ConfigError("channel: at least one subcarrier required");
  if (scene.scatter.scatterers < 0) throw ConfigError("channel: scatterer count must be >= 0");
  if (!(scene.scatter.mean_excess_delay > 0.0)) throw ConfigError("channel: mean excess delay must be > 0");
  if (polarization == Polarization::kDual) {
    if (!(xpd_from_epsilon(epsilon) > 0.0)) throw DomainError("channel: epsilon = 1 gives XPD = 0");
  }
}

ChannelRealization realize(const ChannelSetup& setup, const RngStream& rng) {
  setup.validate();
  ChannelRealization out;
  out.polarization = setup.polarization;
  out.epsilon = setup.epsilon;
  out.frequencies = setup.frequencies;
  out.seed = rng.key();
  for (int j = 0; j < static_cast<int>(setup.scene.users.size()); ++j) {
    RngStream user_rng = rng.child(static_cast<std::uint64_t>(j));
    RngStream path_rng = user_rng.child("paths");
    UserChannel uc;
    uc.paths = sample_paths(setup.scene, j, path_rng);
    if (setup.polarization == Polarization::kDual) {
      RngStream psi_rng = user_rng.child("polarization");
      uc.polarization_phases = DualPolPhases::draw(psi_rng);
    }
    uc.matrices.reserve(setup.frequencies.size());
    for (double f : setup.frequencies) {
      CMat g = channel_matrix(uc.paths, f, setup.tx, setup.rx);
      if (uc.polarization_phases) g = dp_channel(g, setup.epsilon, *uc.polarization_phases);
      if (!wave::all_finite(g)) throw NumericalError("channel: non-finite channel matrix");
      uc.matrices.push_back(std::move(g));
    }
    out.users.push_back(std::move(uc));
  }
  return out;
}

ChannelProvider ChannelProvider::statistical(ChannelSetup setup, std::uint64_t seed) {
  setup.validate();
  ChannelProvider p;
  p.mode_ = Mode::kStatistical;
  p.setup_ = std::move(setup);
  p.seed_ = seed;
  return p;
}

ChannelProvider ChannelProvider::instantaneous(ChannelRealization fixed) {
  ChannelProvider p;
  p.mode_ = Mode::kInstantaneous;
  p.seed_ = fixed.seed;
  p.fixed_ = std::move(fixed);
  return p;
}

ChannelRealization ChannelProvider::realization(std::uint64_t k) const {
  if (mode_ == Mode::kInstantaneous) return *fixed_;
  ChannelRealization r = realize(*setup_, RngStream(seed_).child(k));
  r.index = k;
  return r;
}

ChannelRealization ChannelProvider::provide() {
  std::lock_guard<std::mutex> guard(*lock_);
  if (mode_ == Mode::kInstantaneous) {
    ++next_;
    return *fixed_;
  }
  return realization(next_++);
}

namespace {

json matrix_to_json(const CMat& m) {
  json re = json::array();
  json im = json::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      re.push_back(m(r, c).real());
      im.push_back(m(r, c).imag());
    }
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"order", "column-major"}, {"re", re}, {"im", im}};
}

CMat matrix_from_json(const json& j) {
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
  const auto& re = j.at("re");
  const auto& im = j.at("im");
  if (rows < 0 || cols < 0 || re.size() != static_cast<std::size_t>(rows * cols) || im.size() != re.size()) {
    throw IoError("channel import: matrix entry count does not match its shape");
  }
  CMat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r, ++k) m(r, c) = cdouble(re[k].get<double>(), im[k].get<double>());
  }
  return m;
}

}  // namespace

std::string export_realization(const ChannelRealization& r) {
  json root;
  root["format"] = kFormatName;
  root["version"] = kFormatVersion;
  root["polarization"] = meta::to_string(r.polarization);
  root["epsilon"] = r.epsilon;
  root["seed"] = r.seed;
  root["index"] = r.index;
  root["frequencies"] = r.frequencies;
  json users = json::array();
  for (const auto& u : r.users) {
    json ju;
    ju["path_loss_db"] = u.paths.path_loss_db;
    ju["shadowing_db"] = u.paths.shadowing_db;
    json paths = json::array();
    for (const auto& p : u.paths.paths) {
      paths.push_back({{"gain", {p.gain.real(), p.gain.imag()}},
                       {"delay", p.delay},
                       {"tx_elevation", p.tx_elevation},
                       {"tx_azimuth", p.tx_azimuth},
                       {"rx_elevation", p.rx_elevation},
                       {"rx_azimuth", p.rx_azimuth},
                       {"los", p.los}});
    }
    ju["paths"] = std::move(paths);
    if (u.polarization_phases) ju["psi"] = u.polarization_phases->psi;
    json mats = json::array();
    for (const auto& m : u.matrices) mats.push_back(matrix_to_json(m));
    ju["matrices"] = std::move(mats);
    users.push_back(std::move(ju));
  }
  root["users"] = std::move(users);
  return root.dump(1) + "\n";
}

ChannelRealization import_realization(const std::string& text) {
  try {
    const json root = json::parse(text);
    if (root.at("format").get<std::string>() != kFormatName) throw IoError("channel import: unknown format");
    if (root.at("version").get<int>() != kFormatVersion) {
      throw IoError("channel import: unsupported version " + std::to_string(root.at("version").get<int>()));
    }
    ChannelRealization r;
    const std::string pol = root.at("polarization").get<std::string>();
    if (pol == "single") {
      r.polarization = Polarization::kSingle;
    } else if (pol == "dual") {
      r.polarization = Polarization::kDual;
    } else {
      throw IoError("channel import: unknown polarization '" + pol + "'");
    }
    r.epsilon = root.at("epsilon").get<double>();
    r.seed = root.at("seed").get<std::uint64_t>();
    r.index = root.at("index").get<std::uint64_t>();
    r.frequencies = root.at("frequencies").get<std::vector<double>>();
    for (const auto& ju : root.at("users")) {
      UserChannel u;
      u.paths.path_loss_db = ju.at("path_loss_db").get<double>();
      u.paths.shadowing_db = ju.at("shadowing_db").get<double>();
      for (const auto& jp : ju.at("paths")) {
        Path p;
        const auto g = jp.at("gain").get<std::array<double, 2>>();
        p.gain = cdouble(g[0], g[1]);
        p.delay = jp.at("delay").get<double>();
        p.tx_elevation = jp.at("tx_elevation").get<double>();
        p.tx_azimuth = jp.at("tx_azimuth").get<double>();
        p.rx_elevation = jp.at("rx_elevation").get<double>();
        p.rx_azimuth = jp.at("rx_azimuth").get<double>();
        p.los = jp.at("los").get<bool>();
        u.paths.paths.push_back(p);
      }
      if (ju.contains("psi")) u.polarization_phases = DualPolPhases{ju.at("psi").get<std::array<double, 4>>()};
      for (const auto& jm : ju.at("matrices")) u.matrices.push_back(matrix_from_json(jm));
      if (u.matrices.size() != r.frequencies.size()) {
        throw IoError("channel import: matrix count does not match the subcarrier count");
      }
      r.users.push_back(std::move(u));
    }
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("channel import: ") + e.what());
  }
}

}  // namespace simofdm::chan
