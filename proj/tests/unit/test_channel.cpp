#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "simofdm/channel.hpp"
#include "simofdm/error.hpp"
#include "toy.hpp"

namespace simofdm::chan {
namespace {

using meta::Side;
using testing::toy_layout;
using wave::kSpeedOfLight;

PathLossModel no_shadowing() {
  PathLossModel m;
  m.shadowing_db = 0.0;
  return m;
}

Scene one_user_scene(int scatterers) {
  Scene s;
  s.users = {{10, 0, 20}};
  s.scatter.scatterers = scatterers;
  return s;
}

TEST(PathLoss, FreeSpaceTermAtReferenceDistance) {
  EXPECT_NEAR(path_loss_db(1.0, no_shadowing(), 1), 61.40, 0.01);
}

TEST(PathLoss, SlopeOfExponent) {
  const double a = path_loss_db(1.0, no_shadowing(), 1);
  const double b = path_loss_db(2.0, no_shadowing(), 1);
  EXPECT_NEAR(b - a, 35.0 * std::log10(2.0), 1e-12);
  EXPECT_NEAR(b - a, 10.54, 0.01);
}

TEST(PathLoss, ShadowingStandardDeviation) {
  const PathLossModel model;  // delta = 9 dB
  const double base = path_loss_db(5.0, no_shadowing(), 0);
  wave::RngStream rng(99);
  double sum = 0.0;
  double sum2 = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double x = path_loss_db(5.0, model, rng) - base;
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double sd = std::sqrt((sum2 - n * mean * mean) / (n - 1));
  EXPECT_NEAR(sd, 9.0, 0.5);
}

TEST(PathLoss, DeterministicPerSeed) {
  const PathLossModel model;
  EXPECT_EQ(path_loss_db(7.0, model, 5), path_loss_db(7.0, model, 5));
  EXPECT_NE(path_loss_db(7.0, model, 5), path_loss_db(7.0, model, 6));
}

TEST(PathLoss, BelowReferenceDistanceIsDomainError) {
  EXPECT_THROW(path_loss_db(0.5, no_shadowing(), 1), DomainError);
}

TEST(SamplePaths, LosOnlyScene) {
  const PathSet p = sample_paths(one_user_scene(0), 0, 3);
  ASSERT_EQ(p.paths.size(), 1u);
  EXPECT_TRUE(p.paths[0].los);
  EXPECT_NEAR(p.paths[0].delay, std::sqrt(500.0) / kSpeedOfLight, 1e-18);
  EXPECT_NEAR(p.paths[0].delay, 74.6e-9, 0.05e-9);
}

TEST(SamplePaths, SameSeedSamePaths) {
  const Scene s = one_user_scene(20);
  const PathSet a = sample_paths(s, 0, 8);
  const PathSet b = sample_paths(s, 0, 8);
  ASSERT_EQ(a.paths.size(), b.paths.size());
  for (std::size_t k = 0; k < a.paths.size(); ++k) {
    EXPECT_EQ(a.paths[k].gain, b.paths[k].gain);
    EXPECT_EQ(a.paths[k].delay, b.paths[k].delay);
    EXPECT_EQ(a.paths[k].tx_azimuth, b.paths[k].tx_azimuth);
  }
}

TEST(SamplePaths, DomainsAndPowerSplit) {
  const Scene s = one_user_scene(100);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PathSet p = sample_paths(s, 0, seed);
    ASSERT_EQ(p.paths.size(), 101u);
    double nlos = 0.0;
    for (std::size_t k = 0; k < p.paths.size(); ++k) {
      const Path& q = p.paths[k];
      for (double e : {q.tx_elevation, q.rx_elevation}) {
        EXPECT_GE(e, 0.0);
        EXPECT_LT(e, std::numbers::pi / 2.0);
      }
      for (double a : {q.tx_azimuth, q.rx_azimuth}) {
        EXPECT_GE(a, 0.0);
        EXPECT_LT(a, wave::kTwoPi);
      }
      EXPECT_GE(q.delay, p.paths[0].delay);
      if (k > 0) nlos += std::norm(q.gain);
    }
    const double los = std::norm(p.paths[0].gain);
    EXPECT_NEAR(nlos / (los / 10.0), 1.0, 1e-12);
    EXPECT_NEAR(10.0 * std::log10(1.0 / los), p.path_loss_db, 1e-9);
  }
}

TEST(SamplePaths, LosGeometry) {
  const PathSet p = sample_paths(one_user_scene(0), 0, 1);
  const Path& los = p.paths[0];
  EXPECT_NEAR(los.tx_elevation, std::acos(20.0 / std::sqrt(500.0)), 1e-15);
  EXPECT_NEAR(los.tx_azimuth, 0.0, 1e-15);
  EXPECT_NEAR(los.rx_azimuth, std::numbers::pi, 1e-15);
}

TEST(SamplePaths, UserAtBsIsDomainError) {
  Scene s = one_user_scene(0);
  s.users[0] = s.bs;
  EXPECT_THROW(sample_paths(s, 0, 1), DomainError);
}

TEST(Steering, UnitModulusLengthAndFirstElement) {
  const auto l = toy_layout(Side::kTx, 10, 4, 3);
  const CMat a = steering_vector(l, 0.7, 2.1, 28e9);
  ASSERT_EQ(a.rows(), 100);
  for (Eigen::Index k = 0; k < a.rows(); ++k) EXPECT_NEAR(std::abs(a(k, 0)), 1.0, 1e-15);
  EXPECT_EQ(a(0, 0), wave::cdouble(1.0, 0.0));
}

TEST(Steering, MatchesKroneckerOracle) {
  meta::PanelLayout l = toy_layout(Side::kRx, 3, 1, 1);
  l.units = {3, 4};
  const double el = 0.4;
  const double az = 5.0;
  const double f = 28.03e9;
  const double kd = 2.0 * std::numbers::pi * f * l.unit_spacing / kSpeedOfLight;
  Eigen::VectorXcd ax(3);
  Eigen::VectorXcd ay(4);
  for (int m = 0; m < 3; ++m) ax(m) = std::polar(1.0, m * kd * std::sin(el) * std::sin(az));
  for (int m = 0; m < 4; ++m) ay(m) = std::polar(1.0, m * kd * std::cos(el));
  Eigen::VectorXcd kron(12);
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 4; ++k) kron(i * 4 + k) = ax(i) * ay(k);
  }
  EXPECT_LT((steering_vector(l, el, az, f) - kron).norm(), 1e-12);
}

TEST(ChannelMatrix, SinglePathIsRankOne) {
  const auto tx = toy_layout(Side::kTx, 4, 2, 1);
  const auto rx = toy_layout(Side::kRx, 3, 1, 1);
  const PathSet p = sample_paths(one_user_scene(0), 0, 2);
  const CMat g = channel_matrix(p, 28e9, tx, rx);
  ASSERT_EQ(g.rows(), 9);
  ASSERT_EQ(g.cols(), 16);
  Eigen::JacobiSVD<CMat> svd(g);
  const auto s = svd.singularValues();
  EXPECT_LT(s(1) / s(0), 1e-10);
  EXPECT_NEAR(g.norm(), std::abs(p.paths[0].gain) * std::sqrt(9.0 * 16.0), 1e-12 * g.norm());
}

TEST(ChannelMatrix, MatchesPerPathAccumulation) {
  const auto tx = toy_layout(Side::kTx, 4, 2, 1);
  const auto rx = toy_layout(Side::kRx, 3, 1, 1);
  const PathSet p = sample_paths(one_user_scene(100), 0, 4);
  const double f = 27.97e9;
  CMat ref = CMat::Zero(9, 16);
  for (const Path& q : p.paths) {
    const CMat ar = steering_vector(rx, q.rx_elevation, q.rx_azimuth, f);
    const CMat at = steering_vector(tx, q.tx_elevation, q.tx_azimuth, f);
    const wave::cdouble c = q.gain * std::exp(wave::cdouble(0.0, -2.0 * std::numbers::pi * f * q.delay));
    for (int n = 0; n < 9; ++n) {
      for (int m = 0; m < 16; ++m) ref(n, m) += c * ar(n, 0) * std::conj(at(m, 0));
    }
  }
  EXPECT_LT(wave::relative_frobenius_error(channel_matrix(p, f, tx, rx), ref), 1e-12);
}

TEST(ChannelMatrix, SinglePathNormIsFrequencyIndependent) {
  const auto tx = toy_layout(Side::kTx, 4, 2, 1);
  const auto rx = toy_layout(Side::kRx, 3, 1, 1);
  const PathSet p = sample_paths(one_user_scene(0), 0, 2);
  const CMat a = channel_matrix(p, 27.96e9, tx, rx);
  const CMat b = channel_matrix(p, 28.04e9, tx, rx);
  EXPECT_NEAR(a.norm(), b.norm(), 1e-12 * a.norm());
  EXPECT_GT((a - b).norm(), 0.0);
}

TEST(DpChannel, XpdFromEpsilon) {
  EXPECT_DOUBLE_EQ(xpd_from_epsilon(0.2), 4.0);
  EXPECT_DOUBLE_EQ(xpd_from_epsilon(0.5), 1.0);
  EXPECT_THROW(xpd_from_epsilon(0.0), DomainError);
  EXPECT_THROW(xpd_from_epsilon(1.2), DomainError);
  EXPECT_THROW(xpd_from_epsilon(-0.1), DomainError);
}

TEST(DpChannel, CrossBlockScale) {
  const CMat g = CMat::Random(5, 6);
  const CMat d = dp_channel(g, 0.2, 17);
  ASSERT_EQ(d.rows(), 10);
  ASSERT_EQ(d.cols(), 12);
  EXPECT_NEAR(d.block(0, 6, 5, 6).norm() / d.block(0, 0, 5, 6).norm(), 0.5, 1e-15);
  EXPECT_NEAR(d.block(5, 0, 5, 6).norm() / d.block(5, 6, 5, 6).norm(), 0.5, 1e-15);
  const CMat e = dp_channel(g, 0.5, 17);
  const double n00 = e.block(0, 0, 5, 6).norm();
  for (auto [r, c] : {std::pair{0, 6}, std::pair{5, 0}, std::pair{5, 6}}) EXPECT_NEAR(e.block(r, c, 5, 6).norm(), n00, 1e-13);
}

TEST(DpChannel, EpsilonOneIsRejected) {
  EXPECT_THROW(dp_channel(CMat::Ones(2, 2), 1.0, 1), DomainError);
}

TEST(DpChannel, EmpiricalXpdOverRealizations) {
  ChannelSetup setup;
  setup.tx = toy_layout(Side::kTx, 2, 1, 1);
  setup.rx = toy_layout(Side::kRx, 2, 1, 1);
  setup.polarization = meta::Polarization::kDual;
  setup.epsilon = 0.2;
  setup.frequencies = {28e9};
  setup.scene = one_user_scene(3);
  ChannelProvider provider = ChannelProvider::statistical(setup, 5);
  double co = 0.0;
  double cross = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const ChannelRealization r = provider.provide();
    const CMat& g = r.at(0, 0);
    co += g.block(0, 0, 4, 4).squaredNorm();
    cross += g.block(4, 0, 4, 4).squaredNorm();
  }
  EXPECT_NEAR(co / cross, 4.0, 0.2);
}

ChannelSetup small_setup() {
  ChannelSetup setup;
  setup.tx = toy_layout(Side::kTx, 3, 2, 1);
  setup.rx = toy_layout(Side::kRx, 2, 1, 1);
  setup.frequencies = meta::subcarrier_frequencies(28e9, 100e6, 3);
  setup.scene = one_user_scene(10);
  setup.scene.users.push_back({0, 0, 30});
  return setup;
}

TEST(Provider, InstantaneousReturnsSameMatrices) {
  ChannelProvider stat = ChannelProvider::statistical(small_setup(), 11);
  ChannelProvider inst = ChannelProvider::instantaneous(stat.provide());
  const ChannelRealization a = inst.provide();
  const ChannelRealization b = inst.provide();
  for (int j = 0; j < 2; ++j) {
    for (int i = 0; i < 3; ++i) EXPECT_EQ(a.at(j, i), b.at(j, i));
  }
}

TEST(Provider, StatisticalDrawsDiffer) {
  ChannelProvider p = ChannelProvider::statistical(small_setup(), 11);
  const ChannelRealization a = p.provide();
  const ChannelRealization b = p.provide();
  EXPECT_GT((a.at(0, 0) - b.at(0, 0)).norm(), 0.0);
  EXPECT_EQ(p.requests(), 2u);
}

TEST(Provider, RealizationKIsReproducible) {
  ChannelProvider p = ChannelProvider::statistical(small_setup(), 12);
  std::vector<ChannelRealization> seen;
  for (int k = 0; k < 4; ++k) seen.push_back(p.provide());
  ChannelProvider rerun = ChannelProvider::statistical(small_setup(), 12);
  for (std::uint64_t k = 0; k < 4; ++k) {
    const ChannelRealization r = rerun.realization(k);
    for (int j = 0; j < 2; ++j) {
      for (int i = 0; i < 3; ++i) EXPECT_EQ(r.at(j, i), seen[k].at(j, i));
    }
  }
}

TEST(Provider, SubcarriersShareLargeScaleState) {
  ChannelSetup setup = small_setup();
  setup.polarization = meta::Polarization::kDual;
  const ChannelRealization r = ChannelProvider::statistical(setup, 13).provide();
  ASSERT_TRUE(r.users[0].polarization_phases.has_value());
  ASSERT_EQ(r.at(0, 0).rows(), 8);
  ASSERT_EQ(r.at(0, 0).cols(), 18);
}

TEST(Export, RoundTripIsExact) {
  ChannelSetup setup = small_setup();
  setup.polarization = meta::Polarization::kDual;
  const ChannelRealization r = ChannelProvider::statistical(setup, 14).provide();
  const ChannelRealization back = import_realization(export_realization(r));
  ASSERT_EQ(back.user_count(), 2);
  EXPECT_EQ(back.frequencies, r.frequencies);
  EXPECT_EQ(back.seed, r.seed);
  for (int j = 0; j < 2; ++j) {
    EXPECT_EQ(back.users[static_cast<std::size_t>(j)].polarization_phases->psi,
              r.users[static_cast<std::size_t>(j)].polarization_phases->psi);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(back.at(j, i), r.at(j, i));
  }
}

TEST(Export, LosChannelRebuiltFromStoredPaths) {
  ChannelSetup setup = small_setup();
  setup.scene.scatter.scatterers = 0;
  const ChannelRealization r = ChannelProvider::statistical(setup, 15).provide();
  const ChannelRealization back = import_realization(export_realization(r));
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(channel_matrix(back.users[0].paths, back.frequencies[static_cast<std::size_t>(i)], setup.tx, setup.rx),
              r.at(0, i));
  }
}

TEST(Export, MalformedTextIsIoError) {
  EXPECT_THROW(import_realization("{not json"), IoError);
  EXPECT_THROW(import_realization(R"({"format":"simofdm-channel","version":99})"), IoError);
  EXPECT_THROW(import_realization(R"({"format":"other","version":1})"), IoError);
}

}  // namespace
}  // namespace simofdm::chan
