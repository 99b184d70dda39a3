#include <cmath>
#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "simofdm/deploy.hpp"
#include "simofdm/error.hpp"
#include "toy.hpp"

namespace simofdm::deploy {
namespace {

using emnn::EmnnConfig;
using emnn::EmnnModel;
using testing::toy_config;
using wave::RngStream;

constexpr double kPi = std::numbers::pi;

EmnnConfig three_users() {
  EmnnConfig c = toy_config({.bits = {3, 2, 2}, .subcarriers = 2, .units = 3, .tx_layers = 2, .rx_layers = 2});
  c.bs_output_relu = false;
  return c;
}

// Model with committed batch-norm statistics, so eval forward depends on them.
EmnnModel trained_like(const EmnnConfig& c, std::uint64_t seed) {
  EmnnModel m = emnn::build_model(c, seed);
  const auto ch = chan::realize(testing::toy_channel_setup(c, 1), RngStream(seed + 1));
  auto tr = emnn::trace_forward(m, testing::random_bits(8, c.bits(), seed), wave::RMat::Constant(8, 1, 1.0), ch,
                                {.training = true, .noise_scale = 1.0, .noise_seed = 3});
  emnn::evaluate(*tr);
  emnn::commit_batch_norm(m, *tr);
  return m;
}

std::vector<wave::RMat> eval_soft(const EmnnModel& m, std::uint64_t seed) {
  const auto ch = chan::realize(testing::toy_channel_setup(m.config, 1), RngStream(seed));
  return emnn::forward(m, testing::random_bits(16, m.config.bits(), seed), wave::RMat::Constant(16, 1, 1.0), ch,
                       {.training = false, .noise_scale = 1.0, .noise_seed = 5})
      .soft;
}

TEST(Quantize, OneBitGivesZeroOrPi) {
  RngStream rng(3);
  std::vector<double> p;
  for (int k = 0; k < 200; ++k) p.push_back(rng.uniform(-10.0, 10.0));
  for (double v : quantize_phases(p, 1).phases) EXPECT_TRUE(v == 0.0 || v == kPi) << v;
}

TEST(Quantize, EightBitErrorBound) {
  RngStream rng(4);
  std::vector<double> p;
  for (int k = 0; k < 5000; ++k) p.push_back(rng.uniform(0.0, wave::kTwoPi));
  const QuantizedPhases q = quantize_phases(p, 8);
  double worst = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double d = std::abs(std::remainder(q.phases[k] - p[k], wave::kTwoPi));
    worst = std::max(worst, d);
    EXPECT_GE(q.phases[k], 0.0);
    EXPECT_LT(q.phases[k], wave::kTwoPi);
    EXPECT_EQ(q.phases[k], q.levels[k] * q.quantization.step());
  }
  EXPECT_LE(worst, kPi / 256.0 + 1e-15);
}

TEST(Quantize, Idempotent) {
  RngStream rng(5);
  std::vector<double> p;
  for (int k = 0; k < 500; ++k) p.push_back(rng.uniform(0.0, wave::kTwoPi));
  for (int b : {1, 2, 4, 8}) {
    const QuantizedPhases once = quantize_phases(p, b);
    const QuantizedPhases twice = quantize_phases(once.phases, b);
    EXPECT_EQ(once.phases, twice.phases) << b;
    EXPECT_EQ(once.levels, twice.levels) << b;
  }
}

TEST(Quantize, NearTwoPiWrapsToZero) {
  const std::vector<double> p{wave::kTwoPi - 1e-9};
  EXPECT_EQ(quantize_phases(p, 4).levels[0], 0);
}

TEST(Quantize, Codebook) {
  const Quantization q{2};
  EXPECT_EQ(q.levels(), 4);
  const auto c = q.codebook();
  ASSERT_EQ(c.size(), 4u);
  EXPECT_DOUBLE_EQ(c[3], 1.5 * kPi);
  EXPECT_THROW(quantize_phases(std::vector<double>{1.0}, 0), ConfigError);
}

TEST(Partition, OneBundlePerDevice) {
  const EmnnModel m = emnn::build_model(three_users(), 1);
  const auto bundles = partition(m);
  ASSERT_EQ(bundles.size(), 4u);
  EXPECT_EQ(bundles[0].name(), "bs");
  EXPECT_EQ(bundles[3].name(), "ue2");
}

TEST(Partition, DisjointAndCovering) {
  const EmnnModel m = emnn::build_model(three_users(), 1);
  std::set<std::string> seen;
  for (const auto& b : partition(m)) {
    for (const auto& [name, v] : b.parameters) EXPECT_TRUE(seen.insert(name).second) << name;
  }
  EXPECT_EQ(seen.size(), m.params.size());
}

TEST(Partition, UeBundleHoldsOnlyItsOwnKeys) {
  const EmnnModel m = trained_like(three_users(), 2);
  const auto bundles = partition(m);
  for (int j = 0; j < 3; ++j) {
    const DeployBundle& b = bundles[static_cast<std::size_t>(j) + 1];
    EXPECT_FALSE(b.parameters.empty());
    EXPECT_FALSE(b.batch_norm.empty());
    for (const auto& [name, v] : b.parameters) {
      const std::string g = emnn::parameter_group(name);
      EXPECT_TRUE(g == "ue" + std::to_string(j) || g == "rx" + std::to_string(j)) << name;
    }
    for (const auto& [key, s] : b.batch_norm) EXPECT_EQ(key.rfind("ue" + std::to_string(j) + ".", 0), 0u) << key;
  }
  for (const auto& [name, v] : bundles[0].parameters) {
    const std::string g = emnn::parameter_group(name);
    EXPECT_TRUE(g == "bs" || g == "tx") << name;
  }
}

TEST(Partition, MergeReproducesForwardBitExactly) {
  const EmnnModel m = trained_like(three_users(), 3);
  EmnnModel skeleton = emnn::build_model(three_users(), 99);
  std::vector<DeployBundle> parsed;
  for (const auto& b : partition(m)) parsed.push_back(DeployBundle::parse(b.serialize()));
  const EmnnModel back = merge(skeleton, parsed);
  EXPECT_TRUE(back.params == m.params);
  const auto a = eval_soft(m, 8);
  const auto b = eval_soft(back, 8);
  for (std::size_t j = 0; j < a.size(); ++j) EXPECT_TRUE(a[j] == b[j]) << j;
}

TEST(Partition, QuantizedBundlesCarryLevels) {
  const EmnnModel m = emnn::build_model(three_users(), 4);
  const auto bundles = partition(m, {2});
  const double step = kPi / 2.0;
  for (const auto& [name, v] : bundles[0].parameters) {
    if (!m.params.at(name).phase) {
      EXPECT_TRUE(v == m.params.at(name).value) << name;
      continue;
    }
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      const double level = v.data()[k] / step;
      EXPECT_EQ(level, std::round(level)) << name;
    }
  }
}

TEST(Partition, MergeRejectsGapsAndDuplicates) {
  const EmnnModel m = emnn::build_model(three_users(), 1);
  auto bundles = partition(m);
  auto missing = bundles;
  missing.pop_back();
  EXPECT_THROW(merge(m, missing), ConfigError);
  auto dup = bundles;
  dup.push_back(bundles[1]);
  EXPECT_THROW(merge(m, dup), ConfigError);
  EmnnConfig other = three_users();
  other.user_bits = {3, 2, 1};
  EXPECT_THROW(merge(emnn::build_model(other, 1), bundles), ConfigError);
}

TEST(Bundle, HashDetectsEveryTestedBitFlip) {
  const EmnnModel m = emnn::build_model(toy_config({.bits = {2, 1}}), 1);
  const std::string text = partition(m)[1].serialize();
  const std::size_t start = text.find('\n', text.find('\n') + 1) + 1;
  RngStream rng(10);
  for (int trial = 0; trial < 300; ++trial) {
    std::string bad = text;
    const std::size_t pos = start + static_cast<std::size_t>(rng.uniform(0.0, 1.0) * (text.size() - 1 - start));
    bad[pos] = static_cast<char>(bad[pos] ^ (1 << (trial % 7)));
    if (bad == text) continue;
    EXPECT_THROW(DeployBundle::parse(bad), IoError) << "offset " << pos;
  }
}

TEST(Bundle, RejectsBadHeader) {
  EXPECT_THROW(DeployBundle::parse("nope\n"), IoError);
  EXPECT_THROW(DeployBundle::parse("simofdm-bundle 1\nsha256 00\n{}\n"), IoError);
}

TEST(Hash, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Hash, ConfigHashTracksConfig) {
  EmnnConfig a = toy_config({.bits = {2}});
  EmnnConfig b = a;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.rx.layer_count = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
}

meta::MetasurfaceStack full_stack(meta::Polarization pol) {
  meta::MetasurfaceStack s;
  s.layout = testing::toy_layout(meta::Side::kTx, 10, 4, 3);
  s.polarization = pol;
  const int n = (pol == meta::Polarization::kDual ? 2 : 1) * 100;
  RngStream rng(6);
  for (int l = 0; l < 3; ++l) {
    std::vector<double> p;
    for (int k = 0; k < n; ++k) p.push_back(rng.uniform(0.0, wave::kTwoPi));
    s.phases.push_back(p);
  }
  return s;
}

std::vector<std::string> records(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  bool body = false;
  for (std::string line; std::getline(in, line);) {
    if (body) out.push_back(line);
    if (line == "layer pol ix iy level phase") body = true;
  }
  return out;
}

TEST(PhaseMap, ThreeLayersOfTenByTenGive300Records) {
  const std::string text = export_phase_map(full_stack(meta::Polarization::kSingle));
  EXPECT_EQ(records(text).size(), 300u);
  EXPECT_NE(text.find("records 300\n"), std::string::npos);
}

TEST(PhaseMap, RoundTripFloat) {
  for (auto pol : {meta::Polarization::kSingle, meta::Polarization::kDual}) {
    const meta::MetasurfaceStack s = full_stack(pol);
    const meta::MetasurfaceStack back = import_phase_map(export_phase_map(s));
    EXPECT_EQ(back.layout, s.layout);
    EXPECT_EQ(back.polarization, s.polarization);
    EXPECT_EQ(back.phases, s.phases);
  }
}

TEST(PhaseMap, RoundTripQuantized) {
  const meta::MetasurfaceStack s = full_stack(meta::Polarization::kSingle);
  const std::string text = export_phase_map(s, {4});
  const meta::MetasurfaceStack back = import_phase_map(text);
  for (int l = 0; l < 3; ++l) {
    const auto q = quantize_phases(s.layer_phases(l), 4);
    EXPECT_EQ(back.phases[static_cast<std::size_t>(l)], q.phases);
  }
  EXPECT_EQ(export_phase_map(back, {4}), text);
}

TEST(PhaseMap, LayerMajorRowMajorOrder) {
  const auto rec = records(export_phase_map(full_stack(meta::Polarization::kSingle)));
  std::vector<std::tuple<int, int, int>> keys;
  for (const auto& r : rec) {
    std::istringstream ls(r);
    int l = 0;
    int p = 0;
    int x = 0;
    int y = 0;
    ls >> l >> p >> x >> y;
    keys.emplace_back(l, x, y);
  }
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_EQ(keys.front(), std::make_tuple(1, 0, 0));
  EXPECT_EQ(keys[1], std::make_tuple(1, 0, 1));
  EXPECT_EQ(keys.back(), std::make_tuple(3, 9, 9));
}

TEST(PhaseMap, MalformedInputs) {
  const std::string good = export_phase_map(full_stack(meta::Polarization::kSingle));
  EXPECT_THROW(import_phase_map("simofdm-phase-map 2\n"), IoError);
  EXPECT_THROW(import_phase_map(good.substr(0, good.size() / 2)), IoError);
  std::string swapped = good;
  swapped.replace(swapped.find("\n1 0 0 0"), 8, "\n1 0 0 1");
  EXPECT_THROW(import_phase_map(swapped), IoError);
}

TEST(Calibration, AnalyticKeepsForward) {
  EmnnModel m = trained_like(three_users(), 5);
  const auto before = eval_soft(m, 6);
  apply_calibration(m, import_calibration(export_calibration(analytic_calibration(m))));
  const auto after = eval_soft(m, 6);
  for (std::size_t j = 0; j < before.size(); ++j) EXPECT_LE((before[j] - after[j]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Calibration, HalfScaleQuartersPowerPerGap) {
  EmnnConfig c = toy_config({.bits = {2}, .subcarriers = 2, .units = 3});
  const EmnnModel m = emnn::build_model(c, 7);
  const auto ch = chan::realize(testing::toy_channel_setup(c, 2), RngStream(8));
  ASSERT_EQ(m.rx_prop.gap_count(), 1);
  CalibrationSet rx_only;
  CalibrationSet both;
  for (CalibrationEntry e : analytic_calibration(m).entries) {
    e.matrix *= 0.5;
    if (e.side == meta::Side::kRx) rx_only.entries.push_back(e);
    both.entries.push_back(e);
  }
  EmnnModel a = m;
  EmnnModel b = m;
  apply_calibration(a, rx_only);
  apply_calibration(b, both);
  for (int i = 0; i < 2; ++i) {
    const double p0 = emnn::wave_domain_response(m, ch, i, 0).squaredNorm();
    EXPECT_NEAR(emnn::wave_domain_response(a, ch, i, 0).squaredNorm() / p0, 0.25, 1e-12);
    EXPECT_NEAR(emnn::wave_domain_response(b, ch, i, 0).squaredNorm() / p0, 0.0625, 1e-12);
  }
}

TEST(Calibration, ShapeMismatchNamesShapesAndLeavesModel) {
  EmnnModel m = emnn::build_model(three_users(), 9);
  const EmnnModel before = m;
  CalibrationSet set = analytic_calibration(m);
  set.entries.back().matrix = wave::CMat::Zero(2, 3);
  set.entries.front().matrix *= 2.0;
  try {
    apply_calibration(m, set);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("found 2x3"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(m.tx_prop.at(0, 0) == before.tx_prop.at(0, 0));
  EXPECT_TRUE(m.tx_gaps == before.tx_gaps);
}

TEST(Calibration, MalformedFileRejected) {
  EXPECT_THROW(import_calibration("{"), IoError);
  EXPECT_THROW(import_calibration(R"({"format":"simofdm-calibration","version":1,"provenance":{},)"
                                  R"("entries":[{"side":"tx","subcarrier":0,"gap":0,"rows":2,"cols":2,)"
                                  R"("re":[1,2,3],"im":[0,0,0]}]})"),
               IoError);
  EXPECT_THROW(import_calibration(R"({"format":"other","version":1,"provenance":{},"entries":[]})"), IoError);
}

TEST(Calibration, NonFiniteRejected) {
  EmnnModel m = emnn::build_model(three_users(), 9);
  CalibrationSet set = analytic_calibration(m);
  set.entries[0].matrix(0, 0) = wave::cdouble(std::nan(""), 0.0);
  EXPECT_THROW(apply_calibration(m, set), DomainError);
}

TEST(Files, MissingPathIsReported) {
  try {
    read_text_file("/nonexistent/dir/file.txt");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/file.txt"), std::string::npos);
  }
}

}  // namespace
}  // namespace simofdm::deploy
