#include <cmath>
#include <functional>
#include <numbers>

#include <gtest/gtest.h>

#include "simofdm/error.hpp"
#include "simofdm/wavemath/graph.hpp"
#include "simofdm/wavemath/init.hpp"
#include "simofdm/wavemath/linalg.hpp"
#include "simofdm/wavemath/optimizer.hpp"
#include "simofdm/wavemath/rng.hpp"

namespace simofdm::wave {
namespace {

CMat random_cmat(int r, int c, std::uint64_t seed) {
  RngStream rng(seed);
  CMat m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int k = 0; k < c; ++k) m(i, k) = cdouble(rng.normal(), rng.normal());
  }
  return m;
}

RMat random_rmat(int r, int c, std::uint64_t seed, double scale = 1.0) {
  RngStream rng(seed);
  RMat m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int k = 0; k < c; ++k) m(i, k) = scale * rng.normal();
  }
  return m;
}

TEST(Cmatmul, IdentityLeavesMatrixUnchanged) {
  const CMat a = random_cmat(3, 4, 1);
  EXPECT_EQ(cmatmul(CMat::Identity(3, 3), a), a);
}

TEST(Cmatmul, ImaginaryUnitSquaredIsMinusOne) {
  CMat j(1, 1);
  j(0, 0) = cdouble(0.0, 1.0);
  const CMat p = cmatmul(j, j);
  EXPECT_DOUBLE_EQ(p(0, 0).real(), -1.0);
  EXPECT_DOUBLE_EQ(p(0, 0).imag(), 0.0);
}

TEST(Cmatmul, MatchesTripleLoop) {
  const CMat a = random_cmat(4, 5, 2);
  const CMat b = random_cmat(5, 3, 3);
  CMat ref = CMat::Zero(4, 3);
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 3; ++k) {
      for (int m = 0; m < 5; ++m) ref(i, k) += a(i, m) * b(m, k);
    }
  }
  EXPECT_LT(relative_frobenius_error(cmatmul(a, b), ref), 1e-12);
}

TEST(Cmatmul, DimensionMismatchIsConfigError) {
  EXPECT_THROW(cmatmul(CMat::Zero(2, 3), CMat::Zero(2, 3)), ConfigError);
}

TEST(Cmatmul, AssociativeOnRandomTriples) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const CMat a = random_cmat(3 + s % 4, 5, 10 * s);
    const CMat b = random_cmat(5, 4 + s % 3, 10 * s + 1);
    const CMat c = random_cmat(4 + s % 3, 6, 10 * s + 2);
    EXPECT_LT(relative_frobenius_error(cmatmul(cmatmul(a, b), c), cmatmul(a, cmatmul(b, c))), 1e-10);
  }
}

TEST(Units, DbmConversions) {
  EXPECT_DOUBLE_EQ(dbm_to_watts(30.0), 1.0);
  EXPECT_NEAR(dbm_to_watts(-110.0), 1e-14, 1e-28);
  EXPECT_NEAR(watts_to_dbm(1e-3), 0.0, 1e-12);
}

TEST(Rng, SameSeedSameStream) {
  RngStream a(42);
  RngStream b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(Rng, NamedChildrenAreIndependentOfDrawOrder) {
  RngStream root(7);
  RngStream before = root.child("noise");
  for (int i = 0; i < 10; ++i) root();
  RngStream after = root.child("noise");
  EXPECT_EQ(before(), after());
  EXPECT_NE(root.child("noise").key(), root.child("bits").key());
  EXPECT_NE(root.child(0).key(), root.child(1).key());
}

TEST(Rng, UniformStaysInRange) {
  RngStream r(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

// ---------------------------------------------------------------------------
// backward

TEST(Backward, UnitModulusLossHasZeroPhaseGradient) {
  ParameterSet ps;
  ps.add("theta", RMat::Constant(5, 1, 0.3) + random_rmat(5, 1, 4), true);
  Graph g;
  NodeId y = g.phase_left(g.param(ps.at("theta")), g.constant(CMat(CMat::Ones(5, 1))));
  NodeId loss = g.sum_abs2(y);
  g.forward();
  const GradientMap grads = g.backward(loss);
  ASSERT_EQ(grads.count("theta"), 1u);
  EXPECT_EQ(grads.at("theta").cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, RealPartAtHalfPiHasGradientMinusOne) {
  ParameterSet ps;
  ps.add("theta", RMat::Constant(1, 1, std::numbers::pi / 2.0), true);
  Graph g;
  NodeId y = g.phase_left(g.param(ps.at("theta")), g.constant(CMat(CMat::Ones(1, 1))));
  NodeId loss = g.sum_real_part(y);
  g.forward();
  EXPECT_NEAR(g.backward(loss).at("theta")(0, 0), -1.0, 1e-15);
}

TEST(Backward, BeforeForwardIsStateError) {
  ParameterSet ps;
  ps.add("theta", RMat::Zero(1, 1), true);
  Graph g;
  NodeId loss = g.sum_real_part(g.phase_left(g.param(ps.at("theta")), g.constant(CMat(CMat::Ones(1, 1)))));
  EXPECT_THROW(g.backward(loss), StateError);
}

TEST(Backward, FixedLeavesAndConstantsGetNoEntry) {
  ParameterSet ps;
  ps.add("a", RMat::Ones(1, 1), true);
  ps.add("b", RMat::Ones(1, 1), true).trainable = false;
  Graph g;
  NodeId x = g.phase_left(g.param(ps.at("a")), g.constant(CMat(CMat::Ones(1, 1))));
  x = g.phase_left(g.param(ps.at("b")), x);
  x = g.matmul(g.constant(CMat(CMat::Constant(1, 1, cdouble(0.5, 0.25)))), x);
  const NodeId loss = g.sum_real_part(x);
  g.forward();
  const GradientMap grads = g.backward(loss);
  EXPECT_EQ(grads.size(), 1u);
  EXPECT_EQ(grads.count("a"), 1u);
}

TEST(Graph, ShapeMismatchIsConfigError) {
  Graph g;
  NodeId a = g.constant(CMat(CMat::Zero(2, 3)));
  NodeId b = g.constant(CMat(CMat::Zero(2, 3)));
  EXPECT_THROW(g.matmul(a, b), ConfigError);
  EXPECT_THROW(g.add(a, g.constant(CMat(CMat::Zero(3, 2)))), ConfigError);
}

// Central-difference oracle over every scalar of every trainable parameter.
double max_fd_error(ParameterSet& ps, Graph& g, NodeId loss, double h = 1e-5) {
  g.forward();
  const GradientMap grads = g.backward(loss);
  double worst = 0.0;
  for (auto& [name, p] : ps) {
    if (!p.trainable) continue;
    const RMat& an = grads.at(name);
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      const double saved = p.value(k);
      p.value(k) = saved + h;
      g.forward();
      const double up = g.scalar(loss);
      p.value(k) = saved - h;
      g.forward();
      const double down = g.scalar(loss);
      p.value(k) = saved;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(fd - an(k)) / std::max({std::abs(fd), std::abs(an(k)), 1e-6});
      worst = std::max(worst, err);
    }
  }
  g.forward();
  return worst;
}

TEST(Backward, EveryOpMatchesCentralDifferences) {
  // A small network touching every node kind.
  ParameterSet ps;
  RngStream init(11);
  const int B = 6;
  ps.add("w1", xavier_init(3, 4, init));
  ps.add("b1", bias_init(3, 4, init));
  ps.add("theta", phase_init(2, init), true);
  ps.add("phi", phase_init(2, init), true);
  ps.add("gamma", RMat::Constant(1, 8, 1.1));
  ps.add("beta", RMat::Constant(1, 8, 0.05));
  ps.add("w2", xavier_init(8, 3, init));
  ps.add("b2", bias_init(8, 3, init));
  const RMat input = random_rmat(B, 3, 12);
  RMat targets = RMat::Zero(B, 3);
  for (int i = 0; i < B; ++i) targets(i, i % 3) = 1.0;
  RMat powers(B, 2);
  for (int i = 0; i < B; ++i) {
    powers(i, 0) = 0.5 + 0.1 * i;
    powers(i, 1) = 1.5 - 0.1 * i;
  }
  const CMat v = random_cmat(2, 1, 13);
  const CMat u = random_cmat(2, 2, 14);

  Graph g;
  auto P = [&](const char* n) { return g.param(ps.at(n)); };
  NodeId x = g.constant(input);
  NodeId h = g.sigmoid(g.affine(x, P("w1"), P("b1")));
  NodeId s = g.power_scale(h, powers);
  NodeId c0 = g.pack(s, 0, 1);
  NodeId c1 = g.pack(s, 2, 1);
  NodeId t = g.phase_left(P("theta"), g.constant_ref(v));       // 2x1
  NodeId y0 = g.matmul(t, c0);                                   // 2xB
  NodeId y1 = g.matmul(g.phase_right(g.constant_ref(u), P("phi")), g.matmul(t, c1));
  NodeId noisy = g.add(y1, g.constant(CMat(random_cmat(2, B, 15) * 0.1)));
  NodeId r = g.concat({y0, noisy});                              // B x 8
  NodeId bn = g.batch_norm(r, P("gamma"), P("beta"), nullptr, true, 1e-5);
  NodeId o = g.sigmoid(g.relu(g.affine(bn, P("w2"), P("b2"))));
  NodeId loss = g.add(g.bce(o, targets, 1e-12), g.sum_abs2(g.matmul(g.constant(CMat(CMat::Ones(1, 2) * 0.01)), y0)));
  EXPECT_LT(max_fd_error(ps, g, loss), 1e-4);
}

TEST(Backward, EvalBatchNormMatchesCentralDifferences) {
  ParameterSet ps;
  RngStream init(21);
  ps.add("gamma", RMat::Constant(1, 3, 0.7));
  ps.add("beta", RMat::Constant(1, 3, -0.2));
  ps.add("w", xavier_init(3, 2, init));
  ps.add("b", bias_init(3, 2, init));
  BatchNormStats stats{RMat::Constant(1, 3, 0.1), RMat::Constant(1, 3, 2.0), true};
  Graph g;
  NodeId bn = g.batch_norm(g.constant(random_rmat(4, 3, 22)), g.param(ps.at("gamma")), g.param(ps.at("beta")),
                           &stats, false, 1e-5);
  NodeId loss = g.bce(g.sigmoid(g.affine(bn, g.param(ps.at("w")), g.param(ps.at("b")))), RMat::Ones(4, 2), 1e-12);
  EXPECT_LT(max_fd_error(ps, g, loss), 1e-4);
}

TEST(Bce, ExactMatchGivesZeroAndHalfGivesLn2PerBit) {
  Graph g;
  RMat t(2, 3);
  t << 1, 0, 1, 0, 0, 1;
  NodeId exact = g.bce(g.constant(RMat(t)), t, 1e-12);
  NodeId half = g.bce(g.constant(RMat(RMat::Constant(2, 56, 0.5))), RMat::Zero(2, 56), 1e-12);
  g.forward();
  EXPECT_EQ(g.scalar(exact), 0.0);
  EXPECT_NEAR(g.scalar(half), 56.0 * std::log(2.0), 1e-12);
}

TEST(PowerScale, AllZeroSampleIsDegenerate) {
  Graph g;
  RMat x = RMat::Ones(3, 4);
  x.row(1).setZero();
  g.power_scale(g.constant(x), RMat::Ones(3, 1));
  try {
    g.forward();
    FAIL() << "expected DegenerateInputError";
  } catch (const DegenerateInputError& e) {
    EXPECT_EQ(e.sample(), 1u);
  }
  EXPECT_FALSE(g.forwarded());
}

// ---------------------------------------------------------------------------
// optimizer

TEST(Optimizer, SgdStepIsLiteralUpdate) {
  ParameterSet ps;
  ps.add("w", RMat::Constant(1, 1, 1.0));
  OptimizerState opt({.kind = OptimizerKind::kSgd, .learning_rate = 0.1});
  opt.step(ps, {{"w", RMat::Constant(1, 1, 2.0)}});
  EXPECT_DOUBLE_EQ(ps.at("w").value(0, 0), 0.8);
}

TEST(Optimizer, SgdMatchesHandUpdateOnThreeParameters) {
  ParameterSet ps;
  ps.add("a", RMat::Constant(1, 1, 0.3));
  ps.add("b", RMat::Constant(1, 1, -1.2));
  ps.add("theta", RMat::Constant(1, 1, 1.0), true);
  OptimizerState opt({.kind = OptimizerKind::kSgd, .learning_rate = 0.05});
  opt.step(ps, {{"a", RMat::Constant(1, 1, 0.7)}, {"b", RMat::Constant(1, 1, -0.4)},
                {"theta", RMat::Constant(1, 1, 3.0)}});
  EXPECT_NEAR(ps.at("a").value(0, 0), 0.3 - 0.05 * 0.7, 1e-12);
  EXPECT_NEAR(ps.at("b").value(0, 0), -1.2 + 0.05 * 0.4, 1e-12);
  EXPECT_NEAR(ps.at("theta").value(0, 0), 1.0 - 0.05 * 3.0, 1e-12);
}

TEST(Optimizer, ZeroGradientLeavesParametersUnchanged) {
  for (OptimizerKind kind : {OptimizerKind::kSgd, OptimizerKind::kAdamW}) {
    ParameterSet ps;
    ps.add("w", random_rmat(3, 2, 5));
    const RMat before = ps.at("w").value;
    OptimizerState opt({.kind = kind, .weight_decay = 0.0});
    for (int i = 0; i < 3; ++i) opt.step(ps, {{"w", RMat::Zero(3, 2)}});
    EXPECT_EQ(ps.at("w").value, before);
  }
}

TEST(Optimizer, PhaseWrapsIntoPrincipalRange) {
  ParameterSet ps;
  ps.add("theta", RMat::Constant(1, 1, 6.2), true);
  OptimizerState opt({.kind = OptimizerKind::kSgd, .learning_rate = 0.1});
  opt.step(ps, {{"theta", RMat::Constant(1, 1, -2.0)}});
  const double t = ps.at("theta").value(0, 0);
  EXPECT_NEAR(t, 0.117, 1e-3);
  EXPECT_NEAR(t, 6.4 - 2.0 * std::numbers::pi, 1e-12);
}

TEST(Optimizer, AdamWFirstStepMatchesHandComputation) {
  ParameterSet ps;
  ps.add("w", RMat::Constant(1, 1, 0.5));
  ps.add("theta", RMat::Constant(1, 1, 0.5), true);
  OptimizerState opt(OptimizerSettings{});
  const double g = 0.3;
  opt.step(ps, {{"w", RMat::Constant(1, 1, g)}, {"theta", RMat::Constant(1, 1, g)}});
  const double lr = 0.005;
  const double step = lr * g / (std::abs(g) + 1e-8);
  EXPECT_NEAR(ps.at("w").value(0, 0), 0.5 - lr * 0.01 * 0.5 - step, 1e-15);
  EXPECT_NEAR(ps.at("theta").value(0, 0), 0.5 - step, 1e-15);
}

TEST(Optimizer, NonFiniteGradientAbortsWithoutUpdating) {
  ParameterSet ps;
  ps.add("a", RMat::Ones(1, 1));
  ps.add("b", RMat::Ones(1, 1));
  OptimizerState opt({.kind = OptimizerKind::kSgd, .learning_rate = 0.1});
  EXPECT_THROW(opt.step(ps, {{"a", RMat::Ones(1, 1)}, {"b", RMat::Constant(1, 1, std::nan(""))}}), NumericalError);
  EXPECT_EQ(ps.at("a").value(0, 0), 1.0);
}

TEST(Optimizer, GradientShapeMismatchIsConfigError) {
  ParameterSet ps;
  ps.add("a", RMat::Ones(2, 1));
  OptimizerState opt(OptimizerSettings{});
  EXPECT_THROW(opt.step(ps, {{"a", RMat::Ones(1, 2)}}), ConfigError);
}

TEST(Optimizer, LearningRateDecay) {
  OptimizerState opt(OptimizerSettings{});
  opt.decay_learning_rate();
  EXPECT_NEAR(opt.learning_rate(), 0.005 / 1.05, 1e-18);
  EXPECT_THROW(OptimizerState({.decay_factor = 1.5}), ConfigError);
}

TEST(Optimizer, UnitModulusSurvivesManySteps) {
  ParameterSet ps;
  RngStream r(9);
  ps.add("theta", phase_init(50, r), true);
  OptimizerState opt({.kind = OptimizerKind::kSgd, .learning_rate = 3.0});
  for (int i = 0; i < 100; ++i) {
    opt.step(ps, {{"theta", random_rmat(50, 1, 100 + static_cast<std::uint64_t>(i), 5.0)}});
    for (Eigen::Index k = 0; k < 50; ++k) {
      const double t = ps.at("theta").value(k);
      ASSERT_GE(t, 0.0);
      ASSERT_LT(t, 2.0 * std::numbers::pi);
      ASSERT_LT(std::abs(std::abs(std::polar(1.0, t)) - 1.0), 1e-12);
    }
  }
}

// ---------------------------------------------------------------------------
// init

TEST(Xavier, SameSeedIsBitIdentical) {
  RngStream a(5);
  RngStream b(5);
  EXPECT_EQ(xavier_init(7, 9, a), xavier_init(7, 9, b));
}

TEST(Xavier, BoundForThreeByThree) {
  RngStream r(6);
  const RMat w = xavier_init(3, 3, r);
  EXPECT_EQ(w.rows(), 3);
  EXPECT_LE(w.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Xavier, VarianceMatchesUniformLaw) {
  RngStream r(8);
  const RMat w = xavier_init(250, 400, r);  // 1e5 samples
  const double mean = w.mean();
  const double var = (w.array() - mean).square().sum() / static_cast<double>(w.size() - 1);
  const double expected = 2.0 / (250.0 + 400.0);
  EXPECT_NEAR(var / expected, 1.0, 0.1);
}

TEST(Xavier, ZeroFanIsConfigError) {
  RngStream r(1);
  EXPECT_THROW(xavier_init(0, 3, r), ConfigError);
  EXPECT_THROW(xavier_init(3, 0, r), ConfigError);
}

}  // namespace
}  // namespace simofdm::wave
