#include "simofdm/wavemath/optimizer.hpp"

#include <cmath>

#include "simofdm/error.hpp"

namespace simofdm::wave {

double wrap_phase(double theta) {
  double w = std::fmod(theta, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  // fmod of a value just below a multiple of 2 pi can round up to 2 pi
  if (w >= kTwoPi) w = 0.0;
  return w;
}

OptimizerState::OptimizerState(OptimizerSettings settings)
    : settings_(settings), lr_(settings.learning_rate) {
  if (!(settings_.learning_rate >= 0.0)) throw ConfigError("optimizer: learning rate must be >= 0");
  if (!(settings_.decay_factor > 0.0 && settings_.decay_factor <= 1.0)) {
    throw ConfigError("optimizer: decay factor must lie in (0, 1]");
  }
}

void OptimizerState::step(ParameterSet& params, const GradientMap& grads) {
  for (const auto& [name, g] : grads) {
    if (!g.allFinite()) throw NumericalError("optimizer: non-finite gradient for '" + name + "'");
    const Parameter& p = params.at(name);
    if (g.rows() != p.value.rows() || g.cols() != p.value.cols()) {
      throw ConfigError("optimizer: gradient shape mismatch for '" + name + "'");
    }
  }
  ++steps_;
  for (const auto& [name, g] : grads) {
    Parameter& p = params.at(name);
    if (settings_.kind == OptimizerKind::kSgd) {
      p.value -= lr_ * g;
    } else {
      auto [it, inserted] = moments_.try_emplace(name);
      Moments& mo = it->second;
      if (inserted) {
        mo.m = RMat::Zero(g.rows(), g.cols());
        mo.v = RMat::Zero(g.rows(), g.cols());
      }
      const double b1 = settings_.beta1;
      const double b2 = settings_.beta2;
      mo.m = b1 * mo.m + (1.0 - b1) * g;
      mo.v = b2 * mo.v + (1.0 - b2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
      if (!p.phase && settings_.weight_decay != 0.0) {
        p.value -= (lr_ * settings_.weight_decay) * p.value;
      }
      p.value.array() -= lr_ * (mo.m.array() / c1) /
                         ((mo.v.array() / c2).sqrt() + settings_.epsilon);
    }
    if (p.phase) p.value = p.value.unaryExpr([](double t) { return wrap_phase(t); });
  }
}

void OptimizerState::decay_learning_rate() { lr_ *= settings_.decay_factor; }

}  // namespace simofdm::wave
