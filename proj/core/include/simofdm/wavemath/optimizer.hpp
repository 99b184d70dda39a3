#pragma once

#include <map>
#include <string>

#include "simofdm/wavemath/graph.hpp"

namespace simofdm::wave {

enum class OptimizerKind { kSgd, kAdamW };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::kAdamW;
  double learning_rate = 0.005;
  /// Multiplier applied by decay_learning_rate(); must lie in (0, 1].
  double decay_factor = 1.0 / 1.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Decoupled weight decay (AdamW only). Not applied to phase parameters.
  double weight_decay = 0.01;
};

/// Maps any finite angle into [0, 2 pi).
double wrap_phase(double theta);

class OptimizerState {
 public:
  explicit OptimizerState(OptimizerSettings settings);

  /// Updates every parameter that has an entry in `grads`; phases are
  /// wrapped into [0, 2 pi) afterwards. Throws NumericalError on a non-finite
  /// gradient before touching any parameter.
  void step(ParameterSet& params, const GradientMap& grads);
  void decay_learning_rate();

  double learning_rate() const { return lr_; }
  long steps() const { return steps_; }
  const OptimizerSettings& settings() const { return settings_; }

 private:
  struct Moments {
    RMat m;
    RMat v;
  };

  OptimizerSettings settings_;
  double lr_;
  long steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace simofdm::wave
