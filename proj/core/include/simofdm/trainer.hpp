#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "simofdm/channel.hpp"
#include "simofdm/emnn.hpp"
#include "simofdm/wavemath/optimizer.hpp"
#include "simofdm/wavemath/rng.hpp"

namespace simofdm::train {

using wave::RMat;
using wave::RngStream;

/// Transmit power drawn per batch sample.
struct PowerPolicy {
  enum class Kind { kFixed, kBeta };

  Kind kind = Kind::kBeta;
  double fixed_dbm = 30.0;
  double alpha = 2.0;
  double beta = 2.0;
  double lo_dbm = 0.0;
  double hi_dbm = 30.0;

  static PowerPolicy fixed(double dbm);
  static PowerPolicy beta_range(double alpha, double beta, double lo_dbm, double hi_dbm);

  void validate() const;
  /// "fixed(30 dBm)" or "beta(2,2) over [0,30] dBm".
  std::string describe() const;
};

/// One P_t draw in watts.
double sample_power(const PowerPolicy& policy, RngStream& rng);
double sample_power(const PowerPolicy& policy, std::uint64_t seed);
/// B x 1 column of independent draws.
RMat sample_powers(const PowerPolicy& policy, int batch, RngStream& rng);

/// Mean over the batch of the summed per-bit binary cross-entropy (natural log).
double bce_loss(const RMat& bits, const RMat& soft, double p_min = 1e-12);

/// B x n matrix of fair bits.
RMat draw_bits(int batch, int bits, RngStream& rng);

struct TrainConfig {
  int epochs = 2000;
  int batch = 1000;
  wave::OptimizerSettings optimizer;
  /// Decay the learning rate after every `lr_decay_every` epochs.
  int lr_decay_every = 1;
  PowerPolicy power;
  /// Request a new channel from the provider every `channel_every` epochs.
  int channel_every = 1;
  std::uint64_t seed = 0;
  double noise_scale = 1.0;
  bool freeze_phases = false;
  /// Write a checkpoint every n epochs into checkpoint_dir (0 = never).
  int checkpoint_every = 0;
  std::string checkpoint_dir;
  /// Bit redraws allowed per epoch for samples whose BS output is all zero.
  int max_redraws = 1000;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;  // 1-based within its phase
  std::string phase;
  double loss = 0.0;
  double learning_rate = 0.0;
  std::map<std::string, double> grad_norm;  // per parameter group
  double power_mean_dbm = 0.0;
  double power_min_dbm = 0.0;
  double power_max_dbm = 0.0;
  int redraws = 0;
  double seconds = 0.0;  // wall clock, kept out of the CSV
};

struct TrainMetrics {
  std::vector<EpochMetrics> epochs;
  bool diverged = false;
  std::string divergence;

  /// Deterministic CSV (no wall-clock column). Group columns are the union
  /// of gradient groups seen, sorted.
  std::string to_csv(bool header = true) const;
  double final_loss() const;
  double total_seconds() const;
};

/// Parameter groups in a fixed order: bs, tx, rx<j>..., ue<j>...
std::vector<std::string> parameter_groups(const emnn::EmnnConfig& config);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch training. On a non-finite loss or gradient the model is
/// restored to the last state that produced a finite loss and the returned
/// metrics are flagged as diverged.
TrainMetrics train(emnn::EmnnModel& model, chan::ChannelProvider& provider, const TrainConfig& cfg,
                   const std::string& phase = "train", const EpochCallback& on_epoch = {});

/// Statistical pretraining, then finetuning on the instantaneous provider
/// with a fresh optimizer. A finetune config with 0 epochs skips the second
/// stage.
std::pair<TrainMetrics, TrainMetrics> pretrain_then_finetune(emnn::EmnnModel& model,
                                                             chan::ChannelProvider& statistical,
                                                             chan::ChannelProvider& instantaneous,
                                                             const TrainConfig& cfg_pre, const TrainConfig& cfg_fine,
                                                             const EpochCallback& on_epoch = {});

/// First epoch (1-based) whose trailing mean loss over `window` epochs is
/// <= target, or -1.
int epochs_to_reach(const TrainMetrics& metrics, double target, int window);
/// Mean loss over the last `window` epochs.
double tail_loss(const TrainMetrics& metrics, int window);

}  // namespace simofdm::train
