#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "simofdm/channel.hpp"
#include "simofdm/emnn.hpp"
#include "simofdm/trainer.hpp"

namespace simofdm::evaluator {

using meta::Polarization;
using wave::RMat;

/// Something that carries bits over a channel and returns hard decisions.
class BitLink {
 public:
  virtual ~BitLink() = default;
  virtual std::vector<int> user_bits() const = 0;
  /// bits: B x N^bit, power: B x 1 watts. Returns per-user B x N^bit_j decisions.
  virtual std::vector<RMat> transmit(const RMat& bits, const RMat& power, const chan::ChannelRealization& channel,
                                     std::uint64_t noise_seed) = 0;
};

/// Eval-mode EMNN forward followed by hard decisions. Samples whose BS
/// output is all zero are sent as all-zero decisions for that sample.
class EmnnLink : public BitLink {
 public:
  explicit EmnnLink(const emnn::EmnnModel& model, double noise_scale = 1.0)
      : model_(model), noise_scale_(noise_scale) {}
  std::vector<int> user_bits() const override { return model_.config.user_bits; }
  std::vector<RMat> transmit(const RMat& bits, const RMat& power, const chan::ChannelRealization& channel,
                             std::uint64_t noise_seed) override;

 private:
  const emnn::EmnnModel& model_;
  double noise_scale_;
};

struct ErrorCount {
  std::uint64_t bits = 0;
  std::uint64_t errors = 0;

  double ber() const { return bits == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(bits); }
  /// 95% Wald half-width.
  double half_width() const;
  ErrorCount& operator+=(const ErrorCount& o);
  bool operator==(const ErrorCount&) const = default;
};

struct BerMeasurement {
  std::vector<ErrorCount> users;
  ErrorCount aggregate;
};

/// Sent bits and decisions, kept for independent recounting.
struct Transcript {
  std::vector<RMat> sent;                   // per chunk, B x N^bit
  std::vector<std::vector<RMat>> decided;   // per chunk, per user
};

/// Sends n_symbols random bit vectors at power P_t (watts) through the link,
/// in chunks of at most `chunk` symbols with fresh noise per chunk.
BerMeasurement measure_ber(BitLink& link, const chan::ChannelRealization& channel, double p_t, long n_symbols,
                           std::uint64_t seed, int chunk = 1000, Transcript* transcript = nullptr);
/// Same, asking the provider for one channel per chunk.
BerMeasurement measure_ber(BitLink& link, chan::ChannelProvider& provider, double p_t, long n_symbols,
                           std::uint64_t seed, int chunk = 1000);

/// How each Monte-Carlo replica obtains its model.
enum class Recipe {
  kFinetune,  // finetune a copy of the base model on the replica channel
  kRetrain,   // train a fresh model from scratch on the replica channel
  kNone,      // evaluate the base model as is
};
const char* to_string(Recipe r);
Recipe recipe_from_string(const std::string& s);

struct MonteCarloConfig {
  int replicas = 100;
  Recipe recipe = Recipe::kFinetune;
  train::TrainConfig finetune;  // per replica
  long test_symbols = 100000;
  int chunk = 1000;
  int threads = 1;
};

struct ReplicaResult {
  int index = 0;
  bool dropped = false;
  std::string reason;
  std::vector<BerMeasurement> per_power;
};

struct BerPoint {
  std::string mode;   // "sim" or "dpsim"
  std::string value;  // swept value as text
  double power_dbm = 0.0;
  std::vector<ErrorCount> users;  // pooled over kept replicas
  ErrorCount aggregate;
  std::vector<double> replica_ber;  // aggregate BER of each kept replica, by index
  int replicas = 0;
  int dropped = 0;
  bool skipped = false;
  std::string reason;

  /// Standard deviation of replica_ber (0 for fewer than two replicas).
  double replica_spread() const;
  bool operator==(const BerPoint&) const = default;
};

struct BerReport {
  std::string axis;
  std::vector<BerPoint> points;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> metadata;

  /// One row per point per user (plus user "all"), deterministic formatting.
  std::string to_csv() const;
  std::string to_json() const;
  static BerReport from_json(const std::string& text);
  static BerReport from_csv(const std::string& text);
  bool operator==(const BerReport&) const = default;
};

/// Base model for each replica (already pretrained for kFinetune / kNone,
/// freshly initialised for kRetrain). Called once per replica.
using ModelFactory = std::function<emnn::EmnnModel(int replica)>;

/// Replica r draws its channel from RngStream(seed).child("replica").child(r)
/// and is measured at every power in `powers_dbm`. Replicas run on
/// `threads` workers; results are merged in index order.
std::vector<ReplicaResult> run_replicas(const ModelFactory& factory, const chan::ChannelSetup& setup,
                                        const MonteCarloConfig& mc, const std::vector<double>& powers_dbm,
                                        std::uint64_t seed);

/// Pools replica results into one BerPoint per power.
std::vector<BerPoint> pool_replicas(const std::vector<ReplicaResult>& replicas, const std::vector<double>& powers_dbm,
                                    const std::string& mode, const std::string& value);

BerPoint monte_carlo_ber(const ModelFactory& factory, const chan::ChannelSetup& setup, const MonteCarloConfig& mc,
                         double power_dbm, std::uint64_t seed);

/// Everything needed to produce one grid point from scratch.
struct Experiment {
  emnn::EmnnConfig model;
  chan::Scene scene;
  double epsilon = 0.2;
  train::TrainConfig pretrain;
  MonteCarloConfig monte_carlo;
  double test_power_dbm = 30.0;
  std::uint64_t seed = 0;
  double center_frequency = 28e9;
  double bandwidth = 100e6;
  /// Antenna grids used when switching mode; device sizes stay as configured.
  meta::GridDims sim_tx_antennas{4, 4};
  meta::GridDims sim_rx_antennas{3, 3};
  meta::GridDims dp_tx_antennas{3, 3};
  meta::GridDims dp_rx_antennas{2, 2};
  /// Applied to every freshly built model (e.g. a calibration override).
  std::function<void(emnn::EmnnModel&)> prepare_model;

  chan::ChannelSetup channel_setup() const;
  /// Copy in the given polarization mode with that mode's antenna grids.
  Experiment with_mode(Polarization mode) const;
};

/// Freshly initialised model for the experiment seed, prepare_model applied.
emnn::EmnnModel initial_model(const Experiment& ex);
/// Pretrains initial_model(ex) on the statistical provider (seeded from the
/// experiment seed). On divergence the metrics are still filled in before
/// NumericalError is thrown.
emnn::EmnnModel pretrain_base(const Experiment& ex, train::TrainMetrics* metrics = nullptr,
                              const train::EpochCallback& on_epoch = {});

/// Swept variables: power_dbm, units, layers, tx_antennas, rx_antennas,
/// subcarriers, bits (colon-separated allocation), epsilon.
struct SweepGrid {
  std::string variable;
  std::vector<std::string> values;
  std::vector<Polarization> modes{Polarization::kSingle};
};

/// Applies one grid value to a copy of the experiment.
Experiment apply_sweep_value(const Experiment& base, const std::string& variable, const std::string& value);

/// Runs every grid point. A power sweep shares one trained model per mode
/// and replica; other variables retrain per point. Points whose geometry is
/// infeasible are recorded as skipped with the reason.
BerReport sweep(const SweepGrid& grid, const Experiment& base);

}  // namespace simofdm::evaluator
