#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "simofdm/channel.hpp"
#include "simofdm/metasurface.hpp"
#include "simofdm/wavemath/graph.hpp"

namespace simofdm::emnn {

using meta::PanelLayout;
using meta::Polarization;
using wave::CMat;
using wave::Graph;
using wave::NodeId;
using wave::RMat;

/// How the power-control layer distributes P_t.
enum class PowerNormalization {
  kPerSymbol,      // one scale per sample: sum_i ||x_i||^2 = P_t
  kPerSubcarrier,  // each subcarrier block scaled to P_t / Nc
};

const char* to_string(PowerNormalization p);
PowerNormalization power_normalization_from_string(const std::string& s);

struct EmnnConfig {
  Polarization polarization = Polarization::kSingle;
  PanelLayout tx;
  PanelLayout rx;  // one identical RX device per user
  std::vector<int> user_bits;
  /// N^bit; 0 means "sum of user_bits". A nonzero value must equal that sum.
  int total_bits = 0;
  std::vector<double> frequencies;
  PowerNormalization power = PowerNormalization::kPerSymbol;
  /// ReLU after the last BS-DNN linear layer, as listed in the architecture table.
  bool bs_output_relu = true;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  /// Receiver noise power sigma^2 per complex dimension, watts. Received
  /// signals enter the UE-DNN in units of sigma.
  double noise_power = 1e-14;

  int users() const { return static_cast<int>(user_bits.size()); }
  int bits() const;
  int subcarriers() const { return static_cast<int>(frequencies.size()); }
  int pol_count() const { return polarization == Polarization::kDual ? 2 : 1; }
  /// Complex TX ports per subcarrier (P * A^t).
  int tx_ports() const { return pol_count() * tx.antennas.count(); }
  int rx_ports() const { return pol_count() * rx.antennas.count(); }
  int bit_offset(int user) const;

  /// Throws ConfigError naming the offending architecture-table row.
  void validate() const;
};

/// One row of the layer output-dimension audit.
struct LayerDims {
  std::string module;
  std::string layer;
  std::string formula;
  int size = 0;
};

/// Output dimensions of every EMNN layer (aggregated over users).
std::vector<LayerDims> dimension_table(const EmnnConfig& config);

/// All trainable state plus fixed propagation matrices.
///
/// Parameter names:
///   bs.w1 bs.b1 bs.w2 bs.b2 bs.w3 bs.b3
///   tx.phase.<l>           l = 1..L
///   rx<j>.phase.<k>        k = 1..K
///   ue<j>.bn<n>.gamma / .beta (n = 0..2), ue<j>.w1 ue<j>.b1 ue<j>.w2 ue<j>.b2
/// Phase vectors hold pol 0 then pol 1 in dual mode.
struct EmnnModel {
  EmnnConfig config;
  wave::ParameterSet params;
  std::map<std::string, wave::BatchNormStats> bn_stats;  // keyed ue<j>.bn<n>
  meta::PropagationSet tx_prop;
  meta::PropagationSet rx_prop;
  /// Per subcarrier and gap: V/U, or blockdiag(V, V) / blockdiag(U, U) in dual mode.
  std::vector<std::vector<CMat>> tx_gaps;
  std::vector<std::vector<CMat>> rx_gaps;

  meta::MetasurfaceStack tx_stack() const;
  meta::MetasurfaceStack rx_stack(int user) const;
  /// Overwrites the phases; throws ConfigError/DomainError on a mismatching stack.
  void set_tx_stack(const meta::MetasurfaceStack& stack);
  void set_rx_stack(int user, const meta::MetasurfaceStack& stack);
  /// Replaces one fixed gap matrix (calibration override).
  void set_gap(meta::Side side, int subcarrier, int gap, const CMat& single_pol_matrix);
  void refresh_gap_cache();

  std::vector<std::string> phase_parameters() const;
};

std::string tx_phase_name(int layer);
std::string rx_phase_name(int user, int layer);

EmnnModel build_model(const EmnnConfig& config, const meta::PropagationSet& tx_prop,
                      const meta::PropagationSet& rx_prop, std::uint64_t seed);
/// Builds the propagation sets from the layouts and config frequencies.
EmnnModel build_model(const EmnnConfig& config, std::uint64_t seed);

/// Scales per-subcarrier TX vectors to the power budget. Throws
/// DegenerateInputError(0) for an all-zero signal (or zero block).
std::vector<CMat> power_control(const std::vector<CMat>& signal, double p_t, PowerNormalization policy);

struct ForwardOptions {
  bool training = false;
  /// Multiplies the noise standard deviation; 0 gives a noise-free link.
  double noise_scale = 1.0;
  std::uint64_t noise_seed = 0;
};

struct Diagnostics {
  std::vector<double> tx_power;               // per subcarrier, batch mean, watts
  std::vector<std::vector<double>> rx_power;  // [user][subcarrier], signal part, watts
  std::vector<double> snr_db;                 // per user, signal / noise over the band
};

/// Recorded forward pass. Holds pointers into the model, which must stay
/// alive and unmoved while the trace is used.
struct Trace {
  Graph graph;
  int batch = 0;
  NodeId bits = 0;
  NodeId tx_signal = 0;                         // after power control, B x 2 P A^t Nc
  std::vector<NodeId> tx_symbols;               // per subcarrier, complex P A^t x B
  std::vector<std::vector<NodeId>> rx_clean;    // [user][subcarrier] H x, noise units
  std::vector<std::vector<NodeId>> rx_noisy;    // [user][subcarrier]
  std::vector<NodeId> rx_input;                 // per user, B x 2 P A^r Nc
  std::vector<NodeId> soft;                     // per user, B x N^bit_j
  std::vector<NodeId> user_loss;
  NodeId loss = 0;
  std::vector<std::pair<NodeId, std::string>> batch_norm;  // node, stats key
  std::vector<std::pair<NodeId, std::string>> stages;      // first node of each stage
  double noise_power = 0.0;

  /// Name of the stage a node belongs to.
  std::string stage_of(NodeId id) const;
};

/// Records the full forward pass and BCE loss for a batch. `bits` is
/// B x N^bit (0/1), `power` is B x 1 in watts. Does not evaluate.
std::unique_ptr<Trace> trace_forward(const EmnnModel& model, const RMat& bits, const RMat& power,
                                     const chan::ChannelRealization& channel, const ForwardOptions& opt);

/// Evaluates a trace; throws NumericalError naming the first stage that
/// produced a non-finite value.
void evaluate(Trace& trace);

struct ForwardOutput {
  std::vector<RMat> soft;  // per user, B x N^bit_j
  double loss = 0.0;
  Diagnostics diagnostics;
};

ForwardOutput collect(const Trace& trace, const EmnnConfig& config);

/// trace + evaluate + collect.
ForwardOutput forward(const EmnnModel& model, const RMat& bits, const RMat& power,
                      const chan::ChannelRealization& channel, const ForwardOptions& opt);

/// Folds the batch statistics of a training-mode trace into the running
/// statistics (momentum update, unbiased variance; first commit copies).
void commit_batch_norm(EmnnModel& model, const Trace& trace);

/// bit = 1 iff soft >= 0.5.
std::vector<RMat> hard_decision(const std::vector<RMat>& soft);
RMat hard_decision(const RMat& soft);

/// Physical end-to-end response R_{i,j} G_{i,j} T_i (rx ports x tx ports),
/// computed with the metasurface chains, independent of the graph.
CMat wave_domain_response(const EmnnModel& model, const chan::ChannelRealization& channel, int subcarrier,
                          int user);

/// Canonical one-line JSON of the configuration (hash input).
std::string config_text(const EmnnConfig& config);

/// Versioned JSON checkpoint: config, parameters, batch-norm statistics and
/// caller metadata (config hash, RNG state, epoch).
std::string save_checkpoint(const EmnnModel& model, const std::map<std::string, std::string>& metadata = {});
EmnnModel load_checkpoint(const std::string& text, std::map<std::string, std::string>* metadata = nullptr);

/// Parameter group of a parameter name: "bs", "tx", "rx<j>" or "ue<j>".
std::string parameter_group(const std::string& name);

}  // namespace simofdm::emnn
