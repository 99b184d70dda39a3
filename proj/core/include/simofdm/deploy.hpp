#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "simofdm/emnn.hpp"

namespace simofdm::deploy {

using meta::Side;
using wave::CMat;
using wave::RMat;

/// Phase quantization: 2^bits uniform levels on [0, 2 pi). bits = 0 keeps
/// full precision.
struct Quantization {
  int bits = 0;

  int levels() const { return bits == 0 ? 0 : 1 << bits; }
  double step() const;
  std::vector<double> codebook() const;
  bool operator==(const Quantization&) const = default;
};

struct QuantizedPhases {
  std::vector<double> phases;
  std::vector<int> levels;
  Quantization quantization;
};

/// Snaps each phase to the nearest level; max error <= pi / 2^bits.
QuantizedPhases quantize_phases(std::span<const double> phases, int bits);
/// Quantizes every metasurface phase of the model in place.
void quantize_model_phases(emnn::EmnnModel& model, int bits);

enum class Role { kBs, kUe };

/// Parameters one device needs. The BS gets the BS-DNN and TX phases; UE j
/// gets its UE-DNN, batch-norm statistics and RX phases.
struct DeployBundle {
  Role role = Role::kBs;
  int user = -1;
  std::map<std::string, RMat> parameters;
  std::map<std::string, wave::BatchNormStats> batch_norm;
  Quantization quantization;
  std::string config_hash;

  std::string name() const;  // "bs" or "ue<j>"
  /// Canonical one-line payload, the input of the integrity hash.
  std::string payload() const;
  /// Three lines: format header, sha256 of the payload, payload.
  std::string serialize() const;
  /// Throws IoError on a malformed file or a hash mismatch.
  static DeployBundle parse(const std::string& text);
};

/// SHA-256 of the bytes, lowercase hex.
std::string sha256_hex(const std::string& bytes);

/// Stable hash of the model configuration (architecture, layouts, band).
std::string config_hash(const emnn::EmnnConfig& config);

/// One BS bundle followed by one bundle per user. Phases are quantized when
/// q.bits > 0; DNN weights stay at full precision.
std::vector<DeployBundle> partition(const emnn::EmnnModel& model, Quantization q = {});

/// Writes the bundle contents into a copy of `skeleton`. Every trainable
/// parameter must be covered exactly once.
emnn::EmnnModel merge(const emnn::EmnnModel& skeleton, const std::vector<DeployBundle>& bundles);

/// Versioned text phase map: one record per unit and polarization, layer
/// major then row major.
std::string export_phase_map(const meta::MetasurfaceStack& stack, Quantization q = {});
meta::MetasurfaceStack import_phase_map(const std::string& text);

struct CalibrationEntry {
  Side side = Side::kTx;
  int subcarrier = 0;
  int gap = 0;
  CMat matrix;  // single-polarization gap matrix
};

struct CalibrationSet {
  std::vector<CalibrationEntry> entries;
  std::map<std::string, std::string> provenance;
};

std::string export_calibration(const CalibrationSet& set);
/// Throws IoError on malformed text.
CalibrationSet import_calibration(const std::string& text);
/// The model's current analytic matrices as a calibration set.
CalibrationSet analytic_calibration(const emnn::EmnnModel& model);
/// Validates every entry against the model first (shape, index range,
/// finiteness), then replaces the matrices. On error the model is untouched.
void apply_calibration(emnn::EmnnModel& model, const CalibrationSet& set);

/// File helpers that report the path on failure.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace simofdm::deploy
