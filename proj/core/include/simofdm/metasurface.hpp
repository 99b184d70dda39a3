#pragma once

#include <span>
#include <vector>

#include "simofdm/wavemath/linalg.hpp"

namespace simofdm::meta {

using wave::CMat;

enum class Side { kTx, kRx };
enum class Polarization { kSingle, kDual };

const char* to_string(Side side);
const char* to_string(Polarization pol);

/// Rectangular element grid. Element index = ix * y + iy, matching the
/// Kronecker ordering of the steering vectors.
struct GridDims {
  int x = 1;
  int y = 1;
  int count() const { return x * y; }
  bool operator==(const GridDims&) const = default;
};

/// Geometry of one SIM/DPSIM device (Fig. 2 style parameters).
///
/// Layer 0 is the antenna plane (antennas.count() elements); layers
/// 1..layer_count carry units.count() programmable units each. All planes
/// are parallel to the xy-plane, centred on the z-axis and spaced by
/// layer_spacing; elements within a plane sit on a centred grid with pitch
/// unit_spacing.
struct PanelLayout {
  GridDims units;
  double unit_spacing = 0.0;
  double layer_spacing = 0.0;
  int layer_count = 1;
  Side side = Side::kTx;
  GridDims antennas;

  /// Throws ConfigError on non-positive counts or spacings.
  void validate() const;
  /// Number of elements on plane `layer` (antennas on 0, units otherwise).
  int plane_size(int layer) const;
  /// Antenna aperture no larger than the unit aperture.
  bool antennas_fit() const;
  bool operator==(const PanelLayout&) const = default;
};

/// Per-layer phases of one device. Single polarization: each layer holds
/// units.count() phases. Dual polarization: 2 * units.count() phases,
/// polarization 0 first.
struct MetasurfaceStack {
  PanelLayout layout;
  Polarization polarization = Polarization::kSingle;
  std::vector<std::vector<double>> phases;

  /// Phases of one polarization of one layer (layer index 0-based).
  std::span<const double> layer_phases(int layer, int pol = 0) const;
  /// Throws ConfigError when layer count or vector lengths disagree with the
  /// layout, DomainError when a phase lies outside [0, 2 pi).
  void validate() const;
  /// Layer count and vector lengths only; any finite phase is accepted.
  void validate_structure() const;
};

/// Fixed diffraction matrices of one device for every subcarrier.
///
/// gaps[i][g] is the matrix of gap g for subcarrier i:
///   TX: gap g maps plane g -> plane g+1 (V^{g+1}); gap 0 is units x antennas.
///   RX: gap g maps plane g+1 -> plane g (U^{g+1}); gap 0 is antennas x units.
struct PropagationSet {
  Side side = Side::kTx;
  std::vector<double> frequencies;
  std::vector<std::vector<CMat>> gaps;

  int subcarriers() const { return static_cast<int>(frequencies.size()); }
  int gap_count() const { return gaps.empty() ? 0 : static_cast<int>(gaps.front().size()); }
  const CMat& at(int subcarrier, int gap) const { return gaps.at(subcarrier).at(gap); }
};

/// Nc frequencies f0 - B/2 + (i + 1/2) B/Nc, i = 0..Nc-1.
std::vector<double> subcarrier_frequencies(double f0, double bandwidth, int count);

/// (x, y) position of element `index` on a centred grid with the given pitch.
std::pair<double, double> grid_position(const GridDims& grid, double pitch, int index);

/// Rayleigh-Sommerfeld transmission matrix from plane `src` to the adjacent
/// plane `dst` (|src - dst| == 1). Entry (dst element, src element) is
///   (S cos chi / r) (1/(2 pi r) - j f/c) e^{j 2 pi r f / c}
/// with S = unit_spacing^2 and cos chi = layer_spacing / r.
CMat diffraction_matrix(const PanelLayout& layout, int src, int dst, double frequency);

/// All gap matrices for every frequency. Inner gaps are computed once per
/// frequency and copied, so identical layers give bit-identical matrices.
PropagationSet build_propagation(const PanelLayout& layout, std::span<const double> frequencies);

/// T_i = Phi^L V^L ... Phi^1 V^1 (units x antennas).
CMat tx_chain(const MetasurfaceStack& stack, const PropagationSet& prop, int subcarrier);
/// R_i = U^1 Psi^1 ... U^K Psi^K (antennas x units).
CMat rx_chain(const MetasurfaceStack& stack, const PropagationSet& prop, int subcarrier);
/// Block-diagonal dual-polarized chain; polarization block p uses the
/// phases of polarization p and the shared V/U matrices.
CMat dp_chain(const MetasurfaceStack& stack, const PropagationSet& prop, int subcarrier);

/// Single-polarization stack carrying the phases of polarization `pol` of a
/// dual-polarized stack.
MetasurfaceStack polarization_slice(const MetasurfaceStack& stack, int pol);

}  // namespace simofdm::meta
