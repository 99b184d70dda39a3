#include "simofdm/metasurface.hpp"

#include <cmath>
#include <string>

#include "simofdm/error.hpp"

namespace simofdm::meta {

using wave::cdouble;
using wave::kSpeedOfLight;
using wave::kTwoPi;

const char* to_string(Side side) { return side == Side::kTx ? "tx" : "rx"; }
const char* to_string(Polarization pol) { return pol == Polarization::kSingle ? "single" : "dual"; }

void PanelLayout::validate() const {
  if (units.x < 1 || units.y < 1) throw ConfigError("layout: unit grid must be at least 1x1");
  if (antennas.x < 1 || antennas.y < 1) throw ConfigError("layout: antenna grid must be at least 1x1");
  if (layer_count < 1) throw ConfigError("layout: layer count must be >= 1");
  if (!(unit_spacing > 0.0)) throw ConfigError("layout: unit spacing must be > 0");
  if (!(layer_spacing > 0.0)) throw ConfigError("layout: layer spacing must be > 0");
}

int PanelLayout::plane_size(int layer) const {
  return layer == 0 ? antennas.count() : units.count();
}

bool PanelLayout::antennas_fit() const { return antennas.x <= units.x && antennas.y <= units.y; }

std::span<const double> MetasurfaceStack::layer_phases(int layer, int pol) const {
  const auto& v = phases.at(static_cast<std::size_t>(layer));
  const std::size_t m = static_cast<std::size_t>(layout.units.count());
  if (pol < 0 || (polarization == Polarization::kSingle && pol != 0) || pol > 1) {
    throw ConfigError("stack: polarization index out of range");
  }
  return std::span<const double>(v).subspan(static_cast<std::size_t>(pol) * m, m);
}

void MetasurfaceStack::validate() const {
  validate_structure();
  for (const auto& layer : phases) {
    for (double t : layer) {
      if (!(t >= 0.0 && t < kTwoPi)) throw DomainError("stack: phase outside [0, 2 pi)");
    }
  }
}

void MetasurfaceStack::validate_structure() const {
  layout.validate();
  if (static_cast<int>(phases.size()) != layout.layer_count) {
    throw ConfigError("stack: " + std::to_string(phases.size()) + " phase layers for a " +
                      std::to_string(layout.layer_count) + "-layer layout");
  }
  const std::size_t per = static_cast<std::size_t>(layout.units.count()) *
                          (polarization == Polarization::kDual ? 2 : 1);
  for (const auto& layer : phases) {
    if (layer.size() != per) {
      throw ConfigError("stack: layer holds " + std::to_string(layer.size()) +
                        " phases, expected " + std::to_string(per));
    }
    for (double t : layer) {
      if (!std::isfinite(t)) throw DomainError("stack: non-finite phase");
    }
  }
}

std::vector<double> subcarrier_frequencies(double f0, double bandwidth, int count) {
  if (count < 1) throw ConfigError("subcarrier count must be >= 1");
  if (!(bandwidth > 0.0)) throw ConfigError("bandwidth must be > 0");
  std::vector<double> f(static_cast<std::size_t>(count));
  const double step = bandwidth / count;
  for (int i = 0; i < count; ++i) f[static_cast<std::size_t>(i)] = f0 - bandwidth / 2.0 + (i + 0.5) * step;
  return f;
}

std::pair<double, double> grid_position(const GridDims& grid, double pitch, int index) {
  const int ix = index / grid.y;
  const int iy = index % grid.y;
  return {(ix - (grid.x - 1) / 2.0) * pitch, (iy - (grid.y - 1) / 2.0) * pitch};
}

CMat diffraction_matrix(const PanelLayout& layout, int src, int dst, double frequency) {
  layout.validate();
  if (src < 0 || dst < 0 || src > layout.layer_count || dst > layout.layer_count ||
      std::abs(src - dst) != 1) {
    throw ConfigError("diffraction_matrix: planes " + std::to_string(src) + " -> " +
                      std::to_string(dst) + " are not adjacent planes of the stack");
  }
  const GridDims src_grid = src == 0 ? layout.antennas : layout.units;
  const GridDims dst_grid = dst == 0 ? layout.antennas : layout.units;
  const double area = layout.unit_spacing * layout.unit_spacing;
  const double dz = layout.layer_spacing;
  const double k = frequency / kSpeedOfLight;

  CMat v(dst_grid.count(), src_grid.count());
  for (int d = 0; d < dst_grid.count(); ++d) {
    const auto [xd, yd] = grid_position(dst_grid, layout.unit_spacing, d);
    for (int s = 0; s < src_grid.count(); ++s) {
      const auto [xs, ys] = grid_position(src_grid, layout.unit_spacing, s);
      const double dx = xd - xs;
      const double dy = yd - ys;
      const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
      if (!(r > 0.0)) throw ConfigError("diffraction_matrix: zero propagation distance");
      const double cos_chi = dz / r;
      const cdouble near_far(1.0 / (kTwoPi * r), -k);
      v(d, s) = (area * cos_chi / r) * near_far * std::polar(1.0, kTwoPi * r * k);
    }
  }
  return v;
}

PropagationSet build_propagation(const PanelLayout& layout, std::span<const double> frequencies) {
  layout.validate();
  PropagationSet prop;
  prop.side = layout.side;
  prop.frequencies.assign(frequencies.begin(), frequencies.end());
  prop.gaps.resize(frequencies.size());
  for (std::size_t i = 0; i < frequencies.size(); ++i) {
    auto& gaps = prop.gaps[i];
    gaps.reserve(static_cast<std::size_t>(layout.layer_count));
    const double f = frequencies[i];
    if (layout.side == Side::kTx) {
      gaps.push_back(diffraction_matrix(layout, 0, 1, f));
      if (layout.layer_count > 1) {
        CMat inner = diffraction_matrix(layout, 1, 2, f);
        for (int g = 1; g < layout.layer_count; ++g) gaps.push_back(inner);
      }
    } else {
      gaps.push_back(diffraction_matrix(layout, 1, 0, f));
      if (layout.layer_count > 1) {
        CMat inner = diffraction_matrix(layout, 2, 1, f);
        for (int g = 1; g < layout.layer_count; ++g) gaps.push_back(inner);
      }
    }
  }
  return prop;
}

namespace {

void check_chain_inputs(const MetasurfaceStack& stack, const PropagationSet& prop, int subcarrier,
                        Side side) {
  stack.validate_structure();
  if (stack.layout.side != side || prop.side != side) {
    throw ConfigError(std::string("chain: expected a ") + to_string(side) + " stack and propagation set");
  }
  if (subcarrier < 0 || subcarrier >= prop.subcarriers()) {
    throw ConfigError("chain: subcarrier index out of range");
  }
  if (prop.gap_count() != stack.layout.layer_count) {
    throw ConfigError("chain: propagation set has " + std::to_string(prop.gap_count()) +
                      " gaps for a " + std::to_string(stack.layout.layer_count) + "-layer stack");
  }
  const int m = stack.layout.units.count();
  const int a = stack.layout.antennas.count();
  const CMat& first = prop.at(subcarrier, 0);
  const bool ok = side == Side::kTx ? (first.rows() == m && first.cols() == a)
                                    : (first.rows() == a && first.cols() == m);
  if (!ok) throw ConfigError("chain: propagation matrices do not match the stack layout");
}

void scale_rows(CMat& x, std::span<const double> phases) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) *= std::polar(1.0, phases[static_cast<std::size_t>(r)]);
}

void scale_cols(CMat& x, std::span<const double> phases) {
  for (Eigen::Index c = 0; c < x.cols(); ++c) x.col(c) *= std::polar(1.0, phases[static_cast<std::size_t>(c)]);
}

CMat tx_single(const MetasurfaceStack& stack, const PropagationSet& prop, int i, int pol) {
  CMat t = prop.at(i, 0);
  scale_rows(t, stack.layer_phases(0, pol));
  for (int l = 1; l < stack.layout.layer_count; ++l) {
    t = wave::cmatmul(prop.at(i, l), t);
    scale_rows(t, stack.layer_phases(l, pol));
  }
  return t;
}

CMat rx_single(const MetasurfaceStack& stack, const PropagationSet& prop, int i, int pol) {
  CMat r = prop.at(i, 0);
  scale_cols(r, stack.layer_phases(0, pol));
  for (int k = 1; k < stack.layout.layer_count; ++k) {
    CMat u = prop.at(i, k);
    scale_cols(u, stack.layer_phases(k, pol));
    r = wave::cmatmul(r, u);
  }
  return r;
}

}  // namespace

CMat tx_chain(const MetasurfaceStack& stack, const PropagationSet& prop, int subcarrier) {
  check_chain_inputs(stack, prop, subcarrier, Side::kTx);
  if (stack.polarization != Polarization::kSingle) {
    throw ConfigError("tx_chain: single-polarization stack required (use dp_chain)");
  }
  return tx_single(stack, prop, subcarrier, 0);
}

CMat rx_chain(const MetasurfaceStack& stack, const PropagationSet& prop, int subcarrier) {
  check_chain_inputs(stack, prop, subcarrier, Side::kRx);
  if (stack.polarization != Polarization::kSingle) {
    throw ConfigError("rx_chain: single-polarization stack required (use dp_chain)");
  }
  return rx_single(stack, prop, subcarrier, 0);
}

CMat dp_chain(const MetasurfaceStack& stack, const PropagationSet& prop, int subcarrier) {
  if (stack.polarization != Polarization::kDual) {
    throw ConfigError("dp_chain: dual-polarization stack required");
  }
  check_chain_inputs(stack, prop, subcarrier, stack.layout.side);
  if (stack.layout.side == Side::kTx) {
    return wave::block_diag(tx_single(stack, prop, subcarrier, 0), tx_single(stack, prop, subcarrier, 1));
  }
  return wave::block_diag(rx_single(stack, prop, subcarrier, 0), rx_single(stack, prop, subcarrier, 1));
}

MetasurfaceStack polarization_slice(const MetasurfaceStack& stack, int pol) {
  MetasurfaceStack out;
  out.layout = stack.layout;
  out.polarization = Polarization::kSingle;
  for (int l = 0; l < stack.layout.layer_count; ++l) {
    auto p = stack.layer_phases(l, pol);
    out.phases.emplace_back(p.begin(), p.end());
  }
  return out;
}

}  // namespace simofdm::meta
