#include "simofdm/emnn.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "json.hpp"

#include "simofdm/error.hpp"
#include "simofdm/wavemath/init.hpp"

namespace simofdm::emnn {

using json = nlohmann::json;
using meta::Side;
using wave::cdouble;
using wave::RngStream;

namespace {

constexpr const char* kCheckpointFormat = "simofdm-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string ue_name(int j, const std::string& leaf) { return "ue" + std::to_string(j) + "." + leaf; }
std::string bn_key(int j, int n) { return ue_name(j, "bn" + std::to_string(n)); }

}  // namespace

const char* to_string(PowerNormalization p) {
  return p == PowerNormalization::kPerSymbol ? "per-symbol" : "per-subcarrier";
}

PowerNormalization power_normalization_from_string(const std::string& s) {
  if (s == "per-symbol") return PowerNormalization::kPerSymbol;
  if (s == "per-subcarrier") return PowerNormalization::kPerSubcarrier;
  throw ConfigError("unknown power normalization '" + s + "' (per-symbol | per-subcarrier)");
}

int EmnnConfig::bits() const {
  return std::accumulate(user_bits.begin(), user_bits.end(), 0);
}

int EmnnConfig::bit_offset(int user) const {
  return std::accumulate(user_bits.begin(), user_bits.begin() + user, 0);
}

void EmnnConfig::validate() const {
  tx.validate();
  rx.validate();
  if (tx.side != Side::kTx) throw ConfigError("emnn: TX layout must have the TX role");
  if (rx.side != Side::kRx) throw ConfigError("emnn: RX layout must have the RX role");
  if (user_bits.empty()) throw ConfigError("emnn [UE DNN Output: N^bit_j]: at least one user required");
  for (int b : user_bits) {
    if (b < 1) throw ConfigError("emnn [UE DNN Output: N^bit_j]: every user needs at least one bit");
  }
  if (total_bits != 0 && total_bits != bits()) {
    throw ConfigError("emnn [BS DNN Input: N^bit]: N^bit = " + std::to_string(total_bits) +
                      " but the user allocation sums to " + std::to_string(bits()));
  }
  if (frequencies.empty()) {
    throw ConfigError("emnn [BS DNN Linear + ReLU: N^bit N^c]: at least one subcarrier required");
  }
  if (!(noise_power > 0.0)) throw ConfigError("emnn: noise power must be > 0");
  if (!(bn_eps > 0.0)) throw ConfigError("emnn: batch-norm epsilon must be > 0");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("emnn: batch-norm momentum must lie in (0, 1]");
}

std::vector<LayerDims> dimension_table(const EmnnConfig& c) {
  const int nb = c.bits();
  const int nc = c.subcarriers();
  const int J = c.users();
  const int p2 = 2 * c.pol_count();
  const std::string pre = c.polarization == Polarization::kDual ? "4" : "2";
  const std::string at = c.polarization == Polarization::kDual ? "A^{dp,t}" : "A^t";
  const std::string ar = c.polarization == Polarization::kDual ? "A^{dp,r}" : "A^r";
  std::vector<LayerDims> rows;
  rows.push_back({"BS DNN", "Input", "N^bit", nb});
  rows.push_back({"BS DNN", "Linear + ReLU 1", "N^bit N^c", nb * nc});
  rows.push_back({"BS DNN", "Linear + ReLU 2", "N^bit N^c", nb * nc});
  rows.push_back({"BS DNN", "Linear + ReLU 3", pre + at + " N^c", p2 * c.tx.antennas.count() * nc});
  rows.push_back({"BS DNN", "Power control", pre + at + " N^c", p2 * c.tx.antennas.count() * nc});
  for (int l = 1; l <= c.tx.layer_count; ++l) {
    rows.push_back({"TX SIM", "Transmission layer " + std::to_string(l), pre + "M", p2 * c.tx.units.count()});
    rows.push_back({"TX SIM", "Metasurface layer " + std::to_string(l), pre + "M", p2 * c.tx.units.count()});
  }
  rows.push_back({"Channel", "Channel layer", pre + "JN", p2 * J * c.rx.units.count()});
  for (int k = c.rx.layer_count; k >= 1; --k) {
    rows.push_back({"RX SIM", "Metasurface layer " + std::to_string(k), pre + "JN", p2 * J * c.rx.units.count()});
    const bool last = k == 1;
    rows.push_back({"RX SIM", "Transmission layer " + std::to_string(k),
                    last ? pre + "J" + ar + " N^c" : pre + "JN",
                    last ? p2 * J * c.rx.antennas.count() * nc : p2 * J * c.rx.units.count()});
  }
  rows.push_back({"UE DNN", "Batch normalization 1", pre + "J" + ar + " N^c", p2 * J * c.rx.antennas.count() * nc});
  rows.push_back({"UE DNN", "Linear + ReLU 1", "N^bit N^c", nb * nc});
  rows.push_back({"UE DNN", "Batch normalization 2", "N^bit N^c", nb * nc});
  rows.push_back({"UE DNN", "Linear + ReLU 2", "N^bit", nb});
  rows.push_back({"UE DNN", "Batch normalization 3", "N^bit", nb});
  rows.push_back({"UE DNN", "Sigmoid", "N^bit", nb});
  return rows;
}

std::string tx_phase_name(int layer) { return "tx.phase." + std::to_string(layer); }
std::string rx_phase_name(int user, int layer) {
  return "rx" + std::to_string(user) + ".phase." + std::to_string(layer);
}

std::string parameter_group(const std::string& name) { return name.substr(0, name.find('.')); }

// ---------------------------------------------------------------------------
// EmnnModel

namespace {

meta::MetasurfaceStack stack_from(const EmnnModel& m, const PanelLayout& layout,
                                  const std::function<std::string(int)>& name) {
  meta::MetasurfaceStack s;
  s.layout = layout;
  s.polarization = m.config.polarization;
  for (int l = 1; l <= layout.layer_count; ++l) {
    const RMat& v = m.params.at(name(l)).value;
    s.phases.emplace_back(v.data(), v.data() + v.size());
  }
  return s;
}

void write_stack(EmnnModel& m, const meta::MetasurfaceStack& s, const PanelLayout& layout,
                 const std::function<std::string(int)>& name) {
  if (!(s.layout == layout) || s.polarization != m.config.polarization) {
    throw ConfigError("stack geometry or polarization does not match the model");
  }
  s.validate();
  for (int l = 1; l <= layout.layer_count; ++l) {
    const auto& src = s.phases[static_cast<std::size_t>(l - 1)];
    RMat& dst = m.params.at(name(l)).value;
    for (std::size_t k = 0; k < src.size(); ++k) dst(static_cast<Eigen::Index>(k), 0) = src[k];
  }
}

}  // namespace

meta::MetasurfaceStack EmnnModel::tx_stack() const {
  return stack_from(*this, config.tx, [](int l) { return tx_phase_name(l); });
}

meta::MetasurfaceStack EmnnModel::rx_stack(int user) const {
  if (user < 0 || user >= config.users()) throw ConfigError("rx_stack: user index out of range");
  return stack_from(*this, config.rx, [user](int l) { return rx_phase_name(user, l); });
}

void EmnnModel::set_tx_stack(const meta::MetasurfaceStack& stack) {
  write_stack(*this, stack, config.tx, [](int l) { return tx_phase_name(l); });
}

void EmnnModel::set_rx_stack(int user, const meta::MetasurfaceStack& stack) {
  if (user < 0 || user >= config.users()) throw ConfigError("set_rx_stack: user index out of range");
  write_stack(*this, stack, config.rx, [user](int l) { return rx_phase_name(user, l); });
}

void EmnnModel::set_gap(Side side, int subcarrier, int gap, const CMat& matrix) {
  meta::PropagationSet& prop = side == Side::kTx ? tx_prop : rx_prop;
  if (subcarrier < 0 || subcarrier >= prop.subcarriers() || gap < 0 || gap >= prop.gap_count()) {
    throw ConfigError("set_gap: subcarrier or gap index out of range");
  }
  CMat& dst = prop.gaps[static_cast<std::size_t>(subcarrier)][static_cast<std::size_t>(gap)];
  if (matrix.rows() != dst.rows() || matrix.cols() != dst.cols()) {
    throw ConfigError("set_gap: calibration matrix has the wrong shape");
  }
  if (!wave::all_finite(matrix)) throw DomainError("set_gap: calibration matrix is not finite");
  dst = matrix;
  refresh_gap_cache();
}

void EmnnModel::refresh_gap_cache() {
  auto fill = [this](const meta::PropagationSet& prop, std::vector<std::vector<CMat>>& out) {
    out.assign(prop.gaps.size(), {});
    for (std::size_t i = 0; i < prop.gaps.size(); ++i) {
      for (const CMat& v : prop.gaps[i]) {
        out[i].push_back(config.polarization == Polarization::kDual ? wave::block_diag(v, v) : v);
      }
    }
  };
  fill(tx_prop, tx_gaps);
  fill(rx_prop, rx_gaps);
}

std::vector<std::string> EmnnModel::phase_parameters() const {
  std::vector<std::string> out;
  for (const auto& [name, p] : params) {
    if (p.phase) out.push_back(name);
  }
  return out;
}

EmnnModel build_model(const EmnnConfig& config, const meta::PropagationSet& tx_prop,
                      const meta::PropagationSet& rx_prop, std::uint64_t seed) {
  config.validate();
  const int nc = config.subcarriers();
  if (tx_prop.side != Side::kTx || rx_prop.side != Side::kRx) {
    throw ConfigError("build_model: propagation sets have the wrong roles");
  }
  if (tx_prop.subcarriers() != nc || rx_prop.subcarriers() != nc) {
    throw ConfigError("build_model: propagation sets cover " + std::to_string(tx_prop.subcarriers()) +
                      "/" + std::to_string(rx_prop.subcarriers()) + " subcarriers, config has " +
                      std::to_string(nc));
  }
  if (tx_prop.gap_count() != config.tx.layer_count) {
    throw ConfigError("build_model [TX SIM Transmission layer: M]: TX propagation set has " +
                      std::to_string(tx_prop.gap_count()) + " gaps for " +
                      std::to_string(config.tx.layer_count) + " layers");
  }
  if (rx_prop.gap_count() != config.rx.layer_count) {
    throw ConfigError("build_model [RX SIM Transmission layer: N]: RX propagation set has " +
                      std::to_string(rx_prop.gap_count()) + " gaps for " +
                      std::to_string(config.rx.layer_count) + " layers");
  }
  const int m_units = config.tx.units.count();
  const int n_units = config.rx.units.count();
  if (tx_prop.at(0, 0).rows() != m_units || tx_prop.at(0, 0).cols() != config.tx.antennas.count()) {
    throw ConfigError("build_model [TX SIM Transmission layer 1: M]: V^1 is not M x A^t");
  }
  if (rx_prop.at(0, 0).rows() != config.rx.antennas.count() || rx_prop.at(0, 0).cols() != n_units) {
    throw ConfigError("build_model [RX SIM Transmission layer 1: J A^r N^c]: U^1 is not A^r x N");
  }

  EmnnModel model;
  model.config = config;
  model.tx_prop = tx_prop;
  model.rx_prop = rx_prop;
  model.refresh_gap_cache();

  const RngStream root = RngStream(seed).child("init");
  auto rng_for = [&root](const std::string& name) { return root.child(name); };
  auto add_linear = [&](const std::string& w, const std::string& b, int fan_in, int fan_out) {
    RngStream rw = rng_for(w);
    RngStream rb = rng_for(b);
    model.params.add(w, wave::xavier_init(fan_in, fan_out, rw));
    model.params.add(b, wave::bias_init(fan_in, fan_out, rb));
  };
  auto add_phases = [&](const std::string& name, int n) {
    RngStream r = rng_for(name);
    model.params.add(name, wave::phase_init(n, r), true);
  };
  auto add_bn = [&](int j, int n, int width) {
    model.params.add(bn_key(j, n) + ".gamma", RMat::Ones(1, width));
    model.params.add(bn_key(j, n) + ".beta", RMat::Zero(1, width));
    model.bn_stats[bn_key(j, n)] = wave::BatchNormStats{};
  };

  const int nb = config.bits();
  const int p = config.pol_count();
  add_linear("bs.w1", "bs.b1", nb, nb * nc);
  add_linear("bs.w2", "bs.b2", nb * nc, nb * nc);
  add_linear("bs.w3", "bs.b3", nb * nc, 2 * config.tx_ports() * nc);
  for (int l = 1; l <= config.tx.layer_count; ++l) add_phases(tx_phase_name(l), p * m_units);
  for (int j = 0; j < config.users(); ++j) {
    for (int k = 1; k <= config.rx.layer_count; ++k) add_phases(rx_phase_name(j, k), p * n_units);
    const int nbj = config.user_bits[static_cast<std::size_t>(j)];
    const int in = 2 * config.rx_ports() * nc;
    add_bn(j, 0, in);
    add_linear(ue_name(j, "w1"), ue_name(j, "b1"), in, nbj * nc);
    add_bn(j, 1, nbj * nc);
    add_linear(ue_name(j, "w2"), ue_name(j, "b2"), nbj * nc, nbj);
    add_bn(j, 2, nbj);
  }

  // audit against the architecture table
  const auto table = dimension_table(config);
  const int bs_out = static_cast<int>(model.params.at("bs.w3").value.rows());
  if (bs_out != table[3].size) {
    throw ConfigError("build_model [" + table[3].module + " " + table[3].layer + ": " + table[3].formula +
                      "]: built " + std::to_string(bs_out) + ", expected " + std::to_string(table[3].size));
  }
  return model;
}

EmnnModel build_model(const EmnnConfig& config, std::uint64_t seed) {
  config.validate();
  return build_model(config, meta::build_propagation(config.tx, config.frequencies),
                     meta::build_propagation(config.rx, config.frequencies), seed);
}

// ---------------------------------------------------------------------------
// Power control

std::vector<CMat> power_control(const std::vector<CMat>& signal, double p_t, PowerNormalization policy) {
  if (!(p_t > 0.0)) throw DomainError("power control: P_t must be > 0");
  if (signal.empty()) throw ConfigError("power control: empty signal");
  std::vector<CMat> out = signal;
  if (policy == PowerNormalization::kPerSymbol) {
    double total = 0.0;
    for (const CMat& x : signal) total += x.squaredNorm();
    if (!(total > 0.0) || !std::isfinite(total)) throw DegenerateInputError(0, "power control: zero transmit signal");
    const double scale = std::sqrt(p_t / total);
    for (CMat& x : out) x *= scale;
  } else {
    const double per = p_t / static_cast<double>(signal.size());
    for (CMat& x : out) {
      const double e = x.squaredNorm();
      if (!(e > 0.0) || !std::isfinite(e)) throw DegenerateInputError(0, "power control: zero subcarrier block");
      x *= std::sqrt(per / e);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward

std::string Trace::stage_of(NodeId id) const {
  std::string name = "input";
  for (const auto& [start, label] : stages) {
    if (start > id) break;
    name = label;
  }
  return name;
}

std::unique_ptr<Trace> trace_forward(const EmnnModel& model, const RMat& bits, const RMat& power,
                                     const chan::ChannelRealization& channel, const ForwardOptions& opt) {
  const EmnnConfig& c = model.config;
  const int B = static_cast<int>(bits.rows());
  const int nc = c.subcarriers();
  const int J = c.users();
  const int pat = c.tx_ports();
  const int par = c.rx_ports();
  if (B < 1) throw ConfigError("forward: empty batch");
  if (bits.cols() != c.bits()) {
    throw ConfigError("forward [BS DNN Input: N^bit]: bit matrix has " + std::to_string(bits.cols()) +
                      " columns, expected " + std::to_string(c.bits()));
  }
  if (power.rows() != B || power.cols() != 1) throw ConfigError("forward: power must be batch x 1");
  for (Eigen::Index b = 0; b < B; ++b) {
    if (!(power(b, 0) > 0.0) || !std::isfinite(power(b, 0))) throw DomainError("forward: P_t must be > 0");
  }
  if (channel.polarization != c.polarization) throw ConfigError("forward: channel polarization differs from the model");
  if (channel.user_count() != J) throw ConfigError("forward: channel user count differs from the model");
  const int pn = c.pol_count() * c.rx.units.count();
  const int pm = c.pol_count() * c.tx.units.count();
  for (int j = 0; j < J; ++j) {
    if (static_cast<int>(channel.users[static_cast<std::size_t>(j)].matrices.size()) != nc) {
      throw ConfigError("forward: channel subcarrier count differs from the model");
    }
    const CMat& g0 = channel.at(j, 0);
    if (g0.rows() != pn || g0.cols() != pm) {
      throw ConfigError("forward [Channel layer: JN]: channel matrix is " + std::to_string(g0.rows()) + "x" +
                        std::to_string(g0.cols()) + ", expected " + std::to_string(pn) + "x" + std::to_string(pm));
    }
  }
  if (!(opt.noise_scale >= 0.0)) throw ConfigError("forward: noise scale must be >= 0");

  auto tr = std::make_unique<Trace>();
  tr->batch = B;
  tr->noise_power = c.noise_power * opt.noise_scale * opt.noise_scale;
  Graph& g = tr->graph;
  auto mark = [&](const char* stage) { tr->stages.emplace_back(g.size(), stage); };
  auto P = [&](const std::string& name) { return g.param(model.params.at(name)); };

  mark("bs_dnn");
  tr->bits = g.constant(RMat(bits));
  NodeId h = g.relu(g.affine(tr->bits, P("bs.w1"), P("bs.b1")));
  h = g.relu(g.affine(h, P("bs.w2"), P("bs.b2")));
  NodeId o = g.affine(h, P("bs.w3"), P("bs.b3"));
  if (c.bs_output_relu) o = g.relu(o);

  mark("power_control");
  RMat targets;
  if (c.power == PowerNormalization::kPerSymbol) {
    targets = power;
  } else {
    targets = power.replicate(1, nc) / static_cast<double>(nc);
  }
  tr->tx_signal = g.power_scale(o, std::move(targets));
  for (int i = 0; i < nc; ++i) tr->tx_symbols.push_back(g.pack(tr->tx_signal, i * 2 * pat, pat));

  mark("tx_sim");
  std::vector<NodeId> t_chain(static_cast<std::size_t>(nc));
  for (int i = 0; i < nc; ++i) {
    const auto& gaps = model.tx_gaps[static_cast<std::size_t>(i)];
    NodeId t = g.phase_left(P(tx_phase_name(1)), g.constant_ref(gaps[0]));
    for (int l = 1; l < c.tx.layer_count; ++l) {
      t = g.matmul(g.constant_ref(gaps[static_cast<std::size_t>(l)]), t);
      t = g.phase_left(P(tx_phase_name(l + 1)), t);
    }
    t_chain[static_cast<std::size_t>(i)] = t;
  }

  mark("channel");
  const double inv_sigma = 1.0 / std::sqrt(c.noise_power);
  std::vector<std::vector<NodeId>> w(static_cast<std::size_t>(J), std::vector<NodeId>(static_cast<std::size_t>(nc)));
  for (int j = 0; j < J; ++j) {
    for (int i = 0; i < nc; ++i) {
      NodeId gc = g.constant(CMat(channel.at(j, i) * inv_sigma));
      w[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = g.matmul(gc, t_chain[static_cast<std::size_t>(i)]);
    }
  }

  mark("rx_sim");
  tr->rx_clean.assign(static_cast<std::size_t>(J), {});
  for (int j = 0; j < J; ++j) {
    for (int i = 0; i < nc; ++i) {
      const auto& gaps = model.rx_gaps[static_cast<std::size_t>(i)];
      NodeId x = w[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
      for (int k = c.rx.layer_count; k >= 1; --k) {
        x = g.phase_left(P(rx_phase_name(j, k)), x);
        x = g.matmul(g.constant_ref(gaps[static_cast<std::size_t>(k - 1)]), x);
      }
      tr->rx_clean[static_cast<std::size_t>(j)].push_back(g.matmul(x, tr->tx_symbols[static_cast<std::size_t>(i)]));
    }
  }

  mark("noise");
  tr->rx_noisy = tr->rx_clean;
  if (opt.noise_scale > 0.0) {
    const RngStream noise_root(opt.noise_seed);
    const double sd = opt.noise_scale * std::sqrt(0.5);
    for (int j = 0; j < J; ++j) {
      for (int i = 0; i < nc; ++i) {
        RngStream r = noise_root.child(static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(nc) +
                                       static_cast<std::uint64_t>(i));
        CMat n(par, B);
        for (int b = 0; b < B; ++b) {
          for (int a = 0; a < par; ++a) {
            const double re = r.normal(0.0, sd);
            const double im = r.normal(0.0, sd);
            n(a, b) = cdouble(re, im);
          }
        }
        auto& slot = tr->rx_noisy[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
        slot = g.add(slot, g.constant(std::move(n)));
      }
    }
  }

  mark("ue_dnn");
  for (int j = 0; j < J; ++j) {
    NodeId r = g.concat(tr->rx_noisy[static_cast<std::size_t>(j)]);
    tr->rx_input.push_back(r);
    auto bn = [&](NodeId x, int n) {
      const std::string key = bn_key(j, n);
      NodeId out = g.batch_norm(x, P(key + ".gamma"), P(key + ".beta"), &model.bn_stats.at(key), opt.training,
                                c.bn_eps);
      tr->batch_norm.emplace_back(out, key);
      return out;
    };
    NodeId x = bn(r, 0);
    x = g.relu(g.affine(x, P(ue_name(j, "w1")), P(ue_name(j, "b1"))));
    x = bn(x, 1);
    x = g.relu(g.affine(x, P(ue_name(j, "w2")), P(ue_name(j, "b2"))));
    x = bn(x, 2);
    tr->soft.push_back(g.sigmoid(x));
  }

  mark("loss");
  for (int j = 0; j < J; ++j) {
    const int nbj = c.user_bits[static_cast<std::size_t>(j)];
    tr->user_loss.push_back(g.bce(tr->soft[static_cast<std::size_t>(j)], bits.middleCols(c.bit_offset(j), nbj), 1e-12));
  }
  tr->loss = tr->user_loss[0];
  for (int j = 1; j < J; ++j) tr->loss = g.add(tr->loss, tr->user_loss[static_cast<std::size_t>(j)]);
  return tr;
}

void evaluate(Trace& trace) {
  Graph& g = trace.graph;
  g.forward();
  for (NodeId id = 0; id < g.size(); ++id) {
    const bool ok = g.is_complex(id) ? wave::all_finite(g.complex_value(id)) : wave::all_finite(g.real_value(id));
    if (!ok) {
      throw NumericalError("forward: non-finite values first appear in stage '" + trace.stage_of(id) + "' (" +
                           wave::op_name(g.op(id)) + " node " + std::to_string(id) + ")");
    }
  }
}

ForwardOutput collect(const Trace& tr, const EmnnConfig& c) {
  const Graph& g = tr.graph;
  ForwardOutput out;
  for (NodeId s : tr.soft) out.soft.push_back(g.real_value(s));
  out.loss = g.scalar(tr.loss);
  const double b = static_cast<double>(tr.batch);
  for (NodeId x : tr.tx_symbols) out.diagnostics.tx_power.push_back(g.complex_value(x).squaredNorm() / b);
  for (int j = 0; j < c.users(); ++j) {
    std::vector<double> per;
    double total = 0.0;
    for (NodeId y : tr.rx_clean[static_cast<std::size_t>(j)]) {
      per.push_back(g.complex_value(y).squaredNorm() / b * c.noise_power);
      total += per.back();
    }
    out.diagnostics.rx_power.push_back(per);
    const double noise = c.noise_power * c.rx_ports() * c.subcarriers();
    out.diagnostics.snr_db.push_back(10.0 * std::log10(total / noise));
  }
  return out;
}

ForwardOutput forward(const EmnnModel& model, const RMat& bits, const RMat& power,
                      const chan::ChannelRealization& channel, const ForwardOptions& opt) {
  auto tr = trace_forward(model, bits, power, channel, opt);
  evaluate(*tr);
  return collect(*tr, model.config);
}

void commit_batch_norm(EmnnModel& model, const Trace& trace) {
  if (!trace.graph.forwarded()) throw StateError("commit_batch_norm: trace has not been evaluated");
  const double m = model.config.bn_momentum;
  const double n = static_cast<double>(trace.batch);
  const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
  for (const auto& [node, key] : trace.batch_norm) {
    wave::BatchNormStats& s = model.bn_stats.at(key);
    const RMat mean = trace.graph.batch_mean(node);
    const RMat var = trace.graph.batch_var(node) * unbias;
    if (!s.initialized) {
      s.mean = mean;
      s.var = var;
      s.initialized = true;
    } else {
      s.mean = (1.0 - m) * s.mean + m * mean;
      s.var = (1.0 - m) * s.var + m * var;
    }
  }
}

RMat hard_decision(const RMat& soft) {
  return (soft.array() >= 0.5).cast<double>().matrix();
}

std::vector<RMat> hard_decision(const std::vector<RMat>& soft) {
  std::vector<RMat> out;
  out.reserve(soft.size());
  for (const RMat& s : soft) out.push_back(hard_decision(s));
  return out;
}

CMat wave_domain_response(const EmnnModel& model, const chan::ChannelRealization& channel, int subcarrier,
                          int user) {
  const bool dual = model.config.polarization == Polarization::kDual;
  const auto tx = model.tx_stack();
  const auto rx = model.rx_stack(user);
  const CMat t = dual ? meta::dp_chain(tx, model.tx_prop, subcarrier) : meta::tx_chain(tx, model.tx_prop, subcarrier);
  const CMat r = dual ? meta::dp_chain(rx, model.rx_prop, subcarrier) : meta::rx_chain(rx, model.rx_prop, subcarrier);
  return wave::cmatmul(wave::cmatmul(r, channel.at(user, subcarrier)), t);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json layout_to_json(const PanelLayout& l) {
  return {{"units", {l.units.x, l.units.y}},
          {"unit_spacing", l.unit_spacing},
          {"layer_spacing", l.layer_spacing},
          {"layers", l.layer_count},
          {"side", meta::to_string(l.side)},
          {"antennas", {l.antennas.x, l.antennas.y}}};
}

PanelLayout layout_from_json(const json& j) {
  PanelLayout l;
  const auto u = j.at("units").get<std::array<int, 2>>();
  const auto a = j.at("antennas").get<std::array<int, 2>>();
  l.units = {u[0], u[1]};
  l.antennas = {a[0], a[1]};
  l.unit_spacing = j.at("unit_spacing").get<double>();
  l.layer_spacing = j.at("layer_spacing").get<double>();
  l.layer_count = j.at("layers").get<int>();
  const std::string side = j.at("side").get<std::string>();
  if (side != "tx" && side != "rx") throw IoError("checkpoint: unknown layout side '" + side + "'");
  l.side = side == "tx" ? Side::kTx : Side::kRx;
  return l;
}

json rmat_to_json(const RMat& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", std::vector<double>(m.data(), m.data() + m.size())}};
}

RMat rmat_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto v = j.at("values").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(v.size()) != rows * cols) {
    throw IoError("checkpoint: array size does not match its shape");
  }
  return Eigen::Map<const RMat>(v.data(), rows, cols);
}

json config_json(const EmnnConfig& c) {
  return {{"polarization", meta::to_string(c.polarization)},
              {"tx", layout_to_json(c.tx)},
              {"rx", layout_to_json(c.rx)},
              {"user_bits", c.user_bits},
              {"total_bits", c.total_bits},
              {"frequencies", c.frequencies},
              {"power", to_string(c.power)},
              {"bs_output_relu", c.bs_output_relu},
              {"bn_momentum", c.bn_momentum},
              {"bn_eps", c.bn_eps},
              {"noise_power", c.noise_power}};
}

}  // namespace

std::string config_text(const EmnnConfig& config) { return config_json(config).dump(); }

std::string save_checkpoint(const EmnnModel& model, const std::map<std::string, std::string>& metadata) {
  const EmnnConfig& c = model.config;
  const json cfg = config_json(c);
  json params = json::array();
  for (const auto& [name, p] : model.params) {
    json jp = rmat_to_json(p.value);
    jp["name"] = name;
    jp["phase"] = p.phase;
    jp["trainable"] = p.trainable;
    params.push_back(std::move(jp));
  }
  json bn = json::array();
  for (const auto& [key, s] : model.bn_stats) {
    json jb = {{"key", key}, {"initialized", s.initialized}};
    if (s.initialized) {
      jb["mean"] = rmat_to_json(s.mean);
      jb["var"] = rmat_to_json(s.var);
    }
    bn.push_back(std::move(jb));
  }
  json gaps = json::array();
  auto dump_gaps = [&gaps](const meta::PropagationSet& prop, const meta::PropagationSet& ref) {
    for (int i = 0; i < prop.subcarriers(); ++i) {
      for (int k = 0; k < prop.gap_count(); ++k) {
        const CMat& m = prop.at(i, k);
        if (m == ref.at(i, k)) continue;
        gaps.push_back({{"side", meta::to_string(prop.side)},
                        {"subcarrier", i},
                        {"gap", k},
                        {"re", rmat_to_json(m.real())},
                        {"im", rmat_to_json(m.imag())}});
      }
    }
  };
  dump_gaps(model.tx_prop, meta::build_propagation(c.tx, c.frequencies));
  dump_gaps(model.rx_prop, meta::build_propagation(c.rx, c.frequencies));
  json root = {{"format", kCheckpointFormat},
               {"version", kCheckpointVersion},
               {"config", cfg},
               {"parameters", params},
               {"batch_norm", bn},
               {"calibrated_gaps", gaps},
               {"metadata", metadata}};
  return root.dump(1) + "\n";
}

EmnnModel load_checkpoint(const std::string& text, std::map<std::string, std::string>* metadata) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  try {
    if (root.at("format").get<std::string>() != kCheckpointFormat) throw IoError("checkpoint: unknown format");
    if (root.at("version").get<int>() != kCheckpointVersion) throw IoError("checkpoint: unsupported version");
    const json& jc = root.at("config");
    EmnnConfig c;
    const std::string pol = jc.at("polarization").get<std::string>();
    if (pol != "single" && pol != "dual") throw IoError("checkpoint: unknown polarization '" + pol + "'");
    c.polarization = pol == "dual" ? Polarization::kDual : Polarization::kSingle;
    c.tx = layout_from_json(jc.at("tx"));
    c.rx = layout_from_json(jc.at("rx"));
    c.user_bits = jc.at("user_bits").get<std::vector<int>>();
    c.total_bits = jc.at("total_bits").get<int>();
    c.frequencies = jc.at("frequencies").get<std::vector<double>>();
    c.power = power_normalization_from_string(jc.at("power").get<std::string>());
    c.bs_output_relu = jc.at("bs_output_relu").get<bool>();
    c.bn_momentum = jc.at("bn_momentum").get<double>();
    c.bn_eps = jc.at("bn_eps").get<double>();
    c.noise_power = jc.at("noise_power").get<double>();

    EmnnModel model = build_model(c, 0);
    std::size_t seen = 0;
    for (const auto& jp : root.at("parameters")) {
      const std::string name = jp.at("name").get<std::string>();
      if (!model.params.contains(name)) throw IoError("checkpoint: unexpected parameter '" + name + "'");
      wave::Parameter& p = model.params.at(name);
      RMat v = rmat_from_json(jp);
      if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
        throw IoError("checkpoint: parameter '" + name + "' has the wrong shape");
      }
      p.value = std::move(v);
      p.trainable = jp.at("trainable").get<bool>();
      ++seen;
    }
    if (seen != model.params.size()) throw IoError("checkpoint: missing parameters");
    for (const auto& jb : root.at("batch_norm")) {
      const std::string key = jb.at("key").get<std::string>();
      auto it = model.bn_stats.find(key);
      if (it == model.bn_stats.end()) throw IoError("checkpoint: unexpected batch-norm key '" + key + "'");
      it->second.initialized = jb.at("initialized").get<bool>();
      if (it->second.initialized) {
        it->second.mean = rmat_from_json(jb.at("mean"));
        it->second.var = rmat_from_json(jb.at("var"));
      }
    }
    for (const auto& jg : root.at("calibrated_gaps")) {
      const Side side = jg.at("side").get<std::string>() == "tx" ? Side::kTx : Side::kRx;
      CMat m(rmat_from_json(jg.at("re")).cast<cdouble>());
      m.imag() = rmat_from_json(jg.at("im"));
      model.set_gap(side, jg.at("subcarrier").get<int>(), jg.at("gap").get<int>(), m);
    }
    if (metadata) *metadata = root.at("metadata").get<std::map<std::string, std::string>>();
    return model;
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace simofdm::emnn
