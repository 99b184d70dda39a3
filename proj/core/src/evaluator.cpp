#include "simofdm/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "simofdm/error.hpp"

namespace simofdm::evaluator {

using json = nlohmann::json;
using wave::RngStream;

namespace {

constexpr const char* kReportFormat = "simofdm-ber-report";
constexpr int kReportVersion = 1;

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

RMat drop_rows(const RMat& m, const std::vector<Eigen::Index>& keep) {
  RMat out(static_cast<Eigen::Index>(keep.size()), m.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(keep[k]);
  return out;
}

}  // namespace

std::vector<RMat> EmnnLink::transmit(const RMat& bits, const RMat& power, const chan::ChannelRealization& channel,
                                     std::uint64_t noise_seed) {
  const auto& ub = model_.config.user_bits;
  std::vector<Eigen::Index> live(static_cast<std::size_t>(bits.rows()));
  std::iota(live.begin(), live.end(), Eigen::Index{0});
  // a sample with no transmit signal is decided as all zeros
  for (;;) {
    if (live.empty()) {
      std::vector<RMat> out;
      for (int b : ub) out.push_back(RMat::Zero(bits.rows(), b));
      return out;
    }
    try {
      const emnn::ForwardOutput fo =
          emnn::forward(model_, drop_rows(bits, live), drop_rows(power, live), channel,
                        {.training = false, .noise_scale = noise_scale_, .noise_seed = noise_seed});
      std::vector<RMat> out;
      for (std::size_t j = 0; j < ub.size(); ++j) {
        RMat d = RMat::Zero(bits.rows(), ub[j]);
        const RMat h = emnn::hard_decision(fo.soft[j]);
        for (std::size_t k = 0; k < live.size(); ++k) d.row(live[k]) = h.row(static_cast<Eigen::Index>(k));
        out.push_back(std::move(d));
      }
      return out;
    } catch (const DegenerateInputError& e) {
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(e.sample()));
    }
  }
}

double ErrorCount::half_width() const {
  if (bits == 0) return 0.0;
  const double p = ber();
  return 1.959963984540054 * std::sqrt(p * (1.0 - p) / static_cast<double>(bits));
}

ErrorCount& ErrorCount::operator+=(const ErrorCount& o) {
  bits += o.bits;
  errors += o.errors;
  return *this;
}

namespace {

BerMeasurement measure_impl(BitLink& link, const std::function<const chan::ChannelRealization&()>& next_channel,
                            double p_t, long n_symbols, std::uint64_t seed, int chunk, Transcript* transcript) {
  if (n_symbols < 1) throw ConfigError("measure_ber: need at least one symbol");
  if (chunk < 1) throw ConfigError("measure_ber: chunk must be >= 1");
  if (!(p_t > 0.0)) throw DomainError("measure_ber: P_t must be > 0");
  const std::vector<int> ub = link.user_bits();
  const int nbit = std::accumulate(ub.begin(), ub.end(), 0);
  BerMeasurement m;
  m.users.assign(ub.size(), {});
  const RngStream root = RngStream(seed).child("ber");
  long done = 0;
  for (std::uint64_t k = 0; done < n_symbols; ++k) {
    const int b = static_cast<int>(std::min<long>(chunk, n_symbols - done));
    RngStream bit_rng = root.child(k).child("bits");
    const RMat bits = train::draw_bits(b, nbit, bit_rng);
    const RMat power = RMat::Constant(b, 1, p_t);
    const std::vector<RMat> dec = link.transmit(bits, power, next_channel(), root.child(k).child("noise")());
    int offset = 0;
    for (std::size_t j = 0; j < ub.size(); ++j) {
      const RMat& d = dec[j];
      if (d.rows() != b || d.cols() != ub[j]) throw ConfigError("measure_ber: link returned a wrong decision shape");
      const auto wrong = (d.array() != bits.middleCols(offset, ub[j]).array()).count();
      m.users[j].errors += static_cast<std::uint64_t>(wrong);
      m.users[j].bits += static_cast<std::uint64_t>(b) * static_cast<std::uint64_t>(ub[j]);
      offset += ub[j];
    }
    if (transcript) {
      transcript->sent.push_back(bits);
      transcript->decided.push_back(dec);
    }
    done += b;
  }
  for (const ErrorCount& u : m.users) m.aggregate += u;
  return m;
}

}  // namespace

BerMeasurement measure_ber(BitLink& link, const chan::ChannelRealization& channel, double p_t, long n_symbols,
                           std::uint64_t seed, int chunk, Transcript* transcript) {
  return measure_impl(
      link, [&channel]() -> const chan::ChannelRealization& { return channel; }, p_t, n_symbols, seed, chunk,
      transcript);
}

BerMeasurement measure_ber(BitLink& link, chan::ChannelProvider& provider, double p_t, long n_symbols,
                           std::uint64_t seed, int chunk) {
  chan::ChannelRealization current;
  return measure_impl(
      link,
      [&]() -> const chan::ChannelRealization& {
        current = provider.provide();
        return current;
      },
      p_t, n_symbols, seed, chunk, nullptr);
}

const char* to_string(Recipe r) {
  switch (r) {
    case Recipe::kFinetune: return "finetune";
    case Recipe::kRetrain: return "retrain";
    case Recipe::kNone: return "none";
  }
  return "?";
}

Recipe recipe_from_string(const std::string& s) {
  if (s == "finetune") return Recipe::kFinetune;
  if (s == "retrain") return Recipe::kRetrain;
  if (s == "none") return Recipe::kNone;
  throw ConfigError("unknown Monte-Carlo recipe '" + s + "' (finetune | retrain | none)");
}

double BerPoint::replica_spread() const {
  const std::size_t n = replica_ber.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(replica_ber.begin(), replica_ber.end(), 0.0) / static_cast<double>(n);
  double s = 0.0;
  for (double v : replica_ber) s += (v - mean) * (v - mean);
  return std::sqrt(s / static_cast<double>(n - 1));
}

std::vector<ReplicaResult> run_replicas(const ModelFactory& factory, const chan::ChannelSetup& setup,
                                        const MonteCarloConfig& mc, const std::vector<double>& powers_dbm,
                                        std::uint64_t seed) {
  if (mc.replicas < 1) throw ConfigError("monte carlo: replicas must be >= 1");
  if (mc.threads < 1) throw ConfigError("monte carlo: threads must be >= 1");
  if (powers_dbm.empty()) throw ConfigError("monte carlo: no test powers");
  setup.validate();
  const bool trains = mc.recipe != Recipe::kNone && mc.finetune.epochs > 0;
  if (trains) mc.finetune.validate();

  std::vector<ReplicaResult> results(static_cast<std::size_t>(mc.replicas));
  auto run_one = [&](int r) {
    ReplicaResult& out = results[static_cast<std::size_t>(r)];
    out.index = r;
    const RngStream rr = RngStream(seed).child("replica").child(static_cast<std::uint64_t>(r));
    const chan::ChannelRealization ch = chan::realize(setup, rr.child("channel"));
    emnn::EmnnModel model = factory(r);
    if (trains) {
      train::TrainConfig cfg = mc.finetune;
      cfg.seed = rr.child("train")();
      chan::ChannelProvider inst = chan::ChannelProvider::instantaneous(ch);
      const train::TrainMetrics tm = train::train(model, inst, cfg, "finetune");
      if (tm.diverged) {
        out.dropped = true;
        out.reason = tm.divergence;
        return;
      }
    }
    EmnnLink link(model);
    for (std::size_t k = 0; k < powers_dbm.size(); ++k) {
      out.per_power.push_back(measure_ber(link, ch, wave::dbm_to_watts(powers_dbm[k]), mc.test_symbols,
                                          rr.child("test").child(k)(), mc.chunk));
    }
  };

  if (mc.threads == 1) {
    for (int r = 0; r < mc.replicas; ++r) run_one(r);
    return results;
  }
  std::atomic<int> next{0};
  std::mutex err_lock;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(mc.threads, mc.replicas); ++t) {
    pool.emplace_back([&] {
      for (int r = next++; r < mc.replicas; r = next++) {
        try {
          run_one(r);
        } catch (...) {
          std::lock_guard<std::mutex> g(err_lock);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

std::vector<BerPoint> pool_replicas(const std::vector<ReplicaResult>& replicas, const std::vector<double>& powers_dbm,
                                    const std::string& mode, const std::string& value) {
  std::vector<BerPoint> points;
  for (std::size_t k = 0; k < powers_dbm.size(); ++k) {
    BerPoint p;
    p.mode = mode;
    p.value = value;
    p.power_dbm = powers_dbm[k];
    for (const ReplicaResult& r : replicas) {
      if (r.dropped) {
        ++p.dropped;
        continue;
      }
      const BerMeasurement& m = r.per_power.at(k);
      if (p.users.empty()) p.users.assign(m.users.size(), {});
      for (std::size_t j = 0; j < m.users.size(); ++j) p.users[j] += m.users[j];
      p.aggregate += m.aggregate;
      p.replica_ber.push_back(m.aggregate.ber());
      ++p.replicas;
    }
    if (p.replicas == 0) {
      p.skipped = true;
      p.reason = "all replicas dropped";
    }
    points.push_back(std::move(p));
  }
  return points;
}

BerPoint monte_carlo_ber(const ModelFactory& factory, const chan::ChannelSetup& setup, const MonteCarloConfig& mc,
                         double power_dbm, std::uint64_t seed) {
  const auto replicas = run_replicas(factory, setup, mc, {power_dbm}, seed);
  return pool_replicas(replicas, {power_dbm}, setup.polarization == Polarization::kDual ? "dpsim" : "sim",
                       fmt(power_dbm))
      .front();
}

// ---------------------------------------------------------------------------
// Experiments and sweeps

chan::ChannelSetup Experiment::channel_setup() const {
  chan::ChannelSetup s;
  s.scene = scene;
  s.tx = model.tx;
  s.rx = model.rx;
  s.polarization = model.polarization;
  s.epsilon = epsilon;
  s.frequencies = model.frequencies;
  return s;
}

Experiment Experiment::with_mode(Polarization mode) const {
  Experiment ex = *this;
  const bool dual = mode == Polarization::kDual;
  ex.model.polarization = mode;
  ex.model.tx.antennas = dual ? dp_tx_antennas : sim_tx_antennas;
  ex.model.rx.antennas = dual ? dp_rx_antennas : sim_rx_antennas;
  return ex;
}

emnn::EmnnModel initial_model(const Experiment& ex) {
  emnn::EmnnModel model = emnn::build_model(ex.model, RngStream(ex.seed).child("experiment").child("init")());
  if (ex.prepare_model) ex.prepare_model(model);
  return model;
}

emnn::EmnnModel pretrain_base(const Experiment& ex, train::TrainMetrics* metrics,
                              const train::EpochCallback& on_epoch) {
  const RngStream root = RngStream(ex.seed).child("experiment");
  emnn::EmnnModel model = initial_model(ex);
  if (ex.pretrain.epochs > 0) {
    train::TrainConfig cfg = ex.pretrain;
    cfg.seed = root.child("pretrain")();
    chan::ChannelProvider stat = chan::ChannelProvider::statistical(ex.channel_setup(), root.child("channels")());
    train::TrainMetrics m = train::train(model, stat, cfg, "pretrain", on_epoch);
    const bool diverged = m.diverged;
    const std::string why = m.divergence;
    if (metrics) *metrics = std::move(m);
    if (diverged) throw NumericalError("pretraining diverged: " + why);
  }
  return model;
}

namespace {

int parse_int(const std::string& variable, const std::string& value) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) throw ConfigError("sweep " + variable + ": '" + value + "' is not an integer");
  return v;
}

double parse_double(const std::string& variable, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) throw ConfigError("sweep " + variable + ": '" + value + "' is not a number");
  return v;
}

// Retrain replicas start from an untrained model; the others share the pretrained base.
emnn::EmnnModel base_for(const Experiment& ex) {
  if (ex.monte_carlo.recipe == Recipe::kRetrain) return initial_model(ex);
  return pretrain_base(ex);
}

}  // namespace

Experiment apply_sweep_value(const Experiment& base, const std::string& variable, const std::string& value) {
  Experiment ex = base;
  emnn::EmnnConfig& c = ex.model;
  if (variable == "power_dbm") {
    ex.test_power_dbm = parse_double(variable, value);
  } else if (variable == "units") {
    const int u = parse_int(variable, value);
    c.tx.units = {u, u};
    c.rx.units = {u, u};
  } else if (variable == "layers") {
    const int l = parse_int(variable, value);
    c.tx.layer_count = l;
    c.rx.layer_count = l;
  } else if (variable == "tx_antennas") {
    const int a = parse_int(variable, value);
    c.tx.antennas = {a, a};
  } else if (variable == "rx_antennas") {
    const int a = parse_int(variable, value);
    c.rx.antennas = {a, a};
  } else if (variable == "subcarriers") {
    const int nc = parse_int(variable, value);
    if (nc < 1) throw ConfigError("sweep subcarriers: need at least one subcarrier");
    c.frequencies = meta::subcarrier_frequencies(ex.center_frequency, ex.bandwidth, nc);
  } else if (variable == "bits") {
    std::vector<int> alloc;
    std::stringstream ss(value);
    for (std::string part; std::getline(ss, part, ':');) alloc.push_back(parse_int(variable, part));
    c.user_bits = alloc;
    c.total_bits = 0;
    if (alloc.size() > ex.scene.users.size()) {
      throw ConfigError("sweep bits: " + std::to_string(alloc.size()) + " users but the scene has " +
                        std::to_string(ex.scene.users.size()));
    }
    ex.scene.users.resize(alloc.size());
  } else if (variable == "epsilon") {
    ex.epsilon = parse_double(variable, value);
  } else {
    throw ConfigError("sweep: unknown variable '" + variable +
                      "' (power_dbm | units | layers | tx_antennas | rx_antennas | subcarriers | bits | epsilon)");
  }
  c.validate();
  ex.channel_setup().validate();
  if (ex.model.users() != static_cast<int>(ex.scene.users.size())) {
    throw ConfigError("experiment: " + std::to_string(ex.model.users()) + " users in the bit allocation but " +
                      std::to_string(ex.scene.users.size()) + " in the scene");
  }
  return ex;
}

BerReport sweep(const SweepGrid& grid, const Experiment& base) {
  if (grid.values.empty()) throw ConfigError("sweep: empty grid");
  if (grid.modes.empty()) throw ConfigError("sweep: no polarization mode requested");
  BerReport report;
  report.axis = grid.variable;
  report.seed = base.seed;
  for (Polarization mode : grid.modes) {
    const std::string mode_name = mode == Polarization::kDual ? "dpsim" : "sim";
    const Experiment mex = base.with_mode(mode);
    auto skipped = [&](const std::string& value, double power, const std::string& why) {
      BerPoint p;
      p.mode = mode_name;
      p.value = value;
      p.power_dbm = power;
      p.skipped = true;
      p.reason = why;
      return p;
    };
    if (grid.variable == "power_dbm") {
      std::vector<double> powers;
      for (const auto& v : grid.values) powers.push_back(apply_sweep_value(mex, grid.variable, v).test_power_dbm);
      const emnn::EmnnModel base_model = base_for(mex);
      const auto reps =
          run_replicas([&](int) { return base_model; }, mex.channel_setup(), mex.monte_carlo, powers, mex.seed);
      auto pts = pool_replicas(reps, powers, mode_name, "");
      for (std::size_t k = 0; k < pts.size(); ++k) {
        pts[k].value = grid.values[k];
        report.points.push_back(std::move(pts[k]));
      }
      continue;
    }
    for (const auto& v : grid.values) {
      Experiment ex;
      try {
        ex = apply_sweep_value(mex, grid.variable, v);
        if (!ex.model.tx.antennas_fit() || !ex.model.rx.antennas_fit()) {
          throw ConfigError("antenna grid larger than the metasurface layer");
        }
      } catch (const ConfigError& e) {
        report.points.push_back(skipped(v, mex.test_power_dbm, e.what()));
        continue;
      } catch (const DomainError& e) {
        report.points.push_back(skipped(v, mex.test_power_dbm, e.what()));
        continue;
      }
      const emnn::EmnnModel base_model = base_for(ex);
      const auto reps = run_replicas([&](int) { return base_model; }, ex.channel_setup(), ex.monte_carlo,
                                     {ex.test_power_dbm}, ex.seed);
      report.points.push_back(pool_replicas(reps, {ex.test_power_dbm}, mode_name, v).front());
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report I/O

std::string BerReport::to_csv() const {
  std::ostringstream os;
  os << "mode,axis,value,power_dbm,user,bits,errors,ber,half_width,replicas,dropped,skipped,reason\n";
  for (const BerPoint& p : points) {
    auto row = [&](const std::string& user, const ErrorCount& c) {
      os << p.mode << "," << axis << "," << csv_safe(p.value) << "," << fmt(p.power_dbm) << "," << user << ","
         << c.bits << "," << c.errors << "," << fmt(c.ber()) << "," << fmt(c.half_width()) << "," << p.replicas
         << "," << p.dropped << "," << (p.skipped ? 1 : 0) << "," << csv_safe(p.reason) << "\n";
    };
    for (std::size_t j = 0; j < p.users.size(); ++j) row(std::to_string(j), p.users[j]);
    row("all", p.aggregate);
  }
  return os.str();
}

std::string BerReport::to_json() const {
  json j;
  j["format"] = kReportFormat;
  j["version"] = kReportVersion;
  j["axis"] = axis;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["metadata"] = metadata;
  json pts = json::array();
  for (const BerPoint& p : points) {
    json users = json::array();
    for (const ErrorCount& c : p.users) users.push_back({{"bits", c.bits}, {"errors", c.errors}});
    pts.push_back({{"mode", p.mode},
                   {"value", p.value},
                   {"power_dbm", p.power_dbm},
                   {"users", users},
                   {"aggregate", {{"bits", p.aggregate.bits}, {"errors", p.aggregate.errors}}},
                   {"aggregate_ber", p.aggregate.ber()},
                   {"half_width", p.aggregate.half_width()},
                   {"replica_ber", p.replica_ber},
                   {"replicas", p.replicas},
                   {"dropped", p.dropped},
                   {"skipped", p.skipped},
                   {"reason", p.reason}});
  }
  j["points"] = pts;
  return j.dump(2);
}

BerReport BerReport::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != kReportFormat) throw IoError("BER report: unknown format");
    if (j.at("version") != kReportVersion) throw IoError("BER report: unsupported version");
    BerReport r;
    r.axis = j.at("axis").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    for (const json& p : j.at("points")) {
      BerPoint b;
      b.mode = p.at("mode").get<std::string>();
      b.value = p.at("value").get<std::string>();
      b.power_dbm = p.at("power_dbm").get<double>();
      for (const json& u : p.at("users")) b.users.push_back({u.at("bits").get<std::uint64_t>(), u.at("errors").get<std::uint64_t>()});
      b.aggregate = {p.at("aggregate").at("bits").get<std::uint64_t>(), p.at("aggregate").at("errors").get<std::uint64_t>()};
      b.replica_ber = p.at("replica_ber").get<std::vector<double>>();
      b.replicas = p.at("replicas").get<int>();
      b.dropped = p.at("dropped").get<int>();
      b.skipped = p.at("skipped").get<bool>();
      b.reason = p.at("reason").get<std::string>();
      r.points.push_back(std::move(b));
    }
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("BER report: malformed JSON: ") + e.what());
  }
}

BerReport BerReport::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("mode,axis,value,power_dbm,user,bits,errors", 0) != 0) {
    throw IoError("BER report CSV: missing or unknown header");
  }
  BerReport r;
  BerPoint cur;
  bool open = false;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 13) throw IoError("BER report CSV: line " + std::to_string(lineno) + " has " +
                                      std::to_string(f.size()) + " fields, expected 13");
    try {
      r.axis = f[1];
      const ErrorCount c{std::stoull(f[5]), std::stoull(f[6])};
      if (!open) {
        cur = BerPoint{};
        cur.mode = f[0];
        cur.value = f[2];
        cur.power_dbm = std::stod(f[3]);
        cur.replicas = std::stoi(f[9]);
        cur.dropped = std::stoi(f[10]);
        cur.skipped = f[11] == "1";
        cur.reason = f[12];
        open = true;
      }
      if (f[4] == "all") {
        cur.aggregate = c;
        r.points.push_back(cur);
        open = false;
      } else {
        cur.users.push_back(c);
      }
    } catch (const std::logic_error&) {
      throw IoError("BER report CSV: line " + std::to_string(lineno) + " has a malformed number");
    }
  }
  if (open) throw IoError("BER report CSV: truncated point (no 'all' row)");
  if (r.points.empty()) throw IoError("BER report CSV: no data rows");
  return r;
}

}  // namespace simofdm::evaluator
