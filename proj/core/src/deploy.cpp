#include "simofdm/deploy.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "json.hpp"

#include "simofdm/error.hpp"
#include "simofdm/wavemath/optimizer.hpp"

namespace simofdm::deploy {

using json = nlohmann::json;
using wave::cdouble;

namespace {

constexpr const char* kBundleHeader = "simofdm-bundle 1";
constexpr const char* kPhaseMapHeader = "simofdm-phase-map 1";
constexpr const char* kCalibrationFormat = "simofdm-calibration";
constexpr int kCalibrationVersion = 1;

json rmat_json(const RMat& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", std::vector<double>(m.data(), m.data() + m.size())}};
}

RMat rmat_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto v = j.at("values").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(v.size()) != rows * cols) {
    throw IoError("array size does not match its shape");
  }
  return Eigen::Map<const RMat>(v.data(), rows, cols);
}

bool is_user_param(const std::string& name, int j) {
  const std::string g = emnn::parameter_group(name);
  return g == "ue" + std::to_string(j) || g == "rx" + std::to_string(j);
}

}  // namespace

// ---------------------------------------------------------------------------
// Quantization

double Quantization::step() const { return bits == 0 ? 0.0 : wave::kTwoPi / static_cast<double>(levels()); }

std::vector<double> Quantization::codebook() const {
  std::vector<double> c;
  for (int k = 0; k < levels(); ++k) c.push_back(k * step());
  return c;
}

QuantizedPhases quantize_phases(std::span<const double> phases, int bits) {
  if (bits < 1 || bits > 30) throw ConfigError("quantize_phases: bits must lie in [1, 30]");
  QuantizedPhases q;
  q.quantization.bits = bits;
  const int n = q.quantization.levels();
  const double step = q.quantization.step();
  for (double t : phases) {
    if (!std::isfinite(t)) throw DomainError("quantize_phases: non-finite phase");
    long level = std::lround(wave::wrap_phase(t) / step) % n;
    q.levels.push_back(static_cast<int>(level));
    q.phases.push_back(static_cast<double>(level) * step);
  }
  return q;
}

void quantize_model_phases(emnn::EmnnModel& model, int bits) {
  for (const std::string& name : model.phase_parameters()) {
    RMat& v = model.params.at(name).value;
    const QuantizedPhases q = quantize_phases(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), bits);
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = q.phases[static_cast<std::size_t>(k)];
  }
}

// ---------------------------------------------------------------------------
// Hashes

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw NumericalError("sha256: digest computation failed");
  }
  std::ostringstream os;
  for (unsigned int k = 0; k < len; ++k) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[k]);
  return os.str();
}

std::string config_hash(const emnn::EmnnConfig& config) { return sha256_hex(emnn::config_text(config)); }

// ---------------------------------------------------------------------------
// Bundles

std::string DeployBundle::name() const { return role == Role::kBs ? "bs" : "ue" + std::to_string(user); }

std::string DeployBundle::payload() const {
  json params = json::object();
  for (const auto& [n, v] : parameters) params[n] = rmat_json(v);
  json bn = json::object();
  for (const auto& [k, s] : batch_norm) {
    json e = {{"initialized", s.initialized}};
    if (s.initialized) {
      e["mean"] = rmat_json(s.mean);
      e["var"] = rmat_json(s.var);
    }
    bn[k] = e;
  }
  json j = {{"role", role == Role::kBs ? "bs" : "ue"},
            {"user", user},
            {"config_hash", config_hash},
            {"quantization_bits", quantization.bits},
            {"parameters", params},
            {"batch_norm", bn}};
  return j.dump();
}

std::string DeployBundle::serialize() const {
  const std::string p = payload();
  return std::string(kBundleHeader) + "\nsha256 " + sha256_hex(p) + "\n" + p + "\n";
}

DeployBundle DeployBundle::parse(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  std::string hash_line;
  std::string payload;
  std::string rest;
  if (!std::getline(in, header) || header != kBundleHeader) throw IoError("bundle: missing or unknown header");
  if (!std::getline(in, hash_line) || hash_line.rfind("sha256 ", 0) != 0) throw IoError("bundle: missing hash line");
  if (!std::getline(in, payload)) throw IoError("bundle: missing payload");
  if (std::getline(in, rest) && !rest.empty()) throw IoError("bundle: trailing data after payload");
  if (sha256_hex(payload) != hash_line.substr(7)) throw IoError("bundle: payload hash mismatch");
  try {
    const json j = json::parse(payload);
    DeployBundle b;
    const std::string role = j.at("role").get<std::string>();
    if (role != "bs" && role != "ue") throw IoError("bundle: unknown role '" + role + "'");
    b.role = role == "bs" ? Role::kBs : Role::kUe;
    b.user = j.at("user").get<int>();
    b.config_hash = j.at("config_hash").get<std::string>();
    b.quantization.bits = j.at("quantization_bits").get<int>();
    for (const auto& [n, v] : j.at("parameters").items()) b.parameters[n] = rmat_from(v);
    for (const auto& [k, v] : j.at("batch_norm").items()) {
      wave::BatchNormStats s;
      s.initialized = v.at("initialized").get<bool>();
      if (s.initialized) {
        s.mean = rmat_from(v.at("mean"));
        s.var = rmat_from(v.at("var"));
      }
      b.batch_norm[k] = s;
    }
    return b;
  } catch (const json::exception& e) {
    throw IoError(std::string("bundle: malformed payload: ") + e.what());
  }
}

std::vector<DeployBundle> partition(const emnn::EmnnModel& model, Quantization q) {
  emnn::EmnnModel m = model;
  if (q.bits > 0) quantize_model_phases(m, q.bits);
  const std::string hash = config_hash(m.config);
  std::vector<DeployBundle> out;
  DeployBundle bs;
  bs.role = Role::kBs;
  bs.quantization = q;
  bs.config_hash = hash;
  for (const auto& [name, p] : m.params) {
    const std::string g = emnn::parameter_group(name);
    if (g == "bs" || g == "tx") bs.parameters[name] = p.value;
  }
  out.push_back(std::move(bs));
  for (int j = 0; j < m.config.users(); ++j) {
    DeployBundle ue;
    ue.role = Role::kUe;
    ue.user = j;
    ue.quantization = q;
    ue.config_hash = hash;
    for (const auto& [name, p] : m.params) {
      if (is_user_param(name, j)) ue.parameters[name] = p.value;
    }
    for (const auto& [key, s] : m.bn_stats) {
      if (emnn::parameter_group(key) == "ue" + std::to_string(j)) ue.batch_norm[key] = s;
    }
    out.push_back(std::move(ue));
  }
  return out;
}

emnn::EmnnModel merge(const emnn::EmnnModel& skeleton, const std::vector<DeployBundle>& bundles) {
  emnn::EmnnModel m = skeleton;
  const std::string hash = config_hash(m.config);
  std::set<std::string> covered;
  for (const DeployBundle& b : bundles) {
    if (b.config_hash != hash) throw ConfigError("merge: bundle '" + b.name() + "' was built for another configuration");
    for (const auto& [name, v] : b.parameters) {
      if (!m.params.contains(name)) throw ConfigError("merge: unknown parameter '" + name + "' in " + b.name());
      if (!covered.insert(name).second) throw ConfigError("merge: parameter '" + name + "' appears twice");
      RMat& dst = m.params.at(name).value;
      if (dst.rows() != v.rows() || dst.cols() != v.cols()) {
        throw ConfigError("merge: parameter '" + name + "' has the wrong shape");
      }
      dst = v;
    }
    for (const auto& [key, s] : b.batch_norm) {
      auto it = m.bn_stats.find(key);
      if (it == m.bn_stats.end()) throw ConfigError("merge: unknown batch-norm key '" + key + "'");
      it->second = s;
    }
  }
  for (const auto& [name, p] : m.params) {
    if (!covered.count(name)) throw ConfigError("merge: parameter '" + name + "' is not in any bundle");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Phase maps

std::string export_phase_map(const meta::MetasurfaceStack& stack, Quantization q) {
  stack.validate();
  const meta::PanelLayout& l = stack.layout;
  const int pols = stack.polarization == meta::Polarization::kDual ? 2 : 1;
  const int n = l.units.count();
  std::ostringstream os;
  os << std::setprecision(17);
  os << kPhaseMapHeader << "\n";
  os << "side " << meta::to_string(l.side) << "\n";
  os << "polarization " << meta::to_string(stack.polarization) << "\n";
  os << "units " << l.units.x << " " << l.units.y << "\n";
  os << "antennas " << l.antennas.x << " " << l.antennas.y << "\n";
  os << "unit_spacing " << l.unit_spacing << "\n";
  os << "layer_spacing " << l.layer_spacing << "\n";
  os << "layers " << l.layer_count << "\n";
  os << "quantization " << q.bits << "\n";
  os << "records " << l.layer_count * pols * n << "\n";
  os << "layer pol ix iy level phase\n";
  for (int layer = 0; layer < l.layer_count; ++layer) {
    for (int p = 0; p < pols; ++p) {
      const auto phases = stack.layer_phases(layer, p);
      std::vector<int> levels(phases.size(), -1);
      std::vector<double> values(phases.begin(), phases.end());
      if (q.bits > 0) {
        const QuantizedPhases qp = quantize_phases(phases, q.bits);
        levels = qp.levels;
        values = qp.phases;
      }
      for (int k = 0; k < n; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        os << layer + 1 << " " << p << " " << k / l.units.y << " " << k % l.units.y << " " << levels[kk] << " "
           << values[kk] << "\n";
      }
    }
  }
  return os.str();
}

meta::MetasurfaceStack import_phase_map(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kPhaseMapHeader) throw IoError("phase map: missing or unknown header");
  auto field = [&in](const std::string& key) {
    std::string l;
    if (!std::getline(in, l)) throw IoError("phase map: missing '" + key + "' line");
    std::istringstream ls(l);
    std::string k;
    ls >> k;
    if (k != key) throw IoError("phase map: expected '" + key + "', found '" + k + "'");
    std::string rest;
    std::getline(ls, rest);
    return std::istringstream(rest);
  };
  meta::MetasurfaceStack s;
  std::string side;
  std::string pol;
  field("side") >> side;
  field("polarization") >> pol;
  if (side != "tx" && side != "rx") throw IoError("phase map: unknown side '" + side + "'");
  if (pol != "single" && pol != "dual") throw IoError("phase map: unknown polarization '" + pol + "'");
  s.layout.side = side == "tx" ? Side::kTx : Side::kRx;
  s.polarization = pol == "dual" ? meta::Polarization::kDual : meta::Polarization::kSingle;
  auto read2 = [](std::istringstream is, const char* what) {
    int a = 0;
    int b = 0;
    if (!(is >> a >> b)) throw IoError(std::string("phase map: bad '") + what + "' line");
    return meta::GridDims{a, b};
  };
  s.layout.units = read2(field("units"), "units");
  s.layout.antennas = read2(field("antennas"), "antennas");
  if (!(field("unit_spacing") >> s.layout.unit_spacing)) throw IoError("phase map: bad unit_spacing");
  if (!(field("layer_spacing") >> s.layout.layer_spacing)) throw IoError("phase map: bad layer_spacing");
  if (!(field("layers") >> s.layout.layer_count)) throw IoError("phase map: bad layers");
  Quantization q;
  if (!(field("quantization") >> q.bits) || q.bits < 0 || q.bits > 30) throw IoError("phase map: bad quantization");
  long records = 0;
  if (!(field("records") >> records)) throw IoError("phase map: bad record count");
  if (!std::getline(in, line) || line != "layer pol ix iy level phase") throw IoError("phase map: missing column line");
  try {
    s.layout.validate();
  } catch (const std::exception& e) {
    throw IoError(std::string("phase map: invalid layout: ") + e.what());
  }
  const int pols = s.polarization == meta::Polarization::kDual ? 2 : 1;
  const int n = s.layout.units.count();
  if (records != static_cast<long>(s.layout.layer_count) * pols * n) throw IoError("phase map: record count mismatch");
  s.phases.assign(static_cast<std::size_t>(s.layout.layer_count), std::vector<double>(static_cast<std::size_t>(pols * n)));
  for (int layer = 0; layer < s.layout.layer_count; ++layer) {
    for (int p = 0; p < pols; ++p) {
      for (int k = 0; k < n; ++k) {
        if (!std::getline(in, line)) throw IoError("phase map: truncated records");
        std::istringstream ls(line);
        int rl = 0;
        int rp = 0;
        int ix = 0;
        int iy = 0;
        int level = 0;
        double phase = 0.0;
        if (!(ls >> rl >> rp >> ix >> iy >> level >> phase)) throw IoError("phase map: malformed record '" + line + "'");
        if (rl != layer + 1 || rp != p || ix != k / s.layout.units.y || iy != k % s.layout.units.y) {
          throw IoError("phase map: records out of order at '" + line + "'");
        }
        if (q.bits > 0) {
          if (level < 0 || level >= q.levels()) throw IoError("phase map: level out of range at '" + line + "'");
          phase = level * q.step();
        }
        s.phases[static_cast<std::size_t>(layer)][static_cast<std::size_t>(p * n + k)] = phase;
      }
    }
  }
  try {
    s.validate();
  } catch (const std::exception& e) {
    throw IoError(std::string("phase map: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Calibration

std::string export_calibration(const CalibrationSet& set) {
  json entries = json::array();
  for (const CalibrationEntry& e : set.entries) {
    const RMat re = e.matrix.real();
    const RMat im = e.matrix.imag();
    entries.push_back({{"side", meta::to_string(e.side)},
                       {"subcarrier", e.subcarrier},
                       {"gap", e.gap},
                       {"rows", e.matrix.rows()},
                       {"cols", e.matrix.cols()},
                       {"re", std::vector<double>(re.data(), re.data() + re.size())},
                       {"im", std::vector<double>(im.data(), im.data() + im.size())}});
  }
  json j = {{"format", kCalibrationFormat},
            {"version", kCalibrationVersion},
            {"provenance", set.provenance},
            {"entries", entries}};
  return j.dump(1) + "\n";
}

CalibrationSet import_calibration(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != kCalibrationFormat) throw IoError("calibration: unknown format");
    if (j.at("version").get<int>() != kCalibrationVersion) throw IoError("calibration: unsupported version");
    CalibrationSet set;
    set.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
    for (const json& e : j.at("entries")) {
      CalibrationEntry c;
      const std::string side = e.at("side").get<std::string>();
      if (side != "tx" && side != "rx") throw IoError("calibration: unknown side '" + side + "'");
      c.side = side == "tx" ? Side::kTx : Side::kRx;
      c.subcarrier = e.at("subcarrier").get<int>();
      c.gap = e.at("gap").get<int>();
      const auto rows = e.at("rows").get<Eigen::Index>();
      const auto cols = e.at("cols").get<Eigen::Index>();
      const auto re = e.at("re").get<std::vector<double>>();
      const auto im = e.at("im").get<std::vector<double>>();
      if (rows < 1 || cols < 1 || static_cast<Eigen::Index>(re.size()) != rows * cols || re.size() != im.size()) {
        throw IoError("calibration: entry arrays do not match rows x cols");
      }
      c.matrix.resize(rows, cols);
      for (Eigen::Index k = 0; k < rows * cols; ++k) {
        c.matrix.data()[k] = cdouble(re[static_cast<std::size_t>(k)], im[static_cast<std::size_t>(k)]);
      }
      set.entries.push_back(std::move(c));
    }
    return set;
  } catch (const json::exception& e) {
    throw IoError(std::string("calibration: malformed file: ") + e.what());
  }
}

CalibrationSet analytic_calibration(const emnn::EmnnModel& model) {
  CalibrationSet set;
  set.provenance["source"] = "analytic";
  for (const meta::PropagationSet* prop : {&model.tx_prop, &model.rx_prop}) {
    for (int i = 0; i < prop->subcarriers(); ++i) {
      for (int g = 0; g < prop->gap_count(); ++g) set.entries.push_back({prop->side, i, g, prop->at(i, g)});
    }
  }
  return set;
}

void apply_calibration(emnn::EmnnModel& model, const CalibrationSet& set) {
  for (const CalibrationEntry& e : set.entries) {
    const meta::PropagationSet& prop = e.side == Side::kTx ? model.tx_prop : model.rx_prop;
    const std::string where = std::string(meta::to_string(e.side)) + " subcarrier " + std::to_string(e.subcarrier) +
                              " gap " + std::to_string(e.gap);
    if (e.subcarrier < 0 || e.subcarrier >= prop.subcarriers() || e.gap < 0 || e.gap >= prop.gap_count()) {
      throw ConfigError("calibration: " + where + " does not exist (" + std::to_string(prop.subcarriers()) +
                        " subcarriers, " + std::to_string(prop.gap_count()) + " gaps)");
    }
    const CMat& ref = prop.at(e.subcarrier, e.gap);
    if (e.matrix.rows() != ref.rows() || e.matrix.cols() != ref.cols()) {
      throw ConfigError("calibration: " + where + " expected " + std::to_string(ref.rows()) + "x" +
                        std::to_string(ref.cols()) + ", found " + std::to_string(e.matrix.rows()) + "x" +
                        std::to_string(e.matrix.cols()));
    }
    if (!wave::all_finite(e.matrix)) throw DomainError("calibration: " + where + " has non-finite entries");
  }
  for (const CalibrationEntry& e : set.entries) {
    meta::PropagationSet& prop = e.side == Side::kTx ? model.tx_prop : model.rx_prop;
    prop.gaps[static_cast<std::size_t>(e.subcarrier)][static_cast<std::size_t>(e.gap)] = e.matrix;
  }
  model.refresh_gap_cache();
}

// ---------------------------------------------------------------------------
// Files

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path + "'");
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace simofdm::deploy
