#include "simofdm/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "simofdm/error.hpp"

namespace simofdm::config {

namespace {

using VT = ValueType;
using meta::Polarization;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, sep)) out.push_back(trim(part));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? sep : "") + v[k];
  return out;
}

bool parse_long(const std::string& s, long long& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end && !s.empty();
}

bool parse_plain_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end && !s.empty() && std::isfinite(out);
}

// Accepts "x" or "a/b".
bool parse_number(const std::string& s, double& out) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) return parse_plain_double(s, out);
  double a = 0.0;
  double b = 0.0;
  if (!parse_plain_double(trim(s.substr(0, slash)), a) || !parse_plain_double(trim(s.substr(slash + 1)), b)) {
    return false;
  }
  if (b == 0.0) return false;
  out = a / b;
  return true;
}

std::string shortest(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

KeySpec k(std::string key, VT type, std::string def, std::string desc, std::vector<std::string> choices = {}) {
  return {std::move(key), type, std::move(def), std::move(desc), std::move(choices), false};
}

std::vector<KeySpec> build_schema() {
  std::vector<KeySpec> s{
      k("system.center_frequency_hz", VT::kDouble, "28e9", "centre frequency f0"),
      k("system.wavelength_m", VT::kDouble, "10.7e-3", "centre wavelength; path loss and device spacings use it"),
      k("system.bandwidth_hz", VT::kDouble, "100e6", "OFDM bandwidth B"),
      k("system.subcarriers", VT::kInt, "32", "number of subcarriers Nc"),
      k("system.users", VT::kInt, "3", "number of users J"),
      k("system.user_bits", VT::kIntList, "32,16,8", "bits per user in one OFDM symbol"),
      k("scene.bs", VT::kPoints, "0,0,0", "BS coordinates, meters"),
      k("scene.users", VT::kPoints, "10,0,20; 20,0,20; 0,0,30", "user coordinates, meters, one x,y,z per user"),
      k("channel.epsilon", VT::kDouble, "0.2", "polarization conversion power ratio, in (0, 1)"),
      {"channel.xpd", VT::kDouble, "4", "cross-polarization discrimination (1 - epsilon) / epsilon", {}, true},
      k("channel.scatterers", VT::kInt, "100", "number of scatterers S"),
      k("channel.reference_distance_m", VT::kDouble, "1", "path-loss reference distance d0"),
      k("channel.path_loss_exponent", VT::kDouble, "3.5", "path-loss exponent b"),
      k("channel.shadowing_db", VT::kDouble, "9", "shadowing standard deviation delta, dB"),
      k("channel.noise_dbm", VT::kDouble, "-110", "receiver noise power sigma^2, dBm"),
      k("channel.rician_factor_db", VT::kDouble, "10", "LoS power over total NLoS power, dB"),
      k("channel.mean_excess_delay_s", VT::kDouble, "100e-9", "mean NLoS excess delay, seconds"),
  };
  for (const std::string dev : {"sim", "dpsim"}) {
    const bool dp = dev == "dpsim";
    const std::string name = dp ? "DPSIM" : "SIM";
    s.push_back(k(dev + ".tx_layers", VT::kInt, "3", "TX-" + name + " layers"));
    s.push_back(k(dev + ".rx_layers", VT::kInt, "3", "RX-" + name + " layers"));
    s.push_back(k(dev + ".tx_units", VT::kGrid, "10x10", "TX-" + name + " units per layer"));
    s.push_back(k(dev + ".rx_units", VT::kGrid, "10x10", "RX-" + name + " units per layer"));
    s.push_back(k(dev + ".tx_antennas", VT::kGrid, dp ? "3x3" : "4x4", "TX antennas"));
    s.push_back(k(dev + ".rx_antennas", VT::kGrid, dp ? "2x2" : "3x3", "RX antennas per user"));
    s.push_back(k(dev + ".tx_unit_spacing_wl", VT::kDouble, "0.5", "TX unit spacing, wavelengths"));
    s.push_back(k(dev + ".rx_unit_spacing_wl", VT::kDouble, "0.5", "RX unit spacing, wavelengths"));
    s.push_back(k(dev + ".tx_layer_spacing_wl", VT::kDouble, "0.5", "TX layer spacing, wavelengths"));
    s.push_back(k(dev + ".rx_layer_spacing_wl", VT::kDouble, "0.5", "RX layer spacing, wavelengths"));
  }
  const std::vector<KeySpec> rest{
      k("model.mode", VT::kEnum, "sim", "device type used by train / finetune / evaluate", {"sim", "dpsim"}),
      k("model.power_normalization", VT::kEnum, "per_symbol", "power-control layer policy",
        {"per_symbol", "per_subcarrier"}),
      k("model.bs_output_relu", VT::kBool, "true", "ReLU after the last BS-DNN linear layer"),
      k("model.bn_momentum", VT::kDouble, "0.1", "batch-norm running-statistics momentum"),
      k("model.bn_eps", VT::kDouble, "1e-5", "batch-norm variance epsilon"),
      k("train.loss", VT::kEnum, "bce", "loss function", {"bce"}),
      k("train.initialization", VT::kEnum, "xavier", "DNN weight initialization", {"xavier"}),
      k("train.optimizer", VT::kEnum, "adamw", "optimizer", {"adamw", "sgd"}),
      k("train.epochs", VT::kInt, "2000", "training epochs E"),
      k("train.learning_rate", VT::kDouble, "0.005", "initial learning rate"),
      k("train.batch", VT::kInt, "1000", "batch size"),
      k("train.lr_decay", VT::kDouble, "1/1.05", "learning-rate multiplier per decay step"),
      k("train.lr_decay_every", VT::kInt, "1", "epochs between learning-rate decay steps"),
      k("train.weight_decay", VT::kDouble, "0.01", "AdamW decoupled weight decay (not applied to phases)"),
      k("train.adam_beta1", VT::kDouble, "0.9", "AdamW beta1"),
      k("train.adam_beta2", VT::kDouble, "0.999", "AdamW beta2"),
      k("train.adam_epsilon", VT::kDouble, "1e-8", "AdamW epsilon"),
      k("train.power_policy", VT::kEnum, "beta", "transmit power per training sample", {"beta", "fixed"}),
      k("train.power_dbm", VT::kDouble, "30", "power for the fixed policy, dBm"),
      k("train.power_beta", VT::kDoubleList, "2,2", "Beta(a,b) shape for the beta policy"),
      k("train.power_range_dbm", VT::kDoubleList, "0,30", "lo,hi of the beta policy, dBm"),
      k("train.channel_every", VT::kInt, "1", "epochs between channel draws while pretraining"),
      k("train.noise_scale", VT::kDouble, "1", "noise standard-deviation multiplier (0 = noise free)"),
      k("train.freeze_phases", VT::kBool, "false", "keep metasurface phases fixed while pretraining"),
      k("train.checkpoint_every", VT::kInt, "0", "epochs between checkpoints (0 = final only)"),
      k("train.max_redraws", VT::kInt, "1000", "bit redraws allowed per epoch for all-zero BS outputs"),
      k("finetune.epochs", VT::kInt, "200", "finetuning epochs on one instantaneous channel (0 = skip)"),
      k("finetune.learning_rate", VT::kDouble, "0.005", "finetuning learning rate"),
      k("finetune.freeze_phases", VT::kBool, "false", "keep metasurface phases fixed while finetuning"),
      k("evaluation.metric", VT::kEnum, "ber", "performance metric", {"ber"}),
      k("evaluation.test_scale", VT::kInt, "100000", "test symbols per Monte-Carlo replica and power"),
      k("evaluation.monte_carlo", VT::kInt, "100", "Monte-Carlo channel replicas"),
      k("evaluation.recipe", VT::kEnum, "finetune", "per-replica model recipe", {"finetune", "retrain", "none"}),
      k("evaluation.chunk", VT::kInt, "1000", "symbols per evaluation batch"),
      k("evaluation.threads", VT::kInt, "1", "worker threads for Monte-Carlo replicas"),
      k("evaluation.test_power_dbm", VT::kDouble, "30", "test transmit power, dBm"),
      k("sweep.variable", VT::kEnum, "power_dbm", "swept variable",
        {"power_dbm", "units", "layers", "tx_antennas", "rx_antennas", "subcarriers", "bits", "epsilon"}),
      k("sweep.values", VT::kStringList, "0,5,10,15,20,25,30", "grid values (bit allocations as a:b:c)"),
      k("sweep.modes", VT::kStringList, "sim,dpsim", "device types to sweep", {"sim", "dpsim"}),
      k("deploy.quantization_bits", VT::kInt, "0", "phase quantization bits for export (0 = full precision)"),
      k("deploy.calibration_file", VT::kString, "", "measured gap matrices applied before training (empty = analytic)"),
      k("deploy.interval_epochs", VT::kInt, "0", "export bundles every n finetuning epochs (0 = at the end only)"),
      k("run.seed", VT::kInt, "0", "master seed"),
      k("run.out", VT::kString, "runs", "parent directory of run directories"),
  };
  s.insert(s.end(), rest.begin(), rest.end());
  return s;
}

std::string canonical(const KeySpec& spec, const std::string& raw) {
  const std::string v = trim(raw);
  switch (spec.type) {
    case VT::kIntList:
    case VT::kDoubleList:
    case VT::kStringList:
      return join(split(v, ','), ",");
    case VT::kPoints: {
      std::vector<std::string> pts;
      for (const auto& p : split(v, ';')) pts.push_back(join(split(p, ','), ","));
      return join(pts, "; ");
    }
    default:
      return v;
  }
}

std::string derived_value(const std::string& key, const std::map<std::string, std::string>& values) {
  if (key == "channel.xpd") {
    double eps = 0.0;
    if (!parse_number(values.at("channel.epsilon"), eps) || !(eps > 0.0 && eps < 1.0)) return "undefined";
    return shortest(chan::xpd_from_epsilon(eps));
  }
  throw ConfigError("no rule for derived key '" + key + "'");
}

[[noreturn]] void bad(const KeySpec& spec, const std::string& value, const std::string& expected) {
  throw ConfigError(spec.key + ": '" + value + "' is not " + expected);
}

}  // namespace

using meta::Polarization;

const char* to_string(ValueType t) {
  switch (t) {
    case VT::kInt: return "int";
    case VT::kDouble: return "number";
    case VT::kBool: return "bool";
    case VT::kString: return "string";
    case VT::kEnum: return "enum";
    case VT::kIntList: return "int list";
    case VT::kDoubleList: return "number list";
    case VT::kStringList: return "list";
    case VT::kGrid: return "grid";
    case VT::kPoints: return "points";
  }
  return "?";
}

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> s = build_schema();
  return s;
}

const KeySpec& spec(const std::string& key) {
  for (const KeySpec& s : schema()) {
    if (s.key == key) return s;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

std::string schema_text() {
  std::ostringstream os;
  os << "# key | type | default | description\n";
  for (const KeySpec& s : schema()) {
    os << s.key << " | " << to_string(s.type);
    if (!s.choices.empty()) os << " {" << join(s.choices, ", ") << "}";
    if (s.derived) os << " (derived)";
    os << " | " << s.default_value << " | " << s.description << "\n";
  }
  return os.str();
}

void check_value(const KeySpec& spec, const std::string& value) {
  const std::string v = canonical(spec, value);
  long long i = 0;
  double d = 0.0;
  switch (spec.type) {
    case VT::kInt:
      if (!parse_long(v, i) || i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max()) {
        bad(spec, v, "an integer");
      }
      return;
    case VT::kDouble:
      if (!parse_number(v, d)) bad(spec, v, "a finite number");
      return;
    case VT::kBool:
      if (v != "true" && v != "false") bad(spec, v, "true or false");
      return;
    case VT::kString:
      return;
    case VT::kEnum:
      if (std::find(spec.choices.begin(), spec.choices.end(), v) == spec.choices.end()) {
        bad(spec, v, "one of {" + join(spec.choices, ", ") + "}");
      }
      return;
    case VT::kIntList:
      for (const auto& e : split(v, ',')) {
        if (!parse_long(e, i)) bad(spec, v, "a comma-separated integer list");
      }
      return;
    case VT::kDoubleList:
      for (const auto& e : split(v, ',')) {
        if (!parse_number(e, d)) bad(spec, v, "a comma-separated number list");
      }
      return;
    case VT::kStringList:
      for (const auto& e : split(v, ',')) {
        if (e.empty()) bad(spec, v, "a comma-separated list without empty entries");
        if (!spec.choices.empty() && std::find(spec.choices.begin(), spec.choices.end(), e) == spec.choices.end()) {
          bad(spec, v, "a list drawn from {" + join(spec.choices, ", ") + "}");
        }
      }
      return;
    case VT::kGrid: {
      const auto x = v.find('x');
      long long a = 0;
      long long b = 0;
      if (x == std::string::npos || !parse_long(v.substr(0, x), a) || !parse_long(v.substr(x + 1), b)) {
        bad(spec, v, "a grid like 10x10");
      }
      return;
    }
    case VT::kPoints:
      for (const auto& p : split(v, ';')) {
        const auto c = split(p, ',');
        if (c.size() != 3) bad(spec, v, "a list of x,y,z points separated by ';'");
        for (const auto& e : c) {
          if (!parse_number(e, d)) bad(spec, v, "a list of x,y,z points separated by ';'");
        }
      }
      return;
  }
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const KeySpec& s : schema()) {
    if (!s.derived) c.values_[s.key] = canonical(s, s.default_value);
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec& s = spec(key);
  if (s.derived) throw ConfigError(key + " is derived and cannot be set");
  check_value(s, value);
  values_[key] = canonical(s, value);
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig c = defaults();
  std::map<std::string, std::string> derived;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string section;
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']' || body.size() < 3) throw ConfigError(where + "malformed section header '" + body + "'");
      section = trim(body.substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + body + "'");
    std::string key = trim(body.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    const std::string value = trim(body.substr(eq + 1));
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(where + "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
    }
    seen[key] = line_no;
    try {
      const KeySpec& s = spec(key);
      if (s.derived) {
        check_value(s, value);
        derived[key] = canonical(s, value);
      } else {
        c.set(key, value);
      }
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  for (const auto& [key, value] : derived) {
    double given = 0.0;
    double expected = 0.0;
    const std::string computed = derived_value(key, c.values_);
    if (!parse_number(value, given) || !parse_number(computed, expected) ||
        std::abs(given - expected) > 1e-9 * std::max(1.0, std::abs(expected))) {
      throw ConfigError(origin + ": " + key + " = " + value + " disagrees with the value derived from the other keys (" +
                        computed + ")");
    }
  }
  return c;
}

const std::string& RunConfig::text(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    spec(key);
    throw ConfigError(key + " is derived; read it from dump()");
  }
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  long long v = 0;
  if (!parse_long(text(key), v)) throw ConfigError(key + " is not an integer");
  return static_cast<int>(v);
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0.0;
  if (!parse_number(text(key), v)) throw ConfigError(key + " is not a number");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const { return text(key) == "true"; }

std::vector<int> RunConfig::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& e : split(text(key), ',')) {
    long long v = 0;
    parse_long(e, v);
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& e : split(text(key), ',')) {
    double v = 0.0;
    parse_number(e, v);
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const { return split(text(key), ','); }

meta::GridDims RunConfig::get_grid(const std::string& key) const {
  const std::string& v = text(key);
  const auto x = v.find('x');
  long long a = 0;
  long long b = 0;
  parse_long(v.substr(0, x), a);
  parse_long(v.substr(x + 1), b);
  return {static_cast<int>(a), static_cast<int>(b)};
}

std::vector<chan::Vec3> RunConfig::get_points(const std::string& key) const {
  std::vector<chan::Vec3> out;
  for (const auto& p : split(text(key), ';')) {
    const auto c = split(p, ',');
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    parse_number(c[0], x);
    parse_number(c[1], y);
    parse_number(c[2], z);
    out.push_back({x, y, z});
  }
  return out;
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  std::string section;
  for (const KeySpec& s : schema()) {
    const std::string sec = s.key.substr(0, s.key.find('.'));
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
      section = sec;
    }
    const std::string v = s.derived ? derived_value(s.key, values_) : values_.at(s.key);
    os << s.key.substr(sec.size() + 1) << " = " << v << "\n";
  }
  return os.str();
}

std::string RunConfig::hash() const { return deploy::sha256_hex(dump()); }

void RunConfig::validate() const {
  const int users = get_int("system.users");
  if (users < 1) throw ConfigError("system.users must be >= 1");
  if (static_cast<int>(get_ints("system.user_bits").size()) != users) {
    throw ConfigError("system.user_bits lists " + std::to_string(get_ints("system.user_bits").size()) +
                      " users but system.users = " + std::to_string(users));
  }
  if (static_cast<int>(get_points("scene.users").size()) != users) {
    throw ConfigError("scene.users lists " + std::to_string(get_points("scene.users").size()) +
                      " positions but system.users = " + std::to_string(users));
  }
  if (get_points("scene.bs").size() != 1) throw ConfigError("scene.bs must be a single x,y,z point");
  const double eps = get_double("channel.epsilon");
  if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("channel.epsilon must lie in (0, 1)");
  if (!(get_double("system.wavelength_m") > 0.0)) throw ConfigError("system.wavelength_m must be > 0");
  for (const std::string dim : {"tx_layers", "rx_layers", "tx_units", "rx_units", "tx_unit_spacing_wl",
                                "rx_unit_spacing_wl", "tx_layer_spacing_wl", "rx_layer_spacing_wl"}) {
    if (text("sim." + dim) != text("dpsim." + dim)) {
      throw ConfigError("sim." + dim + " and dpsim." + dim +
                        " differ; SIM and DPSIM comparisons need equal device sizes");
    }
  }
  const auto range = get_doubles("train.power_range_dbm");
  if (range.size() != 2) throw ConfigError("train.power_range_dbm needs lo,hi");
  if (get_doubles("train.power_beta").size() != 2) throw ConfigError("train.power_beta needs a,b");
  const int q = get_int("deploy.quantization_bits");
  if (q < 0 || q > 30) throw ConfigError("deploy.quantization_bits must lie in [0, 30]");
  if (get_int("deploy.interval_epochs") < 0) throw ConfigError("deploy.interval_epochs must be >= 0");
  if (get_int("run.seed") < 0) throw ConfigError("run.seed must be >= 0");
  if (get_int("finetune.epochs") < 0) throw ConfigError("finetune.epochs must be >= 0");
  if (get_int("evaluation.test_scale") < 1) throw ConfigError("evaluation.test_scale must be >= 1");
  if (get_int("evaluation.monte_carlo") < 1) throw ConfigError("evaluation.monte_carlo must be >= 1");
  if (get_int("evaluation.chunk") < 1) throw ConfigError("evaluation.chunk must be >= 1");
  if (get_int("evaluation.threads") < 1) throw ConfigError("evaluation.threads must be >= 1");
  if (get_list("sweep.values").empty()) throw ConfigError("sweep.values is empty");

  for (Polarization mode : {Polarization::kSingle, Polarization::kDual}) {
    const evaluator::Experiment ex = to_experiment(*this, mode);
    const std::string dev = mode == Polarization::kDual ? "dpsim" : "sim";
    try {
      ex.model.validate();
      ex.channel_setup().validate();
    } catch (const std::exception& e) {
      throw ConfigError(dev + ": " + e.what());
    }
    if (!ex.model.tx.antennas_fit()) throw ConfigError(dev + ".tx_antennas do not fit inside " + dev + ".tx_units");
    if (!ex.model.rx.antennas_fit()) throw ConfigError(dev + ".rx_antennas do not fit inside " + dev + ".rx_units");
  }
  pretrain_config(*this).validate();
  if (get_int("finetune.epochs") > 0) finetune_config(*this).validate();
}

namespace {

meta::PanelLayout layout(const RunConfig& c, const std::string& dev, const std::string& side, meta::Side s) {
  const double wl = c.get_double("system.wavelength_m");
  meta::PanelLayout l;
  l.side = s;
  l.units = c.get_grid(dev + "." + side + "_units");
  l.antennas = c.get_grid(dev + "." + side + "_antennas");
  l.unit_spacing = c.get_double(dev + "." + side + "_unit_spacing_wl") * wl;
  l.layer_spacing = c.get_double(dev + "." + side + "_layer_spacing_wl") * wl;
  l.layer_count = c.get_int(dev + "." + side + "_layers");
  return l;
}

}  // namespace

meta::Polarization configured_mode(const RunConfig& cfg) {
  return cfg.text("model.mode") == "dpsim" ? Polarization::kDual : Polarization::kSingle;
}

train::TrainConfig pretrain_config(const RunConfig& c) {
  train::TrainConfig t;
  t.epochs = c.get_int("train.epochs");
  t.batch = c.get_int("train.batch");
  t.optimizer.kind = c.text("train.optimizer") == "sgd" ? wave::OptimizerKind::kSgd : wave::OptimizerKind::kAdamW;
  t.optimizer.learning_rate = c.get_double("train.learning_rate");
  t.optimizer.decay_factor = c.get_double("train.lr_decay");
  t.optimizer.weight_decay = c.get_double("train.weight_decay");
  t.optimizer.beta1 = c.get_double("train.adam_beta1");
  t.optimizer.beta2 = c.get_double("train.adam_beta2");
  t.optimizer.epsilon = c.get_double("train.adam_epsilon");
  t.lr_decay_every = c.get_int("train.lr_decay_every");
  if (c.text("train.power_policy") == "fixed") {
    t.power = train::PowerPolicy::fixed(c.get_double("train.power_dbm"));
  } else {
    const auto ab = c.get_doubles("train.power_beta");
    const auto r = c.get_doubles("train.power_range_dbm");
    t.power = train::PowerPolicy::beta_range(ab.at(0), ab.at(1), r.at(0), r.at(1));
  }
  t.channel_every = c.get_int("train.channel_every");
  t.noise_scale = c.get_double("train.noise_scale");
  t.freeze_phases = c.get_bool("train.freeze_phases");
  t.checkpoint_every = c.get_int("train.checkpoint_every");
  t.max_redraws = c.get_int("train.max_redraws");
  t.seed = static_cast<std::uint64_t>(c.get_int("run.seed"));
  return t;
}

train::TrainConfig finetune_config(const RunConfig& c) {
  train::TrainConfig t = pretrain_config(c);
  t.epochs = c.get_int("finetune.epochs");
  t.optimizer.learning_rate = c.get_double("finetune.learning_rate");
  t.freeze_phases = c.get_bool("finetune.freeze_phases");
  t.checkpoint_every = 0;
  return t;
}

evaluator::Experiment to_experiment(const RunConfig& c, meta::Polarization mode) {
  evaluator::Experiment ex;
  emnn::EmnnConfig& m = ex.model;
  m.polarization = Polarization::kSingle;
  m.tx = layout(c, "sim", "tx", meta::Side::kTx);
  m.rx = layout(c, "sim", "rx", meta::Side::kRx);
  m.user_bits = c.get_ints("system.user_bits");
  ex.center_frequency = c.get_double("system.center_frequency_hz");
  ex.bandwidth = c.get_double("system.bandwidth_hz");
  const int nc = c.get_int("system.subcarriers");
  if (nc < 1) throw ConfigError("system.subcarriers must be >= 1");
  m.frequencies = meta::subcarrier_frequencies(ex.center_frequency, ex.bandwidth, nc);
  m.power = c.text("model.power_normalization") == "per_subcarrier" ? emnn::PowerNormalization::kPerSubcarrier
                                                                     : emnn::PowerNormalization::kPerSymbol;
  m.bs_output_relu = c.get_bool("model.bs_output_relu");
  m.bn_momentum = c.get_double("model.bn_momentum");
  m.bn_eps = c.get_double("model.bn_eps");
  m.noise_power = wave::dbm_to_watts(c.get_double("channel.noise_dbm"));

  ex.scene.bs = c.get_points("scene.bs").at(0);
  ex.scene.users = c.get_points("scene.users");
  ex.scene.path_loss.reference_distance = c.get_double("channel.reference_distance_m");
  ex.scene.path_loss.exponent = c.get_double("channel.path_loss_exponent");
  ex.scene.path_loss.shadowing_db = c.get_double("channel.shadowing_db");
  ex.scene.path_loss.wavelength = c.get_double("system.wavelength_m");
  ex.scene.scatter.scatterers = c.get_int("channel.scatterers");
  ex.scene.scatter.rician_factor_db = c.get_double("channel.rician_factor_db");
  ex.scene.scatter.mean_excess_delay = c.get_double("channel.mean_excess_delay_s");
  ex.epsilon = c.get_double("channel.epsilon");

  ex.pretrain = pretrain_config(c);
  ex.monte_carlo.replicas = c.get_int("evaluation.monte_carlo");
  ex.monte_carlo.recipe = evaluator::recipe_from_string(c.text("evaluation.recipe"));
  ex.monte_carlo.finetune = finetune_config(c);
  ex.monte_carlo.test_symbols = c.get_int("evaluation.test_scale");
  ex.monte_carlo.chunk = c.get_int("evaluation.chunk");
  ex.monte_carlo.threads = c.get_int("evaluation.threads");
  ex.test_power_dbm = c.get_double("evaluation.test_power_dbm");
  ex.seed = static_cast<std::uint64_t>(c.get_int("run.seed"));
  ex.sim_tx_antennas = c.get_grid("sim.tx_antennas");
  ex.sim_rx_antennas = c.get_grid("sim.rx_antennas");
  ex.dp_tx_antennas = c.get_grid("dpsim.tx_antennas");
  ex.dp_rx_antennas = c.get_grid("dpsim.rx_antennas");
  return ex.with_mode(mode);
}

evaluator::SweepGrid sweep_grid(const RunConfig& c) {
  evaluator::SweepGrid g;
  g.variable = c.text("sweep.variable");
  g.values = c.get_list("sweep.values");
  g.modes.clear();
  for (const auto& m : c.get_list("sweep.modes")) g.modes.push_back(m == "dpsim" ? Polarization::kDual : Polarization::kSingle);
  return g;
}

}  // namespace simofdm::config
