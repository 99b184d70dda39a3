#pragma once

#include <map>
#include <string>
#include <vector>

#include "simofdm/deploy.hpp"
#include "simofdm/evaluator.hpp"

namespace simofdm::config {

enum class ValueType {
  kInt,
  kDouble,      // decimal, exponent or a/b fraction
  kBool,        // true | false
  kString,
  kEnum,        // one of KeySpec::choices
  kIntList,     // 32,16,8
  kDoubleList,  // 0,5,10
  kStringList,  // a,b,c; restricted to KeySpec::choices when given
  kGrid,        // 10x10
  kPoints,      // 10,0,20; 20,0,20
};

const char* to_string(ValueType t);

struct KeySpec {
  std::string key;
  ValueType type = ValueType::kString;
  std::string default_value;
  std::string description;
  std::vector<std::string> choices;
  /// Computed from other keys; shown in snapshots, never set.
  bool derived = false;
};

/// Every accepted key, in snapshot order.
const std::vector<KeySpec>& schema();
const KeySpec& spec(const std::string& key);
/// Human-readable schema listing (key, type, default, description).
std::string schema_text();

/// Resolved run configuration: every schema key has a value.
///
/// Text format: `key = value` lines, `#` comments, optional `[section]`
/// headers that prefix the following keys with `section.`.
class RunConfig {
 public:
  /// Shipped defaults (full-scale parameter set).
  static RunConfig defaults();
  /// Defaults overlaid with the file contents. Throws ConfigError with the
  /// origin and line number for syntax errors, unknown keys or bad values.
  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");

  /// Type-checks and stores one value; unknown or derived keys throw.
  void set(const std::string& key, const std::string& value);
  /// "key=value".
  void apply_override(const std::string& assignment);

  const std::string& text(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;
  meta::GridDims get_grid(const std::string& key) const;
  std::vector<chan::Vec3> get_points(const std::string& key) const;

  /// Canonical snapshot in schema order, derived keys included. Parsing the
  /// snapshot gives back an equal configuration.
  std::string dump() const;
  /// SHA-256 of dump().
  std::string hash() const;

  /// Cross-key checks (user counts, device geometry, power range, ...).
  /// Throws ConfigError naming the keys involved.
  void validate() const;

  bool operator==(const RunConfig&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

/// Parses one value of the given type; throws ConfigError on mismatch.
void check_value(const KeySpec& spec, const std::string& value);

/// Experiment in the given polarization mode (validates first).
evaluator::Experiment to_experiment(const RunConfig& cfg, meta::Polarization mode);
/// Mode named by model.mode.
meta::Polarization configured_mode(const RunConfig& cfg);
train::TrainConfig pretrain_config(const RunConfig& cfg);
train::TrainConfig finetune_config(const RunConfig& cfg);
evaluator::SweepGrid sweep_grid(const RunConfig& cfg);

}  // namespace simofdm::config
