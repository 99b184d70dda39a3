#include "simofdm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "simofdm/error.hpp"

namespace simofdm::train {

namespace fs = std::filesystem;

PowerPolicy PowerPolicy::fixed(double dbm) {
  PowerPolicy p;
  p.kind = Kind::kFixed;
  p.fixed_dbm = dbm;
  return p;
}

PowerPolicy PowerPolicy::beta_range(double alpha, double beta, double lo_dbm, double hi_dbm) {
  PowerPolicy p;
  p.kind = Kind::kBeta;
  p.alpha = alpha;
  p.beta = beta;
  p.lo_dbm = lo_dbm;
  p.hi_dbm = hi_dbm;
  return p;
}

void PowerPolicy::validate() const {
  if (kind == Kind::kFixed) {
    if (!std::isfinite(fixed_dbm)) throw ConfigError("power policy: fixed power must be finite");
    return;
  }
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("power policy: Beta shape parameters must be > 0");
  if (!std::isfinite(lo_dbm) || !std::isfinite(hi_dbm) || !(lo_dbm < hi_dbm)) {
    throw ConfigError("power policy: need lo < hi, got [" + std::to_string(lo_dbm) + ", " + std::to_string(hi_dbm) +
                      "] dBm");
  }
}

std::string PowerPolicy::describe() const {
  std::ostringstream os;
  if (kind == Kind::kFixed) {
    os << "fixed(" << fixed_dbm << " dBm)";
  } else {
    os << "beta(" << alpha << "," << beta << ") over [" << lo_dbm << "," << hi_dbm << "] dBm";
  }
  return os.str();
}

double sample_power(const PowerPolicy& policy, RngStream& rng) {
  if (policy.kind == PowerPolicy::Kind::kFixed) return wave::dbm_to_watts(policy.fixed_dbm);
  const double u = rng.beta(policy.alpha, policy.beta);
  return wave::dbm_to_watts(policy.lo_dbm + (policy.hi_dbm - policy.lo_dbm) * u);
}

double sample_power(const PowerPolicy& policy, std::uint64_t seed) {
  RngStream rng(seed);
  return sample_power(policy, rng);
}

RMat sample_powers(const PowerPolicy& policy, int batch, RngStream& rng) {
  RMat p(batch, 1);
  for (int b = 0; b < batch; ++b) p(b, 0) = sample_power(policy, rng);
  return p;
}

double bce_loss(const RMat& bits, const RMat& soft, double p_min) {
  if (bits.rows() != soft.rows() || bits.cols() != soft.cols() || bits.rows() == 0) {
    throw ConfigError("bce_loss: bits " + std::to_string(bits.rows()) + "x" + std::to_string(bits.cols()) +
                      " vs soft " + std::to_string(soft.rows()) + "x" + std::to_string(soft.cols()));
  }
  double sum = 0.0;
  for (Eigen::Index r = 0; r < soft.rows(); ++r) {
    for (Eigen::Index c = 0; c < soft.cols(); ++c) {
      const double s = soft(r, c);
      const double p = std::clamp(s, p_min, 1.0 - p_min);
      const double t = bits(r, c);
      if (t != 0.0) sum += t * std::log(s == 1.0 ? 1.0 : p);
      if (t != 1.0) sum += (1.0 - t) * std::log(s == 0.0 ? 1.0 : 1.0 - p);
    }
  }
  return -sum / static_cast<double>(soft.rows());
}

RMat draw_bits(int batch, int bits, RngStream& rng) {
  RMat b(batch, bits);
  for (int r = 0; r < batch; ++r) {
    for (int c = 0; c < bits; ++c) b(r, c) = rng.bit();
  }
  return b;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch < 1) throw ConfigError("train: batch size must be >= 1");
  if (!(optimizer.learning_rate >= 0.0) || !std::isfinite(optimizer.learning_rate)) {
    throw ConfigError("train: learning rate must be finite and >= 0");
  }
  if (!(optimizer.decay_factor > 0.0 && optimizer.decay_factor <= 1.0)) {
    throw ConfigError("train: learning-rate decay factor must lie in (0, 1]");
  }
  if (optimizer.weight_decay < 0.0) throw ConfigError("train: weight decay must be >= 0");
  if (lr_decay_every < 1) throw ConfigError("train: lr_decay_every must be >= 1");
  if (channel_every < 1) throw ConfigError("train: channel_every must be >= 1");
  if (!(noise_scale >= 0.0)) throw ConfigError("train: noise scale must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
  if (max_redraws < 0) throw ConfigError("train: max_redraws must be >= 0");
  power.validate();
}

std::vector<std::string> parameter_groups(const emnn::EmnnConfig& config) {
  std::vector<std::string> g{"bs", "tx"};
  for (int j = 0; j < config.users(); ++j) g.push_back("rx" + std::to_string(j));
  for (int j = 0; j < config.users(); ++j) g.push_back("ue" + std::to_string(j));
  return g;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct Snapshot {
  std::map<std::string, RMat> values;
  std::map<std::string, wave::BatchNormStats> bn;

  void take(const emnn::EmnnModel& m) {
    for (const auto& [name, p] : m.params) values[name] = p.value;
    bn = m.bn_stats;
  }
  void restore(emnn::EmnnModel& m) const {
    for (auto& [name, p] : m.params) p.value = values.at(name);
    m.bn_stats = bn;
  }
};

// Restores trainable flags on scope exit.
class FreezeGuard {
 public:
  FreezeGuard(emnn::EmnnModel& m, bool freeze) : m_(m) {
    if (!freeze) return;
    for (auto& [name, p] : m_.params) {
      if (p.phase && p.trainable) {
        p.trainable = false;
        frozen_.push_back(name);
      }
    }
  }
  ~FreezeGuard() {
    for (const auto& name : frozen_) m_.params.at(name).trainable = true;
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  emnn::EmnnModel& m_;
  std::vector<std::string> frozen_;
};

void write_checkpoint(const emnn::EmnnModel& model, const TrainConfig& cfg, const std::string& phase, int epoch,
                      double lr) {
  fs::path dir(cfg.checkpoint_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  const fs::path file = dir / ("checkpoint-" + phase + "-" + std::to_string(epoch) + ".json");
  std::ofstream out(file);
  if (!out) throw IoError("cannot write checkpoint '" + file.string() + "'");
  out << emnn::save_checkpoint(model, {{"phase", phase},
                                       {"epoch", std::to_string(epoch)},
                                       {"seed", std::to_string(cfg.seed)},
                                       {"learning_rate", fmt(lr)}});
  if (!out) throw IoError("failed writing checkpoint '" + file.string() + "'");
}

}  // namespace

std::string TrainMetrics::to_csv(bool header) const {
  std::set<std::string> groups;
  for (const auto& e : epochs) {
    for (const auto& [g, v] : e.grad_norm) groups.insert(g);
  }
  std::ostringstream os;
  if (header) {
    os << "epoch,phase,loss,lr,power_mean_dbm,power_min_dbm,power_max_dbm,redraws";
    for (const auto& g : groups) os << ",grad_" << g;
    os << "\n";
  }
  for (const auto& e : epochs) {
    os << e.epoch << "," << e.phase << "," << fmt(e.loss) << "," << fmt(e.learning_rate) << ","
       << fmt(e.power_mean_dbm) << "," << fmt(e.power_min_dbm) << "," << fmt(e.power_max_dbm) << "," << e.redraws;
    for (const auto& g : groups) {
      auto it = e.grad_norm.find(g);
      os << "," << (it == e.grad_norm.end() ? std::string("0") : fmt(it->second));
    }
    os << "\n";
  }
  return os.str();
}

double TrainMetrics::final_loss() const {
  if (epochs.empty()) throw StateError("train metrics: no epochs recorded");
  return epochs.back().loss;
}

double TrainMetrics::total_seconds() const {
  double s = 0.0;
  for (const auto& e : epochs) s += e.seconds;
  return s;
}

TrainMetrics train(emnn::EmnnModel& model, chan::ChannelProvider& provider, const TrainConfig& cfg,
                   const std::string& phase, const EpochCallback& on_epoch) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  const emnn::EmnnConfig& c = model.config;
  const RngStream root = RngStream(cfg.seed).child("train").child(phase);
  FreezeGuard guard(model, cfg.freeze_phases);
  wave::OptimizerState opt(cfg.optimizer);
  TrainMetrics metrics;
  Snapshot good;
  good.take(model);
  std::optional<chan::ChannelRealization> channel;

  for (int e = 0; e < cfg.epochs; ++e) {
    const auto t0 = clock::now();
    if (e % cfg.channel_every == 0) channel = provider.provide();
    const RngStream er = root.child(static_cast<std::uint64_t>(e));
    RngStream bit_rng = er.child("bits");
    RngStream power_rng = er.child("power");
    RngStream redraw_rng = er.child("redraw");
    RMat bits = draw_bits(cfg.batch, c.bits(), bit_rng);
    const RMat power = sample_powers(cfg.power, cfg.batch, power_rng);
    const emnn::ForwardOptions fo{.training = true, .noise_scale = cfg.noise_scale, .noise_seed = er.child("noise")()};

    EpochMetrics em;
    em.epoch = e + 1;
    em.phase = phase;
    em.learning_rate = opt.learning_rate();
    std::unique_ptr<emnn::Trace> tr;
    try {
      for (;;) {
        tr = emnn::trace_forward(model, bits, power, *channel, fo);
        try {
          emnn::evaluate(*tr);
          break;
        } catch (const DegenerateInputError& d) {
          if (em.redraws >= cfg.max_redraws) {
            throw NumericalError("train: BS-DNN output stays all-zero after " + std::to_string(em.redraws) +
                                 " bit redraws (epoch " + std::to_string(e + 1) + ")");
          }
          const auto row = static_cast<Eigen::Index>(d.sample());
          for (Eigen::Index k = 0; k < bits.cols(); ++k) bits(row, k) = redraw_rng.bit();
          ++em.redraws;
        }
      }
      em.loss = tr->graph.scalar(tr->loss);
      if (!std::isfinite(em.loss)) throw NumericalError("train: non-finite loss");
      good.take(model);
      const wave::GradientMap grads = tr->graph.backward(tr->loss);
      for (const auto& [name, g] : grads) em.grad_norm[emnn::parameter_group(name)] += g.squaredNorm();
      for (auto& [group, v] : em.grad_norm) v = std::sqrt(v);
      emnn::commit_batch_norm(model, *tr);
      opt.step(model.params, grads);
    } catch (const NumericalError& err) {
      good.restore(model);
      metrics.diverged = true;
      metrics.divergence = std::string(err.what()) + " (epoch " + std::to_string(e + 1) + ", phase " + phase + ")";
      break;
    }
    if ((e + 1) % cfg.lr_decay_every == 0) opt.decay_learning_rate();

    double sum = 0.0;
    em.power_min_dbm = wave::watts_to_dbm(power.minCoeff());
    em.power_max_dbm = wave::watts_to_dbm(power.maxCoeff());
    for (Eigen::Index b = 0; b < power.rows(); ++b) sum += wave::watts_to_dbm(power(b, 0));
    em.power_mean_dbm = sum / static_cast<double>(power.rows());
    em.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    metrics.epochs.push_back(em);
    if (on_epoch) on_epoch(em);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && (e + 1) % cfg.checkpoint_every == 0) {
      write_checkpoint(model, cfg, phase, e + 1, opt.learning_rate());
    }
  }
  return metrics;
}

std::pair<TrainMetrics, TrainMetrics> pretrain_then_finetune(emnn::EmnnModel& model,
                                                             chan::ChannelProvider& statistical,
                                                             chan::ChannelProvider& instantaneous,
                                                             const TrainConfig& cfg_pre, const TrainConfig& cfg_fine,
                                                             const EpochCallback& on_epoch) {
  if (cfg_fine.epochs != 0) cfg_fine.validate();
  std::pair<TrainMetrics, TrainMetrics> out;
  out.first = train(model, statistical, cfg_pre, "pretrain", on_epoch);
  if (out.first.diverged || cfg_fine.epochs == 0) return out;
  out.second = train(model, instantaneous, cfg_fine, "finetune", on_epoch);
  return out;
}

double tail_loss(const TrainMetrics& metrics, int window) {
  if (metrics.epochs.empty()) throw StateError("train metrics: no epochs recorded");
  const int n = static_cast<int>(metrics.epochs.size());
  const int w = std::clamp(window, 1, n);
  double s = 0.0;
  for (int k = n - w; k < n; ++k) s += metrics.epochs[static_cast<std::size_t>(k)].loss;
  return s / w;
}

int epochs_to_reach(const TrainMetrics& metrics, double target, int window) {
  const int n = static_cast<int>(metrics.epochs.size());
  const int w = std::max(window, 1);
  double s = 0.0;
  for (int k = 0; k < n; ++k) {
    s += metrics.epochs[static_cast<std::size_t>(k)].loss;
    if (k >= w) s -= metrics.epochs[static_cast<std::size_t>(k - w)].loss;
    const int count = std::min(k + 1, w);
    if (k + 1 >= w && s / count <= target) return k + 1;
  }
  return -1;
}

}  // namespace simofdm::train
