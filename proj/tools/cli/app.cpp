#include "app.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <optional>

#include "CLI11.hpp"
#include "plot.hpp"
#include "simofdm/config.hpp"
#include "simofdm/deploy.hpp"
#include "simofdm/error.hpp"
#include "simofdm/wavemath/rng.hpp"

namespace simofdm::cli {
namespace {

namespace fs = std::filesystem;
using config::RunConfig;
using evaluator::Experiment;
using meta::Polarization;

// Failure carrying its exit code.
struct Failure {
  int code;
  std::string message;
};

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

const char* mode_name(Polarization p) { return p == Polarization::kDual ? "dpsim" : "sim"; }

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

fs::path make_run_dir(const RunConfig& cfg) {
  const fs::path parent = cfg.text("run.out").empty() ? fs::path(".") : fs::path(cfg.text("run.out"));
  const std::string base = cfg.hash().substr(0, 12) + "-" + utc_stamp();
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create " + parent.string() + ": " + ec.message());
  for (int n = 1;; ++n) {
    const fs::path dir = parent / (n == 1 ? base : base + "-" + std::to_string(n));
    if (fs::create_directory(dir, ec)) return dir;
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  }
}

void write(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  deploy::write_text_file(path.string(), text);
}

train::EpochCallback progress(std::ostream& err, const std::string& phase, int total,
                              std::function<void(const train::EpochMetrics&)> extra = {}) {
  const int every = std::max(1, total / 10);
  return [&err, phase, total, every, extra](const train::EpochMetrics& e) {
    if (e.epoch % every == 0 || e.epoch == total) {
      err << phase << " epoch " << e.epoch << "/" << total << " loss " << e.loss << "\n";
    }
    if (extra) extra(e);
  };
}

std::map<std::string, std::string> checkpoint_metadata(const RunConfig& cfg, const std::string& command) {
  return {{"command", command}, {"config_hash", cfg.hash()}, {"seed", cfg.text("run.seed")}};
}

void write_bundles(const fs::path& dir, const emnn::EmnnModel& model, const deploy::Quantization& q) {
  for (const deploy::DeployBundle& b : deploy::partition(model, q)) write(dir / (b.name() + ".bundle"), b.serialize());
}

struct Invocation {
  std::string command;
  RunConfig cfg;
  std::optional<emnn::EmnnModel> input_model;
  std::string input_model_text;
  std::optional<deploy::CalibrationSet> calibration;
};

Experiment experiment_for(const Invocation& inv, Polarization mode) {
  Experiment ex = config::to_experiment(inv.cfg, mode);
  if (inv.calibration) {
    const deploy::CalibrationSet set = *inv.calibration;
    ex.prepare_model = [set](emnn::EmnnModel& m) { deploy::apply_calibration(m, set); };
  }
  return ex;
}

void cmd_train(const Invocation& inv, const fs::path& dir, std::ostream& out, std::ostream& err) {
  Experiment ex = experiment_for(inv, config::configured_mode(inv.cfg));
  if (ex.pretrain.checkpoint_every > 0) ex.pretrain.checkpoint_dir = (dir / "checkpoints").string();
  train::TrainMetrics metrics;
  std::optional<emnn::EmnnModel> model;
  try {
    model = evaluator::pretrain_base(ex, &metrics, progress(err, "pretrain", ex.pretrain.epochs));
  } catch (const NumericalError&) {
    write(dir / "metrics.csv", metrics.to_csv());
    throw;
  }
  write(dir / "metrics.csv", metrics.to_csv());
  write(dir / "model.json", emnn::save_checkpoint(*model, checkpoint_metadata(inv.cfg, "train")));
  out << "final loss " << metrics.final_loss() << " after " << metrics.epochs.size() << " epochs\n";
}

void cmd_finetune(const Invocation& inv, const fs::path& dir, std::ostream& out, std::ostream& err) {
  Experiment ex = experiment_for(inv, config::configured_mode(inv.cfg));
  const wave::RngStream root = wave::RngStream(ex.seed).child("experiment");
  std::string csv;
  emnn::EmnnModel model = [&] {
    if (inv.input_model) return *inv.input_model;
    train::TrainMetrics pre;
    if (ex.pretrain.checkpoint_every > 0) ex.pretrain.checkpoint_dir = (dir / "checkpoints" / "pretrain").string();
    emnn::EmnnModel m = evaluator::pretrain_base(ex, &pre, progress(err, "pretrain", ex.pretrain.epochs));
    csv = pre.to_csv();
    return m;
  }();

  const chan::ChannelRealization channel = chan::realize(ex.channel_setup(), root.child("finetune-channel"));
  write(dir / "channel.json", chan::export_realization(channel));

  train::TrainConfig cfg = ex.monte_carlo.finetune;
  cfg.seed = root.child("finetune")();
  if (inv.cfg.get_int("train.checkpoint_every") > 0) {
    cfg.checkpoint_every = inv.cfg.get_int("train.checkpoint_every");
    cfg.checkpoint_dir = (dir / "checkpoints" / "finetune").string();
  }
  const int interval = inv.cfg.get_int("deploy.interval_epochs");
  const deploy::Quantization q{inv.cfg.get_int("deploy.quantization_bits")};
  if (cfg.epochs > 0) {
    chan::ChannelProvider provider = chan::ChannelProvider::instantaneous(channel);
    char name[32];
    const auto distribute = [&](const train::EpochMetrics& e) {
      if (interval > 0 && e.epoch % interval == 0) {
        std::snprintf(name, sizeof name, "epoch-%06d", e.epoch);
        write_bundles(dir / "bundles" / name, model, q);
      }
    };
    const train::TrainMetrics fine =
        train::train(model, provider, cfg, "finetune", progress(err, "finetune", cfg.epochs, distribute));
    csv += fine.to_csv(csv.empty());
    write(dir / "metrics.csv", csv);
    if (fine.diverged) throw NumericalError("finetuning diverged: " + fine.divergence);
    out << "final loss " << fine.final_loss() << " after " << fine.epochs.size() << " finetune epochs\n";
  } else {
    write(dir / "metrics.csv", csv.empty() ? train::TrainMetrics{}.to_csv() : csv);
    out << "finetune.epochs is 0; model saved unchanged\n";
  }
  write(dir / "model.json", emnn::save_checkpoint(model, checkpoint_metadata(inv.cfg, "finetune")));
}

void write_report(const fs::path& dir, const evaluator::BerReport& report) {
  write(dir / "report.csv", report.to_csv());
  write(dir / "report.json", report.to_json());
}

void cmd_evaluate(const Invocation& inv, const fs::path& dir, std::ostream& out) {
  const Experiment ex = experiment_for(inv, config::configured_mode(inv.cfg));
  const emnn::EmnnModel base = inv.input_model ? *inv.input_model : evaluator::initial_model(ex);
  const double p = ex.test_power_dbm;
  const auto reps =
      evaluator::run_replicas([&](int) { return base; }, ex.channel_setup(), ex.monte_carlo, {p}, ex.seed);
  evaluator::BerReport report;
  report.axis = "power_dbm";
  report.points = evaluator::pool_replicas(reps, {p}, mode_name(ex.model.polarization), fmt(p));
  report.config_hash = inv.cfg.hash();
  report.seed = ex.seed;
  report.metadata = {{"command", "evaluate"},
                     {"recipe", evaluator::to_string(ex.monte_carlo.recipe)},
                     {"model", inv.input_model ? "input_model.json" : "initial"}};
  write_report(dir, report);
  const evaluator::BerPoint& pt = report.points.front();
  out << "aggregate BER " << pt.aggregate.ber() << " +/- " << pt.aggregate.half_width() << " over "
      << pt.aggregate.bits << " bits (" << pt.replicas << " replicas, " << pt.dropped << " dropped)\n";
}

void cmd_sweep(const Invocation& inv, const fs::path& dir, std::ostream& out) {
  const Experiment ex = experiment_for(inv, config::configured_mode(inv.cfg));
  evaluator::BerReport report = evaluator::sweep(config::sweep_grid(inv.cfg), ex);
  report.config_hash = inv.cfg.hash();
  report.metadata["command"] = "sweep";
  report.metadata["recipe"] = evaluator::to_string(ex.monte_carlo.recipe);
  write_report(dir, report);
  write(dir / "ber.svg", render_svg(report, "BER vs " + report.axis));
  out << report.points.size() << " points written\n";
}

void cmd_export(const Invocation& inv, const fs::path& dir, std::ostream& out) {
  const emnn::EmnnModel& model = *inv.input_model;
  const deploy::Quantization q{inv.cfg.get_int("deploy.quantization_bits")};
  write_bundles(dir / "bundles", model, q);
  write(dir / "phase_maps" / "tx.txt", deploy::export_phase_map(model.tx_stack(), q));
  for (int j = 0; j < model.config.users(); ++j) {
    write(dir / "phase_maps" / ("rx" + std::to_string(j) + ".txt"), deploy::export_phase_map(model.rx_stack(j), q));
  }
  write(dir / "calibration.json", deploy::export_calibration(deploy::analytic_calibration(model)));
  out << "exported " << 1 + model.config.users() << " bundles and phase maps\n";
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out_dir, std::ostream& out,
             std::ostream& err) {
  for (const std::string& input : inputs) {
    std::string svg;
    try {
      const evaluator::BerReport report = evaluator::BerReport::from_csv(deploy::read_text_file(input));
      svg = render_svg(report, fs::path(input).stem().string());
    } catch (const std::exception& e) {
      err << "error: " << input << ": " << e.what() << "\n";
      return kConfig;
    }
    const fs::path target_dir = out_dir.empty() ? fs::path(input).parent_path() : fs::path(out_dir);
    const fs::path target = target_dir / (fs::path(input).stem().string() + ".svg");
    try {
      write(target, svg);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kRuntime;
    }
    out << target.string() << "\n";
  }
  return kOk;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& sets, const std::string& seed,
                      const std::string& out_dir) {
  try {
    RunConfig cfg = path.empty() ? RunConfig::defaults() : RunConfig::parse(deploy::read_text_file(path), path);
    for (const std::string& s : sets) cfg.apply_override(s);
    if (!seed.empty()) cfg.set("run.seed", seed);
    if (!out_dir.empty()) cfg.set("run.out", out_dir);
    return cfg;
  } catch (const std::exception& e) {
    throw Failure{kConfig, e.what()};
  }
}

}  // namespace

Outcome run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"End-to-end SIM/DPSIM OFDM link simulator", "simofdm"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path, seed, out_dir, model_path;
  std::vector<std::string> sets, plot_inputs;
  app.add_option("--config", config_path, "Run configuration file (defaults when omitted)");
  app.add_option("--set", sets, "Override one key, key=value (repeatable)");
  app.add_option("--seed", seed, "Master seed (overrides run.seed)");
  app.add_option("--out", out_dir, "Parent directory of run directories (overrides run.out)");

  app.add_subcommand("train", "Pretrain on statistical CSI");
  app.add_subcommand("finetune", "Finetune on one instantaneous channel (pretrains first without --model)")
      ->add_option("--model", model_path, "Base checkpoint");
  app.add_subcommand("evaluate", "Monte-Carlo BER at evaluation.test_power_dbm")
      ->add_option("--model", model_path, "Checkpoint (a fresh initialisation when omitted)");
  app.add_subcommand("sweep", "BER over sweep.values for each of sweep.modes");
  app.add_subcommand("export", "Deployment bundles, phase maps and calibration template")
      ->add_option("--model", model_path, "Checkpoint to export")
      ->required();
  app.add_subcommand("plot", "Render report CSVs as SVG figures")
      ->add_option("reports", plot_inputs, "Report CSV files")
      ->required();
  app.add_subcommand("schema", "List every configuration key");
  app.add_subcommand("config", "Print the resolved configuration");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return {code == 0 ? kOk : kUsage, {}};
  }
  const std::string command = app.get_subcommands().front()->get_name();

  if (command == "schema") {
    out << config::schema_text();
    return {};
  }
  if (command == "plot") return {cmd_plot(plot_inputs, out_dir, out, err), {}};

  Invocation inv;
  inv.command = command;
  fs::path dir;
  try {
    inv.cfg = load_config(config_path, sets, seed, out_dir);
    try {
      inv.cfg.validate();
    } catch (const std::exception& e) {
      throw Failure{kValidation, e.what()};
    }
    if (command == "config") {
      out << inv.cfg.dump();
      return {};
    }
    if (const std::string& cal = inv.cfg.text("deploy.calibration_file"); !cal.empty()) {
      try {
        inv.calibration = deploy::import_calibration(deploy::read_text_file(cal));
      } catch (const std::exception& e) {
        throw Failure{kConfig, e.what()};
      }
    }
    if (!model_path.empty()) {
      try {
        inv.input_model_text = deploy::read_text_file(model_path);
        inv.input_model = emnn::load_checkpoint(inv.input_model_text);
      } catch (const std::exception& e) {
        throw Failure{kConfig, e.what()};
      }
      const emnn::EmnnConfig expected = config::to_experiment(inv.cfg, config::configured_mode(inv.cfg)).model;
      if (emnn::config_text(inv.input_model->config) != emnn::config_text(expected)) {
        throw Failure{kValidation, model_path + " was built for a different system configuration"};
      }
    }

    try {
      dir = make_run_dir(inv.cfg);
    } catch (const std::exception& e) {
      throw Failure{kRuntime, e.what()};
    }
    try {
      write(dir / "config.conf", inv.cfg.dump());
      std::string replay = "simofdm --config config.conf " + command;
      if (inv.input_model) {
        write(dir / "input_model.json", inv.input_model_text);
        replay += " --model input_model.json";
      }
      write(dir / "command.txt", replay + "\n");

      if (command == "train") cmd_train(inv, dir, out, err);
      if (command == "finetune") cmd_finetune(inv, dir, out, err);
      if (command == "evaluate") cmd_evaluate(inv, dir, out);
      if (command == "sweep") cmd_sweep(inv, dir, out);
      if (command == "export") cmd_export(inv, dir, out);
    } catch (const std::exception& e) {
      throw Failure{kRuntime, e.what()};
    }
  } catch (const Failure& f) {
    err << "error: " << f.message << "\n";
    return {f.code, dir.string()};
  }
  out << "run directory: " << dir.string() << "\n";
  return {kOk, dir.string()};
}

}  // namespace simofdm::cli
