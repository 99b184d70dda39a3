#include <benchmark/benchmark.h>

#include "simofdm/config.hpp"

namespace {

using namespace simofdm;
using meta::Polarization;

meta::PanelLayout panel(meta::Side side, int units, int antennas, int layers) {
  meta::PanelLayout l;
  l.units = {units, units};
  l.antennas = {antennas, antennas};
  l.unit_spacing = 10.7e-3 / 2;
  l.layer_spacing = 10.7e-3 / 2;
  l.layer_count = layers;
  l.side = side;
  return l;
}

void BM_DiffractionMatrix(benchmark::State& state) {
  const auto l = panel(meta::Side::kTx, static_cast<int>(state.range(0)), 4, 2);
  for (auto _ : state) benchmark::DoNotOptimize(meta::diffraction_matrix(l, 1, 2, 28e9));
}
BENCHMARK(BM_DiffractionMatrix)->Arg(4)->Arg(10);

void BM_Chain(benchmark::State& state) {
  const bool dual = state.range(1) != 0;
  const auto l = panel(meta::Side::kTx, static_cast<int>(state.range(0)), dual ? 3 : 4, 3);
  const auto prop = meta::build_propagation(l, std::vector<double>{28e9});
  meta::MetasurfaceStack s{l, dual ? Polarization::kDual : Polarization::kSingle, {}};
  s.phases.assign(3, std::vector<double>(static_cast<std::size_t>(l.units.count() * (dual ? 2 : 1)), 1.0));
  for (auto _ : state) benchmark::DoNotOptimize(dual ? meta::dp_chain(s, prop, 0) : meta::tx_chain(s, prop, 0));
}
BENCHMARK(BM_Chain)->Args({10, 0})->Args({10, 1});

// One training step (forward, backward) on the shipped profiles.
void forward_backward(benchmark::State& state, const config::RunConfig& cfg, Polarization mode) {
  const evaluator::Experiment ex = config::to_experiment(cfg, mode);
  const emnn::EmnnModel model = emnn::build_model(ex.model, 1);
  const auto channel = chan::realize(ex.channel_setup(), wave::RngStream(2));
  const int batch = static_cast<int>(state.range(0));
  wave::RngStream rng(3);
  const wave::RMat bits = train::draw_bits(batch, ex.model.bits(), rng);
  const wave::RMat power = wave::RMat::Constant(batch, 1, 1.0);
  for (auto _ : state) {
    auto tr = emnn::trace_forward(model, bits, power, channel, {.training = true, .noise_seed = 4});
    emnn::evaluate(*tr);
    benchmark::DoNotOptimize(tr->graph.backward(tr->loss));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

config::RunConfig desk_config() {
  config::RunConfig c = config::RunConfig::defaults();
  for (const char* kv : {"system.subcarriers=4", "system.users=1", "system.user_bits=4", "scene.users=6,0,12",
                         "sim.tx_layers=1", "sim.rx_layers=1", "sim.tx_units=4x4", "sim.rx_units=4x4",
                         "sim.tx_antennas=2x2", "sim.rx_antennas=2x2", "dpsim.tx_layers=1", "dpsim.rx_layers=1",
                         "dpsim.tx_units=4x4", "dpsim.rx_units=4x4", "dpsim.tx_antennas=1x2",
                         "dpsim.rx_antennas=1x2"}) {
    c.apply_override(kv);
  }
  return c;
}

void BM_StepDesk(benchmark::State& state) { forward_backward(state, desk_config(), Polarization::kSingle); }
BENCHMARK(BM_StepDesk)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_StepFullScale(benchmark::State& state) {
  forward_backward(state, config::RunConfig::defaults(), state.range(1) ? Polarization::kDual : Polarization::kSingle);
}
BENCHMARK(BM_StepFullScale)->Args({16, 0})->Args({16, 1})->Unit(benchmark::kMillisecond);

void BM_MeasureBer(benchmark::State& state) {
  const evaluator::Experiment ex = config::to_experiment(desk_config(), Polarization::kSingle);
  const emnn::EmnnModel model = emnn::build_model(ex.model, 1);
  const auto channel = chan::realize(ex.channel_setup(), wave::RngStream(2));
  evaluator::EmnnLink link(model);
  for (auto _ : state) benchmark::DoNotOptimize(evaluator::measure_ber(link, channel, 1.0, 10000, 5));
  state.SetItemsProcessed(state.iterations() * 10000);
}
BENCHMARK(BM_MeasureBer)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
