// experiments.hpp: named experiment runners and the simulation pipelines they
// share (evolution grid, correlator tables, CHSH summary, wavepacket).

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "eopulse/biphoton.hpp"
#include "eopulse/config.hpp"
#include "eopulse/detection.hpp"
#include "eopulse/dynamics.hpp"

namespace eopulse::experiments {

using dynamics::TimeGrid;
using quantum::FockSpace;
using quantum::PumpPulse;
using quantum::SystemParams;

// t0 + 6 sigma + 5 / kappa_e: the pump plus five microwave ring-down times.
double default_window_end(const SystemParams& params, const PumpPulse& pump);

// Uniform grid from 0 with a step that divides grids.align and is at most
// grids.dt_fraction * max_time_step; it reaches at least
// max(grids.t_end or the default window end, min_end).
TimeGrid evolution_grid(const SystemParams& params, const PumpPulse& pump, const config::GridSpec& grids,
                        double min_end = 0.0);

// Pump window [t0 - 3 sigma, t0 + 3 sigma] clipped at 0, snapped outward to
// the evolution grid, with `stride` evolution steps between points.
TimeGrid pump_window(const TimeGrid& evolution, const PumpPulse& pump, std::size_t stride);

// Copy of `params` whose mechanical bath follows the heating curve, sampled on
// `grid` once and interpolated linearly between samples.
SystemParams with_heating_noise(SystemParams params, const heating::HeatingParams& heat,
                                config::HeatingProfile profile, const PumpPulse& pump, const TimeGrid& grid);

struct PairTables {
    FockSpace space;
    TimeGrid grid;
    dynamics::StateDiagnostics diagnostics;
    detection::BinCorrelators correlators;
};

// Vacuum start, evolution over the pump window plus tau_max, correlators from
// every pump-window point. With heating, pass params from with_heating_noise on
// the same grid (build it with evolution_grid first).
PairTables simulate_pair_tables(const SystemParams& params, const PumpPulse& pump, const FockSpace& space,
                                const config::GridSpec& grids, double tau_max, unsigned workers,
                                const TimeGrid* grid = nullptr);

struct ChshSummary {
    double S_max{0.0};
    double beta_at_max{0.0};
    detection::CoincidenceRate rate;
};

ChshSummary summarize_chsh(const detection::BinCorrelators& correlators, const detection::DetectorModel& det,
                           const config::ChshSpec& chsh);

// beta_points values spanning [0, 2 pi] inclusive.
std::vector<double> beta_grid(std::size_t points);

struct WavepacketRun {
    FockSpace space;
    TimeGrid grid;
    dynamics::StateDiagnostics diagnostics;
    biphoton::BiphotonWavepacket wavepacket;
};

// Amplitude wavepacket on the stored-state grid (every axis_stride steps of the
// evolution over [0, default window end]).
WavepacketRun simulate_wavepacket(const SystemParams& params, const PumpPulse& pump, const FockSpace& space,
                                  const config::GridSpec& grids, unsigned workers);

struct GateResult {
    std::string label;
    std::string observable;
    std::array<int, 3> cutoffs{};
    std::array<int, 3> cutoffs_plus{};
    double value{0.0};
    double value_plus{0.0};
    double relative_change{0.0};
    bool passed{true};
};

struct RunSummary {
    std::vector<std::filesystem::path> files;
    std::vector<GateResult> gates;
    bool gates_passed{true};
    double wall_seconds{0.0};
};

// Label used in file names: "G<gain>_sigma<ns>ns" or "n<photons>_sigma<ns>ns".
std::string pump_label(const PumpPulse& pump);
FockSpace cutoffs_for(const config::ExperimentConfig& cfg, const PumpPulse& pump);

// Writes the experiment's CSV files, manifest.json (resolved inputs, cutoffs,
// gate results, headline values; byte-stable for a given config) and
// timing.json (wall-clock, the only non-deterministic output) into output_dir.
// Throws ExperimentFailed with the experiment name attached; with an enforced
// gate, a failed gate throws after the manifest is written.
RunSummary run(const config::ExperimentConfig& cfg, const std::filesystem::path& output_dir);

} // namespace eopulse::experiments
