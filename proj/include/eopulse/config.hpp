// config.hpp: experiment configuration read from YAML.
//
// Every dimensional key carries its unit in the name (`sigma_ns`,
// `g0_khz_over_2pi`, ...). Values given as f/2pi are converted to angular
// rates exactly once, here; nothing downstream sees the raw numbers.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eopulse/detection.hpp"
#include "eopulse/heating.hpp"
#include "eopulse/quantum.hpp"

namespace eopulse::config {

enum class ExperimentKind {
    Wavepacket,
    SchmidtModes,
    CoincidenceVsTau,
    CountsVsBeta,
    ChshSweep,
    ChshWithHeating,
    HeatingCompare,
    HeatingFit,
};

const std::vector<ExperimentKind>& all_experiments();
std::string to_string(ExperimentKind kind);
std::optional<ExperimentKind> parse_experiment(const std::string& name);
// One-line description for `list-experiments`.
std::string describe(ExperimentKind kind);

// What the runner does with the re-run at cutoffs + 1.
enum class GateMode { Enforce, Report, Off };

// Where n_th_b(t) comes from in heating-noise runs.
enum class HeatingProfile {
    // Gaussian heating response to the run's own pump shape (t0, sigma).
    PulseMatched,
    // The tabulated curve for the measured 68 ns pulse, whatever the pump.
    Tabulated,
};

struct GridSpec {
    // Propagation step as a fraction of the largest step the integrator allows.
    double dt_fraction{1.0};
    // Step is chosen to divide this interval, so pump-window edges and delays
    // that are multiples of it land on grid points.
    double align{10e-9}; // s
    // Default end: t0 + 6 sigma + 5 / kappa_e (latest pump).
    std::optional<double> t_end;
    // Evolution steps between coincidence-evaluation times t.
    std::size_t t_stride{2};
    // Evolution steps between wavepacket axis points.
    std::size_t axis_stride{2};
    double tau_max{400e-9}; // s, delay range for CoincidenceVsTau
    double tau_step{0.0};   // s, 0 = one evolution step
};

struct ChshSpec {
    double tau{150e-9}; // s
    double alpha{0.0};  // rad
    std::size_t beta_points{361};
};

struct HeatingCompareSpec {
    double cw_nbar{1.0};
    std::vector<double> sigma_sweep_us{0.64, 0.32, 0.16};
    std::vector<double> t_per_sweep_us{11.0, 33.0, 99.0};
    double fixed_sigma_us{0.32};
    double curve_end_us{1.0};
    std::size_t curve_intervals{1000};
    std::size_t train_periods{3};
    // Single-pulse shape for the transient curves (the measured pulse).
    heating::PulseShape shape{};
};

struct HeatingFitSpec {
    // Relative path resolves against the config file's directory. When absent,
    // samples are synthesized from `heating` with multiplicative noise.
    std::optional<std::filesystem::path> data_csv;
    double noise_fraction{1e-3};
    std::size_t samples{200};
    double t_end_us{1.0};
    heating::PulseShape shape{};
};

struct ExperimentConfig {
    ExperimentKind experiment{ExperimentKind::ChshSweep};
    quantum::SystemParams system{quantum::SystemParams::reference_device()};
    std::vector<quantum::PumpPulse> pumps;
    // Applied to every pump; otherwise chosen per pump strength.
    std::optional<std::array<int, 3>> cutoffs;
    detection::DetectorModel detector{};
    heating::HeatingParams heating{};
    HeatingProfile heating_profile{HeatingProfile::PulseMatched};
    // ChshWithHeating also runs the first pump without heating noise.
    bool heating_reference{true};
    GridSpec grids{};
    ChshSpec chsh{};
    std::size_t schmidt_modes{8};
    HeatingCompareSpec heating_compare{};
    HeatingFitSpec heating_fit{};
    GateMode gate{GateMode::Enforce};
    double gate_tolerance{1e-3};
    std::filesystem::path output_dir{"output"};
    std::uint64_t rng_seed{20240229};
    unsigned workers{1};
};

// Parses and validates; throws ConfigError listing every violation found.
// `base_dir` anchors relative paths inside the document.
ExperimentConfig parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

// Default cutoffs (N_a, N_b, N_c): (2, 4, 4) up to unit gain, (3, 6, 6) above.
std::array<int, 3> default_cutoffs(const quantum::PumpPulse& pump);

} // namespace eopulse::config
