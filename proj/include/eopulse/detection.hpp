// detection.hpp: detector-level coincidence statistics, time-bin rotations and
// the CHSH parameter.
//
// Rates follow the moment-factored form: a coincidence at (t, t + tau) is the
// accidental product of single-photon fluxes plus the squared pair correlator,
// both scaled by detector efficiency, transmission and window, with dark counts
// added to each arm.

#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "eopulse/dynamics.hpp"

namespace eopulse::detection {

using dynamics::TimeGrid;
using quantum::Complex;
using quantum::ComplexMatrix;

struct DetectorModel {
    double eta_o{0.8};
    double eta_e{0.9};
    double T_o{1e-2};
    double T_e{0.5};
    double D_o{10.0};  // Hz
    double D_e{1e3};   // Hz
    double t_w{1e-9};  // s
    double r_D{1.0 / 33e-6}; // Hz
    double t_c{60.0};  // s
    // Time-bin evaluations lose half the optical photons in the interferometer.
    bool interferometer_loss{true};

    // Throws std::invalid_argument naming the first violated bound.
    void validate() const;
    double optical_efficiency_time_bin() const { return interferometer_loss ? 0.5 * eta_o : eta_o; }
};

// Single-bin output statistics. Cross-bin correlators are zero by construction
// and never stored; both bins share these tables.
struct BinCorrelators {
    TimeGrid t_grid;   // optical detection time t (the pump window)
    TimeGrid tau_grid; // delay, starting at 0
    // kappa_o_c <a^† a>(t_i), photons per second.
    Eigen::VectorXd optical_flux;
    // kappa_e_c <c^† c>(t_i + tau_j), photons per second.
    Eigen::MatrixXd microwave_flux;
    // sqrt(kappa_o_c kappa_e_c) <a^†(t_i) c^†(t_i + tau_j)>, per second.
    ComplexMatrix pair;
    // Full width at half maximum of the optical output flux (s); infinity when unknown.
    double optical_width{std::numeric_limits<double>::infinity()};
};

// Pair correlators by regression from every t_grid point, over tau_grid.
// Both grids must lie on the evolution grid; states are needed at t_grid.
BinCorrelators build_bin_correlators(const dynamics::EvolutionResult& evolution, const quantum::SystemParams& params,
                                     const quantum::PumpPulse& pulse, const TimeGrid& t_grid,
                                     const TimeGrid& tau_grid, unsigned workers = 1);

struct CoincidenceRate {
    double accidental_rate{0.0};      // mean of R_a'(t) over the pump window (Hz)
    double correlated_rate{0.0};      // mean of R_c'(t) over the pump window (Hz)
    double per_shot_probability{0.0}; // integral of R_a' + R_c' over the pump window
    double total_rate{0.0};           // per_shot_probability * r_D (Hz)
    double window_start{0.0};
    double window_end{0.0};
};

// Throws WindowTooWide if t_w exceeds 10% of the optical output width,
// GridMismatch if tau is outside the delay grid.
CoincidenceRate coincidence_rate(const BinCorrelators& correlators, const DetectorModel& det, double tau);

struct ChshSetting {
    double alpha{0.0};
    double beta{0.0};
    double theta{0.0};
    double phi{0.0};

    // Angles reduced to [0, 2 pi).
    ChshSetting reduced() const;
};

// Coefficients of a1' = u1 a1 + u2 a2 and c1' = v1 c1 + v2 c2, and the weights
// they put on single-bin correlators (equal bins, zero cross-bin terms).
struct BinRotation {
    std::array<Complex, 2> optical;
    std::array<Complex, 2> microwave;
    double optical_single{1.0};
    double microwave_single{1.0};
    // |u1 v1 + u2 v2|^2, multiplying |M|^2.
    double pair{1.0};
};

BinRotation rotate_bins(const ChshSetting& setting);

// C(alpha, beta), C(alpha, beta + pi), C(alpha + pi, beta), C(alpha + pi, beta + pi).
struct CountQuadruple {
    double c00{0.0};
    double c0pi{0.0};
    double cpi0{0.0};
    double cpipi{0.0};

    double sum() const { return c00 + c0pi + cpi0 + cpipi; }
};

struct ChshPoint {
    double beta{0.0};
    double S{0.0};
    CountQuadruple counts;
};

// Precomputes the tau-slice integrals once; every count is then closed form.
class ChshEvaluator {
public:
    ChshEvaluator(const BinCorrelators& correlators, const DetectorModel& det, double tau);

    double counts(const ChshSetting& setting) const;
    CountQuadruple quadruple(double alpha, double beta) const;
    // Count-ratio estimate of <sigma_alpha sigma_beta>; throws ZeroDenominator.
    double correlation(double alpha, double beta) const;
    // S with alpha' = alpha + pi/2, beta' = beta + pi/2.
    double S(double alpha, double beta) const;
    std::vector<ChshPoint> sweep(double alpha, const std::vector<double>& betas) const;
    // max over beta of |S(alpha, beta)|, refined from a grid by Brent's method.
    double max_abs_S(double alpha, double* argmax_beta = nullptr) const;

    // t_w * integral of the accidental product and of |M|^2 (time-bin efficiencies).
    double accidental_integral() const { return accidental_; }
    double pair_integral() const { return pair_; }

private:
    DetectorModel det_;
    double accidental_{0.0};
    double pair_{0.0};
};

// C = R_cc(a1', c1') t_c with detector imperfections; zero when t_c = 0.
double coincidence_counts(const BinCorrelators& correlators, const DetectorModel& det, const ChshSetting& setting,
                          double tau);

double chsh_S(const BinCorrelators& correlators, const DetectorModel& det, double alpha, double beta, double tau);

// Poisson draws around the expected counts, reproducible for a given seed.
CountQuadruple sample_counts(const CountQuadruple& expected, std::uint64_t seed);

} // namespace eopulse::detection
