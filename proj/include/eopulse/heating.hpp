// heating.hpp: transient laser heating of the device bath: closed-form
// solutions of the linear heating ODE, periodic pulse trains, least-squares
// fitting, Bose-Einstein occupancy and CW-vs-pulse average matching.
//
// UNITS: the heating model runs on a microsecond clock. `a` is in 1/us,
// `b_prime` and `d` in K/us, and every `t_us` argument is in microseconds.
// TemperatureCurve stores seconds; conversions happen at its boundary only.

#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace eopulse::heating {

inline constexpr double kHbar = 1.054571817e-34;   // J s
inline constexpr double kBoltzmann = 1.380649e-23; // J/K
inline constexpr double kMicrosecond = 1e-6;       // s

// dT/dt = b' g(t) + d - a T with g the normalized pump profile (peak 1).
// Only the identifiable composites of the cooling law are stored.
struct HeatingParams {
    double a{7.244};       // 1/us
    double b_prime{2.521}; // K/us
    double d{1.138};       // K/us
    double T0{0.108};      // K
    // Steady-state power law T = eta * n^gamma against intracavity photons.
    double eta{1.0};
    double gamma{2.0 / 3.0};
    double t_per{33e-6};                              // s
    double omega_m{6.283185307179586476925286766559 * 5e9}; // rad/s
    double hbar{kHbar};
    double k_b{kBoltzmann};

    // Throws std::invalid_argument naming the first violated bound.
    void validate() const;
};

// Gaussian pump profile in heating time (us).
struct PulseShape {
    double t0_us{0.16};
    double sigma_us{0.068};

    double at(double t_us) const;
};

enum class CurveOrigin { AnalyticCw, AnalyticGauss, PiecewiseTrain, Fitted, Measured };

struct TemperatureCurve {
    std::vector<double> time_s;
    std::vector<double> kelvin;
    CurveOrigin origin{CurveOrigin::Measured};

    std::size_t size() const { return time_s.size(); }
};

std::string to_string(CurveOrigin origin);

// T(t) = (b/a)(1 - (1 - T0 a / b) e^{-a t}); written as b/a + (T0 - b/a) e^{-a t}
// so b = 0 is allowed.
double cw_temperature(double t_us, double a, double b, double T0);

enum class ConvolutionMethod { ClosedForm, Quadrature };

// integral_0^t e^{-a (t - s)} g(s) ds for the Gaussian profile g.
// The closed form is rearranged with the scaled complementary error function
// so it stays finite for wide pulses (a sigma >> 1).
double heat_response(double t_us, double a, const PulseShape& shape,
                     ConvolutionMethod method = ConvolutionMethod::ClosedForm);

// b' * heat_response + d/a + (T0 - d/a) e^{-a t}. Throws std::invalid_argument
// if sigma <= 0.
double gaussian_temperature(double t_us, const HeatingParams& params, const PulseShape& shape,
                            ConvolutionMethod method = ConvolutionMethod::ClosedForm);

// Same curve with the pump profile fixed to the measured one, in the tabulated
// form 0.305 - 0.306 erf(2.013 - 10.408 t). The tabulation is only meaningful
// with t in microseconds.
double main_text_Tp(double t_us, const HeatingParams& params = {});

// 1 / (exp(hbar omega_m / (k_b T)) - 1); exactly 0 at T = 0.
// Throws std::invalid_argument for T < 0.
double thermal_occupancy(double kelvin, const HeatingParams& params = {});

// Sampling of the curves onto a uniform grid (seconds).
TemperatureCurve sample_cw(const HeatingParams& params, double b, double t_end_s, std::size_t n_intervals);
TemperatureCurve sample_gaussian(const HeatingParams& params, const PulseShape& shape, double t_end_s,
                                 std::size_t n_intervals);

struct PulseTrain {
    // First n_periods periods from T0, samples_per_period intervals each.
    TemperatureCurve curve;
    // One period of the periodic steady cycle, starting at a period boundary.
    TemperatureCurve steady_cycle;
    double steady_start{0.0};   // K, temperature at each period boundary once periodic
    double steady_average{0.0}; // K, time average over one steady period
    double steady_peak{0.0};    // K
    std::size_t periods_to_converge{0};
};

// Repeats the pulse (centered at shape.t0_us within each period) every t_per,
// matching T at every period boundary. Iterates until successive periods differ
// by < 1e-6 K. Throws std::invalid_argument if t_per <= 6 sigma, NoConvergence
// after 10^4 periods.
PulseTrain pulse_train_temperature(const HeatingParams& params, const PulseShape& shape, std::size_t n_periods,
                                   std::size_t samples_per_period = 2000);

// Time average of the pump profile over one period [0, t_per).
double profile_mean(const HeatingParams& params, const PulseShape& shape);

struct FitResult {
    HeatingParams params;
    double residual_norm{0.0}; // sqrt(sum of squared residuals), K
    double input_variance{0.0};
    // b' near zero or the Jacobian rank-deficient: a and b' are not identifiable.
    bool degenerate{false};
    int evaluations{0};
};

// Least squares over {a, b', d, T0} with the pump shape held fixed. Non-fitted
// members of `base` (eta, gamma, t_per, omega_m) are carried over.
// Throws std::invalid_argument for fewer than 8 samples, FitDiverged if the
// mean squared residual exceeds the sample variance.
FitResult fit_params(const TemperatureCurve& samples, const PulseShape& shape, const HeatingParams& base = {});

struct MatchRow {
    double sigma_us{0.0};
    double t_per_s{0.0};
    double cw_nbar{0.0};
    double pulse_peak_nbar{0.0};
    double ratio{0.0};
    double average_kelvin{0.0};
};

// For each (sigma, t_per) pair: the pulse peak intracavity photon number whose
// steady-cycle average temperature equals the CW equilibrium b/a = eta n_cw^gamma.
// Heating inputs follow b' = a eta n_p^gamma - d for the pulse. The pulse sits at
// the middle of its period. Throws std::invalid_argument if the CW candidate does
// not heat (eta n_cw^gamma < d / a), RootNotBracketed if no peak up to
// max_ratio * n_cw matches.
MatchRow match_average(const HeatingParams& params, double cw_nbar, double sigma_us, double t_per_s,
                       double max_ratio = 1e9);

// Steady-cycle average temperature for a pulse with the given peak photon number.
double pulse_average_temperature(const HeatingParams& params, double peak_nbar, double sigma_us, double t_per_s);

// CSV: t_s, T_K.
void write_curve_csv(std::ostream& out, const TemperatureCurve& curve);
// Two named columns; the first is time in seconds, the second temperature in kelvin.
TemperatureCurve read_curve_csv(const std::string& path);
// config, cw_nbar, pulse_peak_nbar, ratio, avg_T_K
void write_match_csv(std::ostream& out, const std::vector<std::string>& labels, const std::vector<MatchRow>& rows);

} // namespace eopulse::heating
