#include "eopulse/heating.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "eopulse/errors.hpp"
#include "eopulse/io.hpp"

namespace eopulse::heating {

namespace {

constexpr double kSqrtHalfPi = 1.2533141373155002512078826424055;
constexpr double kInvSqrtPi = 0.56418958354775628694807945156077;
constexpr double kSqrt2 = 1.4142135623730950488016887242097;

// exp(x^2) erfc(x) for x >= 0. Beyond x = 25 erfc underflows toward the
// subnormal range, so the asymptotic series takes over (error < 1e-15 there).
double erfcx(double x)
{
    if (x < 25.0) return std::exp(x * x) * std::erfc(x);
    const double inv2 = 1.0 / (2.0 * x * x);
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k <= 8; ++k) {
        term *= -(2.0 * k - 1.0) * inv2;
        sum += term;
    }
    return kInvSqrtPi / x * sum;
}

double closed_form_response(double t, double a, double t0, double sigma)
{
    const double s2 = kSqrt2 * sigma;
    const double shift = a * sigma * sigma;
    const double u_t = (t - t0 - shift) / s2;
    const double u_0 = (-t0 - shift) / s2;
    const double pref = sigma * kSqrtHalfPi;
    // The factor exp(-a (t - t0) + a^2 sigma^2 / 2) overflows for wide pulses;
    // when both erf arguments share a sign it is folded into erfcx terms.
    const double far_end = -((t - t0) * (t - t0)) / (2.0 * sigma * sigma);
    const double near_end = -a * t - (t0 * t0) / (2.0 * sigma * sigma);
    if (u_t <= 0.0) return pref * (erfcx(-u_t) * std::exp(far_end) - erfcx(-u_0) * std::exp(near_end));
    if (u_0 >= 0.0) return pref * (erfcx(u_0) * std::exp(near_end) - erfcx(u_t) * std::exp(far_end));
    const double exponent = -a * (t - t0) + 0.5 * shift * a;
    return pref * std::exp(exponent) * (std::erf(u_t) - std::erf(u_0));
}

double quadrature_response(double t, double a, const PulseShape& shape)
{
    if (t <= 0.0) return 0.0;
    auto integrand = [&](double s) { return std::exp(-a * (t - s)) * shape.at(s); };
    // Break the interval around the pulse so every panel sees a smooth integrand.
    std::vector<double> cuts{0.0};
    for (double c : {shape.t0_us - 8.0 * shape.sigma_us, shape.t0_us, shape.t0_us + 8.0 * shape.sigma_us})
        if (c > 0.0 && c < t) cuts.push_back(c);
    cuts.push_back(t);
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k)
        total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, cuts[k], cuts[k + 1], 20,
                                                                                1e-14);
    return total;
}

void check_shape(const PulseShape& shape)
{
    if (!(shape.sigma_us > 0.0)) throw std::invalid_argument("pulse sigma must be > 0");
    if (!std::isfinite(shape.t0_us)) throw std::invalid_argument("pulse center must be finite");
}

TemperatureCurve sample(std::size_t n_intervals, double t_end_s, CurveOrigin origin, auto&& kelvin_at_us)
{
    if (n_intervals == 0) throw std::invalid_argument("curve needs at least one interval");
    if (!(t_end_s > 0.0)) throw std::invalid_argument("curve end time must be > 0");
    TemperatureCurve curve;
    curve.origin = origin;
    for (std::size_t k = 0; k <= n_intervals; ++k) {
        const double t = t_end_s * static_cast<double>(k) / static_cast<double>(n_intervals);
        curve.time_s.push_back(t);
        curve.kelvin.push_back(kelvin_at_us(t / kMicrosecond));
    }
    return curve;
}

} // namespace

void HeatingParams::validate() const
{
    if (!(a > 0.0)) throw std::invalid_argument("heating a must be > 0");
    if (!(T0 >= 0.0)) throw std::invalid_argument("heating T0 must be >= 0");
    if (!(gamma > 0.0)) throw std::invalid_argument("heating gamma must be > 0");
    if (!(eta > 0.0)) throw std::invalid_argument("heating eta must be > 0");
    if (!(t_per > 0.0)) throw std::invalid_argument("heating t_per must be > 0");
    if (!(omega_m > 0.0) || !(hbar > 0.0) || !(k_b > 0.0))
        throw std::invalid_argument("occupancy constants must be > 0");
    if (!std::isfinite(b_prime) || !std::isfinite(d)) throw std::invalid_argument("heating rates must be finite");
}

double PulseShape::at(double t_us) const
{
    const double x = (t_us - t0_us) / sigma_us;
    return std::exp(-0.5 * x * x);
}

std::string to_string(CurveOrigin origin)
{
    switch (origin) {
    case CurveOrigin::AnalyticCw: return "analytic-cw";
    case CurveOrigin::AnalyticGauss: return "analytic-gauss";
    case CurveOrigin::PiecewiseTrain: return "piecewise-train";
    case CurveOrigin::Fitted: return "fitted";
    case CurveOrigin::Measured: return "measured";
    }
    return "unknown";
}

double cw_temperature(double t_us, double a, double b, double T0)
{
    if (!(a > 0.0)) throw std::invalid_argument("heating a must be > 0");
    const double eq = b / a;
    return eq + (T0 - eq) * std::exp(-a * t_us);
}

double heat_response(double t_us, double a, const PulseShape& shape, ConvolutionMethod method)
{
    check_shape(shape);
    if (!(a > 0.0)) throw std::invalid_argument("heating a must be > 0");
    if (t_us <= 0.0) return 0.0;
    return method == ConvolutionMethod::ClosedForm ? closed_form_response(t_us, a, shape.t0_us, shape.sigma_us)
                                                   : quadrature_response(t_us, a, shape);
}

double gaussian_temperature(double t_us, const HeatingParams& params, const PulseShape& shape,
                            ConvolutionMethod method)
{
    const double response = heat_response(t_us, params.a, shape, method);
    return params.b_prime * response + cw_temperature(t_us, params.a, params.d, params.T0);
}

double main_text_Tp(double t_us, const HeatingParams& params)
{
    const double f = 0.305 - 0.306 * std::erf(2.013 - 10.408 * t_us);
    return params.b_prime * std::exp(-params.a * t_us) * f + cw_temperature(t_us, params.a, params.d, params.T0);
}

double thermal_occupancy(double kelvin, const HeatingParams& params)
{
    if (kelvin < 0.0 || std::isnan(kelvin)) throw std::invalid_argument("temperature must be >= 0");
    if (kelvin == 0.0) return 0.0;
    const double x = params.hbar * params.omega_m / (params.k_b * kelvin);
    return 1.0 / std::expm1(x);
}

TemperatureCurve sample_cw(const HeatingParams& params, double b, double t_end_s, std::size_t n_intervals)
{
    return sample(n_intervals, t_end_s, CurveOrigin::AnalyticCw,
                  [&](double t) { return cw_temperature(t, params.a, b, params.T0); });
}

TemperatureCurve sample_gaussian(const HeatingParams& params, const PulseShape& shape, double t_end_s,
                                 std::size_t n_intervals)
{
    check_shape(shape);
    return sample(n_intervals, t_end_s, CurveOrigin::AnalyticGauss,
                  [&](double t) { return gaussian_temperature(t, params, shape); });
}

double profile_mean(const HeatingParams& params, const PulseShape& shape)
{
    check_shape(shape);
    const double period = params.t_per / kMicrosecond;
    const double s2 = kSqrt2 * shape.sigma_us;
    const double mass = shape.sigma_us * kSqrtHalfPi *
                        (std::erf((period - shape.t0_us) / s2) + std::erf(shape.t0_us / s2));
    return mass / period;
}

PulseTrain pulse_train_temperature(const HeatingParams& params, const PulseShape& shape, std::size_t n_periods,
                                   std::size_t samples_per_period)
{
    params.validate();
    check_shape(shape);
    if (n_periods == 0) throw std::invalid_argument("pulse train needs at least one period");
    if (samples_per_period == 0) throw std::invalid_argument("samples_per_period must be >= 1");
    const double period = params.t_per / kMicrosecond;
    if (!(period > 6.0 * shape.sigma_us)) throw std::invalid_argument("t_per must exceed 6 sigma");

    const double decay = std::exp(-params.a * period);
    const double drive = params.b_prime * heat_response(period, params.a, shape);
    const double floor = params.d / params.a;
    auto period_curve = [&](double start, double tau) {
        return params.b_prime * heat_response(tau, params.a, shape) + floor + (start - floor) * std::exp(-params.a * tau);
    };

    PulseTrain out;
    out.curve.origin = CurveOrigin::PiecewiseTrain;
    out.steady_cycle.origin = CurveOrigin::PiecewiseTrain;
    double start = params.T0;
    for (std::size_t p = 0; p < n_periods; ++p) {
        for (std::size_t k = 0; k < samples_per_period; ++k) {
            const double tau = period * static_cast<double>(k) / static_cast<double>(samples_per_period);
            out.curve.time_s.push_back((static_cast<double>(p) * period + tau) * kMicrosecond);
            out.curve.kelvin.push_back(period_curve(start, tau));
        }
        start = drive + floor + (start - floor) * decay;
    }
    out.curve.time_s.push_back(static_cast<double>(n_periods) * period * kMicrosecond);
    out.curve.kelvin.push_back(start);

    // Consecutive periods differ by (T_{k+1} - T_k) e^{-a tau}, largest at the boundary.
    constexpr std::size_t kMaxPeriods = 10000;
    double boundary = params.T0;
    std::size_t count = 0;
    for (;;) {
        const double next = drive + floor + (boundary - floor) * decay;
        ++count;
        const double change = std::abs(next - boundary);
        boundary = next;
        if (change < 1e-6) break;
        if (count >= kMaxPeriods)
            throw NoConvergence("pulse train not periodic after " + std::to_string(kMaxPeriods) + " periods");
    }
    out.periods_to_converge = count;
    out.steady_start = boundary;
    for (std::size_t k = 0; k <= samples_per_period; ++k) {
        const double tau = period * static_cast<double>(k) / static_cast<double>(samples_per_period);
        out.steady_cycle.time_s.push_back(tau * kMicrosecond);
        out.steady_cycle.kelvin.push_back(period_curve(boundary, tau));
    }
    out.steady_peak = *std::max_element(out.steady_cycle.kelvin.begin(), out.steady_cycle.kelvin.end());
    // Over a closed cycle the ODE integrates to zero: a <T> = b' <g> + d.
    out.steady_average = (params.b_prime * profile_mean(params, shape) + params.d) / params.a;
    return out;
}

double pulse_average_temperature(const HeatingParams& params, double peak_nbar, double sigma_us, double t_per_s)
{
    HeatingParams p = params;
    p.t_per = t_per_s;
    p.b_prime = p.a * p.eta * std::pow(peak_nbar, p.gamma) - p.d;
    const PulseShape shape{0.5 * t_per_s / kMicrosecond, sigma_us};
    return (p.b_prime * profile_mean(p, shape) + p.d) / p.a;
}

MatchRow match_average(const HeatingParams& params, double cw_nbar, double sigma_us, double t_per_s, double max_ratio)
{
    params.validate();
    if (!(cw_nbar > 0.0)) throw std::invalid_argument("CW photon number must be > 0");
    if (!(sigma_us > 0.0)) throw std::invalid_argument("pulse sigma must be > 0");
    if (!(t_per_s > 0.0)) throw std::invalid_argument("t_per must be > 0");
    const double cw_average = params.eta * std::pow(cw_nbar, params.gamma);
    if (cw_average < params.d / params.a)
        throw std::invalid_argument("CW candidate does not heat: eta n^gamma is below d/a");

    auto mismatch = [&](double n) { return pulse_average_temperature(params, n, sigma_us, t_per_s) - cw_average; };
    const double lo = cw_nbar;
    const double hi = cw_nbar * max_ratio;
    double root = lo;
    const double f_lo = mismatch(lo);
    const double f_hi = mismatch(hi);
    const double scale = std::max(cw_average, 1e-300);
    if (std::abs(f_lo) <= 1e-14 * scale) {
        root = lo;
    } else if (f_lo > 0.0 || f_hi < 0.0) {
        throw RootNotBracketed("no pulse peak in [n_cw, " + io::format_number(max_ratio) +
                               " n_cw] matches the CW average temperature");
    } else {
        std::uintmax_t iterations = 200;
        const auto bracket = boost::math::tools::toms748_solve(
            mismatch, lo, hi, f_lo, f_hi, boost::math::tools::eps_tolerance<double>(50), iterations);
        if (iterations >= 200) throw NoConvergence("pulse peak root search did not converge");
        root = 0.5 * (bracket.first + bracket.second);
    }
    MatchRow row;
    row.sigma_us = sigma_us;
    row.t_per_s = t_per_s;
    row.cw_nbar = cw_nbar;
    row.pulse_peak_nbar = root;
    row.ratio = root / cw_nbar;
    row.average_kelvin = cw_average;
    return row;
}

void write_curve_csv(std::ostream& out, const TemperatureCurve& curve)
{
    io::CsvWriter csv(out, {"t_s", "T_K"});
    for (std::size_t k = 0; k < curve.size(); ++k) csv.row({curve.time_s[k], curve.kelvin[k]});
}

TemperatureCurve read_curve_csv(const std::string& path)
{
    const auto table = io::read_numeric_csv(path);
    if (table.header.size() != 2) throw std::runtime_error(path + ": expected two columns (t_s, T_K)");
    TemperatureCurve curve;
    curve.origin = CurveOrigin::Measured;
    for (const auto& row : table.rows) {
        curve.time_s.push_back(row[0]);
        curve.kelvin.push_back(row[1]);
    }
    return curve;
}

void write_match_csv(std::ostream& out, const std::vector<std::string>& labels, const std::vector<MatchRow>& rows)
{
    io::CsvWriter csv(out, {"config", "cw_nbar", "pulse_peak_nbar", "ratio", "avg_T_K"});
    for (std::size_t k = 0; k < rows.size(); ++k)
        csv.row(labels.at(k), {rows[k].cw_nbar, rows[k].pulse_peak_nbar, rows[k].ratio, rows[k].average_kelvin});
}

} // namespace eopulse::heating
