#include "eopulse/detection.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include <boost/math/tools/minima.hpp>

#include "eopulse/biphoton.hpp"
#include "eopulse/errors.hpp"
#include "eopulse/io.hpp"
#include "eopulse/parallel.hpp"

namespace eopulse::detection {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct TauSlice {
    Eigen::Index lower;
    double weight; // of the upper neighbour
};

TauSlice locate_tau(const TimeGrid& tau_grid, double tau)
{
    const double x = (tau - tau_grid.t_start) / tau_grid.dt();
    const auto n = static_cast<double>(tau_grid.n_steps);
    if (!(x >= -1e-9) || !(x <= n + 1e-9))
        throw GridMismatch("tau = " + io::format_number(tau) + " s is outside the delay grid");
    const double clamped = std::clamp(x, 0.0, n);
    const auto lower = static_cast<Eigen::Index>(std::min(std::floor(clamped), n - 1.0));
    return {lower, clamped - static_cast<double>(lower)};
}

double at_slice(const Eigen::MatrixXd& m, Eigen::Index row, const TauSlice& s)
{
    if (s.weight == 0.0) return m(row, s.lower);
    return (1.0 - s.weight) * m(row, s.lower) + s.weight * m(row, s.lower + 1);
}

void check_shapes(const BinCorrelators& c)
{
    const auto nt = static_cast<Eigen::Index>(c.t_grid.size());
    const auto ntau = static_cast<Eigen::Index>(c.tau_grid.size());
    if (c.optical_flux.size() != nt || c.microwave_flux.rows() != nt || c.microwave_flux.cols() != ntau ||
        c.pair.rows() != nt || c.pair.cols() != ntau)
        throw GridMismatch("correlator tables do not match their grids");
}

// Linear interpolation of a track sampled at increasing times.
double interpolate(const std::vector<double>& times, const std::vector<double>& values, double t)
{
    if (t < times.front() - 1e-15 || t > times.back() + 1e-15)
        throw GridMismatch("t = " + io::format_number(t) + " s is outside the evolution");
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.end()) return values.back();
    if (it == times.begin()) return values.front();
    const auto k = static_cast<std::size_t>(it - times.begin());
    const double w = (t - times[k - 1]) / (times[k] - times[k - 1]);
    return (1.0 - w) * values[k - 1] + w * values[k];
}

double full_width_half_max(const std::vector<double>& times, const std::vector<double>& values)
{
    const auto peak = std::max_element(values.begin(), values.end());
    if (peak == values.end() || !(*peak > 0.0)) return std::numeric_limits<double>::infinity();
    const double half = 0.5 * *peak;
    const auto p = static_cast<std::size_t>(peak - values.begin());
    double left = times.front();
    for (std::size_t k = p; k > 0; --k)
        if (values[k - 1] < half) {
            left = times[k - 1] + (half - values[k - 1]) / (values[k] - values[k - 1]) * (times[k] - times[k - 1]);
            break;
        }
    double right = times.back();
    for (std::size_t k = p; k + 1 < values.size(); ++k)
        if (values[k + 1] < half) {
            right = times[k] + (values[k] - half) / (values[k] - values[k + 1]) * (times[k + 1] - times[k]);
            break;
        }
    return right - left;
}

} // namespace

void DetectorModel::validate() const
{
    const std::pair<const char*, double> unit[] = {{"eta_o", eta_o}, {"eta_e", eta_e}, {"T_o", T_o}, {"T_e", T_e}};
    for (const auto& [name, v] : unit)
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string("DetectorModel.") + name + " must lie in [0, 1]");
    const std::pair<const char*, double> positive[] = {{"D_o", D_o}, {"D_e", D_e}, {"t_w", t_w}, {"r_D", r_D}, {"t_c", t_c}};
    for (const auto& [name, v] : positive)
        if (!(v >= 0.0) || !std::isfinite(v))
            throw std::invalid_argument(std::string("DetectorModel.") + name + " must be a finite value >= 0");
    if (r_D * t_w > 1.0) throw std::invalid_argument("DetectorModel requires r_D * t_w <= 1");
}

BinCorrelators build_bin_correlators(const dynamics::EvolutionResult& evolution, const quantum::SystemParams& params,
                                     const quantum::PumpPulse& pulse, const TimeGrid& t_grid,
                                     const TimeGrid& tau_grid, unsigned workers)
{
    const auto& grid = evolution.grid;
    if (!grid.contains(t_grid)) throw GridMismatch("t grid is not on the evolution grid");
    if (std::abs(tau_grid.t_start) > 1e-6 * tau_grid.dt()) throw GridMismatch("delay grid must start at tau = 0");
    const double ratio = tau_grid.dt() / grid.dt();
    if (std::abs(ratio - std::round(ratio)) > 1e-6 || std::round(ratio) < 1.0)
        throw GridMismatch("delay step is not a multiple of the evolution step");
    const auto stride = static_cast<std::size_t>(std::round(ratio));

    BinCorrelators out;
    out.t_grid = t_grid;
    out.tau_grid = tau_grid;
    const auto nt = static_cast<Eigen::Index>(t_grid.size());
    const auto ntau = static_cast<Eigen::Index>(tau_grid.size());
    out.optical_flux.resize(nt);
    out.microwave_flux.resize(nt, ntau);
    out.pair = ComplexMatrix::Zero(nt, ntau);

    std::vector<double> times;
    for (std::size_t k : evolution.sample_indices) times.push_back(grid.time(k));
    const auto& n_a = evolution.tracks.at("n_a");
    const auto& n_c = evolution.tracks.at("n_c");
    std::vector<double> optical_flux_track(n_a.size());
    for (std::size_t k = 0; k < n_a.size(); ++k) optical_flux_track[k] = params.kappa_o_c * n_a[k];
    out.optical_width = full_width_half_max(times, optical_flux_track);

    for (Eigen::Index i = 0; i < nt; ++i) {
        const double t = t_grid.time(static_cast<std::size_t>(i));
        out.optical_flux(i) = params.kappa_o_c * interpolate(times, n_a, t);
        for (Eigen::Index j = 0; j < ntau; ++j)
            out.microwave_flux(i, j) = params.kappa_e_c * interpolate(times, n_c, t + tau_grid.time(static_cast<std::size_t>(j)));
    }

    std::vector<std::size_t> starts(static_cast<std::size_t>(nt));
    for (Eigen::Index i = 0; i < nt; ++i) {
        starts[static_cast<std::size_t>(i)] = *grid.index_of(t_grid.time(static_cast<std::size_t>(i)));
        if (!evolution.state_at(starts[static_cast<std::size_t>(i)]))
            throw GridMismatch("no stored state at t = " + io::format_number(t_grid.time(static_cast<std::size_t>(i))) + " s");
    }
    const std::size_t steps = tau_grid.n_steps * stride;
    if (starts.back() + steps > grid.n_steps) throw GridMismatch("delay grid runs past the end of the evolution");

    const auto& space = evolution.state_at(starts.front())->space;
    const auto ops = quantum::build_mode_operators(space);
    const ComplexMatrix identity = ComplexMatrix::Identity(ops.a.rows(), ops.a.cols());
    dynamics::CoherenceSupport support{false, {}};
    for (std::size_t s : starts)
        support = support.merged(dynamics::CoherenceSupport::of(evolution.state_at(s)->matrix, space));
    const dynamics::Propagator prop(space, params, pulse, grid.dt(), support.shifted(-1));

    // By Cauchy-Schwarz |M|^2 <= n_o n_e, so starts without optical flux contribute nothing.
    const double flux_max = out.optical_flux.maxCoeff();
    const double scale = std::sqrt(params.kappa_o_c * params.kappa_e_c);
    parallel_for(starts.size(), workers, [&](std::size_t i) {
        if (!(out.optical_flux(static_cast<Eigen::Index>(i)) > 1e-16 * flux_max)) return;
        const auto& rho = evolution.state_at(starts[i])->matrix;
        const auto values =
            dynamics::regression_correlator(prop, rho, grid.time(starts[i]), steps, identity, ops.a, ops.c);
        for (Eigen::Index j = 0; j < ntau; ++j)
            out.pair(static_cast<Eigen::Index>(i), j) = scale * std::conj(values[static_cast<std::size_t>(j) * stride]);
    });
    return out;
}

CoincidenceRate coincidence_rate(const BinCorrelators& c, const DetectorModel& det, double tau)
{
    det.validate();
    check_shapes(c);
    if (det.t_w > 0.1 * c.optical_width)
        throw WindowTooWide("detection window " + io::format_number(det.t_w) + " s exceeds 10% of the optical output width " +
                            io::format_number(c.optical_width) + " s");
    const TauSlice slice = locate_tau(c.tau_grid, tau);
    const Eigen::MatrixXd pair2 = c.pair.cwiseAbs2();
    const Eigen::VectorXd w = biphoton::trapezoid_weights(c.t_grid);

    double accidental = 0.0;
    double correlated = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double n_o = c.optical_flux(i);
        const double n_e = at_slice(c.microwave_flux, i, slice);
        accidental += w(i) * (det.eta_o * det.T_o * n_o + det.D_o) * (det.eta_e * det.T_e * n_e + det.D_e) * det.t_w;
        correlated += w(i) * det.eta_o * det.eta_e * det.T_o * det.T_e * at_slice(pair2, i, slice) * det.t_w;
    }
    CoincidenceRate r;
    r.window_start = c.t_grid.t_start;
    r.window_end = c.t_grid.t_end;
    const double span = r.window_end - r.window_start;
    r.accidental_rate = accidental / span;
    r.correlated_rate = correlated / span;
    r.per_shot_probability = accidental + correlated;
    r.total_rate = r.per_shot_probability * det.r_D;
    return r;
}

ChshSetting ChshSetting::reduced() const
{
    auto wrap = [](double x) {
        double r = std::fmod(x, 2.0 * kPi);
        if (r < 0.0) r += 2.0 * kPi;
        return r;
    };
    return {wrap(alpha), wrap(beta), wrap(theta), wrap(phi)};
}

BinRotation rotate_bins(const ChshSetting& setting)
{
    const ChshSetting s = setting.reduced();
    BinRotation r;
    r.optical = {Complex(std::cos(0.5 * s.alpha), 0.0), std::sin(0.5 * s.alpha) * std::polar(1.0, s.theta)};
    r.microwave = {Complex(std::cos(0.5 * s.beta), 0.0), std::sin(0.5 * s.beta) * std::polar(1.0, s.phi)};
    r.optical_single = std::norm(r.optical[0]) + std::norm(r.optical[1]);
    r.microwave_single = std::norm(r.microwave[0]) + std::norm(r.microwave[1]);
    r.pair = std::norm(r.optical[0] * r.microwave[0] + r.optical[1] * r.microwave[1]);
    return r;
}

ChshEvaluator::ChshEvaluator(const BinCorrelators& c, const DetectorModel& det, double tau) : det_(det)
{
    det.validate();
    check_shapes(c);
    if (det.t_w > 0.1 * c.optical_width)
        throw WindowTooWide("detection window " + io::format_number(det.t_w) + " s exceeds 10% of the optical output width " +
                            io::format_number(c.optical_width) + " s");
    const TauSlice slice = locate_tau(c.tau_grid, tau);
    const Eigen::MatrixXd pair2 = c.pair.cwiseAbs2();
    const Eigen::VectorXd w = biphoton::trapezoid_weights(c.t_grid);
    const double eta_o = det.optical_efficiency_time_bin();
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double n_o = c.optical_flux(i);
        const double n_e = at_slice(c.microwave_flux, i, slice);
        accidental_ += w(i) * (eta_o * det.T_o * n_o + det.D_o) * (det.eta_e * det.T_e * n_e + det.D_e) * det.t_w;
        pair_ += w(i) * eta_o * det.eta_e * det.T_o * det.T_e * at_slice(pair2, i, slice) * det.t_w;
    }
}

double ChshEvaluator::counts(const ChshSetting& setting) const
{
    // Unitary bin rotations keep both single-bin weights at 1, so the accidental
    // term is setting independent.
    const BinRotation r = rotate_bins(setting);
    return det_.t_c * det_.r_D * (accidental_ + r.pair * pair_);
}

CountQuadruple ChshEvaluator::quadruple(double alpha, double beta) const
{
    return {counts({alpha, beta}), counts({alpha, beta + kPi}), counts({alpha + kPi, beta}),
            counts({alpha + kPi, beta + kPi})};
}

double ChshEvaluator::correlation(double alpha, double beta) const
{
    const CountQuadruple q = quadruple(alpha, beta);
    const double sum = q.sum();
    if (!(sum > 0.0)) throw ZeroDenominator("all four coincidence counts vanish");
    return (q.c00 + q.cpipi - q.c0pi - q.cpi0) / sum;
}

double ChshEvaluator::S(double alpha, double beta) const
{
    const double alpha_p = alpha + 0.5 * kPi;
    const double beta_p = beta + 0.5 * kPi;
    return correlation(alpha, beta) + correlation(alpha_p, beta_p) + correlation(alpha, beta_p) -
           correlation(alpha_p, beta);
}

std::vector<ChshPoint> ChshEvaluator::sweep(double alpha, const std::vector<double>& betas) const
{
    std::vector<ChshPoint> out;
    out.reserve(betas.size());
    for (double b : betas) out.push_back({b, S(alpha, b), quadruple(alpha, b)});
    return out;
}

double ChshEvaluator::max_abs_S(double alpha, double* argmax_beta) const
{
    constexpr int kGrid = 720;
    const double step = 2.0 * kPi / kGrid;
    double best_beta = 0.0;
    double best = -1.0;
    for (int k = 0; k < kGrid; ++k) {
        const double b = k * step;
        const double v = std::abs(S(alpha, b));
        if (v > best) {
            best = v;
            best_beta = b;
        }
    }
    const auto result = boost::math::tools::brent_find_minima([&](double b) { return -std::abs(S(alpha, b)); },
                                                              best_beta - step, best_beta + step, 52);
    if (-result.second > best) {
        best = -result.second;
        best_beta = result.first;
    }
    if (argmax_beta) *argmax_beta = best_beta;
    return best;
}

double coincidence_counts(const BinCorrelators& correlators, const DetectorModel& det, const ChshSetting& setting,
                          double tau)
{
    return ChshEvaluator(correlators, det, tau).counts(setting);
}

double chsh_S(const BinCorrelators& correlators, const DetectorModel& det, double alpha, double beta, double tau)
{
    return ChshEvaluator(correlators, det, tau).S(alpha, beta);
}

CountQuadruple sample_counts(const CountQuadruple& expected, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    auto draw = [&](double mean) {
        if (!(mean > 0.0)) return 0.0;
        std::poisson_distribution<long long> d(mean);
        return static_cast<double>(d(rng));
    };
    CountQuadruple out;
    out.c00 = draw(expected.c00);
    out.c0pi = draw(expected.c0pi);
    out.cpi0 = draw(expected.cpi0);
    out.cpipi = draw(expected.cpipi);
    return out;
}

} // namespace eopulse::detection
