#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "eopulse/detection.hpp"
#include "eopulse/errors.hpp"
#include "oracles/moment_equations.hpp"

using namespace eopulse;
using namespace eopulse::detection;
using quantum::FockSpace;
using quantum::PumpMode;
using quantum::PumpPulse;
using quantum::SystemParams;

namespace {

constexpr double kPi = 3.14159265358979323846;
const double kTsirelson = 2.0 * std::sqrt(2.0);

// Flat tables over a 100 ns pump window and a single delay slice.
BinCorrelators flat_tables(double optical, double microwave, Complex pair)
{
    BinCorrelators c;
    c.t_grid = TimeGrid{0.0, 100e-9, 10};
    c.tau_grid = TimeGrid{0.0, 10e-9, 1};
    c.optical_flux = Eigen::VectorXd::Constant(11, optical);
    c.microwave_flux = Eigen::MatrixXd::Constant(11, 2, microwave);
    c.pair = ComplexMatrix::Constant(11, 2, pair);
    c.optical_width = 50e-9;
    return c;
}

DetectorModel noiseless()
{
    DetectorModel d;
    d.D_o = 0.0;
    d.D_e = 0.0;
    return d;
}

double analytic_s_max(const ChshEvaluator& ev)
{
    const double A = ev.accidental_integral(), P = ev.pair_integral();
    return kTsirelson * P / (2.0 * A + P);
}

} // namespace

TEST(Chsh, PerfectBellCorrelationsReachTsirelson)
{
    const ChshEvaluator ev(flat_tables(0.0, 0.0, Complex(3e6, 0.0)), noiseless(), 0.0);
    double beta = 0.0;
    EXPECT_NEAR(ev.max_abs_S(0.0, &beta), kTsirelson, 1e-6);
    EXPECT_NEAR(std::abs(ev.S(0.0, beta)), kTsirelson, 1e-6);
    EXPECT_NEAR(std::abs(ev.S(0.0, -kPi / 4.0)), kTsirelson, 1e-12);
}

TEST(Chsh, UncorrelatedStatisticsGiveZero)
{
    const ChshEvaluator ev(flat_tables(1e7, 1e5, Complex(0.0, 0.0)), DetectorModel{}, 0.0);
    for (double beta : {0.0, 0.3, 1.0, 2.5, 4.0}) EXPECT_NEAR(ev.S(0.0, beta), 0.0, 1e-9);
    EXPECT_NEAR(ev.max_abs_S(0.0), 0.0, 1e-9);
}

TEST(Chsh, MaximumMatchesVisibilityFormula)
{
    const ChshEvaluator ev(flat_tables(2e6, 4e4, Complex(1e5, 2e5)), DetectorModel{}, 0.0);
    EXPECT_NEAR(ev.max_abs_S(0.3), analytic_s_max(ev), 1e-9);
    // S(beta) = V (2 cos x + 2 sin x), x = alpha - beta.
    const double V = analytic_s_max(ev) / kTsirelson;
    for (double beta : {0.0, 0.7, 2.0, 5.5}) {
        const double x = 0.3 - beta;
        EXPECT_NEAR(ev.S(0.3, beta), V * (2.0 * std::cos(x) + 2.0 * std::sin(x)), 1e-12);
    }
}

TEST(Chsh, NoPhysicalInputExceedsTsirelson)
{
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        BinCorrelators c = flat_tables(0.0, 0.0, 0.0);
        for (Eigen::Index i = 0; i < 11; ++i) {
            const double no = 1e7 * u(rng), ne = 1e6 * u(rng);
            c.optical_flux(i) = no;
            for (Eigen::Index j = 0; j < 2; ++j) {
                c.microwave_flux(i, j) = ne;
                // |M|^2 <= n_o n_e
                c.pair(i, j) = std::polar(std::sqrt(no * ne) * u(rng), 2.0 * kPi * u(rng));
            }
        }
        DetectorModel d;
        d.D_o = 100.0 * u(rng);
        d.D_e = 1e4 * u(rng);
        d.interferometer_loss = trial % 2 == 0;
        const ChshEvaluator ev(c, d, 0.0);
        EXPECT_LE(ev.max_abs_S(2.0 * kPi * u(rng)), kTsirelson + 1e-9);
    }
}

TEST(Chsh, PeriodicAndAntisymmetricInBeta)
{
    const ChshEvaluator ev(flat_tables(2e6, 4e4, Complex(1e5, 0.0)), DetectorModel{}, 0.0);
    for (double beta : {0.1, 1.3, 2.9, 4.4}) {
        EXPECT_NEAR(ev.S(0.0, beta + 2.0 * kPi), ev.S(0.0, beta), 1e-12);
        EXPECT_NEAR(ev.S(0.0, beta + kPi), -ev.S(0.0, beta), 1e-12);
    }
}

TEST(Chsh, CommonEfficiencyScalingLeavesSUnchanged)
{
    const auto c = flat_tables(2e6, 4e4, Complex(1e5, 0.0));
    DetectorModel d = noiseless();
    const ChshEvaluator full(c, d, 0.0);
    d.eta_o *= 0.25;
    d.eta_e *= 0.5;
    const ChshEvaluator dim(c, d, 0.0);
    EXPECT_NEAR(dim.S(0.0, 0.4), full.S(0.0, 0.4), 1e-12);
    EXPECT_NEAR(dim.counts({0.0, 0.4}), 0.125 * full.counts({0.0, 0.4}), 1e-12 * full.counts({0.0, 0.4}));
}

TEST(Chsh, InterferometerLossHalvesOpticalEfficiency)
{
    const auto c = flat_tables(2e6, 4e4, Complex(1e5, 0.0));
    DetectorModel d = noiseless();
    const double with = ChshEvaluator(c, d, 0.0).pair_integral();
    d.interferometer_loss = false;
    EXPECT_NEAR(with, 0.5 * ChshEvaluator(c, d, 0.0).pair_integral(), 1e-15);
}

TEST(Chsh, CountsAreNonNegativeAndVanishWithoutCollectionTime)
{
    const auto c = flat_tables(2e6, 4e4, Complex(1e5, 0.0));
    DetectorModel d;
    for (double beta = 0.0; beta < 2.0 * kPi; beta += 0.1) EXPECT_GE(coincidence_counts(c, d, {0.0, beta}, 0.0), 0.0);
    d.t_c = 0.0;
    EXPECT_EQ(coincidence_counts(c, d, {0.0, 1.0}, 0.0), 0.0);
}

TEST(Chsh, ErrorsSurface)
{
    EXPECT_THROW(ChshEvaluator(flat_tables(0.0, 0.0, 0.0), noiseless(), 0.0).S(0.0, 0.0), ZeroDenominator);
    DetectorModel wide;
    wide.t_w = 6e-9; // > 10% of the 50 ns width
    EXPECT_THROW(ChshEvaluator(flat_tables(1.0, 1.0, 0.0), wide, 0.0), WindowTooWide);
    EXPECT_THROW(ChshEvaluator(flat_tables(1.0, 1.0, 0.0), DetectorModel{}, 30e-9), GridMismatch);
    DetectorModel bad;
    bad.eta_o = 1.5;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = DetectorModel{};
    bad.r_D = 2e9;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(BinRotation, WeightsOfTheRotatedModes)
{
    const auto same = rotate_bins({0.0, 0.0});
    EXPECT_NEAR(same.pair, 1.0, 1e-15);
    // alpha + pi is the orthogonal output port.
    EXPECT_NEAR(rotate_bins({kPi, 0.0}).pair, 0.0, 1e-15);
    for (double a : {0.2, 1.1, 3.0})
        for (double b : {0.0, 0.9, 4.0}) {
            const auto r = rotate_bins({a, b});
            EXPECT_NEAR(r.optical_single, 1.0, 1e-15);
            EXPECT_NEAR(r.microwave_single, 1.0, 1e-15);
            const double half = std::cos(0.5 * (a - b));
            EXPECT_NEAR(r.pair, half * half, 1e-12);
        }
    const auto reduced = ChshSetting{-1.0, 7.0}.reduced();
    EXPECT_NEAR(reduced.alpha, 2.0 * kPi - 1.0, 1e-15);
    EXPECT_NEAR(reduced.beta, 7.0 - 2.0 * kPi, 1e-15);
}

TEST(CoincidenceRate, FlatTablesClosedForm)
{
    const auto c = flat_tables(2e6, 4e4, Complex(1e5, 0.0));
    const DetectorModel d;
    const auto r = coincidence_rate(c, d, 10e-9);
    const double acc = (d.eta_o * d.T_o * 2e6 + d.D_o) * (d.eta_e * d.T_e * 4e4 + d.D_e) * d.t_w;
    const double cor = d.eta_o * d.eta_e * d.T_o * d.T_e * 1e10 * d.t_w;
    EXPECT_NEAR(r.accidental_rate, acc, 1e-12 * acc);
    EXPECT_NEAR(r.correlated_rate, cor, 1e-12 * cor);
    EXPECT_NEAR(r.per_shot_probability, (acc + cor) * 100e-9, 1e-12 * (acc + cor) * 100e-9);
    EXPECT_NEAR(r.total_rate, r.per_shot_probability * d.r_D, 1e-12 * r.total_rate);
    // Without pump light only dark counts coincide.
    const auto dark = coincidence_rate(flat_tables(0.0, 0.0, 0.0), d, 0.0);
    EXPECT_NEAR(dark.accidental_rate, d.D_o * d.D_e * d.t_w, 1e-18);
    EXPECT_EQ(dark.correlated_rate, 0.0);
}

TEST(SampleCounts, ReproducibleForASeed)
{
    const CountQuadruple mean{100.0, 50.0, 0.0, 1e4};
    const auto a = sample_counts(mean, 7), b = sample_counts(mean, 7), c = sample_counts(mean, 8);
    EXPECT_EQ(a.c00, b.c00);
    EXPECT_EQ(a.cpipi, b.cpipi);
    EXPECT_EQ(a.cpi0, 0.0);
    EXPECT_TRUE(a.c00 != c.c00 || a.c0pi != c.c0pi || a.cpipi != c.cpipi);
    double total = 0.0;
    for (std::uint64_t s = 0; s < 400; ++s) total += sample_counts(mean, s).c00;
    EXPECT_NEAR(total / 400.0, 100.0, 2.0); // 4 standard errors
}

TEST(BinCorrelators, TablesMatchLinearRegressionOracle)
{
    const auto p = SystemParams::reference_device();
    const PumpPulse pump{1.0, 130e-9, 30e-9, PumpMode::GainFactor};
    const FockSpace space{{2, 4, 4}};
    const TimeGrid grid{0.0, 700e-9, 280};
    dynamics::PropagateOptions opt;
    opt.stride = 4;
    const auto ev = dynamics::propagate(dynamics::DensityOperator::vacuum(space), grid, p, pump, opt);
    const TimeGrid t_grid{40e-9, 220e-9, 18};
    const TimeGrid tau_grid{0.0, 400e-9, 160};
    const auto c = build_bin_correlators(ev, p, pump, t_grid, tau_grid, 2);
    ASSERT_EQ(c.pair.rows(), 19);
    ASSERT_EQ(c.pair.cols(), 161);
    EXPECT_GT(c.optical_width, 30e-9);
    EXPECT_LT(c.optical_width, 120e-9);

    const oracle::MomentEquations moments({p.g_em, p.kappa_o(), p.kappa_m, p.kappa_e(), p.kappa_e_i, 0.0, 0.0},
                                          [&](double t) { return pump.squeezing_strength(t, p.g_0); });
    const std::size_t sub = 64;
    const double scale = std::sqrt(p.kappa_o_c * p.kappa_e_c);
    for (std::size_t i : {4u, 9u, 12u}) {
        const double t = t_grid.time(i);
        const auto m = moments.at(t, sub * static_cast<std::size_t>(std::lround(t / 5e-9)));
        EXPECT_NEAR(c.optical_flux(static_cast<Eigen::Index>(i)), p.kappa_o_c * m.n_a, 2e-3 * p.kappa_o_c * m.n_a);
        std::vector<Complex> want;
        moments.pair_correlator(m, t, tau_grid.t_end, sub * tau_grid.n_steps, sub,
                                [&](double, Complex v) { want.push_back(scale * std::conj(v)); });
        double peak = 0.0;
        for (const auto& w : want) peak = std::max(peak, std::abs(w));
        for (Eigen::Index j = 0; j < c.pair.cols(); ++j)
            EXPECT_LT(std::abs(c.pair(static_cast<Eigen::Index>(i), j) - want[static_cast<std::size_t>(j)]), 2e-3 * peak);
    }
}
