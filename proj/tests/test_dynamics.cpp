#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "eopulse/dynamics.hpp"
#include "eopulse/errors.hpp"
#include "oracles/dense_lindblad.hpp"
#include "oracles/moment_equations.hpp"

using namespace eopulse;
using namespace eopulse::dynamics;
using quantum::kTwoPi;
using quantum::OccupancyProfile;
using quantum::PumpMode;

namespace {

SystemParams zero_rates()
{
    SystemParams p;
    p.n_th_b = OccupancyProfile::constant(0.0);
    p.n_th_c = OccupancyProfile::constant(0.0);
    return p;
}

PumpPulse no_pump() { return PumpPulse{0.0, 0.0, 1e-6, PumpMode::GainFactor}; }

ComplexMatrix random_density(std::size_t dim, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    ComplexMatrix m(dim, dim);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = {n(rng), n(rng)};
    ComplexMatrix rho = m * m.adjoint();
    return rho / rho.trace();
}

ComplexMatrix random_matrix(std::size_t dim, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    ComplexMatrix m(dim, dim);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = {n(rng), n(rng)};
    return m;
}

oracle::MomentRates moment_rates(const SystemParams& p)
{
    return {p.g_em, p.kappa_o(), p.kappa_m, p.kappa_e(), p.kappa_e_i, p.n_th_b.at(0.0), p.n_th_c.at(0.0)};
}

} // namespace

TEST(TimeGrid, StepsAndMembership)
{
    const auto g = TimeGrid::with_max_step(0.0, 1.0, 0.3);
    EXPECT_EQ(g.n_steps, 4u);
    EXPECT_DOUBLE_EQ(g.dt(), 0.25);
    const TimeGrid fine{0.0, 1.0, 8};
    EXPECT_TRUE(fine.contains(g));
    EXPECT_FALSE(g.contains(fine));
    EXPECT_EQ(fine.index_of(0.625), std::optional<std::size_t>(5));
    EXPECT_FALSE(fine.index_of(0.6).has_value());
    const auto s = TimeGrid::with_step(0.0, 0.95, 0.1);
    EXPECT_EQ(s.n_steps, 10u);
    EXPECT_THROW((TimeGrid{1.0, 0.0, 3}.validate()), std::invalid_argument);
}

TEST(LindbladRhs, MatchesDenseReference)
{
    auto p = SystemParams::reference_device();
    p.n_th_b = OccupancyProfile::constant(0.3);
    p.n_th_c = OccupancyProfile::constant(0.05);
    const PumpPulse pump{20.0, 130e-9, 30e-9, PumpMode::GainFactor};
    const std::array<int, 3> cut{1, 3, 2};
    const oracle::DenseModel ref(cut,
                                 {p.g_em, p.kappa_o(), p.kappa_m, p.kappa_e_c, p.kappa_e_i, 0.3, 0.05},
                                 [&](double t) { return pump.squeezing_strength(t, p.g_0); });
    std::mt19937_64 rng(3);
    for (double t : {0.0, 110e-9, 130e-9, 200e-9}) {
        const FockSpace space{cut};
        const DensityOperator rho{random_density(space.dimension(), rng), space};
        const ComplexMatrix got = lindblad_rhs(rho, t, p, pump);
        const ComplexMatrix want = ref.rhs(rho.matrix, t);
        EXPECT_LT((got - want).norm(), 1e-12 * want.norm()) << "t = " << t;
        // Trace preserving, Hermiticity preserving.
        EXPECT_LT(std::abs(got.trace()), 1e-9 * want.norm());
        EXPECT_LT((got - got.adjoint()).norm(), 1e-9 * want.norm());
    }
}

TEST(Propagate, RabiSwapBetweenMechanicsAndMicrowave)
{
    auto p = zero_rates();
    p.g_em = kTwoPi * 1.2e6;
    const FockSpace space{{1, 1, 1}};
    const double period = M_PI / p.g_em;
    // Populations oscillate at 2 g_em; at the largest step the phase error is ~5e-6.
    const auto grid = TimeGrid::with_max_step(0.0, 2.0 * period, 0.5 * max_time_step(p, no_pump()));
    const auto ev = propagate(DensityOperator::fock(space, 0, 1, 0), grid, p, no_pump());
    double worst = 0.0;
    for (std::size_t k : ev.sample_indices) {
        const double t = grid.time(k);
        const double s = std::sin(p.g_em * t);
        worst = std::max(worst, std::abs(ev.track("n_c", k) - s * s));
        worst = std::max(worst, std::abs(ev.track("n_b", k) - (1.0 - s * s)));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(Propagate, ExponentialDecayOfEachMode)
{
    auto p = zero_rates();
    p.kappa_o_c = p.kappa_o_i = kTwoPi * 0.65e9;
    p.kappa_m = kTwoPi * 150e3;
    p.kappa_e_c = kTwoPi * 1.25e6;
    p.kappa_e_i = kTwoPi * 0.55e6;
    const FockSpace space{{1, 1, 1}};
    const auto grid = TimeGrid::with_max_step(0.0, 2e-6, max_time_step(p, no_pump()));
    const auto ev = propagate(DensityOperator::fock(space, 1, 1, 1), grid, p, no_pump());
    double worst = 0.0;
    for (std::size_t k : ev.sample_indices) {
        const double t = grid.time(k);
        worst = std::max(worst, std::abs(ev.track("n_a", k) - std::exp(-p.kappa_o() * t)));
        worst = std::max(worst, std::abs(ev.track("n_b", k) - std::exp(-p.kappa_m * t)));
        worst = std::max(worst, std::abs(ev.track("n_c", k) - std::exp(-p.kappa_e() * t)));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(Propagate, MechanicalModeRelaxesToBathOccupancy)
{
    auto p = zero_rates();
    p.kappa_m = kTwoPi * 150e3;
    p.n_th_b = OccupancyProfile::constant(0.2);
    const FockSpace space{{1, 12, 1}};
    const auto grid = TimeGrid::with_max_step(0.0, 3e-6, max_time_step(p, no_pump()));
    const auto ev = propagate(DensityOperator::fock(space, 0, 1, 0), grid, p, no_pump());
    for (std::size_t k : ev.sample_indices) {
        const double t = grid.time(k);
        EXPECT_NEAR(ev.track("n_b", k), 0.2 + 0.8 * std::exp(-p.kappa_m * t), 1e-6);
    }
}

TEST(Propagate, MatchesDenseRk4ReferenceThroughAPulse)
{
    auto p = SystemParams::reference_device();
    p.n_th_b = OccupancyProfile::constant(0.05);
    p.n_th_c = OccupancyProfile::constant(0.02);
    const PumpPulse pump{20.0, 60e-9, 20e-9, PumpMode::GainFactor};
    const std::array<int, 3> cut{1, 2, 1};
    const FockSpace space{cut};
    const auto grid = TimeGrid::with_max_step(0.0, 160e-9, max_time_step(p, pump));
    PropagateOptions opt;
    opt.stride = grid.n_steps / 4;
    const auto ev = propagate(DensityOperator::vacuum(space), grid, p, pump, opt);

    const oracle::DenseModel ref(cut,
                                 {p.g_em, p.kappa_o(), p.kappa_m, p.kappa_e_c, p.kappa_e_i, 0.05, 0.02},
                                 [&](double t) { return pump.squeezing_strength(t, p.g_0); });
    oracle::Mat rho = oracle::Mat::Zero(space.dimension(), space.dimension());
    rho(0, 0) = 1.0;
    double t_prev = 0.0;
    for (std::size_t i = 0; i < ev.state_indices.size(); ++i) {
        const double t = grid.time(ev.state_indices[i]);
        rho = ref.evolve(rho, t_prev, t, 2e-11);
        t_prev = t;
        const double diff = (ev.states[i].matrix - rho).cwiseAbs().maxCoeff();
        EXPECT_LT(diff, 1e-7) << "t = " << t;
    }
}

TEST(Propagate, PulseMomentsMatchClosedMomentEquations)
{
    const auto p = SystemParams::reference_device();
    const PumpPulse pump{1.0, 130e-9, 30e-9, PumpMode::GainFactor};
    const FockSpace space{{2, 4, 4}};
    // n_a and <ca> are slaved to the optical decay and carry ~3e-3 relative error at
    // the largest step (integrated observables do not); a quarter step brings it to ~1e-4.
    const auto grid = TimeGrid::with_max_step(0.0, 600e-9, 0.25 * max_time_step(p, pump));
    PropagateOptions opt;
    opt.store_states = false;
    const auto ev = propagate(DensityOperator::vacuum(space), grid, p, pump, opt);

    const oracle::MomentEquations moments(moment_rates(p), [&](double t) { return pump.squeezing_strength(t, p.g_0); });
    const std::size_t sub = 64;
    std::vector<oracle::Moments> want;
    moments.integrate(grid.t_end, sub * grid.n_steps, sub, [&](double, const oracle::Moments& m) { want.push_back(m); });
    ASSERT_EQ(want.size(), grid.size());

    double peak_a = 0.0, peak_b = 0.0, peak_c = 0.0, peak_ac = 0.0;
    for (const auto& m : want) {
        peak_a = std::max(peak_a, m.n_a);
        peak_b = std::max(peak_b, m.n_b);
        peak_c = std::max(peak_c, m.n_c);
        peak_ac = std::max(peak_ac, std::abs(m.ac));
    }
    const auto& ca_track = ev.complex_tracks.at("ca");
    for (std::size_t i = 0; i < ev.sample_indices.size(); ++i) {
        const std::size_t k = ev.sample_indices[i];
        EXPECT_NEAR(ev.track("n_a", k), want[k].n_a, 1e-3 * peak_a);
        EXPECT_NEAR(ev.track("n_b", k), want[k].n_b, 1e-3 * peak_b);
        EXPECT_NEAR(ev.track("n_c", k), want[k].n_c, 1e-3 * peak_c);
        EXPECT_LT(std::abs(ca_track[i] - want[k].ac), 1e-3 * peak_ac);
    }
}

class WeakConstantDrive : public ::testing::TestWithParam<double> {};

TEST_P(WeakConstantDrive, SteadyStateMatchesPerturbativePairExpansion)
{
    const auto p = SystemParams::reference_device();
    const double gain = GetParam();
    // sigma of a second: flat to 1e-12 over the run.
    const PumpPulse pump{gain, 0.0, 1.0, PumpMode::GainFactor};
    const FockSpace space{{2, 4, 4}};
    const auto grid = TimeGrid::with_max_step(0.0, 4e-6, max_time_step(p, pump));
    PropagateOptions opt;
    opt.store_states = false;
    opt.stride = grid.n_steps;
    const auto ev = propagate(DensityOperator::vacuum(space), grid, p, pump, opt);
    const auto want = oracle::weak_drive_steady_state(moment_rates(p), gain * p.g_0);
    const std::size_t end = grid.n_steps;
    EXPECT_NEAR(ev.track("n_a", end), want.n_a, 0.05 * want.n_a);
    EXPECT_NEAR(ev.track("n_b", end), want.n_b, 0.05 * want.n_b);
    EXPECT_NEAR(ev.track("n_c", end), want.n_c, 0.05 * want.n_c);
    EXPECT_NEAR(std::abs(ev.complex_tracks.at("ca").back()), std::abs(want.ac), 0.05 * std::abs(want.ac));
}

// Leading order only: at G = 3 the third-order g <b^dag c> feed into <ac> is already ~40%.
INSTANTIATE_TEST_SUITE_P(Gains, WeakConstantDrive, ::testing::Values(0.25, 0.5, 1.0));

TEST(Propagate, HalvingTheStepChangesObservablesNegligibly)
{
    const auto p = SystemParams::reference_device();
    const PumpPulse pump{20.0, 130e-9, 30e-9, PumpMode::GainFactor};
    const FockSpace space{{2, 4, 4}};
    const double dt = max_time_step(p, pump);
    const auto coarse = TimeGrid::with_step(0.0, 500e-9, dt);
    const TimeGrid fine{coarse.t_start, coarse.t_end, 2 * coarse.n_steps};
    PropagateOptions opt;
    opt.store_states = false;
    const auto a = propagate(DensityOperator::vacuum(space), coarse, p, pump, opt);
    const auto b = propagate(DensityOperator::vacuum(space), fine, p, pump, opt);
    double peak = 0.0, diff = 0.0;
    for (std::size_t k = 0; k < coarse.size(); ++k) {
        peak = std::max(peak, a.track("n_c", k));
        diff = std::max(diff, std::abs(a.track("n_c", k) - b.track("n_c", 2 * k)));
    }
    EXPECT_LT(diff, 5e-4 * peak);
}

TEST(Propagate, PhysicalityAtStrongDrive)
{
    const auto p = SystemParams::reference_device();
    const PumpPulse pump{30.0, 130e-9, 30e-9, PumpMode::GainFactor};
    const FockSpace space{{3, 6, 6}};
    const auto grid = TimeGrid::with_max_step(0.0, 350e-9, max_time_step(p, pump));
    PropagateOptions opt;
    opt.stride = 4;
    const auto ev = propagate(DensityOperator::vacuum(space), grid, p, pump, opt);
    EXPECT_LT(ev.diagnostics.max_trace_drift, 1e-6);
    EXPECT_LT(ev.diagnostics.max_hermiticity_error, 1e-10);
    EXPECT_GE(ev.diagnostics.min_eigenvalue, -1e-8);
    for (const auto& s : ev.states) EXPECT_GE(s.min_eigenvalue(), -1e-8);
}

TEST(Propagate, RejectsStepsAboveTheStableLimit)
{
    const auto p = SystemParams::reference_device();
    const PumpPulse pump{1.0, 130e-9, 30e-9, PumpMode::GainFactor};
    const FockSpace space{{1, 2, 2}};
    const double dt = max_time_step(p, pump);
    const TimeGrid grid = TimeGrid::with_step(0.0, 100.0 * dt, 2.0 * dt);
    EXPECT_THROW(propagate(DensityOperator::vacuum(space), grid, p, pump), StepSizeTooLarge);
    EXPECT_THROW(DensityOperator::fock(space, 2, 0, 0), std::invalid_argument);
}

TEST(Regression, ZeroLagEqualsDirectExpectationOnRandomProbes)
{
    const auto p = SystemParams::reference_device();
    const PumpPulse pump{20.0, 130e-9, 30e-9, PumpMode::GainFactor};
    const FockSpace space{{2, 4, 4}};
    const double dt = max_time_step(p, pump);
    const auto grid = TimeGrid::with_step(0.0, 150e-9, dt);
    const auto ev = propagate(DensityOperator::vacuum(space), grid, p, pump);
    std::mt19937_64 rng(20);
    std::uniform_int_distribution<std::size_t> pick(0, ev.states.size() - 1);
    const TimeGrid tau{0.0, dt, 1};
    for (int probe = 0; probe < 20; ++probe) {
        const std::size_t i = pick(rng);
        const DensityOperator& rho = ev.states[i];
        const ComplexMatrix left = random_matrix(space.dimension(), rng);
        const ComplexMatrix right = random_matrix(space.dimension(), rng);
        const ComplexMatrix op = random_matrix(space.dimension(), rng);
        const Complex direct = (op * right * rho.matrix * left).trace();
        const auto got = regression_correlator(rho, grid.time(ev.state_indices[i]), tau, left, right, op, p, pump);
        EXPECT_LT(std::abs(got[0] - direct), 1e-8 * std::abs(direct)) << "probe " << probe;
    }
}

TEST(Regression, PairCorrelatorMatchesLinearRegressionOracle)
{
    const auto p = SystemParams::reference_device();
    const PumpPulse pump{1.0, 130e-9, 30e-9, PumpMode::GainFactor};
    const FockSpace space{{2, 4, 4}};
    const double dt = max_time_step(p, pump);
    const double t = 10e-9 * std::round(130e-9 / 10e-9);
    const auto grid = TimeGrid::with_step(0.0, t, dt);
    const auto ev = propagate(DensityOperator::vacuum(space), grid, p, pump);
    const auto ops = quantum::build_mode_operators(space);
    const ComplexMatrix id = ComplexMatrix::Identity(space.dimension(), space.dimension());
    const auto tau_grid = TimeGrid::with_step(0.0, 400e-9, dt);
    const auto got = regression_correlator(ev.states.back(), grid.t_end, tau_grid, id, ops.a, ops.c, p, pump);

    const oracle::MomentEquations moments(moment_rates(p), [&](double s) { return pump.squeezing_strength(s, p.g_0); });
    const std::size_t sub = 64;
    const auto at_t = moments.at(grid.t_end, sub * grid.n_steps);
    std::vector<Complex> want;
    moments.pair_correlator(at_t, grid.t_end, tau_grid.t_end, sub * tau_grid.n_steps, sub,
                            [&](double, Complex v) { want.push_back(v); });
    ASSERT_EQ(want.size(), got.size());
    double peak = 0.0;
    for (const auto& w : want) peak = std::max(peak, std::abs(w));
    for (std::size_t j = 0; j < got.size(); ++j) EXPECT_LT(std::abs(got[j] - want[j]), 2e-3 * peak) << "j = " << j;
}

TEST(CoherenceSupport, SectorRestrictedPropagationIsExact)
{
    const auto p = SystemParams::reference_device();
    const PumpPulse pump{20.0, 130e-9, 30e-9, PumpMode::GainFactor};
    const FockSpace space{{2, 4, 4}};
    const double dt = max_time_step(p, pump);
    const auto grid = TimeGrid::with_step(0.0, 130e-9, dt);
    const auto ev = propagate(DensityOperator::vacuum(space), grid, p, pump);
    const ComplexMatrix& rho = ev.states.back().matrix;
    const auto support = CoherenceSupport::of(rho, space);
    EXPECT_FALSE(support.every);
    EXPECT_EQ(support.shifts, std::vector<int>{0});

    const auto ops = quantum::build_mode_operators(space);
    const ComplexMatrix x0 = ops.a * rho;
    const Propagator sector(space, p, pump, dt, CoherenceSupport::shift(-1));
    const Propagator full(space, p, pump, dt, CoherenceSupport::all());
    EXPECT_LT(sector.size(), full.size());
    auto xs = sector.gather(x0);
    auto xf = full.gather(x0);
    for (int k = 0; k < 50; ++k) {
        sector.step(xs, grid.t_end + k * dt);
        full.step(xf, grid.t_end + k * dt);
    }
    EXPECT_LT((sector.scatter(xs) - full.scatter(xf)).norm(), 1e-12 * full.scatter(xf).norm());
    EXPECT_THROW(Propagator(space, p, pump, dt, CoherenceSupport::shift(0)).gather(x0), std::invalid_argument);

    const TimeGrid bad_tau{1e-9, 50e-9, 10};
    EXPECT_THROW(regression_correlator(ev.states.back(), grid.t_end, bad_tau, ops.a, ops.a, ops.c, p, pump),
                 GridMismatch);
}
