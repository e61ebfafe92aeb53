#include <gtest/gtest.h>

#include <cmath>

#include "eopulse/errors.hpp"
#include "eopulse/quantum.hpp"
#include "oracles/dense_lindblad.hpp"

using namespace eopulse;
using namespace eopulse::quantum;

TEST(FockSpace, DimensionAndIndexOrder)
{
    const FockSpace s{{2, 4, 4}};
    EXPECT_EQ(s.dimension(), 75u);
    EXPECT_EQ(s.index(0, 0, 0), 0u);
    EXPECT_EQ(s.index(0, 0, 1), 1u);
    EXPECT_EQ(s.index(0, 1, 0), 5u);
    EXPECT_EQ(s.index(1, 0, 0), 25u);
    EXPECT_EQ(s.enlarged().cutoffs, (std::array<int, 3>{3, 5, 5}));
}

TEST(ModeOperators, SingleQuantumSpace)
{
    const auto ops = build_mode_operators(FockSpace{{1, 1, 1}});
    ASSERT_EQ(ops.a.rows(), 8);
    const FockSpace& s = ops.space;
    // <0,0,0| a |1,0,0> = 1
    EXPECT_DOUBLE_EQ(ops.a(s.index(0, 0, 0), s.index(1, 0, 0)).real(), 1.0);
    EXPECT_DOUBLE_EQ(ops.c(s.index(1, 1, 0), s.index(1, 1, 1)).real(), 1.0);
}

TEST(ModeOperators, MatchIndependentKroneckerConstruction)
{
    const std::array<int, 3> cut{2, 3, 2};
    const auto ops = build_mode_operators(FockSpace{cut});
    const oracle::DenseModel ref(cut, {}, [](double) { return 0.0; });
    EXPECT_LT((ops.a - ref.a).norm(), 1e-15);
    EXPECT_LT((ops.b - ref.b).norm(), 1e-15);
    EXPECT_LT((ops.c - ref.c).norm(), 1e-15);
    // <1| b |2> = sqrt(2) on the mechanical factor.
    const FockSpace& s = ops.space;
    EXPECT_NEAR(ops.b(s.index(0, 1, 0), s.index(0, 2, 0)).real(), std::sqrt(2.0), 1e-15);
}

TEST(ModeOperators, DistinctModesCommute)
{
    const auto ops = build_mode_operators(FockSpace{{2, 4, 4}});
    EXPECT_LT((ops.a * ops.b - ops.b * ops.a).norm(), 1e-14);
    EXPECT_LT((ops.b * ops.c.adjoint() - ops.c.adjoint() * ops.b).norm(), 1e-14);
    EXPECT_LT((ops.a * ops.c - ops.c * ops.a).norm(), 1e-14);
}

TEST(ModeOperators, TruncatedCommutatorIsIdentityBelowTheTop)
{
    const auto ops = build_mode_operators(FockSpace{{3, 3, 3}});
    const ComplexMatrix comm = ops.b * ops.b.adjoint() - ops.b.adjoint() * ops.b;
    const FockSpace& s = ops.space;
    for (int nb = 0; nb < 3; ++nb) {
        const auto k = s.index(1, nb, 2);
        EXPECT_NEAR(comm(k, k).real(), 1.0, 1e-14);
    }
    const auto top = s.index(1, 3, 2);
    EXPECT_NEAR(comm(top, top).real(), -3.0, 1e-14);
}

TEST(ModeOperators, RejectsOversizedOrInvalidCutoffs)
{
    EXPECT_THROW(build_mode_operators(FockSpace{{16, 16, 16}}), DimensionOverflow);
    EXPECT_THROW(build_mode_operators(FockSpace{{3, 3, 3}}, 63), DimensionOverflow);
    EXPECT_NO_THROW(build_mode_operators(FockSpace{{3, 3, 3}}, 64));
    EXPECT_THROW(build_mode_operators(FockSpace{{0, 2, 2}}), std::invalid_argument);
}

TEST(Hamiltonian, HermitianAndMatchesReference)
{
    const auto p = SystemParams::reference_device();
    const std::array<int, 3> cut{2, 3, 3};
    const auto ops = build_mode_operators(FockSpace{cut});
    const double g = 0.7 * p.g_0;
    const ComplexMatrix h = build_interaction_hamiltonian(p, g, ops);
    EXPECT_TRUE(is_hermitian(h));
    const oracle::DenseModel ref(cut, {p.g_em}, [g](double) { return g; });
    EXPECT_LT((h - ref.hamiltonian(0.0)).norm(), 1e-9 * h.norm());
}

TEST(Hamiltonian, RejectsOperatorsFromDifferentSpaces)
{
    auto ops = build_mode_operators(FockSpace{{1, 2, 2}});
    ops.c = ladder(3);
    EXPECT_THROW(build_interaction_hamiltonian(SystemParams::reference_device(), 1.0, ops), DimensionMismatch);
}

TEST(SystemParams, ReferenceDeviceRatesAreAngular)
{
    const auto p = SystemParams::reference_device();
    EXPECT_NEAR(p.g_em, kTwoPi * 1.2e6, 1e-6);
    EXPECT_NEAR(p.kappa_o(), kTwoPi * 1.3e9, 1e-3);
    EXPECT_NEAR(p.kappa_e(), kTwoPi * 1.8e6, 1e-6);
    EXPECT_NO_THROW(p.validate());
    auto bad = p;
    bad.kappa_m = -1.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(PumpPulse, GainAndPhotonModes)
{
    const double g0 = kTwoPi * 260e3;
    const PumpPulse gain{20.0, 130e-9, 30e-9, PumpMode::GainFactor};
    EXPECT_DOUBLE_EQ(gain.squeezing_strength(130e-9, g0), 20.0 * g0);
    EXPECT_NEAR(gain.squeezing_strength(160e-9, g0), 20.0 * g0 * std::exp(-0.5), 1e-6);

    const PumpPulse photons{0.8, 160e-9, 68e-9, PumpMode::IntracavityPhoton};
    EXPECT_NEAR(photons.peak_squeezing_strength(g0), g0 * std::sqrt(0.8), 1e-6);
    // n_o carries the Gaussian, so g_om carries its square root.
    EXPECT_NEAR(photons.squeezing_strength(228e-9, g0), g0 * std::sqrt(0.8 * std::exp(-0.5)), 1e-6);
    EXPECT_NEAR(photons.intracavity_photons(228e-9), 0.8 * std::exp(-0.5), 1e-15);

    EXPECT_THROW((PumpPulse{1.0, 0.0, 0.0}.validate()), std::invalid_argument);
    EXPECT_THROW((PumpPulse{-1.0, 0.0, 1.0}.validate()), std::invalid_argument);
}

TEST(OccupancyProfile, InterpolatesAndClamps)
{
    const auto p = OccupancyProfile::sampled(1.0, 0.5, {0.0, 1.0, 3.0});
    EXPECT_DOUBLE_EQ(p.at(0.0), 0.0);
    EXPECT_DOUBLE_EQ(p.at(1.25), 0.5);
    EXPECT_DOUBLE_EQ(p.at(1.75), 2.0);
    EXPECT_DOUBLE_EQ(p.at(10.0), 3.0);
    EXPECT_DOUBLE_EQ(p.max(), 3.0);
    EXPECT_TRUE(OccupancyProfile::constant(0.2).is_constant());
    EXPECT_THROW(OccupancyProfile::sampled(0.0, 1.0, {}), std::invalid_argument);
}
