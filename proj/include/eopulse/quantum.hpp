// quantum.hpp: truncated Fock space, mode operators, device parameters and the
// rotating-frame interaction Hamiltonian of the three-mode transducer.

#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace eopulse::quantum {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

enum class Mode { Optical = 0, Mechanical = 1, Electrical = 2 };

// Fock cutoffs (N_a, N_b, N_c); tensor order is a ⊗ b ⊗ c, so the optical
// occupation is the slowest-varying index.
struct FockSpace {
    std::array<int, 3> cutoffs{1, 1, 1};

    int cutoff(Mode m) const { return cutoffs[static_cast<std::size_t>(m)]; }
    std::size_t levels(Mode m) const { return static_cast<std::size_t>(cutoff(m)) + 1; }
    std::size_t dimension() const { return levels(Mode::Optical) * levels(Mode::Mechanical) * levels(Mode::Electrical); }
    std::size_t index(int na, int nb, int nc) const;

    // Same space with every cutoff raised by `by`.
    FockSpace enlarged(int by = 1) const;

    bool operator==(const FockSpace&) const = default;
};

inline constexpr std::size_t kDefaultMaxDimension = 4096;

struct ModeOperators {
    FockSpace space;
    ComplexMatrix a; // optical
    ComplexMatrix b; // mechanical
    ComplexMatrix c; // electrical (microwave)
};

// Annihilation operators embedded in the full tensor space.
// Throws DimensionOverflow if the product dimension exceeds max_dimension,
// std::invalid_argument if any cutoff is below 1.
ModeOperators build_mode_operators(const FockSpace& space, std::size_t max_dimension = kDefaultMaxDimension);

// Single-mode lowering operator of size (n+1) x (n+1).
ComplexMatrix ladder(int cutoff);

double hermiticity_error(const ComplexMatrix& m);
bool is_hermitian(const ComplexMatrix& m, double tol = 1e-12);

// Mean thermal occupancy, either constant or sampled on a uniform time grid
// (linear interpolation, clamped at the ends).
class OccupancyProfile {
public:
    OccupancyProfile() = default;
    static OccupancyProfile constant(double n);
    static OccupancyProfile sampled(double t_start, double dt, std::vector<double> values);

    double at(double t) const;
    double max() const;
    bool is_constant() const { return samples_.empty(); }
    const std::vector<double>& samples() const { return samples_; }

private:
    double constant_{0.0};
    double t_start_{0.0};
    double dt_{0.0};
    std::vector<double> samples_;
};

// All rates and frequencies are angular (rad/s).
struct SystemParams {
    double g_em{0.0};
    double g_0{0.0};
    double kappa_o_i{0.0};
    double kappa_o_c{0.0};
    double kappa_m{0.0};
    double kappa_e_i{0.0};
    double kappa_e_c{0.0};
    double omega_o{0.0};
    double omega_m{0.0};
    double omega_e{0.0};
    OccupancyProfile n_th_b;
    OccupancyProfile n_th_c;

    double kappa_o() const { return kappa_o_i + kappa_o_c; }
    double kappa_e() const { return kappa_e_i + kappa_e_c; }

    // Throws std::invalid_argument naming the first negative entry.
    void validate() const;

    // Piezo-optomechanical device values used throughout the reference study,
    // with cold baths.
    static SystemParams reference_device();
};

enum class PumpMode { GainFactor, IntracavityPhoton };

// Gaussian drive. GainFactor: g_om(t) = G exp(-(t-t0)^2/(2 sigma^2)) g_0.
// IntracavityPhoton: g_om(t) = g_0 sqrt(n_o(t)), n_o(t) = n_m exp(-(t-t0)^2/(2 sigma^2)).
struct PumpPulse {
    double amplitude{0.0};
    double t0{0.0};
    double sigma{1.0};
    PumpMode mode{PumpMode::GainFactor};

    double envelope(double t) const;
    double squeezing_strength(double t, double g_0) const;
    double peak_squeezing_strength(double g_0) const;
    // n_o(t) in IntracavityPhoton mode; G^2 times the squared envelope otherwise.
    double intracavity_photons(double t) const;

    void validate() const;
};

// H_int / hbar = -g_em (b^† c + b c^†) - g_om (b^† a^† + b a), rotating frame at
// the blue-detuned resonance.
ComplexMatrix build_interaction_hamiltonian(const SystemParams& params, double g_om, const ModeOperators& ops);

} // namespace eopulse::quantum
