// biphoton.hpp: two-time biphoton wavepacket and its temporal Schmidt modes

#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <vector>

#include "eopulse/dynamics.hpp"

namespace eopulse::biphoton {

using dynamics::TimeGrid;
using quantum::ComplexMatrix;

enum class WavepacketKind {
    // f(t1, t2) from the pair correlator <c_out(t2) a_out(t1)>.
    Amplitude,
    // |f(t1, t2)|^2 from the second-order correlation of the output modes.
    Intensity,
};

// Rows follow the optical detection time t1, columns the microwave time t2.
struct BiphotonWavepacket {
    TimeGrid t1_grid;
    TimeGrid t2_grid;
    ComplexMatrix amplitude;
    // Trapezoid L2 mass before normalization (for Intensity, the plain integral).
    double normalization{0.0};
    // False when the mass is zero; the values are then left as computed.
    bool normalized{false};
    WavepacketKind kind{WavepacketKind::Amplitude};
};

struct WavepacketOptions {
    // Default for both axes: the stored-state grid of the evolution.
    std::optional<TimeGrid> t1_grid;
    std::optional<TimeGrid> t2_grid;
    unsigned workers{1};
    // Starts whose optical occupancy is below this fraction of its maximum are
    // skipped; by Cauchy-Schwarz their entries are bounded by it.
    double prune_fraction{1e-16};
};

// Throws GridMismatch if an axis grid is not on the evolution grid or a
// required state was not stored.
BiphotonWavepacket assemble_wavepacket(const dynamics::EvolutionResult& evolution, const quantum::SystemParams& params,
                                       const quantum::PumpPulse& pulse, WavepacketKind kind,
                                       const WavepacketOptions& options = {});

// Trapezoid weights of a uniform grid.
Eigen::VectorXd trapezoid_weights(const TimeGrid& grid);

struct SchmidtSpectrum {
    // Descending; normalized over the full spectrum, so they sum to 1 when
    // k_max reaches the rank.
    std::vector<double> lambdas;
    // Column k is mode k sampled on the matching axis grid.
    ComplexMatrix optical_modes;
    ComplexMatrix microwave_modes;
    TimeGrid t1_grid;
    TimeGrid t2_grid;
    // -sum lambda ln lambda over the full spectrum (nats).
    double entropy{0.0};
};

// f(t1, t2) = sum_k sqrt(lambda_k) f_k^o(t1) f_k^e(t2); modes orthonormal under
// trapezoid weights. Throws DegenerateInput on zero mass, std::invalid_argument
// for an Intensity wavepacket.
SchmidtSpectrum schmidt_decompose(const BiphotonWavepacket& wp, std::size_t k_max);

// Long format: t1_s, t2_s, f_re, f_im.
void write_wavepacket_csv(std::ostream& out, const BiphotonWavepacket& wp);
// k, lambda
void write_spectrum_csv(std::ostream& out, const SchmidtSpectrum& spectrum);
// t_s, mode0_re, mode0_im, ... for the optical (or microwave) family.
void write_modes_csv(std::ostream& out, const SchmidtSpectrum& spectrum, bool optical);

} // namespace eopulse::biphoton
