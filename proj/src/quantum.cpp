#include "eopulse/quantum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <unsupported/Eigen/KroneckerProduct>

#include "eopulse/errors.hpp"

namespace eopulse::quantum {

std::size_t FockSpace::index(int na, int nb, int nc) const
{
    return (static_cast<std::size_t>(na) * levels(Mode::Mechanical) + static_cast<std::size_t>(nb)) *
               levels(Mode::Electrical) +
           static_cast<std::size_t>(nc);
}

FockSpace FockSpace::enlarged(int by) const
{
    FockSpace out = *this;
    for (auto& n : out.cutoffs) n += by;
    return out;
}

ComplexMatrix ladder(int cutoff)
{
    const Eigen::Index n = cutoff + 1;
    ComplexMatrix op = ComplexMatrix::Zero(n, n);
    for (Eigen::Index k = 1; k < n; ++k) op(k - 1, k) = std::sqrt(static_cast<double>(k));
    return op;
}

ModeOperators build_mode_operators(const FockSpace& space, std::size_t max_dimension)
{
    for (int n : space.cutoffs) {
        if (n < 1) throw std::invalid_argument("every Fock cutoff must be at least 1");
    }
    // Guard the product before it can overflow.
    std::size_t dim = 1;
    for (int n : space.cutoffs) {
        const auto levels = static_cast<std::size_t>(n) + 1;
        if (dim > max_dimension / levels) {
            dim = max_dimension + 1;
            break;
        }
        dim *= levels;
    }
    if (dim > max_dimension) {
        throw DimensionOverflow("Fock cutoffs (" + std::to_string(space.cutoffs[0]) + "," +
                                std::to_string(space.cutoffs[1]) + "," + std::to_string(space.cutoffs[2]) +
                                ") exceed the dimension limit " + std::to_string(max_dimension));
    }

    const auto ia = ComplexMatrix::Identity(space.cutoffs[0] + 1, space.cutoffs[0] + 1);
    const auto ib = ComplexMatrix::Identity(space.cutoffs[1] + 1, space.cutoffs[1] + 1);
    const auto ic = ComplexMatrix::Identity(space.cutoffs[2] + 1, space.cutoffs[2] + 1);

    ModeOperators ops;
    ops.space = space;
    ops.a = Eigen::kroneckerProduct(ladder(space.cutoffs[0]), Eigen::kroneckerProduct(ib, ic)).eval();
    ops.b = Eigen::kroneckerProduct(ia, Eigen::kroneckerProduct(ladder(space.cutoffs[1]), ic)).eval();
    ops.c = Eigen::kroneckerProduct(ia, Eigen::kroneckerProduct(ib, ladder(space.cutoffs[2]))).eval();
    return ops;
}

double hermiticity_error(const ComplexMatrix& m)
{
    if (m.rows() != m.cols()) return std::numeric_limits<double>::infinity();
    if (m.size() == 0) return 0.0;
    return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

bool is_hermitian(const ComplexMatrix& m, double tol) { return hermiticity_error(m) < tol; }

OccupancyProfile OccupancyProfile::constant(double n)
{
    OccupancyProfile p;
    p.constant_ = n;
    return p;
}

OccupancyProfile OccupancyProfile::sampled(double t_start, double dt, std::vector<double> values)
{
    if (values.empty()) throw std::invalid_argument("sampled occupancy profile needs at least one value");
    if (values.size() > 1 && !(dt > 0.0)) throw std::invalid_argument("sampled occupancy profile needs dt > 0");
    OccupancyProfile p;
    p.t_start_ = t_start;
    p.dt_ = dt;
    p.samples_ = std::move(values);
    p.constant_ = p.samples_.front();
    return p;
}

double OccupancyProfile::at(double t) const
{
    if (samples_.empty()) return constant_;
    if (samples_.size() == 1) return samples_.front();
    const double x = (t - t_start_) / dt_;
    if (x <= 0.0) return samples_.front();
    const auto last = static_cast<double>(samples_.size() - 1);
    if (x >= last) return samples_.back();
    const auto i = static_cast<std::size_t>(x);
    const double w = x - static_cast<double>(i);
    return (1.0 - w) * samples_[i] + w * samples_[i + 1];
}

double OccupancyProfile::max() const
{
    if (samples_.empty()) return constant_;
    return *std::max_element(samples_.begin(), samples_.end());
}

void SystemParams::validate() const
{
    const std::pair<const char*, double> fields[] = {
        {"g_em", g_em},           {"g_0", g_0},         {"kappa_o_i", kappa_o_i}, {"kappa_o_c", kappa_o_c},
        {"kappa_m", kappa_m},     {"kappa_e_i", kappa_e_i}, {"kappa_e_c", kappa_e_c}, {"omega_o", omega_o},
        {"omega_m", omega_m},     {"omega_e", omega_e}};
    for (const auto& [name, value] : fields) {
        if (!(value >= 0.0) || !std::isfinite(value)) {
            throw std::invalid_argument(std::string("SystemParams.") + name + " must be a finite value >= 0");
        }
    }
    if (n_th_b.is_constant() ? n_th_b.at(0.0) < 0.0 : *std::min_element(n_th_b.samples().begin(), n_th_b.samples().end()) < 0.0)
        throw std::invalid_argument("SystemParams.n_th_b must be >= 0");
    if (n_th_c.is_constant() ? n_th_c.at(0.0) < 0.0 : *std::min_element(n_th_c.samples().begin(), n_th_c.samples().end()) < 0.0)
        throw std::invalid_argument("SystemParams.n_th_c must be >= 0");
}

SystemParams SystemParams::reference_device()
{
    SystemParams p;
    p.g_em = kTwoPi * 1.2e6;
    p.kappa_e_i = kTwoPi * 0.55e6;
    p.kappa_e_c = kTwoPi * 1.25e6;
    p.kappa_o_i = kTwoPi * 0.65e9;
    p.kappa_o_c = p.kappa_o_i;
    p.kappa_m = kTwoPi * 150e3;
    p.g_0 = kTwoPi * 260e3;
    p.omega_o = kTwoPi * 190e12;
    p.omega_m = kTwoPi * 5e9;
    p.omega_e = kTwoPi * 5e9;
    p.n_th_b = OccupancyProfile::constant(0.0);
    p.n_th_c = OccupancyProfile::constant(0.0);
    return p;
}

double PumpPulse::envelope(double t) const
{
    const double x = (t - t0) / sigma;
    return std::exp(-0.5 * x * x);
}

double PumpPulse::squeezing_strength(double t, double g_0) const
{
    switch (mode) {
    case PumpMode::GainFactor: return amplitude * envelope(t) * g_0;
    case PumpMode::IntracavityPhoton: return g_0 * std::sqrt(intracavity_photons(t));
    }
    return 0.0;
}

double PumpPulse::peak_squeezing_strength(double g_0) const
{
    return mode == PumpMode::GainFactor ? amplitude * g_0 : g_0 * std::sqrt(amplitude);
}

double PumpPulse::intracavity_photons(double t) const
{
    const double e = envelope(t);
    return mode == PumpMode::IntracavityPhoton ? amplitude * e : amplitude * amplitude * e * e;
}

void PumpPulse::validate() const
{
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("PumpPulse.sigma must be > 0");
    if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw std::invalid_argument("PumpPulse.amplitude must be >= 0");
    if (!std::isfinite(t0)) throw std::invalid_argument("PumpPulse.t0 must be finite");
}

ComplexMatrix build_interaction_hamiltonian(const SystemParams& params, double g_om, const ModeOperators& ops)
{
    const auto& a = ops.a;
    const auto& b = ops.b;
    const auto& c = ops.c;
    if (a.rows() != b.rows() || b.rows() != c.rows() || a.rows() != a.cols())
        throw DimensionMismatch("mode operators do not share one Fock space");

    ComplexMatrix beam_splitter = b.adjoint() * c;
    beam_splitter += beam_splitter.adjoint().eval();
    ComplexMatrix squeezing = b.adjoint() * a.adjoint();
    squeezing += squeezing.adjoint().eval();
    return -params.g_em * beam_splitter - g_om * squeezing;
}

} // namespace eopulse::quantum
