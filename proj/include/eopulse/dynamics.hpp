// dynamics.hpp: time-dependent Lindblad propagation and quantum-regression
// two-time correlators for the three-mode transducer.

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>

#include "eopulse/quantum.hpp"

namespace eopulse::dynamics {

using quantum::Complex;
using quantum::ComplexMatrix;
using quantum::FockSpace;
using quantum::PumpPulse;
using quantum::SystemParams;

// Uniform grid t_start + k dt, k = 0..n_steps.
struct TimeGrid {
    double t_start{0.0};
    double t_end{0.0};
    std::size_t n_steps{1};

    double dt() const { return (t_end - t_start) / static_cast<double>(n_steps); }
    std::size_t size() const { return n_steps + 1; }
    double time(std::size_t k) const { return t_start + static_cast<double>(k) * dt(); }

    void validate() const;

    // Index of t on this grid, if t lies on a grid point within tol * dt.
    std::optional<std::size_t> index_of(double t, double tol = 1e-6) const;

    // True if every point of `sub` is a point of this grid.
    bool contains(const TimeGrid& sub, double tol = 1e-6) const;

    // Smallest step count with dt <= dt_max.
    static TimeGrid with_max_step(double t_start, double t_end, double dt_max);
    // Grid starting at t_start with exactly the given step, extended to cover t_end.
    static TimeGrid with_step(double t_start, double t_end, double dt);
};

// Largest step the propagator accepts: 0.05 / max(kappa_e, g_em, max_t g_om, kappa_m (1 + max n_th_b)).
double max_time_step(const SystemParams& params, const PumpPulse& pulse);

struct DensityOperator {
    ComplexMatrix matrix;
    FockSpace space;

    static DensityOperator vacuum(const FockSpace& space);
    static DensityOperator fock(const FockSpace& space, int na, int nb, int nc);

    Complex trace() const { return matrix.trace(); }
    // Uses the block structure in Q = n_a - n_b - n_c when the state has it.
    double min_eigenvalue() const;
};

// Full Lindblad generator. The optical-damping dissipator is kept separate from
// the rest because it is orders of magnitude faster than every other rate.
class LindbladGenerator {
public:
    LindbladGenerator(const FockSpace& space, const SystemParams& params, const PumpPulse& pulse);

    ComplexMatrix operator()(const ComplexMatrix& x, double t) const;

    // Hamiltonian part plus every dissipator except optical damping.
    ComplexMatrix explicit_part(const ComplexMatrix& x, double t) const;
    // kappa_o (a x a^† - {a^† a, x}/2)
    ComplexMatrix optical_damping(const ComplexMatrix& x) const;

    const FockSpace& space() const { return ops_.space; }
    const quantum::ModeOperators& operators() const { return ops_; }
    const SystemParams& params() const { return params_; }
    const PumpPulse& pulse() const { return pulse_; }
    double squeezing_strength(double t) const { return pulse_.squeezing_strength(t, params_.g_0); }

private:
    using Sparse = Eigen::SparseMatrix<Complex>;

    SystemParams params_;
    PumpPulse pulse_;
    quantum::ModeOperators ops_;

    Sparse beam_splitter_; // -(b^† c + b c^†)
    Sparse squeezing_;     // -(a^† b^† + a b)
    Sparse a_, a_dag_, b_, b_dag_, c_, c_dag_;
    Eigen::VectorXd n_a_, n_b_, n_c_, b_b_dag_, c_c_dag_;
};

// Matrix elements (i, j) a propagator keeps: those with Q(i) - Q(j) in `shifts`,
// Q = n_a - n_b - n_c. The generator conserves this shift, so a matrix confined
// to a set of shifts stays confined. A state grown from a Fock state has shift 0;
// a * rho has shift -1.
struct CoherenceSupport {
    bool every{true};
    std::vector<int> shifts;

    static CoherenceSupport all() { return {}; }
    static CoherenceSupport shift(int s) { return {false, {s}}; }
    // Smallest support holding every nonzero entry of x.
    static CoherenceSupport of(const ComplexMatrix& x, const FockSpace& space);
    bool contains(int s) const;
    // Every shift moved by `by`; left-multiplying by a (or c) moves shifts by -1 (or +1).
    CoherenceSupport shifted(int by) const;
    CoherenceSupport merged(const CoherenceSupport& other) const;
};

// Fixed-step five-stage exponential Runge-Kutta of stiff order four
// (Hochbruck-Ostermann) on the vectorized master equation. Optical damping enters through exact exponential /
// phi-function coefficients; the remaining generator is explicit.
class Propagator {
public:
    using Vector = Eigen::VectorXcd;

    Propagator(const FockSpace& space, const SystemParams& params, const PumpPulse& pulse, double dt,
               CoherenceSupport support = CoherenceSupport::all());

    std::size_t size() const { return rows_.size(); }
    double dt() const { return dt_; }
    const FockSpace& space() const { return space_; }
    const CoherenceSupport& support() const { return support_; }

    // Throws std::invalid_argument if x has nonzero entries outside the support.
    Vector gather(const ComplexMatrix& x) const;
    ComplexMatrix scatter(const Vector& v) const;

    // Advances v from t to t + dt in place.
    void step(Vector& v, double t) const;
    void step(ComplexMatrix& x, double t) const;

    // Generator without optical damping, and the optical-damping part alone.
    Vector explicit_part(const Vector& v, double t) const;
    Vector optical_damping(const Vector& v) const;

    Complex trace(const Vector& v) const;
    // Tr[op X] for the matrix X represented by v.
    Complex expectation(const ComplexMatrix& op, const Vector& v) const;
    double hermiticity_error(const Vector& v) const;

private:
    using Sparse = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;

    SystemParams params_;
    PumpPulse pulse_;
    FockSpace space_;
    CoherenceSupport support_;
    double dt_;

    std::vector<int> rows_, cols_;
    std::vector<int> position_; // D x D column-major lookup, -1 outside the support
    std::vector<int> diagonal_;

    Sparse coupling_, squeezing_, thermal_b_, thermal_c_, optical_;
    Sparse exp_full_, exp_half_;
    // Stage coefficients a_ij(hS) and weights b_i(hS); a_42 = a_43 and a_52 = a_53.
    Sparse a21_, a31_, a32_, a41_, a42_, a51_, a52_, a54_, b1_, b4_, b5_;
};

struct PropagateOptions {
    std::size_t stride{1};
    bool store_states{true};
    // When set, states are kept only for stored points with t in [first, second].
    std::optional<std::pair<double, double>> state_window;
    bool check_positivity{true};
    double trace_tolerance{1e-6};
    // Reject grids whose step exceeds max_time_step().
    bool enforce_step_rule{true};
};

struct StateDiagnostics {
    double max_trace_drift{0.0};
    double max_hermiticity_error{0.0};
    double min_eigenvalue{0.0};
};

struct EvolutionResult {
    TimeGrid grid;
    std::size_t stride{1};
    // Grid index of every stored point; tracks are sampled at these points.
    std::vector<std::size_t> sample_indices;
    std::map<std::string, std::vector<double>> tracks;
    std::map<std::string, std::vector<Complex>> complex_tracks;
    // Grid index of every retained state, parallel to `states`.
    std::vector<std::size_t> state_indices;
    std::vector<DensityOperator> states;
    StateDiagnostics diagnostics;

    const DensityOperator* state_at(std::size_t grid_index) const;
    // Track value at a grid index that is a stored point.
    double track(const std::string& name, std::size_t grid_index) const;
};

// Right-hand side of the master equation at time t.
ComplexMatrix lindblad_rhs(const DensityOperator& rho, double t, const SystemParams& params, const PumpPulse& pulse);

// Tracks recorded: "n_a", "n_b", "n_c", "trace" and the complex pair moment "ca" = <c a>.
// Throws StepSizeTooLarge on trace drift beyond options.trace_tolerance or on a
// grid step larger than max_time_step() (when enforced).
EvolutionResult propagate(const DensityOperator& rho0, const TimeGrid& grid, const SystemParams& params,
                          const PumpPulse& pulse, const PropagateOptions& options = {});

// Propagates X(0) = right * rho(t) * left and returns Tr[probe X(tau)] on tau_grid
// (tau_grid.t_start must be 0; its step is the integration step).
std::vector<Complex> regression_correlator(const DensityOperator& rho_t, double t, const TimeGrid& tau_grid,
                                           const ComplexMatrix& left, const ComplexMatrix& right,
                                           const ComplexMatrix& probe, const SystemParams& params,
                                           const PumpPulse& pulse);

// Same, with a prepared propagator whose support holds X(0); returns n_tau + 1
// values at tau = k * propagator.dt().
std::vector<Complex> regression_correlator(const Propagator& propagator, const ComplexMatrix& rho_t, double t,
                                           std::size_t n_tau, const ComplexMatrix& left, const ComplexMatrix& right,
                                           const ComplexMatrix& probe);

// Tr[op * x] without forming the product.
Complex trace_product(const ComplexMatrix& op, const ComplexMatrix& x);

} // namespace eopulse::dynamics
