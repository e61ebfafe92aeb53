#include "eopulse/biphoton.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/SVD>

#include "eopulse/errors.hpp"
#include "eopulse/io.hpp"
#include "eopulse/parallel.hpp"

namespace eopulse::biphoton {

using dynamics::CoherenceSupport;
using dynamics::Propagator;
using quantum::Complex;

namespace {

// Evolution-grid index of every point of an axis grid.
std::vector<std::size_t> axis_indices(const TimeGrid& evolution, const TimeGrid& axis, const char* name)
{
    if (!evolution.contains(axis)) throw GridMismatch(std::string(name) + " grid is not on the evolution grid");
    std::vector<std::size_t> out(axis.size());
    for (std::size_t k = 0; k < axis.size(); ++k) out[k] = *evolution.index_of(axis.time(k));
    return out;
}

TimeGrid stored_grid(const dynamics::EvolutionResult& ev)
{
    if (ev.state_indices.size() < 2) throw GridMismatch("evolution holds fewer than two stored states");
    const std::size_t first = ev.state_indices.front();
    const std::size_t last = ev.state_indices.back();
    const std::size_t step = ev.state_indices[1] - first;
    if ((last - first) % step != 0) throw GridMismatch("stored states are not uniformly spaced");
    return {ev.grid.time(first), ev.grid.time(last), (last - first) / step};
}

const dynamics::DensityOperator& state_or_throw(const dynamics::EvolutionResult& ev, std::size_t index)
{
    const auto* s = ev.state_at(index);
    if (!s) throw GridMismatch("no stored state at t = " + io::format_number(ev.grid.time(index)) + " s");
    return *s;
}

} // namespace

Eigen::VectorXd trapezoid_weights(const TimeGrid& grid)
{
    Eigen::VectorXd w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(grid.size()), grid.dt());
    w(0) *= 0.5;
    w(w.size() - 1) *= 0.5;
    return w;
}

BiphotonWavepacket assemble_wavepacket(const dynamics::EvolutionResult& evolution, const quantum::SystemParams& params,
                                       const quantum::PumpPulse& pulse, WavepacketKind kind,
                                       const WavepacketOptions& options)
{
    BiphotonWavepacket wp;
    wp.kind = kind;
    wp.t1_grid = options.t1_grid ? *options.t1_grid : stored_grid(evolution);
    wp.t2_grid = options.t2_grid ? *options.t2_grid : stored_grid(evolution);
    const auto rows = axis_indices(evolution.grid, wp.t1_grid, "t1");
    const auto cols = axis_indices(evolution.grid, wp.t2_grid, "t2");
    const auto n1 = static_cast<Eigen::Index>(rows.size());
    const auto n2 = static_cast<Eigen::Index>(cols.size());
    wp.amplitude = ComplexMatrix::Zero(n1, n2);

    const auto& space = state_or_throw(evolution, rows.front()).space;
    const auto ops = quantum::build_mode_operators(space);
    const ComplexMatrix identity = ComplexMatrix::Identity(ops.a.rows(), ops.a.cols());
    const ComplexMatrix a_dag = ops.a.adjoint();
    const ComplexMatrix c_dag = ops.c.adjoint();
    const ComplexMatrix n_a = a_dag * ops.a;
    const ComplexMatrix n_c = c_dag * ops.c;
    const bool amplitude = kind == WavepacketKind::Amplitude;
    const double scale = amplitude ? std::sqrt(params.kappa_o_c * params.kappa_e_c) : params.kappa_o_c * params.kappa_e_c;

    // Optical occupancy on the t1 axis decides which starts can contribute.
    std::vector<double> occupancy(rows.size());
    CoherenceSupport state_support{false, {}};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& rho = state_or_throw(evolution, rows[i]);
        occupancy[i] = dynamics::trace_product(n_a, rho.matrix).real();
        state_support = state_support.merged(CoherenceSupport::of(rho.matrix, space));
    }
    const double occupancy_max = *std::max_element(occupancy.begin(), occupancy.end());
    const double threshold = options.prune_fraction * occupancy_max;
    std::size_t last_significant = 0;
    bool any_significant = false;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (occupancy_max > 0.0 && occupancy[i] > threshold) {
            last_significant = i;
            any_significant = true;
        }

    const double dt = evolution.grid.dt();
    // Forward ordering (t2 >= t1): X = a rho [a^†], probe c [c^† c].
    const Propagator forward(space, params, pulse, dt, state_support.shifted(amplitude ? -1 : 0));
    // Reverse ordering (t2 < t1): X = c rho [c^†], probe a [a^† a].
    const Propagator reverse(space, params, pulse, dt, state_support.shifted(amplitude ? +1 : 0));

    auto sweep = [&](const Propagator& prop, const ComplexMatrix& rho, std::size_t start, const ComplexMatrix& left,
                     const ComplexMatrix& right, const ComplexMatrix& probe, std::size_t steps) {
        return dynamics::regression_correlator(prop, rho, evolution.grid.time(start), steps, left, right, probe);
    };

    // One task per t1 row and one per t2 column; every task writes disjoint entries.
    const std::size_t n_tasks = rows.size() + cols.size();
    parallel_for(n_tasks, options.workers, [&](std::size_t task) {
        if (task < rows.size()) {
            const std::size_t i = task;
            if (!(occupancy_max > 0.0) || occupancy[i] <= threshold) return;
            const std::size_t start = rows[i];
            if (cols.back() < start) return;
            const auto& rho = state_or_throw(evolution, start);
            const auto values = amplitude ? sweep(forward, rho.matrix, start, identity, ops.a, ops.c, cols.back() - start)
                                          : sweep(forward, rho.matrix, start, a_dag, ops.a, n_c, cols.back() - start);
            for (std::size_t j = 0; j < cols.size(); ++j)
                if (cols[j] >= start)
                    wp.amplitude(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                        scale * values[cols[j] - start];
        } else {
            const std::size_t j = task - rows.size();
            if (!any_significant) return;
            const std::size_t start = cols[j];
            const std::size_t stop = rows[last_significant];
            if (stop <= start) return;
            const auto& rho = state_or_throw(evolution, start);
            const auto values = amplitude ? sweep(reverse, rho.matrix, start, identity, ops.c, ops.a, stop - start)
                                          : sweep(reverse, rho.matrix, start, c_dag, ops.c, n_a, stop - start);
            for (std::size_t i = 0; i <= last_significant; ++i)
                if (rows[i] > start)
                    wp.amplitude(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                        scale * values[rows[i] - start];
        }
    });

    const Eigen::VectorXd w1 = trapezoid_weights(wp.t1_grid);
    const Eigen::VectorXd w2 = trapezoid_weights(wp.t2_grid);
    if (amplitude) {
        wp.normalization = (w1.asDiagonal() * wp.amplitude.cwiseAbs2() * w2.asDiagonal()).sum();
    } else {
        wp.amplitude = wp.amplitude.real().cast<Complex>();
        wp.normalization = (w1.asDiagonal() * wp.amplitude.real() * w2.asDiagonal()).sum();
    }
    if (wp.normalization > 0.0) {
        wp.amplitude /= amplitude ? std::sqrt(wp.normalization) : wp.normalization;
        wp.normalized = true;
    }
    return wp;
}

SchmidtSpectrum schmidt_decompose(const BiphotonWavepacket& wp, std::size_t k_max)
{
    if (wp.kind != WavepacketKind::Amplitude)
        throw std::invalid_argument("Schmidt decomposition needs an amplitude wavepacket");
    if (k_max == 0) throw std::invalid_argument("k_max must be >= 1");
    const Eigen::VectorXd w1 = trapezoid_weights(wp.t1_grid);
    const Eigen::VectorXd w2 = trapezoid_weights(wp.t2_grid);
    if (wp.amplitude.rows() != w1.size() || wp.amplitude.cols() != w2.size())
        throw GridMismatch("wavepacket values do not match its axis grids");

    const Eigen::VectorXd s1 = w1.cwiseSqrt();
    const Eigen::VectorXd s2 = w2.cwiseSqrt();
    const ComplexMatrix kernel = s1.asDiagonal() * wp.amplitude * s2.asDiagonal();
    const double mass = kernel.squaredNorm();
    if (!(mass > 0.0))
        throw DegenerateInput("wavepacket has zero mass");

    Eigen::BDCSVD<ComplexMatrix> svd(kernel, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const Eigen::Index rank = sv.size();
    const Eigen::Index keep = std::min<Eigen::Index>(rank, static_cast<Eigen::Index>(k_max));

    SchmidtSpectrum out;
    out.t1_grid = wp.t1_grid;
    out.t2_grid = wp.t2_grid;
    const double total = sv.squaredNorm();
    for (Eigen::Index k = 0; k < rank; ++k) {
        const double lambda = sv(k) * sv(k) / total;
        if (lambda > 0.0) out.entropy -= lambda * std::log(lambda);
        if (k < keep) out.lambdas.push_back(lambda);
    }
    out.optical_modes = s1.cwiseInverse().asDiagonal() * svd.matrixU().leftCols(keep);
    out.microwave_modes = s2.cwiseInverse().asDiagonal() * svd.matrixV().leftCols(keep).conjugate();
    // Fix the global phase of each pair: the optical mode's largest entry is real and positive.
    for (Eigen::Index k = 0; k < keep; ++k) {
        Eigen::Index arg = 0;
        out.optical_modes.col(k).cwiseAbs().maxCoeff(&arg);
        const Complex v = out.optical_modes(arg, k);
        if (std::abs(v) == 0.0) continue;
        const Complex phase = v / std::abs(v);
        out.optical_modes.col(k) /= phase;
        out.microwave_modes.col(k) *= phase;
    }
    return out;
}

void write_wavepacket_csv(std::ostream& out, const BiphotonWavepacket& wp)
{
    io::CsvWriter csv(out, {"t1_s", "t2_s", "f_re", "f_im"});
    for (Eigen::Index i = 0; i < wp.amplitude.rows(); ++i)
        for (Eigen::Index j = 0; j < wp.amplitude.cols(); ++j)
            csv.row({wp.t1_grid.time(static_cast<std::size_t>(i)), wp.t2_grid.time(static_cast<std::size_t>(j)),
                     wp.amplitude(i, j).real(), wp.amplitude(i, j).imag()});
}

void write_spectrum_csv(std::ostream& out, const SchmidtSpectrum& spectrum)
{
    io::CsvWriter csv(out, {"k", "lambda"});
    for (std::size_t k = 0; k < spectrum.lambdas.size(); ++k) csv.row({static_cast<double>(k), spectrum.lambdas[k]});
}

void write_modes_csv(std::ostream& out, const SchmidtSpectrum& spectrum, bool optical)
{
    const ComplexMatrix& modes = optical ? spectrum.optical_modes : spectrum.microwave_modes;
    const TimeGrid& grid = optical ? spectrum.t1_grid : spectrum.t2_grid;
    std::vector<std::string> header{"t_s"};
    for (Eigen::Index k = 0; k < modes.cols(); ++k) {
        header.push_back("mode" + std::to_string(k) + "_re");
        header.push_back("mode" + std::to_string(k) + "_im");
    }
    io::CsvWriter csv(out, header);
    for (Eigen::Index i = 0; i < modes.rows(); ++i) {
        std::vector<double> row{grid.time(static_cast<std::size_t>(i))};
        for (Eigen::Index k = 0; k < modes.cols(); ++k) {
            row.push_back(modes(i, k).real());
            row.push_back(modes(i, k).imag());
        }
        csv.row(row);
    }
}

} // namespace eopulse::biphoton
