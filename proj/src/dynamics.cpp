#include "eopulse/dynamics.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <stdexcept>
#include <iomanip>
#include <sstream>
#include <string>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "eopulse/errors.hpp"

namespace eopulse::dynamics {

namespace {

using quantum::Mode;

Eigen::VectorXd number_diagonal(const FockSpace& space, Mode mode)
{
    const auto la = static_cast<int>(space.levels(Mode::Optical));
    const auto lb = static_cast<int>(space.levels(Mode::Mechanical));
    const auto lc = static_cast<int>(space.levels(Mode::Electrical));
    Eigen::VectorXd d(static_cast<Eigen::Index>(space.dimension()));
    for (int na = 0; na < la; ++na)
        for (int nb = 0; nb < lb; ++nb)
            for (int nc = 0; nc < lc; ++nc) {
                const int n = mode == Mode::Optical ? na : (mode == Mode::Mechanical ? nb : nc);
                d(static_cast<Eigen::Index>(space.index(na, nb, nc))) = n;
            }
    return d;
}

// b b^† acts as n + 1 below the cutoff; the truncated top level maps to 0.
Eigen::VectorXd raised_diagonal(const FockSpace& space, Mode mode)
{
    Eigen::VectorXd d = number_diagonal(space, mode);
    const double top = space.cutoff(mode);
    for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = d(i) < top ? d(i) + 1.0 : 0.0;
    return d;
}

// Q = n_a - n_b - n_c for every basis index.
std::vector<int> excitation_balance(const FockSpace& space)
{
    std::vector<int> q(space.dimension());
    for (int na = 0; na <= space.cutoffs[0]; ++na)
        for (int nb = 0; nb <= space.cutoffs[1]; ++nb)
            for (int nc = 0; nc <= space.cutoffs[2]; ++nc) q[space.index(na, nb, nc)] = na - nb - nc;
    return q;
}

std::string format_seconds(double t)
{
    std::ostringstream os;
    os << std::setprecision(6) << t << " s";
    return os.str();
}

void check_dimension(const ComplexMatrix& m, const FockSpace& space, const char* what)
{
    const auto d = static_cast<Eigen::Index>(space.dimension());
    if (m.rows() != d || m.cols() != d)
        throw DimensionMismatch(std::string(what) + " is " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()) + ", expected " + std::to_string(d) + "x" +
                                std::to_string(d));
}

} // namespace

void TimeGrid::validate() const
{
    if (n_steps < 1) throw std::invalid_argument("TimeGrid needs at least one step");
    if (!std::isfinite(t_start) || !std::isfinite(t_end) || !(t_end > t_start))
        throw std::invalid_argument("TimeGrid must be strictly increasing with finite bounds");
}

std::optional<std::size_t> TimeGrid::index_of(double t, double tol) const
{
    const double x = (t - t_start) / dt();
    const double k = std::round(x);
    if (k < 0.0 || k > static_cast<double>(n_steps) || std::abs(x - k) > tol) return std::nullopt;
    return static_cast<std::size_t>(k);
}

bool TimeGrid::contains(const TimeGrid& sub, double tol) const
{
    if (!index_of(sub.t_start, tol) || !index_of(sub.t_end, tol)) return false;
    const double ratio = sub.dt() / dt();
    return std::abs(ratio - std::round(ratio)) <= tol * std::max(1.0, ratio) && std::round(ratio) >= 1.0;
}

TimeGrid TimeGrid::with_max_step(double t_start, double t_end, double dt_max)
{
    if (!(dt_max > 0.0)) throw std::invalid_argument("maximum step must be > 0");
    const double n = std::ceil((t_end - t_start) / dt_max - 1e-9);
    TimeGrid g{t_start, t_end, static_cast<std::size_t>(std::max(1.0, n))};
    g.validate();
    return g;
}

TimeGrid TimeGrid::with_step(double t_start, double t_end, double dt)
{
    if (!(dt > 0.0)) throw std::invalid_argument("step must be > 0");
    const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil((t_end - t_start) / dt - 1e-9)));
    TimeGrid g{t_start, t_start + static_cast<double>(n) * dt, n};
    g.validate();
    return g;
}

double max_time_step(const SystemParams& params, const PumpPulse& pulse)
{
    const double fastest = std::max({params.kappa_e(), params.g_em, pulse.peak_squeezing_strength(params.g_0),
                                     params.kappa_m * (1.0 + params.n_th_b.max())});
    if (!(fastest > 0.0)) return std::numeric_limits<double>::infinity();
    return 0.05 / fastest;
}

DensityOperator DensityOperator::vacuum(const FockSpace& space) { return fock(space, 0, 0, 0); }

DensityOperator DensityOperator::fock(const FockSpace& space, int na, int nb, int nc)
{
    if (na < 0 || nb < 0 || nc < 0 || na > space.cutoffs[0] || nb > space.cutoffs[1] || nc > space.cutoffs[2])
        throw std::invalid_argument("Fock state outside the truncated space");
    const auto d = static_cast<Eigen::Index>(space.dimension());
    DensityOperator rho{ComplexMatrix::Zero(d, d), space};
    const auto i = static_cast<Eigen::Index>(space.index(na, nb, nc));
    rho.matrix(i, i) = 1.0;
    return rho;
}

double DensityOperator::min_eigenvalue() const
{
    const ComplexMatrix h = 0.5 * (matrix + matrix.adjoint());
    const std::vector<int> q = excitation_balance(space);
    const auto d = static_cast<Eigen::Index>(q.size());
    bool blocked = h.rows() == d;
    for (Eigen::Index j = 0; blocked && j < d; ++j)
        for (Eigen::Index i = 0; i < d; ++i)
            if (q[static_cast<std::size_t>(i)] != q[static_cast<std::size_t>(j)] && h(i, j) != Complex(0.0, 0.0)) {
                blocked = false;
                break;
            }
    if (!blocked) {
        Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(h, Eigen::EigenvaluesOnly);
        return solver.eigenvalues().minCoeff();
    }

    double lowest = std::numeric_limits<double>::infinity();
    const auto [qmin, qmax] = std::minmax_element(q.begin(), q.end());
    for (int sector = *qmin; sector <= *qmax; ++sector) {
        std::vector<Eigen::Index> members;
        for (Eigen::Index i = 0; i < d; ++i)
            if (q[static_cast<std::size_t>(i)] == sector) members.push_back(i);
        if (members.empty()) continue;
        const auto m = static_cast<Eigen::Index>(members.size());
        ComplexMatrix sub(m, m);
        for (Eigen::Index j = 0; j < m; ++j)
            for (Eigen::Index i = 0; i < m; ++i) sub(i, j) = h(members[i], members[j]);
        Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(sub, Eigen::EigenvaluesOnly);
        lowest = std::min(lowest, solver.eigenvalues().minCoeff());
    }
    return lowest;
}

LindbladGenerator::LindbladGenerator(const FockSpace& space, const SystemParams& params, const PumpPulse& pulse)
    : params_(params), pulse_(pulse), ops_(quantum::build_mode_operators(space))
{
    params_.validate();
    pulse_.validate();
    const ComplexMatrix bs = -(ops_.b.adjoint() * ops_.c + ops_.b * ops_.c.adjoint());
    const ComplexMatrix sq = -(ops_.a.adjoint() * ops_.b.adjoint() + ops_.a * ops_.b);
    beam_splitter_ = bs.sparseView();
    squeezing_ = sq.sparseView();
    a_ = ops_.a.sparseView();
    a_dag_ = ComplexMatrix(ops_.a.adjoint()).sparseView();
    b_ = ops_.b.sparseView();
    b_dag_ = ComplexMatrix(ops_.b.adjoint()).sparseView();
    c_ = ops_.c.sparseView();
    c_dag_ = ComplexMatrix(ops_.c.adjoint()).sparseView();
    n_a_ = number_diagonal(space, Mode::Optical);
    n_b_ = number_diagonal(space, Mode::Mechanical);
    n_c_ = number_diagonal(space, Mode::Electrical);
    b_b_dag_ = raised_diagonal(space, Mode::Mechanical);
    c_c_dag_ = raised_diagonal(space, Mode::Electrical);
}

ComplexMatrix LindbladGenerator::explicit_part(const ComplexMatrix& x, double t) const
{
    const Complex minus_i(0.0, -1.0);
    const double g = squeezing_strength(t);
    const double nb = params_.n_th_b.at(t);
    const double nc = params_.n_th_c.at(t);
    const double r_b = params_.kappa_m * (1.0 + nb);
    const double r_bd = params_.kappa_m * nb;
    const double r_c = params_.kappa_e_c + params_.kappa_e_i * (1.0 + nc);
    const double r_cd = params_.kappa_e_i * nc;

    ComplexMatrix y = (minus_i * params_.g_em) * (beam_splitter_ * x);
    y -= (minus_i * params_.g_em) * (x * beam_splitter_);
    if (g != 0.0) {
        y += (minus_i * g) * (squeezing_ * x);
        y -= (minus_i * g) * (x * squeezing_);
    }
    if (r_b != 0.0) y += r_b * (ComplexMatrix(b_ * x) * b_dag_);
    if (r_bd != 0.0) y += r_bd * (ComplexMatrix(b_dag_ * x) * b_);
    if (r_c != 0.0) y += r_c * (ComplexMatrix(c_ * x) * c_dag_);
    if (r_cd != 0.0) y += r_cd * (ComplexMatrix(c_dag_ * x) * c_);

    const Eigen::VectorXd half_gamma = 0.5 * (r_b * n_b_ + r_bd * b_b_dag_ + r_c * n_c_ + r_cd * c_c_dag_);
    const Eigen::Index d = x.rows();
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index i = 0; i < d; ++i) y(i, j) -= (half_gamma(i) + half_gamma(j)) * x(i, j);
    return y;
}

ComplexMatrix LindbladGenerator::optical_damping(const ComplexMatrix& x) const
{
    const double k = params_.kappa_o();
    ComplexMatrix y = k * (ComplexMatrix(a_ * x) * a_dag_);
    const Eigen::Index d = x.rows();
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index i = 0; i < d; ++i) y(i, j) -= 0.5 * k * (n_a_(i) + n_a_(j)) * x(i, j);
    return y;
}

ComplexMatrix LindbladGenerator::operator()(const ComplexMatrix& x, double t) const
{
    return explicit_part(x, t) + optical_damping(x);
}

CoherenceSupport CoherenceSupport::of(const ComplexMatrix& x, const FockSpace& space)
{
    const std::vector<int> q = excitation_balance(space);
    std::vector<int> shifts;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            if (x(i, j) == Complex(0.0, 0.0)) continue;
            const int s = q[static_cast<std::size_t>(i)] - q[static_cast<std::size_t>(j)];
            if (std::find(shifts.begin(), shifts.end(), s) == shifts.end()) shifts.push_back(s);
        }
    std::sort(shifts.begin(), shifts.end());
    return {false, std::move(shifts)};
}

bool CoherenceSupport::contains(int s) const
{
    return every || std::find(shifts.begin(), shifts.end(), s) != shifts.end();
}

CoherenceSupport CoherenceSupport::shifted(int by) const
{
    if (every) return *this;
    CoherenceSupport out{false, shifts};
    for (int& s : out.shifts) s += by;
    return out;
}

CoherenceSupport CoherenceSupport::merged(const CoherenceSupport& other) const
{
    if (every || other.every) return all();
    CoherenceSupport out{false, shifts};
    for (int s : other.shifts)
        if (!out.contains(s)) out.shifts.push_back(s);
    std::sort(out.shifts.begin(), out.shifts.end());
    return out;
}

Propagator::Propagator(const FockSpace& space, const SystemParams& params, const PumpPulse& pulse, double dt,
                       CoherenceSupport support)
    : params_(params), pulse_(pulse), space_(space), support_(std::move(support)), dt_(dt)
{
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("propagator step must be finite and > 0");
    params_.validate();
    pulse_.validate();
    const quantum::ModeOperators ops = quantum::build_mode_operators(space);
    const int d = static_cast<int>(space.dimension());
    const std::vector<int> q = excitation_balance(space);

    position_.assign(static_cast<std::size_t>(d) * static_cast<std::size_t>(d), -1);
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < d; ++i) {
            if (!support_.contains(q[static_cast<std::size_t>(i)] - q[static_cast<std::size_t>(j)])) continue;
            position_[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * d] = static_cast<int>(rows_.size());
            if (i == j) diagonal_.push_back(static_cast<int>(rows_.size()));
            rows_.push_back(i);
            cols_.push_back(j);
        }
    const auto n = static_cast<Eigen::Index>(rows_.size());

    using ColSparse = Eigen::SparseMatrix<Complex>;
    auto sparse = [](const ComplexMatrix& m) { return ColSparse(m.sparseView()); };
    const ColSparse identity = sparse(ComplexMatrix::Identity(d, d));
    auto at = [&](int i, int j) { return position_[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * d]; };

    // coef * A X B on the kept elements.
    using Triplets = std::vector<Eigen::Triplet<Complex>>;
    auto add_term = [&](Triplets& out, Complex coef, const ColSparse& a, const ColSparse& b) {
        for (int j = 0; j < d; ++j)
            for (ColSparse::InnerIterator ib(b, j); ib; ++ib) {
                const int l = static_cast<int>(ib.row());
                for (int k = 0; k < d; ++k)
                    for (ColSparse::InnerIterator ia(a, k); ia; ++ia) {
                        const int i = static_cast<int>(ia.row());
                        const int dst = at(i, j);
                        const int src = at(k, l);
                        if (dst >= 0 && src >= 0) out.emplace_back(dst, src, coef * ia.value() * ib.value());
                    }
            }
    };
    auto add_commutator = [&](Triplets& out, Complex coef, const ColSparse& h) {
        add_term(out, coef, h, identity);
        add_term(out, -coef, identity, h);
    };
    auto add_dissipator = [&](Triplets& out, double rate, const ComplexMatrix& l) {
        if (rate == 0.0) return;
        const ComplexMatrix ldl = l.adjoint() * l;
        add_term(out, rate, sparse(l), sparse(l.adjoint()));
        add_term(out, -0.5 * rate, sparse(ldl), identity);
        add_term(out, -0.5 * rate, identity, sparse(ldl));
    };
    auto build = [&](const Triplets& t) {
        Sparse m(n, n);
        m.setFromTriplets(t.begin(), t.end());
        return m;
    };

    const Complex minus_i(0.0, -1.0);
    const ComplexMatrix beam_splitter = -(ops.b.adjoint() * ops.c + ops.b * ops.c.adjoint());
    const ComplexMatrix squeezing = -(ops.a.adjoint() * ops.b.adjoint() + ops.a * ops.b);
    const ComplexMatrix b_dag = ops.b.adjoint();
    const ComplexMatrix c_dag = ops.c.adjoint();

    Triplets t;
    add_commutator(t, minus_i * params_.g_em, sparse(beam_splitter));
    add_dissipator(t, params_.kappa_m, ops.b);
    add_dissipator(t, params_.kappa_e(), ops.c);
    coupling_ = build(t);

    t.clear();
    add_commutator(t, minus_i, sparse(squeezing));
    squeezing_ = build(t);

    t.clear();
    add_dissipator(t, params_.kappa_m, ops.b);
    add_dissipator(t, params_.kappa_m, b_dag);
    thermal_b_ = build(t);

    t.clear();
    add_dissipator(t, params_.kappa_e_i, ops.c);
    add_dissipator(t, params_.kappa_e_i, c_dag);
    thermal_c_ = build(t);

    t.clear();
    add_dissipator(t, params_.kappa_o(), ops.a);
    optical_ = build(t);

    // Optical damping on the optical index pairs (n, m), p = n * L + m:
    // (S x)_{nm} = kappa_o [sqrt((n+1)(m+1)) x_{n+1,m+1} - (n+m)/2 x_{nm}].
    const int levels = static_cast<int>(space.levels(Mode::Optical));
    const int block = static_cast<int>(space.levels(Mode::Mechanical) * space.levels(Mode::Electrical));
    const Eigen::Index k = levels * levels;
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(k, k);
    const double kappa = params_.kappa_o();
    for (int na = 0; na < levels; ++na)
        for (int ma = 0; ma < levels; ++ma) {
            const Eigen::Index p = na * levels + ma;
            s(p, p) = -0.5 * kappa * (na + ma);
            if (na + 1 < levels && ma + 1 < levels)
                s(p, (na + 1) * levels + (ma + 1)) = kappa * std::sqrt((na + 1.0) * (ma + 1.0));
        }

    // exp of [[hS, I, 0, 0], [0, 0, I, 0], [0, 0, 0, I], [0, 0, 0, 0]] has top block row
    // [e^{hS}, phi1(hS), phi2(hS), phi3(hS)].
    auto phi_functions = [&](double h) {
        Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(4 * k, 4 * k);
        aug.block(0, 0, k, k) = h * s;
        for (int b = 0; b < 3; ++b) aug.block(b * k, (b + 1) * k, k, k).setIdentity();
        const Eigen::MatrixXd e = aug.exp();
        return std::array<Eigen::MatrixXd, 4>{e.block(0, 0, k, k), e.block(0, k, k, k), e.block(0, 2 * k, k, k),
                                              e.block(0, 3 * k, k, k)};
    };

    // Lifts a pair-space matrix to the kept elements. Only pairs with
    // n' - n = m' - m >= 0 couple; anything else is round-off.
    auto lift = [&](const Eigen::MatrixXd& m) {
        Triplets out;
        for (Eigen::Index e = 0; e < n; ++e) {
            const int i = rows_[static_cast<std::size_t>(e)];
            const int j = cols_[static_cast<std::size_t>(e)];
            const int na = i / block;
            const int ma = j / block;
            for (int shift = 0; na + shift < levels && ma + shift < levels; ++shift) {
                const double v = m(na * levels + ma, (na + shift) * levels + (ma + shift));
                const int src = at(i + shift * block, j + shift * block);
                if (v != 0.0 && src >= 0) out.emplace_back(static_cast<int>(e), src, Complex(v, 0.0));
            }
        }
        return build(out);
    };

    const auto full = phi_functions(dt);
    const auto half = phi_functions(0.5 * dt);
    const Eigen::MatrixXd& p1h = half[1];
    const Eigen::MatrixXd& p2h = half[2];
    const Eigen::MatrixXd& p3h = half[3];
    const Eigen::MatrixXd& p1f = full[1];
    const Eigen::MatrixXd& p2f = full[2];
    const Eigen::MatrixXd& p3f = full[3];
    const Eigen::MatrixXd a52 = 0.5 * p2h - p3f + 0.25 * p2f - 0.5 * p3h;
    const Eigen::MatrixXd a54 = 0.25 * p2h - a52;
    exp_full_ = lift(full[0]);
    exp_half_ = lift(half[0]);
    a21_ = lift(0.5 * p1h);
    a31_ = lift(0.5 * p1h - p2h);
    a32_ = lift(p2h);
    a41_ = lift(p1f - 2.0 * p2f);
    a42_ = lift(p2f);
    a51_ = lift(0.5 * p1h - 2.0 * a52 - a54);
    a52_ = lift(a52);
    a54_ = lift(a54);
    b1_ = lift(p1f - 3.0 * p2f + 4.0 * p3f);
    b4_ = lift(4.0 * p3f - p2f);
    b5_ = lift(4.0 * p2f - 8.0 * p3f);
}

Propagator::Vector Propagator::gather(const ComplexMatrix& x) const
{
    check_dimension(x, space_, "matrix");
    const auto d = static_cast<std::size_t>(x.rows());
    Vector v(static_cast<Eigen::Index>(size()));
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t i = 0; i < d; ++i) {
            const int p = position_[i + j * d];
            const Complex value = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (p >= 0)
                v(p) = value;
            else if (value != Complex(0.0, 0.0))
                throw std::invalid_argument("matrix has entries outside the propagator's coherence support");
        }
    return v;
}

ComplexMatrix Propagator::scatter(const Vector& v) const
{
    const auto d = static_cast<Eigen::Index>(space_.dimension());
    ComplexMatrix x = ComplexMatrix::Zero(d, d);
    for (std::size_t e = 0; e < rows_.size(); ++e) x(rows_[e], cols_[e]) = v(static_cast<Eigen::Index>(e));
    return x;
}

Propagator::Vector Propagator::explicit_part(const Vector& v, double t) const
{
    Vector y = coupling_ * v;
    const double g = pulse_.squeezing_strength(t, params_.g_0);
    const double nb = params_.n_th_b.at(t);
    const double nc = params_.n_th_c.at(t);
    if (g != 0.0) y.noalias() += g * (squeezing_ * v);
    if (nb != 0.0) y.noalias() += nb * (thermal_b_ * v);
    if (nc != 0.0) y.noalias() += nc * (thermal_c_ * v);
    return y;
}

Propagator::Vector Propagator::optical_damping(const Vector& v) const { return optical_ * v; }

void Propagator::step(Vector& u, double t) const
{
    const double h = dt_;
    const Vector half_u = exp_half_ * u;
    const Vector full_u = exp_full_ * u;

    const Vector n1 = explicit_part(u, t);
    Vector s = half_u;
    s.noalias() += h * (a21_ * n1);
    const Vector n2 = explicit_part(s, t + 0.5 * h);

    s = half_u;
    s.noalias() += h * (a31_ * n1);
    s.noalias() += h * (a32_ * n2);
    const Vector n3 = explicit_part(s, t + 0.5 * h);

    const Vector n23 = n2 + n3;
    s = full_u;
    s.noalias() += h * (a41_ * n1);
    s.noalias() += h * (a42_ * n23);
    const Vector n4 = explicit_part(s, t + h);

    s = half_u;
    s.noalias() += h * (a51_ * n1);
    s.noalias() += h * (a52_ * n23);
    s.noalias() += h * (a54_ * n4);
    const Vector n5 = explicit_part(s, t + 0.5 * h);

    Vector next = full_u;
    next.noalias() += h * (b1_ * n1);
    next.noalias() += h * (b4_ * n4);
    next.noalias() += h * (b5_ * n5);
    u = std::move(next);
}

void Propagator::step(ComplexMatrix& x, double t) const
{
    Vector v = gather(x);
    step(v, t);
    x = scatter(v);
}

Complex Propagator::trace(const Vector& v) const
{
    Complex s(0.0, 0.0);
    for (int p : diagonal_) s += v(p);
    return s;
}

Complex Propagator::expectation(const ComplexMatrix& op, const Vector& v) const
{
    Complex s(0.0, 0.0);
    for (std::size_t e = 0; e < rows_.size(); ++e) s += op(cols_[e], rows_[e]) * v(static_cast<Eigen::Index>(e));
    return s;
}

double Propagator::hermiticity_error(const Vector& v) const
{
    const auto d = space_.dimension();
    double worst = 0.0;
    for (std::size_t e = 0; e < rows_.size(); ++e) {
        const int mirror = position_[static_cast<std::size_t>(cols_[e]) + static_cast<std::size_t>(rows_[e]) * d];
        const Complex other = mirror >= 0 ? std::conj(v(mirror)) : Complex(0.0, 0.0);
        worst = std::max(worst, std::abs(v(static_cast<Eigen::Index>(e)) - other));
    }
    return worst;
}

const DensityOperator* EvolutionResult::state_at(std::size_t grid_index) const
{
    const auto it = std::lower_bound(state_indices.begin(), state_indices.end(), grid_index);
    if (it == state_indices.end() || *it != grid_index) return nullptr;
    return &states[static_cast<std::size_t>(it - state_indices.begin())];
}

double EvolutionResult::track(const std::string& name, std::size_t grid_index) const
{
    const auto it = std::lower_bound(sample_indices.begin(), sample_indices.end(), grid_index);
    if (it == sample_indices.end() || *it != grid_index)
        throw std::out_of_range("grid index " + std::to_string(grid_index) + " is not a stored point");
    return tracks.at(name).at(static_cast<std::size_t>(it - sample_indices.begin()));
}

ComplexMatrix lindblad_rhs(const DensityOperator& rho, double t, const SystemParams& params, const PumpPulse& pulse)
{
    check_dimension(rho.matrix, rho.space, "density matrix");
    const LindbladGenerator gen(rho.space, params, pulse);
    return gen(rho.matrix, t);
}

Complex trace_product(const ComplexMatrix& op, const ComplexMatrix& x)
{
    return op.transpose().cwiseProduct(x).sum();
}

EvolutionResult propagate(const DensityOperator& rho0, const TimeGrid& grid, const SystemParams& params,
                          const PumpPulse& pulse, const PropagateOptions& options)
{
    grid.validate();
    check_dimension(rho0.matrix, rho0.space, "initial density matrix");
    if (options.stride < 1) throw std::invalid_argument("stride must be >= 1");
    const double dt = grid.dt();
    if (options.enforce_step_rule) {
        const double limit = max_time_step(params, pulse);
        if (dt > limit * (1.0 + 1e-9))
            throw StepSizeTooLarge("time step " + format_seconds(dt) + " exceeds the stable limit " +
                                   format_seconds(limit));
    }

    const auto& space = rho0.space;
    const Propagator prop(space, params, pulse, dt, CoherenceSupport::of(rho0.matrix, space));
    const quantum::ModeOperators ops = quantum::build_mode_operators(space);
    const ComplexMatrix n_a = ops.a.adjoint() * ops.a;
    const ComplexMatrix n_b = ops.b.adjoint() * ops.b;
    const ComplexMatrix n_c = ops.c.adjoint() * ops.c;
    const ComplexMatrix ca = ops.c * ops.a;

    EvolutionResult out;
    out.grid = grid;
    out.stride = options.stride;
    auto& tr_n_a = out.tracks["n_a"];
    auto& tr_n_b = out.tracks["n_b"];
    auto& tr_n_c = out.tracks["n_c"];
    auto& tr_trace = out.tracks["trace"];
    auto& tr_ca = out.complex_tracks["ca"];
    out.diagnostics.min_eigenvalue = std::numeric_limits<double>::infinity();

    Propagator::Vector v = prop.gather(rho0.matrix);
    const Complex trace0 = prop.trace(v);

    auto record = [&](std::size_t k) {
        const double t = grid.time(k);
        out.sample_indices.push_back(k);
        tr_n_a.push_back(prop.expectation(n_a, v).real());
        tr_n_b.push_back(prop.expectation(n_b, v).real());
        tr_n_c.push_back(prop.expectation(n_c, v).real());
        tr_trace.push_back(prop.trace(v).real());
        tr_ca.push_back(prop.expectation(ca, v));
        auto& diag = out.diagnostics;
        diag.max_hermiticity_error = std::max(diag.max_hermiticity_error, prop.hermiticity_error(v));
        const bool in_window = !options.state_window || (t >= options.state_window->first - 1e-6 * dt &&
                                                         t <= options.state_window->second + 1e-6 * dt);
        const bool keep = options.store_states && in_window;
        if (!keep && !options.check_positivity) return;
        DensityOperator state{prop.scatter(v), space};
        if (options.check_positivity) diag.min_eigenvalue = std::min(diag.min_eigenvalue, state.min_eigenvalue());
        if (keep) {
            out.state_indices.push_back(k);
            out.states.push_back(std::move(state));
        }
    };

    record(0);
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        prop.step(v, grid.time(k));
        const double drift = std::abs(prop.trace(v) - trace0);
        out.diagnostics.max_trace_drift = std::max(out.diagnostics.max_trace_drift, drift);
        if (!(drift <= options.trace_tolerance)) {
            std::ostringstream os;
            os << "trace drifted by " << std::setprecision(3) << drift << " at t = " << format_seconds(grid.time(k + 1));
            throw StepSizeTooLarge(os.str());
        }
        if ((k + 1) % options.stride == 0 || k + 1 == grid.n_steps) record(k + 1);
    }
    if (!options.check_positivity) out.diagnostics.min_eigenvalue = std::nan("");
    return out;
}

namespace {

ComplexMatrix conditional_operator(const ComplexMatrix& rho_t, const ComplexMatrix& left, const ComplexMatrix& right)
{
    using Sparse = Eigen::SparseMatrix<Complex>;
    ComplexMatrix x = Sparse(right.sparseView()) * rho_t;
    if (!left.isIdentity(0.0)) x = x * Sparse(left.sparseView());
    return x;
}

} // namespace

std::vector<Complex> regression_correlator(const Propagator& propagator, const ComplexMatrix& rho_t, double t,
                                           std::size_t n_tau, const ComplexMatrix& left, const ComplexMatrix& right,
                                           const ComplexMatrix& probe)
{
    const auto& space = propagator.space();
    check_dimension(rho_t, space, "density matrix");
    check_dimension(left, space, "left operator");
    check_dimension(right, space, "right operator");
    check_dimension(probe, space, "probe operator");

    Propagator::Vector v = propagator.gather(conditional_operator(rho_t, left, right));
    std::vector<Complex> out;
    out.reserve(n_tau + 1);
    out.push_back(propagator.expectation(probe, v));
    for (std::size_t k = 0; k < n_tau; ++k) {
        propagator.step(v, t + static_cast<double>(k) * propagator.dt());
        out.push_back(propagator.expectation(probe, v));
    }
    return out;
}

std::vector<Complex> regression_correlator(const DensityOperator& rho_t, double t, const TimeGrid& tau_grid,
                                           const ComplexMatrix& left, const ComplexMatrix& right,
                                           const ComplexMatrix& probe, const SystemParams& params,
                                           const PumpPulse& pulse)
{
    tau_grid.validate();
    check_dimension(rho_t.matrix, rho_t.space, "density matrix");
    check_dimension(left, rho_t.space, "left operator");
    check_dimension(right, rho_t.space, "right operator");
    if (std::abs(tau_grid.t_start) > 1e-6 * tau_grid.dt()) throw GridMismatch("delay grid must start at tau = 0");
    const double limit = max_time_step(params, pulse);
    if (tau_grid.dt() > limit * (1.0 + 1e-9))
        throw StepSizeTooLarge("delay step " + format_seconds(tau_grid.dt()) + " exceeds the stable limit " +
                               format_seconds(limit));
    const ComplexMatrix x0 = conditional_operator(rho_t.matrix, left, right);
    const Propagator prop(rho_t.space, params, pulse, tau_grid.dt(), CoherenceSupport::of(x0, rho_t.space));
    return regression_correlator(prop, rho_t.matrix, t, tau_grid.n_steps, left, right, probe);
}

} // namespace eopulse::dynamics
