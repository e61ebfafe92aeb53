// Least-squares recovery of the heating composites from a sampled curve.
//
// The model is linear in (b', d, T0) once a is fixed, so starts come from a
// log-spaced scan over a with a linear solve at each point; Levenberg-Marquardt
// then refines all four together.

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>

#include "eopulse/errors.hpp"
#include "eopulse/heating.hpp"

namespace eopulse::heating {

namespace {

struct Design {
    Eigen::VectorXd t_us;
    Eigen::VectorXd kelvin;
    PulseShape shape;
};

// Columns d T / d(b', d, T0) at fixed a.
Eigen::MatrixXd linear_columns(const Design& data, double a)
{
    const auto n = data.t_us.size();
    Eigen::MatrixXd m(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double t = data.t_us(i);
        const double decay = std::exp(-a * t);
        m(i, 0) = heat_response(t, a, data.shape);
        m(i, 1) = -std::expm1(-a * t) / a;
        m(i, 2) = decay;
    }
    return m;
}

struct ResidualFunctor {
    using Scalar = double;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;

    const Design* data;

    int inputs() const { return 4; }
    int values() const { return static_cast<int>(data->t_us.size()); }

    // x = (a, b', d, T0)
    int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& residual) const
    {
        if (!(x(0) > 0.0)) {
            residual.setConstant(values(), 1e6);
            return 0;
        }
        residual = linear_columns(*data, x(0)) * x.tail<3>() - data->kelvin;
        return 0;
    }

    int df(const Eigen::VectorXd& x, Eigen::MatrixXd& jac) const
    {
        const double a = x(0) > 0.0 ? x(0) : 1e-12;
        jac.resize(values(), 4);
        jac.rightCols<3>() = linear_columns(*data, a);
        // The a-derivative of the Gaussian response has no tidy form; a central
        // difference at relative step 1e-6 is accurate to ~1e-11 here.
        const double h = 1e-6 * a;
        const Eigen::VectorXd up = linear_columns(*data, a + h) * x.tail<3>();
        const Eigen::VectorXd down = linear_columns(*data, a - h) * x.tail<3>();
        jac.col(0) = (up - down) / (2.0 * h);
        return 0;
    }
};

} // namespace

FitResult fit_params(const TemperatureCurve& samples, const PulseShape& shape, const HeatingParams& base)
{
    if (samples.time_s.size() != samples.kelvin.size())
        throw std::invalid_argument("curve times and temperatures differ in length");
    if (samples.size() < 8) throw std::invalid_argument("fit needs at least 8 samples");
    if (!(shape.sigma_us > 0.0)) throw std::invalid_argument("pulse sigma must be > 0");

    Design data;
    data.shape = shape;
    const auto n = static_cast<Eigen::Index>(samples.size());
    data.t_us.resize(n);
    data.kelvin.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        data.t_us(i) = samples.time_s[static_cast<std::size_t>(i)] / kMicrosecond;
        data.kelvin(i) = samples.kelvin[static_cast<std::size_t>(i)];
    }
    const double span = data.t_us.maxCoeff() - data.t_us.minCoeff();
    if (!(span > 0.0)) throw std::invalid_argument("fit samples span zero time");

    const double mean = data.kelvin.mean();
    const double variance = (data.kelvin.array() - mean).square().mean();

    ResidualFunctor functor{&data};
    Eigen::VectorXd best;
    double best_cost = std::numeric_limits<double>::infinity();
    int evaluations = 0;

    // Rates from 1e-2 to 1e3 per sample span cover every shape the data can resolve.
    constexpr int kScan = 25;
    for (int k = 0; k < kScan; ++k) {
        const double a = std::pow(10.0, -2.0 + 5.0 * k / (kScan - 1)) / span;
        const Eigen::MatrixXd m = linear_columns(data, a);
        const Eigen::Vector3d lin = m.colPivHouseholderQr().solve(data.kelvin);
        Eigen::VectorXd x(4);
        x << a, lin;

        Eigen::LevenbergMarquardt<ResidualFunctor> lm(functor);
        lm.parameters.ftol = 1e-15;
        lm.parameters.xtol = 1e-15;
        lm.parameters.gtol = 0.0;
        lm.parameters.maxfev = 4000;
        lm.minimize(x);
        evaluations += static_cast<int>(lm.nfev);

        Eigen::VectorXd r(n);
        functor(x, r);
        const double cost = r.squaredNorm();
        if (x(0) > 0.0 && std::isfinite(cost) && cost < best_cost) {
            best_cost = cost;
            best = x;
        }
    }
    if (best.size() == 0) throw FitDiverged("no start converged to a positive cooling rate");

    FitResult out;
    out.params = base;
    out.params.a = best(0);
    out.params.b_prime = best(1);
    out.params.d = best(2);
    out.params.T0 = best(3);
    out.residual_norm = std::sqrt(best_cost);
    out.input_variance = variance;
    out.evaluations = evaluations;

    if (variance > 0.0 && best_cost / static_cast<double>(n) > variance)
        throw FitDiverged("fit residual exceeds the input variance");

    // Column-scaled Jacobian conditioning decides identifiability.
    Eigen::MatrixXd jac;
    functor.df(best, jac);
    for (Eigen::Index c = 0; c < jac.cols(); ++c) {
        const double norm = jac.col(c).norm();
        if (norm > 0.0) jac.col(c) /= norm;
    }
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(jac).singularValues();
    const double scale = std::max(data.kelvin.cwiseAbs().maxCoeff(), 1e-300);
    const double pulse_swing = std::abs(best(1)) * linear_columns(data, best(0)).col(0).cwiseAbs().maxCoeff();
    out.degenerate = variance == 0.0 || !(sv(sv.size() - 1) > 1e-8 * sv(0)) || pulse_swing < 1e-9 * scale;
    return out;
}

} // namespace eopulse::heating
