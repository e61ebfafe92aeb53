// Direct RK4 integration of dT/dt = b' g(t) + d - a T (time in microseconds),
// independent of the closed-form convolution.

#pragma once

#include <cmath>
#include <vector>

namespace oracle {

struct HeatingOde {
    double a, b_prime, d, T0;
    double t0_us, sigma_us; // g(t) = exp(-(t - t0)^2 / (2 sigma^2)); sigma <= 0 means g = 0

    double drive(double t) const
    {
        if (sigma_us <= 0.0) return 0.0;
        const double x = (t - t0_us) / sigma_us;
        return std::exp(-0.5 * x * x);
    }

    double rhs(double t, double T) const { return b_prime * drive(t) + d - a * T; }

    // Temperatures at the `n_out + 1` points k * t_end / n_out, integrating with
    // `substeps` RK4 steps between output points.
    std::vector<double> solve(double t_end, std::size_t n_out, std::size_t substeps) const
    {
        std::vector<double> out{T0};
        const double h = t_end / static_cast<double>(n_out * substeps);
        double T = T0;
        for (std::size_t k = 0; k < n_out * substeps; ++k) {
            const double t = static_cast<double>(k) * h;
            const double k1 = rhs(t, T);
            const double k2 = rhs(t + 0.5 * h, T + 0.5 * h * k1);
            const double k3 = rhs(t + 0.5 * h, T + 0.5 * h * k2);
            const double k4 = rhs(t + h, T + h * k3);
            T += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if ((k + 1) % substeps == 0) out.push_back(T);
        }
        return out;
    }
};

} // namespace oracle
