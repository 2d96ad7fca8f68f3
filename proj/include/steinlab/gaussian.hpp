// Quadrature oracle for the standard normal target (drift g(x) = -x): the
// heat-semigroup convolution form of the Stein solution,
//   f(x) = -int_0^inf { E[h(e^{-s} x + r(s) Z)] - E h(Z) } ds,
//   r(s) = sqrt(1 - e^{-2s}),
// with directional derivatives taken through the convolution. Serves as the
// independent reference for the Monte Carlo estimators; d <= 3.
#pragma once

#include "steinlab/common.hpp"
#include "steinlab/quadrature.hpp"
#include "steinlab/test_function.hpp"

#include <cmath>
#include <stdexcept>

namespace steinlab {

namespace detail {

// Expectation over Z ~ N(0, I_d). d = 1 uses adaptive quadrature so kinked
// integrands (h = |x|) keep full accuracy; d = 2, 3 use tensor Gauss-Hermite.
inline double normal_expectation(int d, const std::function<double(const Vec&)>& f) {
    if (d == 1) {
        Vec z(1);
        return integrate_adaptive(
            [&](double y) {
                z[0] = y;
                return f(z) * normal_pdf(y);
            },
            -9.0, 9.0, 1e-11);
    }
    if (d > 3) throw std::invalid_argument("gaussian oracle: d <= 3 only");
    return gauss_expectation(d, 48, f);
}

}  // namespace detail

inline double gaussian_oracle_mu(const TestFunction& h, int d) {
    return detail::normal_expectation(d, [&](const Vec& z) { return h.eval(z); });
}

inline double gaussian_oracle_value(const TestFunction& h, const Vec& x) {
    const int d = static_cast<int>(x.size());
    const double mu = gaussian_oracle_mu(h, d);
    auto integrand = [&](double s) {
        double r = std::sqrt(1.0 - std::exp(-2.0 * s));
        Vec center = std::exp(-s) * x;
        return detail::normal_expectation(d, [&](const Vec& z) { return h.eval(center + r * z); }) - mu;
    };
    double head = integrate_adaptive([&](double sig) { return sig == 0.0 ? 0.0 : 2.0 * sig * integrand(sig * sig); },
                                     0.0, 1.0, 1e-9);
    double tail = integrate_adaptive(integrand, 1.0, 45.0, 1e-9);
    return -(head + tail);
}

inline double gaussian_oracle_grad(const TestFunction& h, const Vec& x, const Vec& u) {
    const int d = static_cast<int>(x.size());
    auto integrand = [&](double s) {
        double r = std::sqrt(1.0 - std::exp(-2.0 * s));
        Vec center = std::exp(-s) * x;
        double conv =
            detail::normal_expectation(d, [&](const Vec& z) { return h.grad_dot(center + r * z, u); });
        return std::exp(-s) * conv;
    };
    double head = integrate_adaptive([&](double sig) { return sig == 0.0 ? 0.0 : 2.0 * sig * integrand(sig * sig); },
                                     0.0, 1.0, 1e-9);
    double tail = integrate_adaptive(integrand, 1.0, 45.0, 1e-9);
    return -(head + tail);
}

// Second derivative: one gradient falls on h, the other is integrated by
// parts onto the Gaussian kernel (score <Z, u2> / r).
inline double gaussian_oracle_hess(const TestFunction& h, const Vec& x, const Vec& u1, const Vec& u2) {
    const int d = static_cast<int>(x.size());
    auto integrand = [&](double s) {
        double r = std::sqrt(1.0 - std::exp(-2.0 * s));
        if (r == 0.0) return 0.0;
        Vec center = std::exp(-s) * x;
        double conv = detail::normal_expectation(
            d, [&](const Vec& z) { return h.grad_dot(center + r * z, u1) * z.dot(u2); });
        return std::exp(-2.0 * s) / r * conv;
    };
    double head = integrate_adaptive([&](double sig) { return sig == 0.0 ? 0.0 : 2.0 * sig * integrand(sig * sig); },
                                     0.0, 1.0, 1e-9);
    double tail = integrate_adaptive(integrand, 1.0, 45.0, 1e-9);
    return -(head + tail);
}

}  // namespace steinlab
