// Gauss-Hermite rules (Golub-Welsch), tensorized Gaussian expectations for
// d <= 3, and an adaptive Simpson integrator for the oracle time integrals.
#pragma once

#include "steinlab/common.hpp"

#include <functional>
#include <stdexcept>
#include <vector>

namespace steinlab {

struct QuadRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// Physicists' Gauss-Hermite: int e^{-y^2} f(y) dy ~ sum w_i f(y_i).
inline QuadRule gauss_hermite(int n) {
    if (n < 1) throw std::invalid_argument("gauss_hermite: need n >= 1");
    Mat jac = Mat::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        double b = std::sqrt(0.5 * k);
        jac(k - 1, k) = b;
        jac(k, k - 1) = b;
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(jac);
    QuadRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const double sqrt_pi = std::sqrt(kPi);
    for (int i = 0; i < n; ++i) {
        rule.nodes[i] = es.eigenvalues()[i];
        double v0 = es.eigenvectors()(0, i);
        rule.weights[i] = sqrt_pi * v0 * v0;
    }
    return rule;
}

// E[f(Z)] for Z ~ N(0, I_d), d <= 3, by a tensorized Gauss-Hermite rule.
inline double gauss_expectation(int d, int nodes_per_axis, const std::function<double(const Vec&)>& f) {
    if (d < 1 || d > 3) throw std::invalid_argument("gauss_expectation: d must be 1..3");
    QuadRule g = gauss_hermite(nodes_per_axis);
    const double norm = std::pow(kPi, -0.5 * d);
    Vec z(d);
    KahanSum acc;
    const int n = nodes_per_axis;
    const int total = d == 1 ? n : (d == 2 ? n * n : n * n * n);
    for (int idx = 0; idx < total; ++idx) {
        int rem = idx;
        double w = 1.0;
        for (int k = 0; k < d; ++k) {
            int i = rem % n;
            rem /= n;
            z[k] = kSqrt2 * g.nodes[i];
            w *= g.weights[i];
        }
        acc.add(w * f(z));
    }
    return norm * acc.value();
}

namespace detail {
inline double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa, double fm,
                          double fb, double whole, double tol, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}
}  // namespace detail

inline double integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                 double tol = 1e-10, int max_depth = 28) {
    if (a == b) return 0.0;
    double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return detail::simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

}  // namespace steinlab
