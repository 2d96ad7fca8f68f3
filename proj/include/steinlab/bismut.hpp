// Bismut weight integrals along a flow bundle and Monte Carlo verifiers for
// the integration-by-parts and Bismut-Elworthy-Li identities. All stochastic
// integrals use the left endpoint of each step.
#pragma once

#include "steinlab/common.hpp"
#include "steinlab/flows.hpp"
#include "steinlab/test_function.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace steinlab {

inline void require_weight_horizon(const FlowBundle& b, double t) {
    if (t <= 0) throw std::invalid_argument("bismut weight: t must be positive");
    if (std::abs(t - b.grid.horizon) > 1e-12 * std::max(1.0, t))
        throw std::invalid_argument("bismut weight: t must equal the bundle horizon");
    if (t < 4.0 * b.grid.dt())
        throw std::invalid_argument("bismut weight: t < 4 dt; refine the grid for small horizons");
}

// I_u(t) = (1 / (sqrt(2) t)) * sum_k <var1_k, dB_k>
inline double weight_first(const FlowBundle& b, double t) {
    require_weight_horizon(b, t);
    KahanSum s;
    for (int k = 0; k < b.grid.steps; ++k) s.add(b.var1.col(k).dot(b.noise.increments.col(k)));
    return s.value() / (kSqrt2 * t);
}

inline double weight_first_var2(const FlowBundle& b, double t) {
    require_weight_horizon(b, t);
    if (!b.has_var2()) throw std::invalid_argument("weight_first_var2: bundle lacks var2");
    KahanSum s;
    for (int k = 0; k < b.grid.steps; ++k) s.add(b.var2.col(k).dot(b.noise.increments.col(k)));
    return s.value() / (kSqrt2 * t);
}

// D_{V2} I_{u1}(t): Ito part over the Malliavin flow plus the Lebesgue term
// (1 / 2t^2) int <var1, var2> ds (trapezoidal).
inline double weight_malliavin(const FlowBundle& b, double t) {
    require_weight_horizon(b, t);
    if (!b.has_malliavin() || !b.has_var2())
        throw std::invalid_argument("weight_malliavin: bundle lacks the Malliavin or var2 flow");
    KahanSum ito, leb;
    const int m = b.grid.steps;
    for (int k = 0; k < m; ++k) ito.add(b.malliavin.col(k).dot(b.noise.increments.col(k)));
    for (int k = 0; k <= m; ++k) {
        double w = (k == 0 || k == m) ? 0.5 : 1.0;
        leb.add(w * b.var1.col(k).dot(b.var2.col(k)));
    }
    return ito.value() / (kSqrt2 * t) + leb.value() * b.grid.dt() / (2.0 * t * t);
}

struct WeightSet {
    double i_u1 = 0;
    double i_u2 = 0;
    double dv2_i_u1 = 0;
    double i_u1_u2 = 0;  // = i_u1 * i_u2 - dv2_i_u1 by definition
    double t = 0;
};

inline WeightSet compute_weights(const FlowBundle& b, double t) {
    WeightSet w;
    w.t = t;
    w.i_u1 = weight_first(b, t);
    w.i_u2 = weight_first_var2(b, t);
    w.dv2_i_u1 = weight_malliavin(b, t);
    w.i_u1_u2 = w.i_u1 * w.i_u2 - w.dv2_i_u1;
    return w;
}

inline double weight_second(const FlowBundle& b, double t) {
    return weight_first(b, t) * weight_first_var2(b, t) - weight_malliavin(b, t);
}

struct IdentityCheck {
    std::string check;
    double lhs = 0;
    double rhs = 0;
    double se = 0;  // standard error of the paired difference (common noise)
    bool pass = false;
};

inline IdentityCheck finish_check(std::string name, std::span<const double> lhs, std::span<const double> rhs) {
    IdentityCheck c;
    c.check = std::move(name);
    c.lhs = mean_se(lhs).mean;
    c.rhs = mean_se(rhs).mean;
    std::vector<double> diff(lhs.size());
    for (std::size_t i = 0; i < lhs.size(); ++i) diff[i] = lhs[i] - rhs[i];
    auto d = mean_se(diff);
    c.se = d.se;
    c.pass = std::abs(d.mean) <= 3.0 * d.se + 1e-12;
    return c;
}

struct McOptions {
    std::size_t replicas = 100000;
    std::uint64_t seed = 0;
    unsigned workers = 0;  // 0 = default_workers()

    unsigned resolved_workers() const { return workers == 0 ? default_workers() : workers; }
};

// E[<grad h(X_t), D_V X_t>] vs E[h(X_t) int <v, dB>], with D_V X realized as
// the first variation and the pairing weight equal to I_u(t). Common noise
// across both sides.
inline IdentityCheck verify_ibp(const DriftModel& model, const Vec& x0, const TimeGrid& grid,
                                const TestFunction& h, const Vec& u, const McOptions& opt) {
    if (opt.replicas < 1000) throw std::invalid_argument("verify_ibp: need at least 1e3 replicas");
    const std::size_t n = opt.replicas;
    std::vector<double> lhs(n), rhs(n);
    CounterRng rng(opt.seed);
    parallel_for(n, opt.resolved_workers(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            auto noise = make_brownian_path(rng, r, grid, model.dim);
            Mat state = simulate_state(model, x0, grid, noise);
            Mat var1 = simulate_variation1(model, state, u, grid);
            FlowBundle b;
            b.grid = grid;
            b.var1 = var1;
            b.noise = noise;
            double iu = weight_first(b, grid.horizon);
            Vec xT = state.col(grid.steps);
            lhs[r] = h.grad(xT).dot(var1.col(grid.steps));
            rhs[r] = h.eval(xT) * iu;
        }
    });
    return finish_check("bismut_ibp", lhs, rhs);
}

struct BelCheck {
    IdentityCheck identity;   // finite difference vs Bismut weight
    double fd_value = 0, fd_se = 0;
    double bismut_value = 0, bismut_se = 0;
};

// Finite-difference directional derivative of x -> E h(X_t^x) against the
// Bismut-Elworthy-Li weight estimator, common noise everywhere.
inline BelCheck verify_bel(const DriftModel& model, const Vec& x0, const TimeGrid& grid,
                           const TestFunction& h, const Vec& u, double fd_eps, const McOptions& opt) {
    if (fd_eps < 1e-4 || fd_eps > 1e-2)
        throw std::invalid_argument("verify_bel: fd_eps must lie in [1e-4, 1e-2]");
    const std::size_t n = opt.replicas;
    std::vector<double> fd(n), bel(n);
    CounterRng rng(opt.seed);
    parallel_for(n, opt.resolved_workers(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            auto noise = make_brownian_path(rng, r, grid, model.dim);
            Mat plus = simulate_state(model, x0 + fd_eps * u, grid, noise);
            Mat minus = simulate_state(model, x0 - fd_eps * u, grid, noise);
            fd[r] = (h.eval(plus.col(grid.steps)) - h.eval(minus.col(grid.steps))) / (2.0 * fd_eps);
            Mat state = simulate_state(model, x0, grid, noise);
            Mat var1 = simulate_variation1(model, state, u, grid);
            FlowBundle b;
            b.grid = grid;
            b.var1 = var1;
            b.noise = noise;
            bel[r] = h.eval(state.col(grid.steps)) * weight_first(b, grid.horizon);
        }
    });
    BelCheck out;
    out.identity = finish_check("bismut_bel", fd, bel);
    auto f = mean_se(fd);
    auto bm = mean_se(bel);
    out.fd_value = f.mean;
    out.fd_se = f.se;
    out.bismut_value = bm.mean;
    out.bismut_se = bm.se;
    return out;
}

// E[grad_{u2} h(X_t) I_{u1}(t)] = E[h(X_t) I_{u2,u1}(t)], with the gradient
// transported by the flow: grad_{u2} h(X_t) = <grad h(X_t), grad_{u2} X_t>.
// By Hessian symmetry D_{V1} I_{u2} equals the Malliavin weight of the bundle.
inline IdentityCheck verify_second_order_identity(const DriftModel& model, const Vec& x0,
                                                  const TimeGrid& grid, const TestFunction& h, const Vec& u1,
                                                  const Vec& u2, const McOptions& opt) {
    const std::size_t n = opt.replicas;
    std::vector<double> lhs(n), rhs(n);
    CounterRng rng(opt.seed);
    parallel_for(n, opt.resolved_workers(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            auto noise = make_brownian_path(rng, r, grid, model.dim);
            auto b = make_flow_bundle(model, x0, grid, noise, u1, u2, {.malliavin = true});
            auto w = compute_weights(b, grid.horizon);
            Vec xT = b.state.col(grid.steps);
            lhs[r] = h.grad(xT).dot(b.var2.col(grid.steps)) * w.i_u1;
            rhs[r] = h.eval(xT) * (w.i_u2 * w.i_u1 - w.dv2_i_u1);
        }
    });
    return finish_check("second_order_bel", lhs, rhs);
}

struct MomentScaling {
    std::vector<double> t_values;
    std::vector<double> mean_abs_i;    // E|I_{u1}(t)|
    std::vector<double> mean_abs_dvi;  // E|D_{V2} I_{u1}(t)|
    std::vector<double> mean_abs_i2;   // E|I_{u1,u2}(t)|
    LineFit fit_i, fit_dvi, fit_i2;    // log-log exponents in t
};

// First-absolute-moment scaling of the three weights over a geometric t-grid.
inline MomentScaling weight_moment_scaling(const DriftModel& model, const Vec& x0, const Vec& u1,
                                           const Vec& u2, const std::vector<double>& t_values, double dt,
                                           const McOptions& opt) {
    MomentScaling out;
    out.t_values = t_values;
    const std::size_t n = opt.replicas;
    std::vector<double> ai(n), advi(n), ai2(n);
    for (std::size_t ti = 0; ti < t_values.size(); ++ti) {
        double t = t_values[ti];
        TimeGrid grid(t, std::max(8, static_cast<int>(std::lround(t / dt))));
        CounterRng rng(opt.seed + ti);
        parallel_for(n, opt.resolved_workers(), [&](std::size_t lo, std::size_t hi) {
            for (std::size_t r = lo; r < hi; ++r) {
                auto noise = make_brownian_path(rng, r, grid, model.dim);
                auto b = make_flow_bundle(model, x0, grid, noise, u1, u2, {.malliavin = true});
                auto w = compute_weights(b, t);
                ai[r] = std::abs(w.i_u1);
                advi[r] = std::abs(w.dv2_i_u1);
                ai2[r] = std::abs(w.i_u1_u2);
            }
        });
        out.mean_abs_i.push_back(mean_se(ai).mean);
        out.mean_abs_dvi.push_back(mean_se(advi).mean);
        out.mean_abs_i2.push_back(mean_se(ai2).mean);
    }
    out.fit_i = fit_loglog(out.t_values, out.mean_abs_i);
    out.fit_dvi = fit_loglog(out.t_values, out.mean_abs_dvi);
    out.fit_i2 = fit_loglog(out.t_values, out.mean_abs_i2);
    return out;
}

}  // namespace steinlab
