// Euler-Maruyama simulation of dX = g(X)dt + sqrt(2) dB together with the
// first/second variation flows and the Malliavin-derivative flow, all on one
// shared time grid. Brownian increments come from a counter-keyed dyadic
// bridge so that halving dt refines the same path instead of resampling it.
#pragma once

#include "steinlab/common.hpp"
#include "steinlab/model.hpp"
#include "steinlab/rng.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>

namespace steinlab {

struct TimeGrid {
    double horizon = 0;
    int steps = 0;

    TimeGrid() = default;
    TimeGrid(double t, int m) : horizon(t), steps(m) {
        if (t <= 0 || m <= 0) throw std::invalid_argument("TimeGrid: horizon and steps must be positive");
    }
    double dt() const { return horizon / steps; }
    double time(int k) const { return horizon * static_cast<double>(k) / steps; }
};

class SimulationDiverged : public std::runtime_error {
  public:
    SimulationDiverged(int step, double norm)
        : std::runtime_error("state diverged at step " + std::to_string(step) +
                             " (|X| = " + std::to_string(norm) + ")"),
          step_(step) {}
    int step() const { return step_; }

  private:
    int step_;
};

// Excursions beyond this radius are treated as a numerical failure of the
// explicit stepper, not dynamics; dissipative drifts keep paths far inside.
constexpr double kDivergenceRadius = 1e6;

struct BrownianPath {
    std::uint64_t seed = 0;
    std::uint64_t replica = 0;
    Mat increments;  // d x m, column k is the increment over [t_k, t_{k+1}]
};

// Dyadic-bridge construction: write m = m0 * 2^L with m0 odd, draw the m0
// coarse increments at level 0, then midpoint-refine L times. Grids with 2m
// steps share levels 0..L, so coarse increments are exact sums of fine ones.
inline BrownianPath make_brownian_path(const CounterRng& rng, std::uint64_t replica, const TimeGrid& grid,
                                       int dim) {
    const int m = grid.steps;
    int m0 = m, levels = 0;
    while (m0 % 2 == 0) {
        m0 /= 2;
        ++levels;
    }
    const std::uint64_t blocks = static_cast<std::uint64_t>((dim + 1) / 2);
    Mat w(dim, m + 1);
    w.col(0).setZero();
    Vec z(dim);
    const int stride0 = m / m0;
    const double h0 = grid.horizon / m0;
    for (int j = 0; j < m0; ++j) {
        rng.normal_vector(replica, rng_index(rng_tag::kBrownian, 0, static_cast<std::uint64_t>(j) * blocks), z);
        w.col((j + 1) * stride0) = w.col(j * stride0) + std::sqrt(h0) * z;
    }
    for (int level = 1; level <= levels; ++level) {
        const int stride = m / (m0 << level);        // spacing of new midpoints
        const int nmid = m0 << (level - 1);          // midpoints added at this level
        const double hparent = grid.horizon / nmid;  // parent interval length
        const double sd = 0.5 * std::sqrt(hparent);
        for (int j = 0; j < nmid; ++j) {
            rng.normal_vector(replica,
                              rng_index(rng_tag::kBrownian, static_cast<std::uint64_t>(level),
                                        static_cast<std::uint64_t>(j) * blocks),
                              z);
            int mid = (2 * j + 1) * stride;
            w.col(mid) = 0.5 * (w.col(mid - stride) + w.col(mid + stride)) + sd * z;
        }
    }
    BrownianPath path;
    path.seed = rng.seed();
    path.replica = replica;
    path.increments.resize(dim, m);
    for (int k = 0; k < m; ++k) path.increments.col(k) = w.col(k + 1) - w.col(k);
    return path;
}

// --- single-step kernels shared by the bundle builders and the streaming
// --- estimator loops

// X_{k+1} = X_k + g(X_k) dt + sqrt(2) dB_k
template <typename DB>
inline void em_state_step(const DriftModel& model, double dt, int k, const Vec& x, const DB& db, Vec& x_next,
                          Vec& gbuf) {
    model.drift(x, gbuf);
    x_next = x + dt * gbuf + kSqrt2 * db;
    double n = x_next.norm();
    if (!std::isfinite(n) || n > kDivergenceRadius) throw SimulationDiverged(k + 1, n);
}

// Heun step for v' = grad g(x(t)) v + phi(t) with phi given at both endpoints.
inline void heun_forced_step(const DriftModel& model, double dt, const Vec& x_k, const Vec& x_k1, const Vec& v,
                             const Vec& phi_k, const Vec& phi_k1, Vec& v_next, Vec& f1, Vec& f2, Vec& pred) {
    model.jacobian_action(x_k, v, f1);
    f1 += phi_k;
    pred = v + dt * f1;
    model.jacobian_action(x_k1, pred, f2);
    f2 += phi_k1;
    v_next = v + 0.5 * dt * (f1 + f2);
}

inline void heun_linear_step(const DriftModel& model, double dt, const Vec& x_k, const Vec& x_k1, const Vec& v,
                             Vec& v_next, Vec& f1, Vec& f2, Vec& pred) {
    model.jacobian_action(x_k, v, f1);
    pred = v + dt * f1;
    model.jacobian_action(x_k1, pred, f2);
    v_next = v + 0.5 * dt * (f1 + f2);
}

// --- whole-path simulators operating on stored paths

inline Mat simulate_state(const DriftModel& model, const Vec& x0, const TimeGrid& grid,
                          const BrownianPath& noise) {
    const int d = model.dim, m = grid.steps;
    if (x0.size() != d || noise.increments.rows() != d || noise.increments.cols() != m)
        throw std::invalid_argument("simulate_state: dimension mismatch");
    Mat state(d, m + 1);
    state.col(0) = x0;
    Vec g(d), x(d), xn(d);
    const double dt = grid.dt();
    for (int k = 0; k < m; ++k) {
        x = state.col(k);
        em_state_step(model, dt, k, x, noise.increments.col(k), xn, g);
        state.col(k + 1) = xn;
    }
    return state;
}

inline Mat simulate_variation1(const DriftModel& model, const Mat& state, const Vec& u, const TimeGrid& grid) {
    const int d = model.dim, m = grid.steps;
    if (state.cols() != m + 1) throw std::invalid_argument("simulate_variation1: state/grid mismatch");
    Mat var(d, m + 1);
    var.col(0) = u;
    Vec v(d), vn(d), f1(d), f2(d), pred(d), xk(d), xk1(d);
    const double dt = grid.dt();
    for (int k = 0; k < m; ++k) {
        v = var.col(k);
        xk = state.col(k);
        xk1 = state.col(k + 1);
        heun_linear_step(model, dt, xk, xk1, v, vn, f1, f2, pred);
        var.col(k + 1) = vn;
    }
    return var;
}

// Second variation: forced by the drift Hessian acting on the two first
// variations, zero initial condition.
inline Mat simulate_variation2(const DriftModel& model, const Mat& state, const Mat& var1, const Mat& var2,
                               const TimeGrid& grid) {
    const int d = model.dim, m = grid.steps;
    Mat out(d, m + 1);
    out.col(0).setZero();
    Vec w(d), wn(d), f1(d), f2(d), pred(d), phi_k(d), phi_k1(d), xk(d), xk1(d), a(d), b(d);
    const double dt = grid.dt();
    for (int k = 0; k < m; ++k) {
        xk = state.col(k);
        xk1 = state.col(k + 1);
        a = var1.col(k);
        b = var2.col(k);
        model.hessian_action(xk, a, b, phi_k);
        a = var1.col(k + 1);
        b = var2.col(k + 1);
        model.hessian_action(xk1, a, b, phi_k1);
        w = out.col(k);
        heun_forced_step(model, dt, xk, xk1, w, phi_k, phi_k1, wn, f1, f2, pred);
        out.col(k + 1) = wn;
    }
    return out;
}

// Malliavin-derivative flow D_{V2} grad_{u1} X on [0, t]: the same forced
// equation with the forcing damped by s/t.
inline Mat simulate_malliavin(const DriftModel& model, const Mat& state, const Mat& var1, const Mat& var2,
                              const TimeGrid& grid, double t) {
    if (std::abs(t - grid.horizon) > 1e-12 * std::max(1.0, grid.horizon))
        throw std::invalid_argument("simulate_malliavin: t must equal the grid horizon");
    const int d = model.dim, m = grid.steps;
    Mat out(d, m + 1);
    out.col(0).setZero();
    Vec w(d), wn(d), f1(d), f2(d), pred(d), phi_k(d), phi_k1(d), xk(d), xk1(d), a(d), b(d);
    const double dt = grid.dt();
    for (int k = 0; k < m; ++k) {
        xk = state.col(k);
        xk1 = state.col(k + 1);
        a = var1.col(k);
        b = var2.col(k);
        model.hessian_action(xk, a, b, phi_k);
        phi_k *= grid.time(k) / t;
        a = var1.col(k + 1);
        b = var2.col(k + 1);
        model.hessian_action(xk1, a, b, phi_k1);
        phi_k1 *= grid.time(k + 1) / t;
        w = out.col(k);
        heun_forced_step(model, dt, xk, xk1, w, phi_k, phi_k1, wn, f1, f2, pred);
        out.col(k + 1) = wn;
    }
    return out;
}

struct FlowBundle {
    TimeGrid grid;
    Vec x0, u1, u2;
    Mat state;      // d x (m+1)
    Mat var1;       // first variation along u1
    Mat var2;       // first variation along u2 (may be empty)
    Mat var11_22;   // second variation (may be empty)
    Mat malliavin;  // D_{V2} grad_{u1} X (may be empty)
    BrownianPath noise;

    bool has_var2() const { return var2.size() > 0; }
    bool has_second() const { return var11_22.size() > 0; }
    bool has_malliavin() const { return malliavin.size() > 0; }
};

struct BundleRequest {
    bool second_variation = false;
    bool malliavin = false;
};

inline FlowBundle make_flow_bundle(const DriftModel& model, const Vec& x0, const TimeGrid& grid,
                                   const BrownianPath& noise, const Vec& u1, const Vec& u2,
                                   BundleRequest req = {}) {
    FlowBundle b;
    b.grid = grid;
    b.x0 = x0;
    b.u1 = u1;
    b.u2 = u2;
    b.noise = noise;
    b.state = simulate_state(model, x0, grid, noise);
    b.var1 = simulate_variation1(model, b.state, u1, grid);
    if (u2.size() > 0 && (req.second_variation || req.malliavin)) {
        b.var2 = simulate_variation1(model, b.state, u2, grid);
        if (req.second_variation) b.var11_22 = simulate_variation2(model, b.state, b.var1, b.var2, grid);
        if (req.malliavin) b.malliavin = simulate_malliavin(model, b.state, b.var1, b.var2, grid, grid.horizon);
    }
    return b;
}

// Largest multiplicative violation of the Lemma 5.2 envelope
// |grad_u X_t| <= e^{-theta0 t} |u|: returns max_k |v_k| / (e^{-theta0 t_k}|u|) - 1.
inline double variation_envelope_excess(const Mat& var1, const TimeGrid& grid, double theta0) {
    const double unorm = var1.col(0).norm();
    if (unorm == 0) return 0.0;
    double worst = 0.0;
    for (int k = 0; k <= grid.steps; ++k) {
        double bound = std::exp(-theta0 * grid.time(k)) * unorm;
        worst = std::max(worst, var1.col(k).norm() / bound - 1.0);
    }
    return worst;
}

struct MalliavinIdentityCheck {
    double terminal_gap = 0;  // |D_V X_T - grad_u X_T|
    double interior_gap = 0;  // max over interior nodes of |D_V X_s - (s/T) grad_u X_s|
};

// Integrates D_V X directly from its defining equation with v(s) chosen as
// grad_u X_s / (sqrt(2) T), then checks both identities against the variation.
inline MalliavinIdentityCheck verify_dv_equals_variation(const DriftModel& model, const Vec& x0,
                                                         const TimeGrid& grid, const BrownianPath& noise,
                                                         const Vec& u) {
    const int d = model.dim, m = grid.steps;
    Mat state = simulate_state(model, x0, grid, noise);
    Mat var1 = simulate_variation1(model, state, u, grid);
    const double dt = grid.dt();
    const double tinv = 1.0 / grid.horizon;
    Mat dv(d, m + 1);
    dv.col(0).setZero();
    Vec w(d), wn(d), f1(d), f2(d), pred(d), phi_k(d), phi_k1(d), xk(d), xk1(d);
    for (int k = 0; k < m; ++k) {
        xk = state.col(k);
        xk1 = state.col(k + 1);
        phi_k = tinv * var1.col(k);  // sqrt(2) v(s) with v from the variation
        phi_k1 = tinv * var1.col(k + 1);
        w = dv.col(k);
        heun_forced_step(model, dt, xk, xk1, w, phi_k, phi_k1, wn, f1, f2, pred);
        dv.col(k + 1) = wn;
    }
    MalliavinIdentityCheck chk;
    chk.terminal_gap = (dv.col(m) - var1.col(m)).norm();
    for (int k = 1; k < m; ++k) {
        double s_over_t = grid.time(k) * tinv;
        chk.interior_gap = std::max(chk.interior_gap, (dv.col(k) - s_over_t * var1.col(k)).norm());
    }
    return chk;
}

}  // namespace steinlab
