// Monte Carlo estimators of the Stein/Poisson equation solution
//   Laplacian f + <g, grad f> = h - mu(h)
// and its first and second directional derivatives, via stochastic
// representations along the Langevin flow. Sign convention throughout:
// f(x) = -int_0^inf E[h(X_t^x) - mu(h)] dt, which is the choice that actually
// satisfies the equation (checked by stein_residual and the closed forms).
#pragma once

#include "steinlab/bismut.hpp"
#include "steinlab/common.hpp"
#include "steinlab/flows.hpp"
#include "steinlab/model.hpp"
#include "steinlab/quadrature.hpp"
#include "steinlab/test_function.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace steinlab {

struct SteinEstimate {
    double value = 0;
    double std_error = 0;
    double truncation_tail = 0;  // analytic bound on the discarded time integral
    double horizon = 0;
    std::size_t replicas = 0;
};

enum class MeanMethod { ErgodicAverage, GaussQuadrature };

struct TargetMean {
    double value = 0;
    MeanMethod method = MeanMethod::GaussQuadrature;
    double error_estimate = 0;
};

// mu(h) for the invariant measure. Gauss quadrature is exact-grade but only
// available for Linear models (Gaussian target, covariance A^{-1}); the
// ergodic average works for any admissible drift.
inline TargetMean target_mean_quadrature(const DriftModel& model, const TestFunction& h,
                                         int nodes_per_axis = 24) {
    if (model.kind != DriftKind::Linear)
        throw std::invalid_argument("target_mean: gauss_quadrature requires a Linear model");
    if (model.dim > 3) throw std::invalid_argument("target_mean: gauss_quadrature limited to d <= 3");
    if (nodes_per_axis < 20) throw std::invalid_argument("target_mean: need >= 20 nodes per axis");
    Eigen::SelfAdjointEigenSolver<Mat> es(model.linear_a);
    Mat trans = es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal();
    auto make_integrand = [&](const Vec& z) { return h.eval(trans * z); };
    TargetMean out;
    out.method = MeanMethod::GaussQuadrature;
    out.value = gauss_expectation(model.dim, nodes_per_axis, make_integrand);
    double check = gauss_expectation(model.dim, nodes_per_axis + 8, make_integrand);
    out.error_estimate = std::abs(out.value - check);
    return out;
}

struct ErgodicMeanOptions {
    double dt = 5e-3;
    double total_time = 4000;  // budget: integration time after burn-in
    std::uint64_t seed = 1;
    int batches = 32;
};

inline TargetMean target_mean_ergodic(const DriftModel& model, const ThetaParams& theta,
                                      const TestFunction& h, const ErgodicMeanOptions& opt) {
    if (opt.total_time <= 0) throw std::invalid_argument("target_mean: budget must be positive");
    const double burn = 10.0 / theta.theta0;
    const long burn_steps = std::lround(burn / opt.dt);
    const long steps = std::lround(opt.total_time / opt.dt);
    CounterRng rng(opt.seed);
    Vec x = Vec::Zero(model.dim), xn(model.dim), g(model.dim), z(model.dim);
    for (long k = 0; k < burn_steps; ++k) {
        rng.normal_vector(0, rng_index(rng_tag::kChain, 0, static_cast<std::uint64_t>(k)), z);
        em_state_step(model, opt.dt, static_cast<int>(k % 1000000), x, Vec(std::sqrt(opt.dt) * z), xn, g);
        x = xn;
    }
    std::vector<double> batch_means(opt.batches, 0.0);
    const long per_batch = steps / opt.batches;
    for (int b = 0; b < opt.batches; ++b) {
        KahanSum acc;
        for (long k = 0; k < per_batch; ++k) {
            std::uint64_t idx = static_cast<std::uint64_t>(burn_steps + b * per_batch + k);
            rng.normal_vector(0, rng_index(rng_tag::kChain, 0, idx), z);
            em_state_step(model, opt.dt, static_cast<int>(k % 1000000), x, Vec(std::sqrt(opt.dt) * z), xn, g);
            x = xn;
            acc.add(h.eval(x));
        }
        batch_means[b] = acc.value() / static_cast<double>(per_batch);
    }
    auto ms = mean_se(batch_means);
    TargetMean out;
    out.method = MeanMethod::ErgodicAverage;
    out.value = ms.mean;
    out.error_estimate = ms.se;
    return out;
}

struct SteinOptions {
    double dt = 1e-3;
    std::size_t replicas = 100000;
    std::size_t cache_replicas = 10000;
    int cache_nodes_per_axis = 33;
    double cache_span_sigmas = 4.0;
    std::uint64_t seed = 0;
    unsigned workers = 0;
    int tau_nodes = 32;    // nodes of the t = tau^2 substitution on (0, 1]
    double t_step = 0.25;  // plain trapezoid spacing on [1, T]

    unsigned resolved_workers() const { return workers == 0 ? default_workers() : workers; }
};

// Bundles the model with its certified theta parameters, the contraction
// rate (for horizons and tail bounds), and the numeric budgets.
struct SteinContext {
    DriftModel model;
    ThetaParams theta;
    double rate_c = 0;  // ergodic contraction rate
    ProbeReport probe;
    SteinOptions opts;

    double second_moment_bound() const {
        Vec zero = Vec::Zero(model.dim);
        double g0 = model.drift_at(zero).norm();
        return (2.0 * model.dim + g0 * g0 / theta.theta0) / theta.theta0;
    }
    double first_moment_bound() const { return std::sqrt(second_moment_bound()); }

    void require_admissible() const {
        if (!probe.pass)
            throw std::invalid_argument("stein: model failed the dissipativity probe; estimators refuse to run");
    }
    void require_horizon(double t) const {
        double tmin = 5.0 / rate_c;
        if (t < tmin)
            throw std::invalid_argument("stein: horizon too small, need T >= 5/c = " + std::to_string(tmin));
    }
    TimeGrid grid_for(double t) const {
        return TimeGrid(t, std::max(8, static_cast<int>(std::lround(t / opts.dt))));
    }
};

inline SteinContext make_stein_context(const DriftModel& model, const ThetaParams& theta, double rate_c,
                                       SteinOptions opts = {}, std::uint64_t probe_seed = 99) {
    SteinContext ctx;
    ctx.model = model;
    ctx.theta = theta;
    ctx.rate_c = rate_c;
    ctx.opts = opts;
    ctx.probe = probe_assumption(model, theta, make_probe_grid(model.dim, 200, 8.0, probe_seed));
    return ctx;
}

namespace detail {

// Stationary starting point for the coupled control path. Linear models use
// the exact stationary law of the Euler chain (AR(1) fixed point); other
// models run a burn-in chain of length 10/theta0 with its own noise.
class StationaryStart {
  public:
    StationaryStart(const SteinContext& ctx, const CounterRng& rng, double dt)
        : ctx_(ctx), rng_(rng), dt_(dt) {
        const auto& model = ctx.model;
        if (model.kind == DriftKind::Linear) {
            Eigen::SelfAdjointEigenSolver<Mat> es(model.linear_a);
            rot_ = es.eigenvectors();
            scale_ = Vec(model.dim);
            for (int i = 0; i < model.dim; ++i) {
                double lam = es.eigenvalues()[i];
                double q = 1.0 - dt_ * lam;
                scale_[i] = std::sqrt(2.0 * dt_ / (1.0 - q * q));
            }
            exact_ = true;
        } else {
            burn_steps_ = std::lround(10.0 / (ctx.theta.theta0 * dt_));
        }
    }

    Vec draw(std::uint64_t replica) const {
        const int d = ctx_.model.dim;
        Vec z(d);
        if (exact_) {
            rng_.normal_vector(replica, rng_index(rng_tag::kInitial, 0, 0), z);
            return rot_ * scale_.cwiseProduct(z);
        }
        Vec x = Vec::Zero(d), xn(d), g(d);
        for (long k = 0; k < burn_steps_; ++k) {
            rng_.normal_vector(replica, rng_index(rng_tag::kInitial, 1, static_cast<std::uint64_t>(k)), z);
            em_state_step(ctx_.model, dt_, static_cast<int>(k % 1000000), x, Vec(std::sqrt(dt_) * z), xn, g);
            x = xn;
        }
        return x;
    }

  private:
    const SteinContext& ctx_;
    CounterRng rng_;
    double dt_;
    Mat rot_;
    Vec scale_;
    bool exact_ = false;
    long burn_steps_ = 0;
};

}  // namespace detail

// f(x) estimated as -int_0^T (E h(X_t^x) - mu(h)) dt with the running mean
// replaced by a stationarity-coupled control path driven by the same noise:
// the integrand h(X_t) - h(X~_t) has the same expectation and its variance
// stays bounded in T because the coupled paths contract together.
inline SteinEstimate estimate_f(const SteinContext& ctx, const TestFunction& h, const Vec& x, double horizon) {
    ctx.require_admissible();
    ctx.require_horizon(horizon);
    const TimeGrid grid = ctx.grid_for(horizon);
    const int d = ctx.model.dim, m = grid.steps;
    const double dt = grid.dt();
    const std::size_t n = ctx.opts.replicas;
    CounterRng rng(ctx.opts.seed);
    detail::StationaryStart stat(ctx, rng, grid.dt());
    std::vector<double> vals(n);
    parallel_for(n, ctx.opts.resolved_workers(), [&](std::size_t lo, std::size_t hi) {
        Vec xa(d), xb(d), xn(d), g(d);
        for (std::size_t r = lo; r < hi; ++r) {
            auto noise = make_brownian_path(rng, r, grid, d);
            xa = x;
            xb = stat.draw(r);
            double acc = 0.5 * (h.eval(xa) - h.eval(xb));
            for (int k = 0; k < m; ++k) {
                em_state_step(ctx.model, dt, k, xa, noise.increments.col(k), xn, g);
                xa = xn;
                em_state_step(ctx.model, dt, k, xb, noise.increments.col(k), xn, g);
                xb = xn;
                acc += (k + 1 == m ? 0.5 : 1.0) * (h.eval(xa) - h.eval(xb));
            }
            vals[r] = -dt * acc;
        }
    });
    auto ms = mean_se(vals);
    SteinEstimate est;
    est.value = ms.mean;
    est.std_error = ms.se;
    est.horizon = horizon;
    est.replicas = n;
    est.truncation_tail =
        2.0 * std::exp(-ctx.rate_c * horizon) * (ctx.first_moment_bound() + x.norm()) * h.lip_bound / ctx.rate_c;
    return est;
}

// grad_u f(x) = -int_0^T E<grad h(X_t), grad_u X_t> dt; the integrand decays
// like e^{-theta0 t} pathwise, so no control is needed.
inline SteinEstimate estimate_grad_f(const SteinContext& ctx, const TestFunction& h, const Vec& x,
                                     const Vec& u, double horizon) {
    ctx.require_admissible();
    ctx.require_horizon(horizon);
    const TimeGrid grid = ctx.grid_for(horizon);
    const int d = ctx.model.dim, m = grid.steps;
    const double dt = grid.dt();
    const std::size_t n = ctx.opts.replicas;
    CounterRng rng(ctx.opts.seed);
    std::vector<double> vals(n);
    parallel_for(n, ctx.opts.resolved_workers(), [&](std::size_t lo, std::size_t hi) {
        Vec xs(d), xn(d), g(d), v(d), vn(d), f1(d), f2(d), pred(d);
        for (std::size_t r = lo; r < hi; ++r) {
            auto noise = make_brownian_path(rng, r, grid, d);
            xs = x;
            v = u;
            double acc = 0.5 * h.grad_dot(xs, v);
            for (int k = 0; k < m; ++k) {
                em_state_step(ctx.model, dt, k, xs, noise.increments.col(k), xn, g);
                heun_linear_step(ctx.model, dt, xs, xn, v, vn, f1, f2, pred);
                xs = xn;
                v = vn;
                acc += (k + 1 == m ? 0.5 : 1.0) * h.grad_dot(xs, v);
            }
            vals[r] = -dt * acc;
        }
    });
    auto ms = mean_se(vals);
    SteinEstimate est;
    est.value = ms.mean;
    est.std_error = ms.se;
    est.horizon = horizon;
    est.replicas = n;
    est.truncation_tail = h.lip_bound * u.norm() * std::exp(-ctx.theta.theta0 * horizon) / ctx.theta.theta0;
    return est;
}

// --- cache-grid plug-in fields (multilinear interpolation on a cube)

struct GridGeometry {
    int dim = 1;
    double lo = -1, hi = 1;
    int nodes_per_axis = 2;

    int total_nodes() const {
        int t = 1;
        for (int k = 0; k < dim; ++k) t *= nodes_per_axis;
        return t;
    }
    Vec node_point(int flat) const {
        Vec x(dim);
        for (int k = 0; k < dim; ++k) {
            int i = flat % nodes_per_axis;
            flat /= nodes_per_axis;
            x[k] = lo + (hi - lo) * i / (nodes_per_axis - 1);
        }
        return x;
    }
    // Multilinear weights of the 2^dim surrounding nodes, clamped to the box.
    void interp(const Vec& x, std::vector<std::pair<int, double>>& out) const {
        out.clear();
        int base_idx[3] = {0, 0, 0};
        double frac[3] = {0, 0, 0};
        const double step = (hi - lo) / (nodes_per_axis - 1);
        for (int k = 0; k < dim; ++k) {
            double pos = (std::clamp(x[k], lo, hi) - lo) / step;
            int i = std::min(static_cast<int>(pos), nodes_per_axis - 2);
            base_idx[k] = i;
            frac[k] = pos - i;
        }
        const int corners = 1 << dim;
        for (int c = 0; c < corners; ++c) {
            double w = 1.0;
            int flat = 0, mult = 1;
            for (int k = 0; k < dim; ++k) {
                int bit = (c >> k) & 1;
                w *= bit ? frac[k] : 1.0 - frac[k];
                flat += (base_idx[k] + bit) * mult;
                mult *= nodes_per_axis;
            }
            if (w != 0.0) out.emplace_back(flat, w);
        }
    }
};

struct ScalarField {
    GridGeometry geom;
    std::vector<double> values;
    std::vector<double> ses;

    double operator()(const Vec& x) const {
        std::vector<std::pair<int, double>> w;
        geom.interp(x, w);
        double acc = 0;
        for (auto [i, wi] : w) acc += wi * values[i];
        return acc;
    }
};

struct VectorField {
    GridGeometry geom;
    Mat values;  // d x nodes
    Mat ses;

    Vec operator()(const Vec& x) const {
        std::vector<std::pair<int, double>> w;
        geom.interp(x, w);
        Vec acc = Vec::Zero(values.rows());
        for (auto [i, wi] : w) acc += wi * values.col(i);
        return acc;
    }
};

inline GridGeometry default_cache_geometry(const SteinContext& ctx) {
    GridGeometry g;
    g.dim = ctx.model.dim;
    double span = ctx.opts.cache_span_sigmas * std::sqrt(ctx.second_moment_bound() / ctx.model.dim);
    g.lo = -span;
    g.hi = span;
    g.nodes_per_axis = ctx.opts.cache_nodes_per_axis;
    return g;
}

inline ScalarField build_f_field(const SteinContext& ctx, const TestFunction& h, double horizon) {
    GridGeometry geom = default_cache_geometry(ctx);
    ScalarField field;
    field.geom = geom;
    field.values.resize(geom.total_nodes());
    field.ses.resize(geom.total_nodes());
    SteinContext node_ctx = ctx;
    node_ctx.opts.replicas = ctx.opts.cache_replicas;
    CounterRng rng(ctx.opts.seed);
    for (int i = 0; i < geom.total_nodes(); ++i) {
        node_ctx.opts.seed = rng.fork(1000 + i).seed();
        auto est = estimate_f(node_ctx, h, geom.node_point(i), horizon);
        field.values[i] = est.value;
        field.ses[i] = est.std_error;
    }
    return field;
}

inline VectorField build_grad_field(const SteinContext& ctx, const TestFunction& h, double horizon) {
    GridGeometry geom = default_cache_geometry(ctx);
    VectorField field;
    field.geom = geom;
    field.values.resize(ctx.model.dim, geom.total_nodes());
    field.ses.resize(ctx.model.dim, geom.total_nodes());
    SteinContext node_ctx = ctx;
    node_ctx.opts.replicas = ctx.opts.cache_replicas;
    CounterRng rng(ctx.opts.seed);
    for (int i = 0; i < geom.total_nodes(); ++i) {
        for (int axis = 0; axis < ctx.model.dim; ++axis) {
            node_ctx.opts.seed = rng.fork(5000 + i * 4 + axis).seed();
            auto est = estimate_grad_f(node_ctx, h, geom.node_point(i), Vec::Unit(ctx.model.dim, axis), horizon);
            field.values(axis, i) = est.value;
            field.ses(axis, i) = est.std_error;
        }
    }
    return field;
}

// --- time quadrature for the e^{-t}-weighted representations

struct TimeQuadrature {
    std::vector<int> node_index;  // strictly increasing grid indices
    std::vector<double> weight;   // composite weights including e^{-t}
};

// t = tau^2 substitution on (0, min(1,T)] (the weight E|I_u(t)| ~ t^{-1/2}
// becomes bounded in tau), plain trapezoid on [1, T]. The smallest node is
// floored at 4 dt to keep the Ito sums meaningful.
inline TimeQuadrature build_time_quadrature(const TimeGrid& grid, int tau_nodes, double t_step) {
    TimeQuadrature q;
    const double dt = grid.dt(), horizon = grid.horizon;
    const double tau_end = std::min(1.0, horizon);
    std::vector<int> idx;
    for (int j = 1; j <= tau_nodes; ++j) {
        double tau = tau_end * static_cast<double>(j) / tau_nodes;
        double t = std::max(tau * tau, 4.0 * dt);
        int k = std::clamp(static_cast<int>(std::lround(t / dt)), 4, grid.steps);
        if (idx.empty() || k > idx.back()) idx.push_back(k);
    }
    std::vector<double> taus(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) taus[j] = std::sqrt(idx[j] * dt);
    for (std::size_t j = 0; j < idx.size(); ++j) {
        double prev = j == 0 ? 0.0 : taus[j - 1];
        double next = j + 1 < idx.size() ? taus[j + 1] : taus[j];
        double w_tau = 0.5 * (next - prev);
        double t = idx[j] * dt;
        q.node_index.push_back(idx[j]);
        q.weight.push_back(w_tau * 2.0 * taus[j] * std::exp(-t));
    }
    if (horizon > tau_end) {
        std::vector<int> tidx;
        std::vector<double> ts;
        double t = tau_end;
        while (t < horizon - 1e-12) {
            t = std::min(t + t_step, horizon);
            int k = std::clamp(static_cast<int>(std::lround(t / dt)), 4, grid.steps);
            if (tidx.empty() || k > tidx.back()) {
                tidx.push_back(k);
                ts.push_back(k * dt);
            }
        }
        // Trapezoid over [tau_end, T]; the left endpoint coincides with the
        // last tau node, whose weight picks up the extra half cell.
        if (!tidx.empty()) {
            q.weight.back() += 0.5 * (ts.front() - tau_end) * std::exp(-tau_end);
            for (std::size_t j = 0; j < tidx.size(); ++j) {
                double left = j == 0 ? tau_end : ts[j - 1];
                double right = j + 1 < tidx.size() ? ts[j + 1] : ts[j];
                q.node_index.push_back(tidx[j]);
                q.weight.push_back(0.5 * (right - left) * std::exp(-ts[j]));
            }
        }
    }
    return q;
}

namespace detail {

// One streaming pass per replica over (state, variation along w, prefix Ito
// sum), invoking a callback at each quadrature node with the current state
// and I_w(t). Returns nothing; the callback accumulates.
template <typename NodeFn>
inline void stream_weighted_nodes(const SteinContext& ctx, const Vec& x0, const Vec& w_dir,
                                  const TimeGrid& grid, const TimeQuadrature& quad, const CounterRng& rng,
                                  std::uint64_t replica, NodeFn&& at_node) {
    const int d = ctx.model.dim, m = grid.steps;
    const double dt = grid.dt();
    auto noise = make_brownian_path(rng, replica, grid, d);
    Vec xs = x0, xn(d), g(d), v = w_dir, vn(d), f1(d), f2(d), pred(d);
    double prefix = 0.0;
    std::size_t next = 0;
    for (int k = 0; k <= m && next < quad.node_index.size(); ++k) {
        if (k == quad.node_index[next]) {
            double t = grid.time(k);
            at_node(next, t, xs, prefix / (kSqrt2 * t));
            ++next;
        }
        if (k == m) break;
        prefix += v.dot(noise.increments.col(k));
        em_state_step(ctx.model, dt, k, xs, noise.increments.col(k), xn, g);
        heun_linear_step(ctx.model, dt, xs, xn, v, vn, f1, f2, pred);
        xs = xn;
        v = vn;
    }
}

}  // namespace detail

// Resolvent representation of the gradient:
//   grad_u f(x) = int_0^inf e^{-t} E[(f - h + mu(h))(X_t) I_u(t)] dt,
// with f supplied by a cache-grid plug-in. The plug-in's node errors are
// propagated linearly into the reported standard error.
inline SteinEstimate estimate_grad_f_resolvent(const SteinContext& ctx, const TestFunction& h, const Vec& x,
                                               const Vec& u, double horizon, const TargetMean& mu,
                                               const ScalarField& f_field) {
    ctx.require_admissible();
    ctx.require_horizon(horizon);
    const TimeGrid grid = ctx.grid_for(horizon);
    const TimeQuadrature quad = build_time_quadrature(grid, ctx.opts.tau_nodes, ctx.opts.t_step);
    const std::size_t n = ctx.opts.replicas;
    CounterRng rng(ctx.opts.seed);
    std::vector<double> vals(n);
    const int nnodes = f_field.geom.total_nodes();
    const unsigned workers = ctx.opts.resolved_workers();
    std::vector<std::vector<double>> sens_w(workers, std::vector<double>(nnodes, 0.0));
    std::atomic<unsigned> wid{0};
    parallel_for(n, workers, [&](std::size_t lo, std::size_t hi) {
        unsigned me = wid.fetch_add(1);
        auto& sens = sens_w[me];
        std::vector<std::pair<int, double>> iw;
        for (std::size_t r = lo; r < hi; ++r) {
            double acc = 0.0;
            detail::stream_weighted_nodes(ctx, x, u, grid, quad, rng, r,
                                          [&](std::size_t j, double, const Vec& xs, double i_u) {
                                              double c = quad.weight[j];
                                              acc += c * (f_field(xs) - h.eval(xs) + mu.value) * i_u;
                                              f_field.geom.interp(xs, iw);
                                              for (auto [node, wi] : iw) sens[node] += c * wi * i_u;
                                          });
            vals[r] = acc;
        }
    });
    auto ms = mean_se(vals);
    double plug2 = 0.0;
    for (int node = 0; node < nnodes; ++node) {
        double s = 0.0;
        for (unsigned wkr = 0; wkr < workers; ++wkr) s += sens_w[wkr][node];
        s /= static_cast<double>(n);
        plug2 += s * s * f_field.ses[node] * f_field.ses[node];
    }
    SteinEstimate est;
    est.value = ms.mean;
    est.std_error = std::sqrt(ms.se * ms.se + plug2 + mu.error_estimate * mu.error_estimate);
    est.horizon = horizon;
    est.replicas = n;
    est.truncation_tail =
        2.0 * std::exp(-horizon) * (ctx.first_moment_bound() + x.norm() + 1.0) * std::max(h.lip_bound, 1.0);
    return est;
}

// Second directional derivative. Differentiating the resolvent identity for
// the fixed-direction gradient gives
//   grad_u2 grad_u1 f(x) = int_0^inf e^{-t} E[ phi(X_t) I_{u2}(t) ] dt,
//   phi(y) = <grad f(y), u1> - <grad h(y), u1> + <grad_{u1} g(y), grad f(y)>,
// where the last term comes from the commutator of the generator with the
// directional derivative. grad f is the cache-grid plug-in.
inline SteinEstimate estimate_hess_f(const SteinContext& ctx, const TestFunction& h, const Vec& x,
                                     const Vec& u1, const Vec& u2, double horizon,
                                     const VectorField& grad_field) {
    ctx.require_admissible();
    ctx.require_horizon(horizon);
    const TimeGrid grid = ctx.grid_for(horizon);
    const TimeQuadrature quad = build_time_quadrature(grid, ctx.opts.tau_nodes, ctx.opts.t_step);
    const std::size_t n = ctx.opts.replicas;
    const int d = ctx.model.dim;
    CounterRng rng(ctx.opts.seed);
    std::vector<double> vals(n);
    const int nnodes = grad_field.geom.total_nodes();
    const unsigned workers = ctx.opts.resolved_workers();
    std::vector<Mat> sens_w(workers, Mat::Zero(d, nnodes));
    std::atomic<unsigned> wid{0};
    parallel_for(n, workers, [&](std::size_t lo, std::size_t hi) {
        unsigned me = wid.fetch_add(1);
        auto& sens = sens_w[me];
        std::vector<std::pair<int, double>> iw;
        Vec ju(d), gf(d);
        for (std::size_t r = lo; r < hi; ++r) {
            double acc = 0.0;
            detail::stream_weighted_nodes(
                ctx, x, u2, grid, quad, rng, r, [&](std::size_t j, double, const Vec& xs, double i_u2) {
                    double c = quad.weight[j];
                    ctx.model.jacobian_action(xs, u1, ju);
                    gf = grad_field(xs);
                    double phi = gf.dot(u1) - h.grad_dot(xs, u1) + ju.dot(gf);
                    acc += c * phi * i_u2;
                    grad_field.geom.interp(xs, iw);
                    for (auto [node, wi] : iw) sens.col(node) += (c * wi * i_u2) * (u1 + ju);
                });
            vals[r] = acc;
        }
    });
    auto ms = mean_se(vals);
    double plug2 = 0.0;
    for (int node = 0; node < nnodes; ++node)
        for (int axis = 0; axis < d; ++axis) {
            double s = 0.0;
            for (unsigned wkr = 0; wkr < workers; ++wkr) s += sens_w[wkr](axis, node);
            s /= static_cast<double>(n);
            plug2 += s * s * grad_field.ses(axis, node) * grad_field.ses(axis, node);
        }
    SteinEstimate est;
    est.value = ms.mean;
    est.std_error = std::sqrt(ms.se * ms.se + plug2);
    est.horizon = horizon;
    est.replicas = n;
    est.truncation_tail = 2.0 * std::exp(-horizon) * std::max(h.lip_bound, 1.0) * u1.norm() * u2.norm();
    return est;
}

struct PairedHessian {
    SteinEstimate at_a, at_b;
    double diff = 0, diff_se = 0;  // hess(a) - hess(b) under common noise
};

// Two Hessian estimates under common random numbers, for difference checks
// such as the log-Lipschitz modulus of continuity.
inline PairedHessian estimate_hess_f_paired(const SteinContext& ctx, const TestFunction& h, const Vec& xa,
                                            const Vec& xb, const Vec& u1, const Vec& u2, double horizon,
                                            const VectorField& grad_field) {
    ctx.require_admissible();
    ctx.require_horizon(horizon);
    const TimeGrid grid = ctx.grid_for(horizon);
    const TimeQuadrature quad = build_time_quadrature(grid, ctx.opts.tau_nodes, ctx.opts.t_step);
    const std::size_t n = ctx.opts.replicas;
    const int d = ctx.model.dim;
    CounterRng rng(ctx.opts.seed);
    std::vector<double> va(n), vb(n);
    parallel_for(n, ctx.opts.resolved_workers(), [&](std::size_t lo, std::size_t hi) {
        Vec ju(d), gf(d);
        auto integrand = [&](const Vec& xs, double i_u2) {
            ctx.model.jacobian_action(xs, u1, ju);
            gf = grad_field(xs);
            return (gf.dot(u1) - h.grad_dot(xs, u1) + ju.dot(gf)) * i_u2;
        };
        for (std::size_t r = lo; r < hi; ++r) {
            double acc_a = 0.0, acc_b = 0.0;
            detail::stream_weighted_nodes(ctx, xa, u2, grid, quad, rng, r,
                                          [&](std::size_t j, double, const Vec& xs, double i_u2) {
                                              acc_a += quad.weight[j] * integrand(xs, i_u2);
                                          });
            detail::stream_weighted_nodes(ctx, xb, u2, grid, quad, rng, r,
                                          [&](std::size_t j, double, const Vec& xs, double i_u2) {
                                              acc_b += quad.weight[j] * integrand(xs, i_u2);
                                          });
            va[r] = acc_a;
            vb[r] = acc_b;
        }
    });
    PairedHessian out;
    auto ma = mean_se(va), mb = mean_se(vb);
    out.at_a.value = ma.mean;
    out.at_a.std_error = ma.se;
    out.at_b.value = mb.mean;
    out.at_b.std_error = mb.se;
    out.at_a.horizon = out.at_b.horizon = horizon;
    out.at_a.replicas = out.at_b.replicas = n;
    std::vector<double> diff(n);
    for (std::size_t r = 0; r < n; ++r) diff[r] = va[r] - vb[r];
    auto md = mean_se(diff);
    out.diff = md.mean;
    out.diff_se = md.se;
    return out;
}

// Plain resolvent identity f(x) = int e^{-t} E[f(X_t) + mu(h) - h(X_t)] dt,
// evaluated with the plug-in on the right side (self-consistency check).
inline SteinEstimate resolvent_identity_value(const SteinContext& ctx, const TestFunction& h, const Vec& x,
                                              double horizon, const TargetMean& mu,
                                              const ScalarField& f_field) {
    ctx.require_admissible();
    ctx.require_horizon(horizon);
    const TimeGrid grid = ctx.grid_for(horizon);
    const TimeQuadrature quad = build_time_quadrature(grid, ctx.opts.tau_nodes, ctx.opts.t_step);
    const std::size_t n = ctx.opts.replicas;
    CounterRng rng(ctx.opts.seed);
    std::vector<double> vals(n);
    parallel_for(n, ctx.opts.resolved_workers(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            double acc = 0.0;
            detail::stream_weighted_nodes(ctx, x, Vec::Zero(ctx.model.dim), grid, quad, rng, r,
                                          [&](std::size_t j, double, const Vec& xs, double) {
                                              acc += quad.weight[j] * (f_field(xs) + mu.value - h.eval(xs));
                                          });
            vals[r] = acc;
        }
    });
    auto ms = mean_se(vals);
    SteinEstimate est;
    est.value = ms.mean;
    est.std_error = ms.se;
    est.horizon = horizon;
    est.replicas = n;
    est.truncation_tail = std::exp(-horizon) * 2.0 * (ctx.first_moment_bound() + x.norm() + 1.0);
    return est;
}

struct ResidualReport {
    double residual = 0;
    double se = 0;
    double laplacian = 0;
    double drift_term = 0;
    double rhs = 0;  // h(x) - mu(h)
    bool pass() const { return std::abs(residual) <= 3.0 * se; }
};

// Plugs the estimated derivatives back into the equation:
// sum_i hess_{ii} + <g(x), grad f(x)> - (h(x) - mu(h)) should vanish.
inline ResidualReport stein_residual(const SteinContext& ctx, const TestFunction& h, const Vec& x,
                                     double horizon, const TargetMean& mu, const VectorField& grad_field) {
    if (ctx.model.dim > 3) throw std::invalid_argument("stein_residual: d <= 3 only");
    ResidualReport rep;
    Vec g = ctx.model.drift_at(x);
    double var_acc = 0.0;
    for (int axis = 0; axis < ctx.model.dim; ++axis) {
        Vec e = Vec::Unit(ctx.model.dim, axis);
        SteinContext cx = ctx;
        cx.opts.seed = CounterRng(ctx.opts.seed).fork(71 + axis).seed();
        auto hess = estimate_hess_f(cx, h, x, e, e, horizon, grad_field);
        cx.opts.seed = CounterRng(ctx.opts.seed).fork(91 + axis).seed();
        auto grad = estimate_grad_f(cx, h, x, e, horizon);
        rep.laplacian += hess.value;
        rep.drift_term += g[axis] * grad.value;
        var_acc += hess.std_error * hess.std_error + g[axis] * g[axis] * grad.std_error * grad.std_error;
    }
    rep.rhs = h.eval(x) - mu.value;
    rep.residual = rep.laplacian + rep.drift_term - rep.rhs;
    rep.se = std::sqrt(var_acc + mu.error_estimate * mu.error_estimate);
    return rep;
}

}  // namespace steinlab
