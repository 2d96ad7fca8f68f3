// Drift models for the Langevin SDE dX = g(X)dt + sqrt(2) dB: analytic drift,
// Jacobian and Hessian actions, dissipativity parameters, and the ergodicity
// constants kappa(r), R0, R1, c.
#pragma once

#include "steinlab/common.hpp"
#include "steinlab/rng.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace steinlab {

enum class DriftKind { Linear, Power, Custom };

struct DriftModel {
    int dim = 0;
    DriftKind kind = DriftKind::Custom;
    std::string name;

    // In-place evaluators; out must be pre-sized to dim.
    std::function<void(const Vec&, Vec&)> drift;
    std::function<void(const Vec&, const Vec&, Vec&)> jacobian_action;
    std::function<void(const Vec&, const Vec&, const Vec&, Vec&)> hessian_action;

    // Parameters, populated for the analytic kinds.
    Mat linear_a;       // Linear: g(x) = -A x
    double power_c = 0; // Power: g(x) = -c (1+|x|^2)^{p/2} x
    double power_p = 0;

    Vec drift_at(const Vec& x) const {
        Vec out(dim);
        drift(x, out);
        return out;
    }
    Vec jac_at(const Vec& x, const Vec& u) const {
        Vec out(dim);
        jacobian_action(x, u, out);
        return out;
    }
    Vec hess_at(const Vec& x, const Vec& u1, const Vec& u2) const {
        Vec out(dim);
        hessian_action(x, u1, u2, out);
        return out;
    }
};

struct ThetaParams {
    double theta0 = 0;  // > 0
    double theta1 = 0;
    double theta2 = 0;
    double theta3 = 0;
    double theta4 = 0;  // > 0
};

struct ContractionConstants {
    bool ok = false;
    double r0 = 0;
    double r1 = 0;
    double c = 0;  // exponential contraction rate, c = 2 / R1^2
    std::function<double(double)> kappa;
};

inline DriftModel make_linear_drift(const Mat& a) {
    const int d = static_cast<int>(a.rows());
    if (a.cols() != d) throw std::invalid_argument("linear drift: A must be square");
    if (!a.isApprox(a.transpose(), 1e-12)) throw std::invalid_argument("linear drift: A must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(a);
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw std::invalid_argument("linear drift: A must be positive definite");
    DriftModel m;
    m.dim = d;
    m.kind = DriftKind::Linear;
    m.name = "linear";
    m.linear_a = a;
    Mat acopy = a;
    m.drift = [acopy](const Vec& x, Vec& out) { out.noalias() = -(acopy * x); };
    m.jacobian_action = [acopy](const Vec&, const Vec& u, Vec& out) { out.noalias() = -(acopy * u); };
    m.hessian_action = [](const Vec&, const Vec&, const Vec&, Vec& out) { out.setZero(); };
    return m;
}

// Example 1 parameters: theta0 = lambda_min, theta1 = 0, theta2 = theta3 = 1,
// theta4 = lambda_max.
inline std::pair<DriftModel, ThetaParams> make_linear_model(const Mat& a) {
    DriftModel m = make_linear_drift(a);
    Eigen::SelfAdjointEigenSolver<Mat> es(a);
    ThetaParams th;
    th.theta0 = es.eigenvalues().minCoeff();
    th.theta1 = 0.0;
    th.theta2 = 1.0;
    th.theta3 = 1.0;
    th.theta4 = es.eigenvalues().maxCoeff();
    return {std::move(m), th};
}

inline DriftModel make_power_drift(double c, double p, int d) {
    if (c <= 0) throw std::invalid_argument("power drift: c must be positive");
    if (p < 0) throw std::invalid_argument("power drift: p must be nonnegative");
    if (d <= 0) throw std::invalid_argument("power drift: dimension must be positive");
    DriftModel m;
    m.dim = d;
    m.kind = DriftKind::Power;
    m.name = "power";
    m.power_c = c;
    m.power_p = p;
    if (p == 2.0) {
        // pow-free fast path for the workhorse quadratic-growth case
        m.drift = [c](const Vec& x, Vec& out) { out.noalias() = (-c * (1.0 + x.squaredNorm())) * x; };
        m.jacobian_action = [c](const Vec& x, const Vec& u, Vec& out) {
            out.noalias() = (-c * (1.0 + x.squaredNorm())) * u + (-2.0 * c * x.dot(u)) * x;
        };
        m.hessian_action = [c](const Vec& x, const Vec& u1, const Vec& u2, Vec& out) {
            out.noalias() = (-2.0 * c) * (x.dot(u1) * u2 + x.dot(u2) * u1 + u1.dot(u2) * x);
        };
        return m;
    }
    m.drift = [c, p](const Vec& x, Vec& out) {
        double w = 1.0 + x.squaredNorm();
        out.noalias() = (-c * std::pow(w, 0.5 * p)) * x;
    };
    m.jacobian_action = [c, p](const Vec& x, const Vec& u, Vec& out) {
        double w = 1.0 + x.squaredNorm();
        double xu = x.dot(u);
        out.noalias() = (-c * std::pow(w, 0.5 * p)) * u;
        if (p != 0.0) out.noalias() += (-c * p * std::pow(w, 0.5 * p - 1.0) * xu) * x;
    };
    m.hessian_action = [c, p](const Vec& x, const Vec& u1, const Vec& u2, Vec& out) {
        if (p == 0.0) {
            out.setZero();
            return;
        }
        double w = 1.0 + x.squaredNorm();
        double xu1 = x.dot(u1), xu2 = x.dot(u2), u12 = u1.dot(u2);
        double s1 = -c * p * std::pow(w, 0.5 * p - 1.0);
        out.noalias() = s1 * (xu1 * u2 + xu2 * u1 + u12 * x);
        out.noalias() += (-c * p * (p - 2.0) * std::pow(w, 0.5 * p - 2.0) * xu1 * xu2) * x;
    };
    return m;
}

// Probe-certified theta for the power drift: theta2 = p and theta1 = 1, with
// theta0, theta3, theta4 fitted on a radial grid over |x| <= 10. The radial
// reduction is valid because the <x,u>^2 term in <u, grad_u g> only adds
// dissipativity and the Hessian bracket obeys the 3r triangle bound.
inline std::pair<DriftModel, ThetaParams> make_power_model(double c, double p, int d) {
    DriftModel m = make_power_drift(c, p, d);
    ThetaParams th;
    if (p == 0.0) {
        // Collapses to g = -c x; use the Example 1 parameters.
        th.theta0 = c;
        th.theta1 = 0.0;
        th.theta2 = 1.0;
        th.theta3 = 1.0;
        th.theta4 = c;
        return {std::move(m), th};
    }
    const int ngrid = 2001;
    double min_ratio = std::numeric_limits<double>::infinity();
    double max_h = 0.0, max_g = 0.0;
    for (int i = 0; i < ngrid; ++i) {
        double r = 10.0 * static_cast<double>(i) / (ngrid - 1);
        double w = 1.0 + r * r;
        min_ratio = std::min(min_ratio, std::pow(w, 0.5 * p) / (1.0 + std::pow(r, p)));
        double hb = (p * std::pow(w, 0.5 * p - 1.0) * 3.0 * r +
                     p * std::abs(p - 2.0) * std::pow(w, 0.5 * p - 2.0) * r * r * r) /
                    std::pow(1.0 + r, p - 1.0);
        max_h = std::max(max_h, hb);
        max_g = std::max(max_g, std::pow(w, 0.5 * p) * r / (1.0 + std::pow(r, 1.0 + p)));
    }
    th.theta0 = c * min_ratio;
    th.theta1 = 1.0;
    th.theta2 = p;
    th.theta3 = std::max(c * max_h, 1e-12);
    th.theta4 = std::max(c * max_g, 1e-12);
    return {std::move(m), th};
}

// g(x) = -c |x|^p x, the drift that violates (a2) near the origin. Kept as a
// negative control for the assumption probe; needs p >= 2 for a C^2 drift.
inline DriftModel make_counterexample_drift(double c, double p, int d) {
    if (c <= 0 || p < 2) throw std::invalid_argument("counterexample drift: need c > 0, p >= 2");
    DriftModel m;
    m.dim = d;
    m.kind = DriftKind::Custom;
    m.name = "counterexample";
    m.power_c = c;
    m.power_p = p;
    m.drift = [c, p](const Vec& x, Vec& out) {
        double r = x.norm();
        out.noalias() = (-c * std::pow(r, p)) * x;
    };
    m.jacobian_action = [c, p](const Vec& x, const Vec& u, Vec& out) {
        double r = x.norm();
        if (r == 0.0) {
            out.setZero();
            return;
        }
        out.noalias() = (-c * std::pow(r, p)) * u + (-c * p * std::pow(r, p - 2.0) * x.dot(u)) * x;
    };
    m.hessian_action = [c, p](const Vec& x, const Vec& u1, const Vec& u2, Vec& out) {
        double r = x.norm();
        if (r == 0.0) {
            out.setZero();
            return;
        }
        double xu1 = x.dot(u1), xu2 = x.dot(u2), u12 = u1.dot(u2);
        out.noalias() = (-c * p * std::pow(r, p - 2.0)) * (xu1 * u2 + xu2 * u1 + u12 * x);
        out.noalias() += (-c * p * (p - 2.0) * std::pow(r, p - 4.0) * xu1 * xu2) * x;
    };
    return m;
}

struct AssumptionProbe {
    Vec x, u, u1, u2;
};

struct ProbeReport {
    bool pass = false;
    double worst_a2_slack = 0;  // min over probes; >= 0 means (a2) holds
    double worst_a3_slack = 0;
    std::size_t worst_a2_index = 0;
    std::size_t worst_a3_index = 0;
    std::size_t n_probes = 0;
    static constexpr double kTol = 1e-9;
};

// Slack of (a2): -theta0 (1+theta1 |x|^theta2)|u|^2 - <u, grad_u g(x)>, and of
// (a3): theta3 (1+theta1 |x|)^{theta2-1}|u1||u2| - |grad_{u1} grad_{u2} g(x)|.
inline ProbeReport probe_assumption(const DriftModel& model, const ThetaParams& th,
                                    const std::vector<AssumptionProbe>& probes) {
    if (probes.empty()) throw std::invalid_argument("probe_assumption: probes must be nonempty");
    ProbeReport rep;
    rep.n_probes = probes.size();
    rep.worst_a2_slack = std::numeric_limits<double>::infinity();
    rep.worst_a3_slack = std::numeric_limits<double>::infinity();
    Vec tmp(model.dim);
    for (std::size_t i = 0; i < probes.size(); ++i) {
        const auto& pr = probes[i];
        if (pr.u.norm() == 0 || pr.u1.norm() == 0 || pr.u2.norm() == 0)
            throw std::invalid_argument("probe_assumption: probe directions must be nonzero");
        model.jacobian_action(pr.x, pr.u, tmp);
        double lhs = pr.u.dot(tmp);
        double rhs = -th.theta0 * (1.0 + th.theta1 * std::pow(pr.x.norm(), th.theta2)) * pr.u.squaredNorm();
        double s2 = rhs - lhs;
        if (s2 < rep.worst_a2_slack) {
            rep.worst_a2_slack = s2;
            rep.worst_a2_index = i;
        }
        model.hessian_action(pr.x, pr.u1, pr.u2, tmp);
        double bound = th.theta3 * std::pow(1.0 + th.theta1 * pr.x.norm(), th.theta2 - 1.0) *
                       pr.u1.norm() * pr.u2.norm();
        double s3 = bound - tmp.norm();
        if (s3 < rep.worst_a3_slack) {
            rep.worst_a3_slack = s3;
            rep.worst_a3_index = i;
        }
    }
    rep.pass = rep.worst_a2_slack >= -ProbeReport::kTol && rep.worst_a3_slack >= -ProbeReport::kTol;
    return rep;
}

// Deterministic probe grid: radii spread over (0, radius], random directions.
inline std::vector<AssumptionProbe> make_probe_grid(int dim, std::size_t count, double radius,
                                                    std::uint64_t seed) {
    CounterRng rng(seed);
    std::vector<AssumptionProbe> probes;
    probes.reserve(count);
    auto unit = [&](std::uint64_t a, std::uint64_t b) {
        Vec v(dim);
        rng.normal_vector(a, b, v);
        double n = v.norm();
        return n > 0 ? Vec(v / n) : Vec(Vec::Unit(dim, 0));
    };
    for (std::size_t i = 0; i < count; ++i) {
        AssumptionProbe p;
        double r = radius * (static_cast<double>(i) + 0.5) / static_cast<double>(count);
        p.x = r * unit(i, 0);
        p.u = unit(i, 1);
        p.u1 = unit(i, 2);
        p.u2 = unit(i, 3);
        probes.push_back(std::move(p));
    }
    return probes;
}

struct ProbedKappaOptions {
    std::vector<double> radii;       // where kappa is sampled
    std::size_t pairs_per_radius = 10000;
    double center_scale = 3.0;       // pair midpoints ~ N(0, scale^2 I)
    std::uint64_t seed = 0;
};

// Appendix A constants. Analytic mode (Linear only): kappa(r) = 2 lambda_min,
// R0 = 0, R1 = sqrt(8/kappa), c = kappa/4. Probed mode estimates kappa(r) by
// minimizing over random pairs at distance sqrt(2) r; the sample minimum is an
// upper bound on the true infimum, so the constants are lower-confidence.
inline ContractionConstants contraction_constants(const DriftModel& model) {
    if (model.kind != DriftKind::Linear)
        throw std::invalid_argument("contraction_constants: analytic mode requires a Linear model");
    Eigen::SelfAdjointEigenSolver<Mat> es(model.linear_a);
    double kap = 2.0 * es.eigenvalues().minCoeff();
    ContractionConstants cc;
    cc.ok = kap > 0;
    cc.r0 = 0.0;
    cc.r1 = std::sqrt(8.0 / kap);
    cc.c = kap / 4.0;
    cc.kappa = [kap](double) { return kap; };
    return cc;
}

inline ContractionConstants contraction_constants_probed(const DriftModel& model,
                                                         const ProbedKappaOptions& opt) {
    if (opt.radii.empty()) throw std::invalid_argument("contraction_constants_probed: need radii");
    CounterRng rng(opt.seed);
    const int d = model.dim;
    std::vector<double> kappas;
    kappas.reserve(opt.radii.size());
    Vec mid(d), dir(d), x(d), y(d), gx(d), gy(d);
    for (std::size_t ri = 0; ri < opt.radii.size(); ++ri) {
        double r = opt.radii[ri];
        double half = 0.5 * kSqrt2 * r;
        double kmin = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < opt.pairs_per_radius; ++j) {
            std::uint64_t a = (static_cast<std::uint64_t>(ri) << 32) | j;
            rng.normal_vector(a, rng_index(rng_tag::kSampling, 0, 0), mid);
            rng.normal_vector(a, rng_index(rng_tag::kSampling, 1, 0), dir);
            double n = dir.norm();
            if (n == 0) continue;
            dir /= n;
            x = opt.center_scale * mid + half * dir;
            y = opt.center_scale * mid - half * dir;
            model.drift(x, gx);
            model.drift(y, gy);
            double k = -2.0 * (x - y).dot(gx - gy) / (x - y).squaredNorm();
            kmin = std::min(kmin, k);
        }
        kappas.push_back(kmin);
    }
    ContractionConstants cc;
    for (double k : kappas)
        if (k <= 0) return cc;  // ok = false: constants undefined
    cc.ok = true;
    cc.r0 = 0.0;
    // Smallest grid radius R with kappa(r) R^2 > 8 for all sampled r >= R.
    double r1 = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < opt.radii.size(); ++i) {
        double cand = opt.radii[i];
        bool all = true;
        for (std::size_t j = i; j < opt.radii.size(); ++j)
            if (kappas[j] * cand * cand <= 8.0) {
                all = false;
                break;
            }
        // kappa is nonincreasing in none of our cases; also allow the exact
        // crossing radius inside the cell [radii[i-1], radii[i]].
        if (all) {
            double lo = i == 0 ? 0.0 : opt.radii[i - 1];
            double kcell = kappas[i];
            double cross = std::sqrt(8.0 / kcell);
            r1 = std::max(lo, std::min(cand, cross));
            break;
        }
    }
    if (std::isnan(r1)) return ContractionConstants{};  // grid never satisfied the condition
    cc.r1 = r1;
    cc.c = 2.0 / (r1 * r1);
    std::vector<double> radii = opt.radii;
    cc.kappa = [radii, kappas](double r) {
        if (r <= radii.front()) return kappas.front();
        for (std::size_t i = 1; i < radii.size(); ++i)
            if (r <= radii[i]) {
                double t = (r - radii[i - 1]) / (radii[i] - radii[i - 1]);
                return (1 - t) * kappas[i - 1] + t * kappas[i];
            }
        return kappas.back();
    };
    return cc;
}

}  // namespace steinlab
