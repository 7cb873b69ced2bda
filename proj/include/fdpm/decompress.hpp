#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <vector>

#include "fdpm/curve.hpp"
#include "fdpm/errors.hpp"
#include "fdpm/parallel.hpp"

namespace fdpm {

// Decompression ratios 1 = tau_0 < tau_1 < ... < tau_T.
struct TauSchedule {
    std::vector<double> ratios;

    TauSchedule() : ratios{1.0} {}
    explicit TauSchedule(std::vector<double> r) : ratios(std::move(r)) { validate(); }

    void validate() const {
        if (ratios.empty() || ratios.front() != 1.0)
            throw parameter_error("TauSchedule: must start at tau_0 = 1");
        for (std::size_t i = 0; i + 1 < ratios.size(); ++i)
            if (!(ratios[i] < ratios[i + 1]))
                throw parameter_error("TauSchedule: ratios must be strictly increasing");
    }

    // Geometric frames with ratio 2^(1/frames_per_octave) up to tau_max.
    static TauSchedule geometric(double tau_max, int frames_per_octave = 8) {
        if (!(tau_max >= 1.0)) throw domain_error("TauSchedule: tau_max must be >= 1");
        std::vector<double> r{1.0};
        double step = std::pow(2.0, 1.0 / frames_per_octave);
        double t = 1.0;
        while (t * step < tau_max * (1.0 - 1e-12)) {
            t *= step;
            r.push_back(t);
        }
        if (tau_max > 1.0) r.push_back(tau_max);
        return TauSchedule(std::move(r));
    }

    double back() const { return ratios.back(); }
    std::size_t frames() const { return ratios.size(); }
};

// Per-query lifted curve points at the current ratio.  Invariant on each
// entry: P(zeta, y) ~ 0 and zeta - (tau-1)/y - z ~ 0 (relative to the local
// term scale).
struct DecompressionState {
    double tau = 1.0;
    std::vector<cplx> queries;
    std::vector<CurvePoint> lifted;
};

// Coefficient route: the evolved relation Q_tau with
//   c^(tau)_{pq} = sum_{j=p}^{d_z} c_{j, q-d_z+j-p} tau^{q-d_z+j-p} C(j,p) (1-1/tau)^{j-p},
// then reduction by common monomial factors and renormalization.
inline BivariatePoly evolved_polynomial(const BivariatePoly& p, double tau) {
    if (tau < 1.0) throw domain_error("evolved_polynomial: tau must be >= 1 (no compression)");
    if (tau == 1.0) return p;
    const int dz = p.deg_z(), s = p.deg_m();
    BivariatePoly q(dz, dz + s);
    const double omt = 1.0 - 1.0 / tau;
    for (int pp = 0; pp <= dz; ++pp) {
        for (int qq = 0; qq <= dz + s; ++qq) {
            double acc = 0.0;
            for (int j = pp; j <= dz; ++j) {
                int k = qq - dz + j - pp;
                if (k < 0 || k > s) continue;
                double binom = 1.0;
                for (int t = 1; t <= pp; ++t) binom = binom * (j - pp + t) / t;
                acc += p.coeff(j, k) * std::pow(tau, k) * binom * std::pow(omt, j - pp);
            }
            q.coeff(pp, qq) = acc;
        }
    }
    return q.reduced();
}

namespace detail {

// One predictor-corrector move of the lifted system
//   F1 = P(zeta, y) = 0,     F2 = zeta - (tau-1)/y - z = 0
// along the straight parameter segment (z0,tau0) -> (z1,tau1).  The tangent
// predictor solves the 2x2 system; Newton projects back; the same acceptance
// radius as plain branch continuation guards against sheet jumps, and steps
// subdivide recursively (fixed halving, deterministic).
struct LiftPolicy {
    int max_depth = 40;
    double accept_factor = 0.5;
    double trust_factor = 0.05;
    double y_floor = 1e-10;  // |y| below this is a pole of the characteristic
};

inline bool lift_newton(const BivariatePoly& p, cplx z, double tau, cplx& zeta, cplx& y,
                        const LiftPolicy& pol, int max_iter = 50) {
    for (int it = 0; it < max_iter; ++it) {
        if (std::abs(y) < pol.y_floor) return false;
        auto g = p.eval_grads(zeta, y);
        cplx f1 = g.p;
        cplx f2 = zeta - (tau - 1.0) / y - z;
        double s1 = term_scale(p, zeta, y);
        double s2 = std::abs(zeta) + std::abs((tau - 1.0) / y) + std::abs(z) + 1.0;
        if (std::abs(f1) <= 1e-13 * s1 && std::abs(f2) <= 1e-13 * s2) return true;
        // J = [[Pz, Py], [1, (tau-1)/y^2]]
        cplx j11 = g.pz, j12 = g.pm;
        cplx j21 = 1.0, j22 = (tau - 1.0) / (y * y);
        cplx det = j11 * j22 - j12 * j21;
        if (std::abs(det) < 1e-300) return false;
        cplx dz_step = (f1 * j22 - j12 * f2) / det;
        cplx dy_step = (j11 * f2 - f1 * j21) / det;
        double damp = 1.0;
        for (int h = 0; h <= 8; ++h) {
            cplx zt = zeta - damp * dz_step, yt = y - damp * dy_step;
            if (std::abs(yt) >= pol.y_floor) {
                cplx t1 = p.eval(zt, yt);
                cplx t2 = zt - (tau - 1.0) / yt - z;
                if (std::abs(t1) / s1 + std::abs(t2) / s2 <= std::abs(f1) / s1 + std::abs(f2) / s2) {
                    zeta = zt;
                    y = yt;
                    break;
                }
            }
            damp *= 0.5;
            if (h == 8) {
                zeta -= damp * 2.0 * dz_step;
                y -= damp * 2.0 * dy_step;
            }
        }
        if (std::abs(dz_step) * damp <= 1e-13 * (1.0 + std::abs(zeta)) &&
            std::abs(dy_step) * damp <= 1e-13 * (1.0 + std::abs(y))) {
            auto gg = p.eval_grads(zeta, y);
            cplx ff2 = zeta - (tau - 1.0) / y - z;
            return std::abs(gg.p) <= 1e-8 * s1 && std::abs(ff2) <= 1e-8 * s2;
        }
    }
    return false;
}

inline void lift_segment(const BivariatePoly& p, cplx z0, double tau0, cplx z1, double tau1,
                         cplx& zeta, cplx& y, int depth, const LiftPolicy& pol) {
    if (std::abs(y) < pol.y_floor)
        throw stiffness_error("lift: characteristic pole (y ~ 0)", zeta, tau0);
    auto g = p.eval_grads(zeta, y);
    // Tangent: [[Pz, Py], [1, (tau-1)/y^2]] [zdot, ydot] = [0, rhs]
    cplx j11 = g.pz, j12 = g.pm;
    cplx j21 = 1.0, j22 = (tau0 - 1.0) / (y * y);
    cplx det = j11 * j22 - j12 * j21;
    cplx rhs = (tau1 - tau0) / y + (z1 - z0);
    bool singular_tangent = std::abs(det) <= 1e-14 * (std::abs(j11 * j22) + std::abs(j12 * j21) + 1e-300);
    cplx zeta_pred = zeta, y_pred = y;
    if (!singular_tangent) {
        zeta_pred += (-j12 * rhs) / det;
        y_pred += (j11 * rhs) / det;
    }
    cplx zeta_corr = zeta_pred, y_corr = y_pred;
    bool ok = lift_newton(p, z1, tau1, zeta_corr, y_corr, pol);
    if (ok && std::abs(y_corr) >= pol.y_floor) {
        // Herglotz must survive for upper half-plane queries on the
        // physical sheet; a sign flip is a sheet jump in disguise.
        bool herglotz_ok = z1.imag() <= 1e-14 || y_corr.imag() > 0.0;
        auto rr = roots_in_m(p, zeta_corr);
        double nearest_other = std::numeric_limits<double>::infinity();
        double self_d = std::numeric_limits<double>::infinity();
        for (cplx r : rr.roots) {
            double d = std::abs(r - y_corr);
            if (d < self_d) {
                nearest_other = self_d;
                self_d = d;
            } else if (d < nearest_other) {
                nearest_other = d;
            }
        }
        double radius = pol.trust_factor * (1.0 + std::abs(y_corr));
        if (rr.roots.size() > 1) radius = std::min(radius, pol.accept_factor * nearest_other);
        if (herglotz_ok && std::abs(y_corr - y_pred) <= radius) {
            zeta = zeta_corr;
            y = y_corr;
            return;
        }
    }
    if (depth >= pol.max_depth) {
        if (singular_tangent)
            throw stiffness_error("lift: singular tangent (branch-point crossing)", zeta, tau1);
        throw stiffness_error("lift: max subdivision depth exceeded", z1, tau1);
    }
    cplx zm = 0.5 * (z0 + z1);
    double tm = 0.5 * (tau0 + tau1);
    lift_segment(p, z0, tau0, zm, tm, zeta, y, depth + 1, pol);
    lift_segment(p, zm, tm, z1, tau1, zeta, y, depth + 1, pol);
}

}  // namespace detail

struct DecompressResult {
    TauSchedule schedule;
    std::vector<std::vector<cplx>> values;  // values[frame][query] = m_tau(z)
    DecompressionState state;               // at the final ratio
};

// Geometric continuation of the physical sheet along the decompression flow.
// `initial` must hold the physical branch at tau = 1 for each query.
inline DecompressResult decompress_stieltjes(const BivariatePoly& p, const std::vector<cplx>& queries,
                                             const TauSchedule& schedule, const std::vector<cplx>& initial) {
    schedule.validate();
    if (queries.size() != initial.size())
        throw parameter_error("decompress_stieltjes: queries/initial size mismatch");
    DecompressResult out;
    out.schedule = schedule;
    out.values.assign(schedule.frames(), std::vector<cplx>(queries.size()));
    out.values[0] = initial;
    out.state.tau = schedule.ratios.back();
    out.state.queries = queries;
    out.state.lifted.resize(queries.size());

    for (std::size_t j = 0; j < queries.size(); ++j) {
        double sc = detail::term_scale(p, queries[j], initial[j]);
        if (std::abs(p.eval(queries[j], initial[j])) > 1e-8 * sc)
            throw parameter_error("decompress_stieltjes: initial value is not on the curve");
    }
    if (schedule.frames() == 1) {
        for (std::size_t j = 0; j < queries.size(); ++j)
            out.state.lifted[j] = {queries[j], initial[j]};
        return out;
    }

    detail::LiftPolicy pol;
    parallel_for(queries.size(), [&](std::size_t j) {
        cplx zeta = queries[j];
        cplx y = initial[j];
        for (std::size_t f = 1; f < schedule.frames(); ++f) {
            detail::lift_segment(p, queries[j], schedule.ratios[f - 1], queries[j], schedule.ratios[f],
                                 zeta, y, 0, pol);
            out.values[f][j] = y / schedule.ratios[f];
        }
        out.state.lifted[j] = {zeta, y};
    });
    return out;
}

// Physical branch of the decompressed transform at a fixed ratio, anchored
// directly at tau via the far-field normalization m_tau(z) ~ -1/z and then
// continued in z along the lifted system.  Avoids re-running the whole flow
// when only one frame is needed.
inline std::vector<cplx> decompressed_eval(const BivariatePoly& p, double tau,
                                           const std::vector<cplx>& queries, double scale_hint = 0.0) {
    if (tau < 1.0) throw domain_error("decompressed_eval: tau must be >= 1");
    double scale = scale_hint > 0.0 ? scale_hint : spectral_scale(p);
    detail::LiftPolicy pol;
    std::vector<cplx> out(queries.size());
    parallel_for(queries.size(), [&](std::size_t i) {
        cplx q = queries[i];
        bool reflect = q.imag() < 0.0;
        if (reflect) q = std::conj(q);
        double radius = 64.0 * std::max(scale * tau, std::abs(q));
        cplx z_a(0.0, radius);
        cplx y = -tau / z_a;
        cplx zeta = z_a + (tau - 1.0) / y;
        if (!detail::lift_newton(p, z_a, tau, zeta, y, pol))
            throw anchor_error("decompressed_eval: far-field anchor failed");
        if (y.imag() <= 0.0)
            throw anchor_error("decompressed_eval: anchor fails the Herglotz check");
        detail::lift_segment(p, z_a, tau, q, tau, zeta, y, 0, pol);
        cplx m = y / tau;
        if (q.imag() > 0.0 && m.imag() <= 0.0)
            throw stiffness_error("decompressed_eval: Herglotz violated at query", q, tau);
        out[i] = reflect ? std::conj(m) : m;
    });
    return out;
}

// Horizontal sweep variant at fixed tau (one anchor, neighbor continuation).
inline std::vector<cplx> decompressed_sweep(const BivariatePoly& p, double tau,
                                            const std::vector<double>& lambdas, double delta,
                                            double scale_hint = 0.0) {
    std::vector<cplx> out(lambdas.size());
    if (lambdas.empty()) return out;
    double scale = scale_hint > 0.0 ? scale_hint : spectral_scale(p);
    detail::LiftPolicy pol;
    double radius = 64.0 * std::max(scale * tau, std::abs(lambdas.front()));
    cplx z_a(lambdas.front(), radius);
    cplx y = -tau / z_a;
    cplx zeta = z_a + (tau - 1.0) / y;
    if (!detail::lift_newton(p, z_a, tau, zeta, y, pol))
        throw anchor_error("decompressed_sweep: far-field anchor failed");
    detail::lift_segment(p, z_a, tau, cplx(lambdas.front(), delta), tau, zeta, y, 0, pol);
    out.front() = y / tau;
    for (std::size_t i = 1; i < lambdas.size(); ++i) {
        detail::lift_segment(p, cplx(lambdas[i - 1], delta), tau, cplx(lambdas[i], delta), tau, zeta, y, 0, pol);
        out[i] = y / tau;
    }
    return out;
}

}  // namespace fdpm
