#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdpm/curve.hpp"
#include "fdpm/curvefit.hpp"
#include "fdpm/decompress.hpp"
#include "fdpm/errors.hpp"

namespace fdpm {

// ---------------------------------------------------------------------------
// Edge tracking
// ---------------------------------------------------------------------------

// Edge trajectories over a tau schedule.   edges[frame] holds
// a_1, b_1, ..., a_k, b_k with NaN for endpoints that are annihilated, not
// yet born, or failed at that frame; bulk_count counts the surviving pairs.
struct EdgeTrack {
    std::vector<double> taus;
    std::vector<std::vector<double>> edges;
    std::vector<int> bulk_count;

    static bool missing(double v) { return std::isnan(v); }

    // Sorted surviving endpoints at a frame.
    std::vector<double> alive_at(std::size_t frame) const {
        std::vector<double> out;
        for (double v : edges[frame])
            if (!missing(v)) out.push_back(v);
        std::sort(out.begin(), out.end());
        return out;
    }
};

struct AtomState {
    double location = 0.0;
    double weight = 0.0;  // in [0, 1]
};

struct CuspEvent {
    double tau_star = 1.0;
    double x_star = 0.0;
    CurvePoint point;  // (zeta*, y*) on the initial curve
};

namespace detail {

// The edge system at decompression ratio tau:
//   G1 = P(zeta, y) = 0
//   G2 = y^2 dP/dy - (tau - 1) dP/dzeta = 0
// with pushforward z = zeta - (tau - 1)/y.
struct EdgeSystem {
    const BivariatePoly* p;
    BivariatePoly pz, py, pzz, pzy, pyy;

    explicit EdgeSystem(const BivariatePoly& poly)
        : p(&poly),
          pz(poly.derivative(1, 0)),
          py(poly.derivative(0, 1)),
          pzz(poly.derivative(2, 0)),
          pzy(poly.derivative(1, 1)),
          pyy(poly.derivative(0, 2)) {}

    void eval(cplx zeta, cplx y, double tau, cplx& g1, cplx& g2) const {
        g1 = p->eval(zeta, y);
        g2 = y * y * py.eval(zeta, y) - (tau - 1.0) * pz.eval(zeta, y);
    }

    // Jacobian of (G1, G2) with respect to (zeta, y).
    void jacobian(cplx zeta, cplx y, double tau, cplx j[2][2]) const {
        j[0][0] = pz.eval(zeta, y);
        j[0][1] = py.eval(zeta, y);
        j[1][0] = y * y * pzy.eval(zeta, y) - (tau - 1.0) * pzz.eval(zeta, y);
        j[1][1] = 2.0 * y * py.eval(zeta, y) + y * y * pyy.eval(zeta, y) - (tau - 1.0) * pzy.eval(zeta, y);
    }

    bool newton(cplx& zeta, cplx& y, double tau, int max_iter = 60) const {
        for (int it = 0; it < max_iter; ++it) {
            cplx g1, g2, j[2][2];
            eval(zeta, y, tau, g1, g2);
            jacobian(zeta, y, tau, j);
            cplx det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if (std::abs(det) < 1e-300) return false;
            cplx dz = (g1 * j[1][1] - j[0][1] * g2) / det;
            cplx dy = (j[0][0] * g2 - g1 * j[1][0]) / det;
            double damp = 1.0;
            double base = std::abs(g1) + std::abs(g2);
            for (int h = 0; h < 8; ++h) {
                cplx zt = zeta - damp * dz, yt = y - damp * dy;
                cplx t1, t2;
                eval(zt, yt, tau, t1, t2);
                if (std::abs(t1) + std::abs(t2) <= base) {
                    zeta = zt;
                    y = yt;
                    break;
                }
                damp *= 0.5;
                if (h == 7) {
                    zeta -= damp * dz;
                    y -= damp * dy;
                }
            }
            if (std::abs(dz) * damp <= 1e-12 * (1.0 + std::abs(zeta)) &&
                std::abs(dy) * damp <= 1e-12 * (1.0 + std::abs(y))) {
                cplx g1f, g2f;
                eval(zeta, y, tau, g1f, g2f);
                double sc = term_scale(*p, zeta, y);
                return std::abs(g1f) <= 1e-8 * sc && std::abs(g2f) <= 1e-8 * sc * (1.0 + std::abs(y) * std::abs(y));
            }
        }
        return false;
    }
};

// All solutions of (G1, G2) = 0 at a fixed ratio, via the y-resultant as a
// generalized eigenproblem, paired with the matching y root.
struct EdgeCandidate {
    cplx zeta, y, z;  // z = pushforward
};

inline std::vector<EdgeCandidate> edge_candidates(const BivariatePoly& p, const EdgeSystem& sys,
                                                  double tau) {
    const int s = p.deg_m();
    std::vector<std::vector<double>> f(static_cast<std::size_t>(s) + 1);
    for (int j = 0; j <= s; ++j) f[static_cast<std::size_t>(j)] = p.m_power_coeffs(j);
    // G2 in powers of y: coefficient of y^k is (k-1) a_{k-1}(zeta) - (tau-1) a_k'(zeta).
    std::vector<std::vector<double>> g(static_cast<std::size_t>(s + 1) + 1);
    for (int k = 0; k <= s + 1; ++k) {
        std::vector<double> acc(static_cast<std::size_t>(std::max(1, p.deg_z())) + 1, 0.0);
        if (k >= 2) {
            auto a = p.m_power_coeffs(k - 1);
            for (std::size_t t = 0; t < a.size(); ++t) acc[t] += (k - 1) * a[t];
        }
        if (k <= s) {
            auto a = p.m_power_coeffs(k);
            for (std::size_t t = 1; t < a.size(); ++t) acc[t - 1] -= (tau - 1.0) * static_cast<double>(t) * a[t];
        }
        g[static_cast<std::size_t>(k)] = std::move(acc);
    }
    std::vector<EdgeCandidate> out;
    std::vector<cplx> zs;
    try {
        zs = matrix_poly_det_roots(sylvester_blocks(f, g));
    } catch (const error&) {
        return out;
    }
    for (cplx zeta : zs) {
        RootResult rr;
        try {
            rr = roots_in_m(p, zeta);
        } catch (const degenerate_point_error&) {
            continue;
        }
        cplx best_y = 0.0;
        double best = std::numeric_limits<double>::infinity();
        for (cplx y : rr.roots) {
            if (std::abs(y) < 1e-12) continue;
            cplx g1, g2;
            sys.eval(zeta, y, tau, g1, g2);
            double r = std::abs(g2) / (1.0 + std::abs(y) * std::abs(y));
            if (r < best) {
                best = r;
                best_y = y;
            }
        }
        if (!std::isfinite(best)) continue;
        cplx zeta_r = zeta, y_r = best_y;
        if (!sys.newton(zeta_r, y_r, tau)) continue;
        if (std::abs(y_r) < 1e-12) continue;
        EdgeCandidate c{zeta_r, y_r, zeta_r - (tau - 1.0) / y_r};
        bool dup = false;
        for (const auto& o : out)
            if (std::abs(o.zeta - c.zeta) <= 1e-7 * (1.0 + std::abs(c.zeta)) &&
                std::abs(o.y - c.y) <= 1e-6 * (1.0 + std::abs(c.y)))
                dup = true;
        if (!dup) out.push_back(c);
    }
    return out;
}

// Cusp system: (G1, G2) plus the second-order criticality condition
//   C3 = y [Pzz Py^2 - 2 Pzy Pz Py + Pyy Pz^2] + 2 Pz^2 Py = 0,
// solved as a real 3x3 Newton in (zeta, y, tau).
struct CuspSystem {
    const EdgeSystem* sys;

    void eval(double zeta, double y, double tau, double f[3]) const {
        cplx g1, g2;
        sys->eval(zeta, y, tau, g1, g2);
        f[0] = g1.real();
        f[1] = g2.real();
        double pz = sys->pz.eval(zeta, y).real();
        double py = sys->py.eval(zeta, y).real();
        double pzz = sys->pzz.eval(zeta, y).real();
        double pzy = sys->pzy.eval(zeta, y).real();
        double pyy = sys->pyy.eval(zeta, y).real();
        f[2] = y * (pzz * py * py - 2.0 * pzy * pz * py + pyy * pz * pz) + 2.0 * pz * pz * py;
    }

    bool newton(double& zeta, double& y, double& tau, int max_iter = 80) const {
        double f[3];
        for (int it = 0; it < max_iter; ++it) {
            eval(zeta, y, tau, f);
            // Numerical Jacobian; the third equation's analytic derivatives
            // need third partials and buy nothing at these sizes.
            double h[3] = {1e-7 * (1.0 + std::abs(zeta)), 1e-7 * (1.0 + std::abs(y)),
                           1e-7 * (1.0 + std::abs(tau))};
            double jac[3][3];
            for (int c = 0; c < 3; ++c) {
                double xp[3] = {zeta, y, tau}, xm[3] = {zeta, y, tau};
                xp[c] += h[c];
                xm[c] -= h[c];
                double fp[3], fm[3];
                eval(xp[0], xp[1], xp[2], fp);
                eval(xm[0], xm[1], xm[2], fm);
                for (int r = 0; r < 3; ++r) jac[r][c] = (fp[r] - fm[r]) / (2.0 * h[c]);
            }
            Eigen::Matrix3d J;
            Eigen::Vector3d F;
            for (int r = 0; r < 3; ++r) {
                F(r) = f[r];
                for (int c = 0; c < 3; ++c) J(r, c) = jac[r][c];
            }
            Eigen::Vector3d step = J.fullPivLu().solve(F);
            if (!step.allFinite()) return false;
            double damp = 1.0;
            double base = std::abs(f[0]) + std::abs(f[1]) + std::abs(f[2]);
            for (int hh = 0; hh < 10; ++hh) {
                double zt = zeta - damp * step(0), yt = y - damp * step(1), tt = tau - damp * step(2);
                double ft[3];
                eval(zt, yt, tt, ft);
                if (std::abs(ft[0]) + std::abs(ft[1]) + std::abs(ft[2]) <= base || hh == 9) {
                    zeta = zt;
                    y = yt;
                    tau = tt;
                    break;
                }
                damp *= 0.5;
            }
            if (std::abs(step(0)) * damp <= 1e-11 * (1.0 + std::abs(zeta)) &&
                std::abs(step(1)) * damp <= 1e-11 * (1.0 + std::abs(y)) &&
                std::abs(step(2)) * damp <= 1e-11 * (1.0 + std::abs(tau))) {
                eval(zeta, y, tau, f);
                double sc = term_scale(*sys->p, zeta, y);
                return std::abs(f[0]) <= 1e-8 * sc && std::abs(f[1]) <= 1e-6 * sc * (1 + y * y) &&
                       std::abs(f[2]) <= 1e-6 * sc * sc;
            }
        }
        return false;
    }
};

struct TrackedEndpoint {
    bool is_left;  // an 'a' endpoint (left end of a bulk)
    cplx zeta, y;  // current preimage, evolved even after annihilation
    std::vector<double> traj;  // per frame; NaN when missing
    bool alive = true;
    bool newton_ok = true;
    std::size_t column = 0;  // output column pair index
};

}  // namespace detail

// Spectral edges under decompression: warm-started Newton on the edge system
// per tracked endpoint per frame, with pushforward to the z axis.  Crossing
// inner endpoints annihilate (the bulks merged); new real branch-point pairs
// appearing inside an active bulk open a gap (the bulk split) and enter the
// track as a fresh pair.  Annihilated endpoints keep evolving internally as
// ghost branch points so the global candidate scan can tell them apart from
// genuine births.
inline EdgeTrack evolve_edges(const BivariatePoly& p, const TauSchedule& schedule,
                              const std::vector<Interval>& initial_support = {}) {
    schedule.validate();
    detail::EdgeSystem sys(p);

    // Initial endpoints at tau = 1: physical real branch points.
    std::vector<detail::TrackedEndpoint> eps;
    {
        BranchPointSet bps = branch_points(p);
        std::vector<BranchPoint> phys;
        for (const auto& b : bps.points)
            if (b.tag == BranchTag::physical_edge) phys.push_back(b);
        std::sort(phys.begin(), phys.end(),
                  [](const BranchPoint& a, const BranchPoint& b) { return a.z.real() < b.z.real(); });
        if (!initial_support.empty()) {
            // Keep only the endpoints bracketing the declared support.
            std::vector<BranchPoint> kept;
            for (const auto& iv : initial_support) {
                const BranchPoint* best_lo = nullptr;
                const BranchPoint* best_hi = nullptr;
                for (const auto& b : phys) {
                    if (!best_lo || std::abs(b.z.real() - iv.lo) < std::abs(best_lo->z.real() - iv.lo))
                        best_lo = &b;
                    if (!best_hi || std::abs(b.z.real() - iv.hi) < std::abs(best_hi->z.real() - iv.hi))
                        best_hi = &b;
                }
                if (best_lo) kept.push_back(*best_lo);
                if (best_hi && best_hi != best_lo) kept.push_back(*best_hi);
            }
            phys = std::move(kept);
            std::sort(phys.begin(), phys.end(),
                      [](const BranchPoint& a, const BranchPoint& b) { return a.z.real() < b.z.real(); });
        }
        if (phys.empty() || phys.size() % 2 != 0)
            throw validation_error("evolve_edges: could not identify an even set of initial edges");
        for (std::size_t i = 0; i < phys.size(); ++i) {
            detail::TrackedEndpoint e;
            e.is_left = (i % 2 == 0);
            e.zeta = phys[i].z;
            e.y = phys[i].m;
            e.column = i / 2;
            eps.push_back(std::move(e));
        }
    }
    std::size_t n_pairs = eps.size() / 2;

    double width_scale = 1.0;
    {
        double lo = eps.front().zeta.real(), hi = eps.back().zeta.real();
        width_scale = std::max(hi - lo, 1e-6 * std::max(1.0, std::abs(hi)));
    }

    EdgeTrack track;
    track.taus = schedule.ratios;
    const double nan = std::numeric_limits<double>::quiet_NaN();

    for (std::size_t f = 0; f < schedule.frames(); ++f) {
        double tau = schedule.ratios[f];
        double eps_real = 1e-6 * width_scale * std::max(1.0, tau);

        // Advance every endpoint (ghosts included).
        for (auto& e : eps) {
            if (f > 0) {
                cplx zeta = e.zeta, y = e.y;
                if (sys.newton(zeta, y, tau)) {
                    e.zeta = zeta;
                    e.y = y;
                    e.newton_ok = true;
                } else {
                    e.newton_ok = false;  // flagged failed this frame; keep warm start
                }
            }
            double push = nan;
            if (e.newton_ok) {
                cplx z = e.zeta - (tau - 1.0) / e.y;
                if (std::abs(z.imag()) < eps_real) push = z.real();
            }
            e.traj.push_back(e.alive ? push : nan);
        }

        // Merge rule: adjacent inner endpoints that crossed annihilate.
        for (;;) {
            struct AliveRef {
                double x;
                detail::TrackedEndpoint* e;
            };
            std::vector<AliveRef> alive;
            for (auto& e : eps)
                if (e.alive && !std::isnan(e.traj.back())) alive.push_back({e.traj.back(), &e});
            std::sort(alive.begin(), alive.end(), [](const AliveRef& a, const AliveRef& b) { return a.x < b.x; });
            bool merged = false;
            // A crossing b_j > a_{j+1} shows up as mis-ordered kinds in the
            // sorted list: the pattern a,b,a,b,... breaks at the crossed pair.
            for (std::size_t i = 0; i + 1 < alive.size() && !merged; ++i) {
                bool expect_left = (i % 2 == 0);
                if (alive[i].e->is_left != expect_left) {
                    // alive[i-1] and alive[i] are a crossed inner pair.
                    std::size_t k = i == 0 ? 1 : i;
                    alive[k - 1].e->alive = false;
                    alive[k].e->alive = false;
                    alive[k - 1].e->traj.back() = nan;
                    alive[k].e->traj.back() = nan;
                    merged = true;
                }
            }
            if (!merged) break;
        }

        // Birth scan: real candidates not matching any tracked preimage that
        // fall strictly inside an active bulk start a new pair.
        if (f > 0) {
            auto alive_sorted = [&]() {
                std::vector<std::pair<double, bool>> v;  // (x, is_left)
                for (auto& e : eps)
                    if (e.alive && !std::isnan(e.traj.back())) v.push_back({e.traj.back(), e.is_left});
                std::sort(v.begin(), v.end());
                return v;
            }();
            std::vector<Interval> bulks;
            for (std::size_t i = 0; i + 1 < alive_sorted.size(); ++i)
                if (alive_sorted[i].second && !alive_sorted[i + 1].second)
                    bulks.push_back({alive_sorted[i].first, alive_sorted[i + 1].first});

            auto cands = detail::edge_candidates(p, sys, tau);
            std::vector<detail::EdgeCandidate> births;
            for (const auto& c : cands) {
                if (std::abs(c.z.imag()) > eps_real) continue;
                bool known = false;
                for (const auto& e : eps)
                    if (std::abs(c.zeta - e.zeta) <= 1e-4 * (1.0 + std::abs(e.zeta)) &&
                        std::abs(c.y - e.y) <= 1e-3 * (1.0 + std::abs(e.y)))
                        known = true;
                if (known) continue;
                double x = c.z.real();
                double margin = 1e-5 * width_scale;
                for (const auto& b : bulks)
                    if (x > b.lo + margin && x < b.hi - margin) {
                        births.push_back(c);
                        break;
                    }
            }
            std::sort(births.begin(), births.end(),
                      [](const detail::EdgeCandidate& a, const detail::EdgeCandidate& b) {
                          return a.z.real() < b.z.real();
                      });
            // Births come in pairs bounding the new gap: (new b, new a).
            for (std::size_t i = 0; i + 1 < births.size(); i += 2) {
                detail::TrackedEndpoint eb, ea;
                eb.is_left = false;
                eb.zeta = births[i].zeta;
                eb.y = births[i].y;
                eb.traj.assign(f, nan);
                eb.traj.push_back(births[i].z.real());
                eb.column = n_pairs;
                ea.is_left = true;
                ea.zeta = births[i + 1].zeta;
                ea.y = births[i + 1].y;
                ea.traj.assign(f, nan);
                ea.traj.push_back(births[i + 1].z.real());
                ea.column = n_pairs;
                ++n_pairs;
                eps.push_back(std::move(eb));
                eps.push_back(std::move(ea));
            }
        }

        int alive_count = 0;
        for (auto& e : eps)
            if (e.alive && !std::isnan(e.traj.back())) ++alive_count;
        track.bulk_count.push_back(alive_count / 2);
    }

    // Assemble frame rows: per original-pair columns in birth order; each
    // pair contributes (a, b).
    track.edges.assign(schedule.frames(), std::vector<double>(2 * n_pairs, nan));
    for (const auto& e : eps) {
        // column 2*pair for 'a', 2*pair+1 for 'b'
        for (std::size_t f = 0; f < e.traj.size(); ++f) {
            double v = e.traj[f];
            if (std::isnan(v)) continue;
            std::size_t col = 2 * e.column + (e.is_left ? 0 : 1);
            track.edges[f][col] = v;
        }
    }
    return track;
}

// Cusp hunt from seeds; returns converged, deduplicated events inside the
// requested ratio range.
inline std::vector<CuspEvent> find_cusps(const BivariatePoly& p, double tau_lo, double tau_hi,
                                         const std::vector<CuspEvent>& seeds) {
    detail::EdgeSystem sys(p);
    detail::CuspSystem cusp{&sys};
    std::vector<CuspEvent> out;
    for (const auto& s : seeds) {
        double zeta = s.point.zeta.real(), y = s.point.y.real(), tau = s.tau_star;
        if (!cusp.newton(zeta, y, tau)) continue;
        if (tau < tau_lo - 1e-9 || tau > tau_hi + 1e-9) continue;
        if (std::abs(y) < 1e-12) continue;
        CuspEvent ev;
        ev.tau_star = tau;
        ev.point = {cplx(zeta, 0.0), cplx(y, 0.0)};
        ev.x_star = zeta - (tau - 1.0) / y;
        bool dup = false;
        for (const auto& o : out)
            if (std::abs(o.tau_star - ev.tau_star) <= 1e-6 * (1.0 + std::abs(ev.tau_star)) &&
                std::abs(o.x_star - ev.x_star) <= 1e-6 * (1.0 + std::abs(ev.x_star)))
                dup = true;
        if (!dup) out.push_back(ev);
    }
    std::sort(out.begin(), out.end(), [](const CuspEvent& a, const CuspEvent& b) { return a.tau_star < b.tau_star; });
    return out;
}

// Seeds from an edge track: frames where adjacent endpoints approach within
// 5% of the local bulk width, and frames where a pair was just born or lost.
inline std::vector<CuspEvent> cusp_seeds_from_track(const BivariatePoly& p, const EdgeTrack& track) {
    detail::EdgeSystem sys(p);
    std::vector<CuspEvent> seeds;
    auto add_seed = [&](double x, double tau) {
        // Pull the preimage back from the candidate scan at this frame.
        auto cands = detail::edge_candidates(p, sys, tau);
        const detail::EdgeCandidate* best = nullptr;
        for (const auto& c : cands) {
            if (!best || std::abs(c.z.real() - x) < std::abs(best->z.real() - x)) best = &c;
        }
        if (!best) return;
        CuspEvent s;
        s.tau_star = tau;
        s.x_star = x;
        s.point = {best->zeta, best->y};
        seeds.push_back(s);
    };
    for (std::size_t f = 0; f < track.taus.size(); ++f) {
        auto alive = track.alive_at(f);
        if (alive.size() >= 2) {
            double span = alive.back() - alive.front();
            for (std::size_t i = 0; i + 1 < alive.size(); ++i)
                if (alive[i + 1] - alive[i] < 0.05 * span)
                    add_seed(0.5 * (alive[i] + alive[i + 1]), track.taus[f]);
        }
        if (f > 0 && track.bulk_count[f] != track.bulk_count[f - 1]) {
            // Transition frame: seed at the change location.
            auto prev = track.alive_at(f - 1);
            for (double x : alive) {
                bool existed = false;
                for (double q : prev)
                    if (std::abs(q - x) < 0.05 * (1.0 + std::abs(x))) existed = true;
                if (!existed) add_seed(x, track.taus[f]);
            }
            for (double q : prev) {
                bool still = false;
                for (double x : alive)
                    if (std::abs(q - x) < 0.05 * (1.0 + std::abs(q))) still = true;
                if (!still) add_seed(q, track.taus[f]);
            }
        }
    }
    return seeds;
}

// ---------------------------------------------------------------------------
// Atoms
// ---------------------------------------------------------------------------

// Residue weight at a root x of the leading coefficient a_s:
// w = a_{s-1}(x) / a_s'(x); physical only when it lands in [0, 1].
inline std::optional<double> atom_weight_from_polynomial(const BivariatePoly& p, double x) {
    const int s = p.deg_m();
    auto a_s = p.m_power_coeffs(s);
    auto a_s1 = p.m_power_coeffs(s - 1);
    auto eval = [](const std::vector<double>& c, double x) {
        double acc = 0.0;
        for (std::size_t j = c.size(); j-- > 0;) acc = acc * x + c[j];
        return acc;
    };
    double scale = 0.0;
    for (double c : a_s) scale = std::max(scale, std::abs(c));
    double vs = eval(a_s, x);
    if (std::abs(vs) > 1e-6 * scale * std::pow(1.0 + std::abs(x), p.deg_z()))
        throw parameter_error("atom_weight_from_polynomial: x is not a root of the leading coefficient");
    std::vector<double> ds(a_s.size() > 1 ? a_s.size() - 1 : 1, 0.0);
    for (std::size_t j = 1; j < a_s.size(); ++j) ds[j - 1] = static_cast<double>(j) * a_s[j];
    double dvs = eval(ds, x);
    if (std::abs(dvs) <= 1e-12 * scale)
        throw higher_order_root_error("atom_weight_from_polynomial: higher-order root of the leading coefficient");
    double w = eval(a_s1, x) / dvs;
    if (w < -1e-6 || w > 1.0 + 1e-6) return std::nullopt;
    return std::clamp(w, 0.0, 1.0);
}

// Scan the leading coefficient for physical atoms.
inline std::vector<AtomState> detect_atoms(const BivariatePoly& p) {
    std::vector<AtomState> out;
    auto a_s = p.m_power_coeffs(p.deg_m());
    double scale = 0.0;
    for (double c : a_s) scale = std::max(scale, std::abs(c));
    if (scale == 0.0) return out;
    for (double x : real_roots(a_s)) {
        try {
            auto w = atom_weight_from_polynomial(p, x);
            if (w && *w > 1e-10) out.push_back({x, *w});
        } catch (const error&) {
            continue;
        }
    }
    std::sort(out.begin(), out.end(), [](const AtomState& a, const AtomState& b) { return a.location < b.location; });
    return out;
}

// Atom weight along the flow: the location is frozen, the weight obeys
// w(tau) = 1 - (1 - w0)/tau.
inline double evolve_atom(double w0, double tau) {
    if (w0 < 0.0 || w0 > 1.0) throw domain_error("evolve_atom: weight must lie in [0, 1]");
    if (tau < 1.0) throw domain_error("evolve_atom: tau must be >= 1");
    return 1.0 - (1.0 - w0) / tau;
}

// ---------------------------------------------------------------------------
// Edge velocities
// ---------------------------------------------------------------------------

// d x*/dt at a tracked edge preimage (t = log tau).  Solves the 2x2 linear
// system obtained by differentiating the edge conditions along the flow.
inline double edge_velocity(const BivariatePoly& p, const CurvePoint& point, double tau) {
    detail::EdgeSystem sys(p);
    cplx zeta = point.zeta, y = point.y;
    cplx j[2][2];
    sys.jacobian(zeta, y, tau, j);
    cplx det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    double jscale = std::abs(j[0][0] * j[1][1]) + std::abs(j[0][1] * j[1][0]);
    if (std::abs(det) <= 1e-9 * std::max(jscale, 1e-300))
        throw cusp_proximity_error("edge_velocity: singular Jacobian (cusp nearby)");
    // d/dt of (G1, G2) = 0 with tau' = tau:  J [zeta', y'] = -tau [0, dG2/dtau],
    // dG2/dtau = -dP/dzeta.
    cplx rhs2 = tau * sys.pz.eval(zeta, y);
    cplx zp = (-j[0][1] * rhs2) / det;
    cplx yp = (j[0][0] * rhs2) / det;
    cplx xdot = zp - tau / y + (tau - 1.0) * yp / (y * y);
    return xdot.real();
}

// Initial edge velocity from the Hilbert transform at the edge:
// x'(0) = 1 / (pi H).
inline double initial_edge_velocity(double hilbert_value) {
    if (hilbert_value == 0.0)
        throw degenerate_edge_error("initial_edge_velocity: vanishing Hilbert transform");
    return 1.0 / (3.14159265358979323846 * hilbert_value);
}

// ---------------------------------------------------------------------------
// Moment evolution
// ---------------------------------------------------------------------------

// mu_n(tau) = sum_k kappa_{n,k} tau^k with the kappa recurrence driven only
// by the initial moments.  mu_0 and mu_1 are invariant.
inline MomentVector evolve_moments(const MomentVector& initial, double tau) {
    if (tau < 1.0) throw domain_error("evolve_moments: tau must be >= 1");
    const int r = static_cast<int>(initial.order());
    std::vector<std::vector<double>> kappa(static_cast<std::size_t>(r) + 1);
    for (int n = 0; n <= r; ++n) kappa[static_cast<std::size_t>(n)].assign(static_cast<std::size_t>(std::max(1, n)), 0.0);
    if (r >= 1) kappa[1][0] = initial[1];
    for (int n = 2; n <= r; ++n) {
        double partial = 0.0;
        for (int k = 0; k <= n - 2; ++k) {
            double conv = 0.0;
            for (int i = 1; i <= n - 1; ++i) {
                for (int j = 0; j <= k; ++j) {
                    int jj = k - j;
                    if (j >= i || jj >= n - i) continue;
                    conv += kappa[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *
                            kappa[static_cast<std::size_t>(n - i)][static_cast<std::size_t>(jj)];
                }
            }
            kappa[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)] =
                (0.5 * k + 1.0) / (n - k - 1.0) * conv;
            partial += kappa[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)];
        }
        kappa[static_cast<std::size_t>(n)][static_cast<std::size_t>(n - 1)] = initial[static_cast<std::size_t>(n)] - partial;
    }
    std::vector<double> mu(static_cast<std::size_t>(r) + 1);
    mu[0] = 1.0;
    for (int n = 1; n <= r; ++n) {
        double acc = 0.0, tk = 1.0;
        for (int k = 0; k <= n - 1; ++k) {
            acc += kappa[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)] * tk;
            tk *= tau;
        }
        mu[static_cast<std::size_t>(n)] = acc;
    }
    return MomentVector(std::move(mu));
}

// ---------------------------------------------------------------------------
// Finite-size left-edge correction (experimental)
// ---------------------------------------------------------------------------

struct FiniteSizeResult {
    double corrected = 0.0;
    bool correction_available = false;
};

// Finite-n correction of a left spectral edge.  Integrates the resolvent
// surrogate dy/dzeta = -n P2(zeta, y), with P2 the second-order Taylor
// expansion of P in m about the branch-point value, from an anchor on the
// physical branch left of the edge, and locates the sign change of
//   g = y^2 - n (tau - 1) P2(zeta, y).
// The quasi-static regime (far from the turning point) is stepped
// algebraically; an explicit embedded RK pair handles the boundary layer.
// Converges to the uncorrected edge as n -> infinity.
inline FiniteSizeResult finite_size_left_edge(const BivariatePoly& p, double n_size, double tau,
                                              double uncorrected_edge) {
    FiniteSizeResult out;
    out.corrected = uncorrected_edge;
    if (n_size <= 0) throw parameter_error("finite_size_left_edge: n must be positive");
    if (tau <= 1.0) return out;  // no decompression, nothing to correct

    detail::EdgeSystem sys(p);
    // Recover the edge preimage (zeta*, y*) whose pushforward matches.
    auto cands = detail::edge_candidates(p, sys, tau);
    const detail::EdgeCandidate* edge = nullptr;
    for (const auto& c : cands) {
        if (std::abs(c.z.imag()) > 1e-6 * (1.0 + std::abs(c.z.real()))) continue;
        if (!edge || std::abs(c.z.real() - uncorrected_edge) < std::abs(edge->z.real() - uncorrected_edge))
            edge = &c;
    }
    if (!edge || std::abs(edge->z.real() - uncorrected_edge) > 0.05 * (1.0 + std::abs(uncorrected_edge)))
        return out;
    const double zeta_star = edge->zeta.real();
    const double y_star = edge->y.real();

    // Anchor one local width to the left on the physical branch.
    double width = 0.0;
    for (const auto& c : cands)
        if (std::abs(c.z.imag()) < 1e-6 * (1.0 + std::abs(c.z.real())))
            width = std::max(width, std::abs(c.zeta.real() - zeta_star));
    if (width == 0.0) width = std::max(1.0, std::abs(zeta_star));
    width = std::min(width, std::max(1.0, std::abs(zeta_star)));

    // Expected Tracy-Widom displacement scale; skip the integration when the
    // correction cannot rise above double-precision noise on the edge.
    if (std::pow(n_size, -2.0 / 3.0) * width < 1e-9 * std::max(1.0, std::abs(uncorrected_edge))) {
        out.correction_available = true;
        return out;
    }

    BivariatePoly py = p.derivative(0, 1), pyy = p.derivative(0, 2);
    auto p2 = [&](double zeta, double y) {
        double d = y - y_star;
        return p.eval(zeta, y_star).real() + py.eval(zeta, y_star).real() * d +
               0.5 * pyy.eval(zeta, y_star).real() * d * d;
    };
    auto p2_y = [&](double zeta, double y) {
        return py.eval(zeta, y_star).real() + pyy.eval(zeta, y_star).real() * (y - y_star);
    };
    auto rhs = [&](double zeta, double y) { return -n_size * p2(zeta, y); };
    auto gfun = [&](double zeta, double y) { return y * y - n_size * (tau - 1.0) * p2(zeta, y); };

    double zeta_a = zeta_star - width;
    double y_a;
    try {
        y_a = stieltjes_eval(p, {cplx(zeta_a, 0.0)})[0].real();
    } catch (const error&) {
        return out;
    }

    double zeta = zeta_a, y = y_a;
    double g_prev = gfun(zeta, y);
    double zeta_prev = zeta, y_prev_state = y;
    const double zeta_end = zeta_star + 0.75 * width;
    double h = width / 4096.0;
    const double h_min = width * 1e-13;
    int steps = 0;
    const int max_steps = 4000000;

    while (zeta < zeta_end && steps++ < max_steps) {
        double rate = std::abs(n_size * p2_y(zeta, y));
        bool quasi_static = rate * h > 50.0;
        if (quasi_static) {
            // The solution is slaved to y(zeta) with P2 ~ -y'/n; advance by
            // projecting onto the slow manifold.
            double step = h;
            double znext = std::min(zeta + step, zeta_end);
            double yq = y;
            for (int it = 0; it < 30; ++it) {
                double f = p2(znext, yq);
                double df = p2_y(znext, yq);
                if (std::abs(df) < 1e-14) break;
                double d = f / df;
                yq -= d;
                if (std::abs(d) <= 1e-14 * (1.0 + std::abs(yq))) break;
            }
            // Keep the O(1/n) lag of the true solution behind the manifold:
            // y ~ Y(zeta) - Y'(zeta) / (n P2_y), with Y' from implicit
            // differentiation of P2(zeta, Y) = 0.
            double dfq = p2_y(znext, yq);
            double slope = 0.0;
            double hz = 1e-6 * width;
            double fz = (p2(znext + hz, yq) - p2(znext - hz, yq)) / (2 * hz);
            if (std::abs(dfq) > 1e-14) slope = -fz / dfq;
            double lag = (std::abs(dfq) > 1e-14) ? -slope / (n_size * dfq) : 0.0;
            y = yq + lag;
            zeta = znext;
            h = std::min(h * 1.2, width / 256.0);
        } else {
            // Cash-Karp style embedded step on the stiff layer.
            double k1 = rhs(zeta, y);
            double k2 = rhs(zeta + 0.5 * h, y + 0.5 * h * k1);
            double k3 = rhs(zeta + 0.5 * h, y + 0.5 * h * k2);
            double k4 = rhs(zeta + h, y + h * k3);
            double y4 = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
            double y2 = y + h * k2;  // midpoint method as error probe
            double err = std::abs(y4 - y2);
            double tol = 1e-10 * (1.0 + std::abs(y4)) + 1e-12;
            if (err > tol && h > h_min) {
                h = std::max(h_min, 0.5 * h);
                continue;
            }
            y = y4;
            zeta += h;
            if (err < 0.1 * tol) h = std::min(h * 1.6, width / 256.0);
        }
        double g = gfun(zeta, y);
        if (g_prev < 0.0 && g >= 0.0) {
            double t = g_prev / (g_prev - g);
            double zc = zeta_prev + t * (zeta - zeta_prev);
            double yc = y_prev_state + t * (y - y_prev_state);
            if (std::abs(yc) > 1e-12) {
                out.corrected = zc - (tau - 1.0) / yc;
                out.correction_available = true;
                return out;
            }
        }
        g_prev = g;
        zeta_prev = zeta;
        y_prev_state = y;
    }
    return out;  // no sign change: flag stays false, uncorrected returned
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

// EdgeTrack CSV: tau, n_equivalent, a1, b1, ..., ak, bk, bulk_count with
// empty fields for missing endpoints.
inline void write_edge_track(const std::string& path, const EdgeTrack& track, double n0 = 1.0) {
    std::ofstream out(path);
    if (!out) throw error("write_edge_track: cannot open " + path);
    std::size_t k = track.edges.empty() ? 0 : track.edges.front().size() / 2;
    out << "tau,n_equivalent";
    for (std::size_t j = 1; j <= k; ++j) out << ",a" << j << ",b" << j;
    out << ",bulk_count\n";
    char buf[64];
    for (std::size_t f = 0; f < track.taus.size(); ++f) {
        std::snprintf(buf, sizeof buf, "%.17g", track.taus[f]);
        out << buf << "," << static_cast<long long>(std::llround(n0 * track.taus[f]));
        for (double v : track.edges[f]) {
            out << ",";
            if (!std::isnan(v)) {
                std::snprintf(buf, sizeof buf, "%.17g", v);
                out << buf;
            }
        }
        out << "," << track.bulk_count[f] << "\n";
    }
}

inline nlohmann::json cusps_to_json(const std::vector<CuspEvent>& events) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : events)
        arr.push_back({{"tau", e.tau_star},
                       {"x", e.x_star},
                       {"zeta", e.point.zeta.real()},
                       {"y", e.point.y.real()}});
    return arr;
}

inline nlohmann::json atoms_to_json(const std::vector<AtomState>& atoms) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& a : atoms) arr.push_back({{"location", a.location}, {"weight", a.weight}});
    return arr;
}

}  // namespace fdpm
