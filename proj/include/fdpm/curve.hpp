#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "fdpm/bivariate_poly.hpp"
#include "fdpm/errors.hpp"
#include "fdpm/parallel.hpp"
#include "fdpm/roots.hpp"
#include "fdpm/spectra.hpp"

namespace fdpm {

// A point on the spectral curve P(zeta, y) = 0.
struct CurvePoint {
    cplx zeta;
    cplx y;
};

enum class BranchTag { physical_edge, non_physical, complex_pair };

struct BranchPoint {
    cplx z;
    cplx m;
    BranchTag tag = BranchTag::non_physical;
    bool ambiguous = false;  // sheet-connectivity test was inconclusive
};

struct BranchPointSet {
    std::vector<BranchPoint> points;

    std::vector<double> physical_edges() const {
        std::vector<double> out;
        for (const auto& p : points)
            if (p.tag == BranchTag::physical_edge) out.push_back(p.z.real());
        std::sort(out.begin(), out.end());
        return out;
    }
};

namespace detail {

// Scale of the terms of P at (z, m); the meaningful zero threshold for
// P(z, m) at that point.
inline double term_scale(const BivariatePoly& p, cplx z, cplx m) {
    double az = std::abs(z), am = std::abs(m);
    double acc = 0.0;
    double zi = 1.0;
    for (int i = 0; i <= p.deg_z(); ++i) {
        double mj = 1.0;
        for (int j = 0; j <= p.deg_m(); ++j) {
            acc += std::abs(p.coeff(i, j)) * zi * mj;
            mj *= am;
        }
        zi *= az;
    }
    return acc > 0 ? acc : 1.0;
}

// Damped Newton for m -> P(z, m) = 0.  Returns true on convergence.
inline bool newton_in_m(const BivariatePoly& p, cplx z, cplx& m, int max_iter = 50) {
    for (int it = 0; it < max_iter; ++it) {
        auto g = p.eval_grads(z, m);
        double scale = term_scale(p, z, m);
        if (std::abs(g.p) <= 1e-15 * scale) return true;
        if (std::abs(g.pm) == 0.0) return false;
        cplx step = g.p / g.pm;
        double pref = std::abs(g.p);
        cplx trial = m;
        for (int h = 0; h <= 8; ++h) {
            trial = m - step;
            if (std::abs(p.eval(z, trial)) <= pref) break;
            step *= 0.5;
        }
        m = trial;
        if (std::abs(step) <= 1e-12 * (1.0 + std::abs(m))) {
            return std::abs(p.eval(z, m)) <= 1e-8 * scale;
        }
    }
    return std::abs(p.eval(z, m)) <= 1e-10 * term_scale(p, z, m);
}

}  // namespace detail

// All roots of m -> P(z, m).  When the leading coefficient vanishes at z the
// degree drops; the available roots are returned with the flag set, and
// callers treat such points as near-poles.
inline RootResult roots_in_m(const BivariatePoly& p, cplx z) {
    auto coeffs = p.m_coeffs_at(z);
    double scale = 0.0;
    for (const auto& c : coeffs) scale = std::max(scale, std::abs(c));
    if (scale == 0.0) throw degenerate_point_error("roots_in_m: all coefficients vanish at z");
    auto out = poly_roots(coeffs, 1e-13);
    // Polish against the full bivariate evaluation.
    for (auto& r : out.roots) detail::newton_in_m(p, z, r, 8);
    return out;
}

// Physical-root anchor.  Picks the root closest to -1/z_a (far-field mode)
// or to a supplied reference value, then enforces the Herglotz check
// Im(m) sign(Im z_a) > 0.
inline cplx anchor_physical(const BivariatePoly& p, cplx z_a, std::optional<cplx> reference = {}) {
    cplx target = reference ? *reference : -1.0 / z_a;
    auto rr = roots_in_m(p, z_a);
    if (rr.roots.empty()) throw anchor_error("anchor_physical: no roots at anchor point");
    cplx best = rr.roots.front();
    double bd = std::abs(best - target);
    for (cplx r : rr.roots) {
        double d = std::abs(r - target);
        if (d < bd) {
            bd = d;
            best = r;
        }
    }
    if (z_a.imag() != 0.0) {
        if (best.imag() * (z_a.imag() > 0 ? 1.0 : -1.0) <= 0.0)
            throw anchor_error("anchor_physical: nearest root fails the Herglotz check; try a different anchor");
    } else {
        // On the real axis the physical branch exists only off the support,
        // where it is real.
        if (std::abs(best.imag()) > 1e-8 * (1.0 + std::abs(best)))
            throw anchor_error("anchor_physical: real anchor lies inside the support");
    }
    return best;
}

namespace detail {

struct ContinuationPolicy {
    int max_depth = 40;
    double accept_factor = 0.5;   // of the distance to the nearest other root
    double trust_factor = 0.05;   // predictor accuracy gate, relative to |m|
};

// One predictor-corrector move z0 -> z1 along the sheet through (z0, m0).
// Subdivides recursively (fixed halving policy, so repeated runs are
// bitwise identical) when the corrected root lands too far from the
// prediction relative to the local sheet separation.
inline cplx continue_segment(const BivariatePoly& p, cplx z0, cplx m0, cplx z1, int depth,
                             const ContinuationPolicy& pol) {
    auto g = p.eval_grads(z0, m0);
    if (std::abs(g.pm) <= 1e-13 * term_scale(p, z0, m0))
        throw branch_point_collision_error("continue_branch: dP/dm vanished on the path");
    cplx m_pred = m0 - (g.pz / g.pm) * (z1 - z0);
    cplx m_corr = m_pred;
    bool ok = newton_in_m(p, z1, m_corr);
    if (ok) {
        // Acceptance radius: half the distance to the nearest other root of
        // P(z1, .), further capped by a predictor trust gate.  The cap
        // matters when sheets are far apart but the step is too long for the
        // tangent to mean anything (e.g. the first hop from a far anchor):
        // without it a wild prediction can land within half the sheet gap of
        // the wrong root and get accepted.
        auto rr = roots_in_m(p, z1);
        double nearest_other = std::numeric_limits<double>::infinity();
        double self_d = std::numeric_limits<double>::infinity();
        for (cplx r : rr.roots) {
            double d = std::abs(r - m_corr);
            if (d < self_d) {
                nearest_other = self_d;
                self_d = d;
            } else if (d < nearest_other) {
                nearest_other = d;
            }
        }
        double radius = pol.trust_factor * (1.0 + std::abs(m_corr));
        if (rr.roots.size() > 1) radius = std::min(radius, pol.accept_factor * nearest_other);
        if (std::abs(m_corr - m_pred) <= radius) return m_corr;
    }
    if (depth >= pol.max_depth)
        throw stiffness_error("continue_branch: max subdivision depth exceeded", z1);
    cplx zm = 0.5 * (z0 + z1);
    cplx mm = continue_segment(p, z0, m0, zm, depth + 1, pol);
    return continue_segment(p, zm, mm, z1, depth + 1, pol);
}

}  // namespace detail

// Lift a z-plane path to the spectral curve starting from (path[0], m_start).
// Tangent prediction dm = -(dP/dz)/(dP/dm) dz followed by Newton correction
// on P = 0, subdividing stiff segments.
inline cplx continue_branch(const BivariatePoly& p, const std::vector<cplx>& path, cplx m_start) {
    if (path.empty()) throw parameter_error("continue_branch: empty path");
    double scale0 = detail::term_scale(p, path.front(), m_start);
    if (std::abs(p.eval(path.front(), m_start)) > 1e-8 * scale0)
        throw parameter_error("continue_branch: starting point is not on the curve");
    detail::ContinuationPolicy pol;
    cplx m = m_start;
    for (std::size_t k = 0; k + 1 < path.size(); ++k)
        m = detail::continue_segment(p, path[k], m, path[k + 1], 0, pol);
    return m;
}

// ---------------------------------------------------------------------------
// Branch points: solutions of {P = 0, dP/dm = 0}
// ---------------------------------------------------------------------------

namespace detail {

// Roots of det(S(z)) for a square matrix polynomial S(z) = sum_k S_k z^k,
// via the block-companion linearization solved as a generalized (QZ)
// eigenproblem.  Infinite eigenvalues (singular leading block) are dropped.
inline std::vector<cplx> matrix_poly_det_roots(const std::vector<Eigen::MatrixXd>& blocks) {
    int deg = static_cast<int>(blocks.size()) - 1;
    while (deg > 0 && blocks[static_cast<std::size_t>(deg)].cwiseAbs().maxCoeff() == 0.0) --deg;
    if (deg <= 0) return {};
    const Eigen::Index m = blocks[0].rows();
    const Eigen::Index dim = m * deg;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::MatrixXd b = Eigen::MatrixXd::Identity(dim, dim);
    for (int k = 0; k < deg - 1; ++k) a.block((k)*m, (k + 1) * m, m, m).setIdentity();
    for (int k = 0; k < deg; ++k)
        a.block((deg - 1) * m, k * m, m, m) = -blocks[static_cast<std::size_t>(k)];
    b.block((deg - 1) * m, (deg - 1) * m, m, m) = blocks[static_cast<std::size_t>(deg)];

    Eigen::GeneralizedEigenSolver<Eigen::MatrixXd> ges;
    ges.compute(a, b, /*computeEigenvectors=*/false);
    if (ges.info() != Eigen::Success) throw error("matrix_poly_det_roots: QZ failed");
    std::vector<cplx> out;
    for (Eigen::Index i = 0; i < dim; ++i) {
        cplx alpha = ges.alphas()(i);
        double beta = ges.betas()(i);
        if (std::abs(beta) <= 1e-12 * (1.0 + std::abs(alpha))) continue;  // eigenvalue at infinity
        out.push_back(alpha / beta);
    }
    return out;
}

// Sylvester-style resultant blocks in y for two polynomials in (z, y) whose
// y-coefficients are real polynomials in z.  f has y-degree df, g has dg;
// the matrix is (df+dg) square and each entry a z-polynomial.
inline std::vector<Eigen::MatrixXd> sylvester_blocks(
    const std::vector<std::vector<double>>& f,  // f[j] = z-poly multiplying y^j
    const std::vector<std::vector<double>>& g) {
    const int df = static_cast<int>(f.size()) - 1;
    const int dg = static_cast<int>(g.size()) - 1;
    const int n = df + dg;
    std::size_t zdeg = 0;
    for (const auto& c : f) zdeg = std::max(zdeg, c.size());
    for (const auto& c : g) zdeg = std::max(zdeg, c.size());
    std::vector<Eigen::MatrixXd> blocks(zdeg, Eigen::MatrixXd::Zero(n, n));
    // Rows 0..dg-1: shifted copies of f (descending powers of y across
    // columns); rows dg..n-1: shifted copies of g.
    for (int r = 0; r < dg; ++r)
        for (int j = 0; j <= df; ++j) {
            const auto& cz = f[static_cast<std::size_t>(df - j)];
            for (std::size_t k = 0; k < cz.size(); ++k) blocks[k](r, r + j) = cz[k];
        }
    for (int r = 0; r < df; ++r)
        for (int j = 0; j <= dg; ++j) {
            const auto& cz = g[static_cast<std::size_t>(dg - j)];
            for (std::size_t k = 0; k < cz.size(); ++k) blocks[k](dg + r, r + j) = cz[k];
        }
    return blocks;
}

// Newton refinement of a (z, m) branch-point pair on {P = 0, P_m = 0}.
inline bool refine_branch_point(const BivariatePoly& p, const BivariatePoly& pm, cplx& z, cplx& m) {
    for (int it = 0; it < 30; ++it) {
        auto g = p.eval_grads(z, m);     // P, P_z, P_m
        auto h = pm.eval_grads(z, m);    // P_m, P_mz, P_mm
        Eigen::Matrix2cd jac;
        jac << g.pz, g.pm, h.pz, h.pm;
        Eigen::Vector2cd rhs(g.p, h.p);
        if (std::abs(jac.determinant()) < 1e-300) return false;
        Eigen::Vector2cd step = jac.fullPivLu().solve(rhs);
        z -= step(0);
        m -= step(1);
        if (std::abs(step(0)) <= 1e-13 * (1.0 + std::abs(z)) &&
            std::abs(step(1)) <= 1e-13 * (1.0 + std::abs(m)))
            return true;
    }
    double sc = term_scale(p, z, m);
    return std::abs(p.eval(z, m)) <= 1e-8 * sc && std::abs(pm.eval(z, m)) <= 1e-8 * sc;
}

}  // namespace detail

// Conservative bound for the spectral scale of the law represented by P:
// the largest magnitude among branch-point candidates and leading-coefficient
// roots.  Far-field anchors are placed as multiples of this.
inline double spectral_scale(const BivariatePoly& p) {
    std::vector<std::vector<double>> f(static_cast<std::size_t>(p.deg_m()) + 1);
    for (int j = 0; j <= p.deg_m(); ++j) f[static_cast<std::size_t>(j)] = p.m_power_coeffs(j);
    BivariatePoly pm = p.derivative(0, 1);
    std::vector<std::vector<double>> g(static_cast<std::size_t>(std::max(0, p.deg_m() - 1)) + 1);
    for (int j = 0; j <= std::max(0, p.deg_m() - 1); ++j) g[static_cast<std::size_t>(j)] = pm.m_power_coeffs(j);
    double scale = 1.0;
    try {
        for (cplx z : detail::matrix_poly_det_roots(detail::sylvester_blocks(f, g)))
            scale = std::max(scale, std::abs(z));
    } catch (const error&) {
    }
    // Poles of m live at roots of the leading coefficient.
    auto lead = p.m_power_coeffs(p.deg_m());
    double lmax = 0.0;
    for (double c : lead) lmax = std::max(lmax, std::abs(c));
    if (lmax > 0.0)
        for (double r : real_roots(lead)) scale = std::max(scale, std::abs(r));
    return scale;
}

// Anchor-then-continue evaluation of the physical branch at arbitrary
// query points.  Queries in the lower half-plane are evaluated by Schwarz
// reflection.  `reference_sample`, when given, anchors against the empirical
// transform instead of the far-field normalization.
inline std::vector<cplx> stieltjes_eval(const BivariatePoly& p, const std::vector<cplx>& queries,
                                        const EigenSample* reference_sample = nullptr,
                                        std::optional<cplx> anchor_at = {}) {
    const double scale = spectral_scale(p);
    std::vector<cplx> out(queries.size());
    parallel_for(queries.size(), [&](std::size_t i) {
        cplx q = queries[i];
        bool reflect = q.imag() < 0.0;
        if (reflect) q = std::conj(q);
        cplx z_a = anchor_at ? *anchor_at : cplx(0.0, 64.0 * std::max(scale, std::abs(q)));
        cplx m_a;
        if (reference_sample) {
            m_a = anchor_physical(p, z_a, empirical_stieltjes(*reference_sample, z_a));
        } else {
            m_a = anchor_physical(p, z_a);
        }
        cplx m = continue_branch(p, {z_a, q}, m_a);
        if (q.imag() > 0.0 && m.imag() <= 0.0)
            throw stiffness_error("stieltjes_eval: Herglotz violated at query", q);
        out[i] = reflect ? std::conj(m) : m;
    });
    return out;
}

// Left-to-right sweep of the physical branch along a horizontal line
// Im z = delta.  One far-field anchor, then neighbor-to-neighbor
// continuation; much cheaper than anchoring every grid point.
inline std::vector<cplx> stieltjes_sweep(const BivariatePoly& p, const std::vector<double>& lambdas,
                                         double delta, double scale) {
    std::vector<cplx> out(lambdas.size());
    if (lambdas.empty()) return out;
    cplx z_a(lambdas.front(), 64.0 * std::max(scale, std::abs(lambdas.front())));
    cplx m = anchor_physical(p, z_a);
    m = continue_branch(p, {z_a, cplx(lambdas.front(), delta)}, m);
    out.front() = m;
    detail::ContinuationPolicy pol;
    for (std::size_t i = 1; i < lambdas.size(); ++i) {
        m = detail::continue_segment(p, cplx(lambdas[i - 1], delta), m, cplx(lambdas[i], delta), 0, pol);
        out[i] = m;
    }
    return out;
}

// All branch points of the curve with physical-edge classification.
//
// Real candidates are classified by probing the physical branch just off the
// axis on both sides: an edge must (a) have the physical value approach the
// colliding pair and (b) separate a dense side from an empty side.  Points
// where the two tests disagree are flagged ambiguous.
inline BranchPointSet branch_points(const BivariatePoly& p) {
    BranchPointSet out;
    const int s = p.deg_m();
    if (s < 1) return out;
    std::vector<std::vector<double>> f(static_cast<std::size_t>(s) + 1);
    for (int j = 0; j <= s; ++j) f[static_cast<std::size_t>(j)] = p.m_power_coeffs(j);
    BivariatePoly pm = p.derivative(0, 1);
    std::vector<std::vector<double>> g(static_cast<std::size_t>(std::max(0, s - 1)) + 1);
    for (int j = 0; j <= std::max(0, s - 1); ++j) g[static_cast<std::size_t>(j)] = pm.m_power_coeffs(j);

    std::vector<cplx> candidates = detail::matrix_poly_det_roots(detail::sylvester_blocks(f, g));
    if (candidates.empty()) return out;

    // Pair each candidate with the colliding root value and polish.
    struct Cand {
        cplx z, m;
        double gap;  // separation of the colliding pair
    };
    std::vector<Cand> polished;
    for (cplx z : candidates) {
        RootResult rr;
        try {
            rr = roots_in_m(p, z);
        } catch (const degenerate_point_error&) {
            continue;
        }
        if (rr.roots.size() < 2) continue;
        double best_gap = std::numeric_limits<double>::infinity();
        cplx best_m = 0.0;
        for (std::size_t a = 0; a < rr.roots.size(); ++a)
            for (std::size_t b = a + 1; b < rr.roots.size(); ++b) {
                double d = std::abs(rr.roots[a] - rr.roots[b]);
                if (d < best_gap) {
                    best_gap = d;
                    best_m = 0.5 * (rr.roots[a] + rr.roots[b]);
                }
            }
        double rscale = 1.0;
        for (cplx r : rr.roots) rscale = std::max(rscale, std::abs(r));
        if (best_gap > 1e-3 * rscale) continue;  // leading-coefficient zero, not a collision
        cplx zr = z, mr = best_m;
        if (!detail::refine_branch_point(p, pm, zr, mr)) continue;
        // Deduplicate.
        bool dup = false;
        for (const auto& c : polished)
            if (std::abs(c.z - zr) <= 1e-7 * (1.0 + std::abs(zr)) &&
                std::abs(c.m - mr) <= 1e-6 * (1.0 + std::abs(mr)))
                dup = true;
        if (!dup) polished.push_back({zr, mr, best_gap});
    }
    if (polished.empty()) return out;

    double zspread = 0.0;
    for (const auto& c : polished) zspread = std::max(zspread, std::abs(c.z));
    double width = std::max(zspread, 1e-12);
    const double real_tol = 1e-8 * width;
    const double eps = 1e-4 * width;   // lateral probe offset
    const double delta = 1e-6 * width; // vertical probe offset

    for (const auto& c : polished) {
        BranchPoint bp;
        bp.z = c.z;
        bp.m = c.m;
        if (std::abs(c.z.imag()) > real_tol) {
            bp.tag = BranchTag::complex_pair;
            out.points.push_back(bp);
            continue;
        }
        double x = c.z.real();
        try {
            auto vals = stieltjes_eval(p, {cplx(x, delta), cplx(x - eps, delta), cplx(x + eps, delta)});
            // (a) does the physical sheet participate in the collision?
            auto rr = roots_in_m(p, cplx(x, delta));
            std::vector<std::pair<double, cplx>> by_dist;
            for (cplx r : rr.roots) by_dist.push_back({std::abs(r - c.m), r});
            std::sort(by_dist.begin(), by_dist.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            bool participates = false;
            for (std::size_t k = 0; k < std::min<std::size_t>(2, by_dist.size()); ++k)
                if (std::abs(by_dist[k].second - vals[0]) <= 1e-6 * (1.0 + std::abs(vals[0])))
                    participates = true;
            // (b) density changes sides across the point?
            double rho_l = vals[1].imag(), rho_r = vals[2].imag();
            double hi = std::max(rho_l, rho_r), lo = std::min(rho_l, rho_r);
            bool one_sided = hi > 8.0 * std::max(lo, 0.0) && hi > 0.0;
            bool weak_one_sided = hi > 2.0 * std::max(lo, 0.0) && hi > 0.0;
            if (participates && one_sided) {
                bp.tag = BranchTag::physical_edge;
            } else if (participates && weak_one_sided) {
                bp.tag = BranchTag::physical_edge;
                bp.ambiguous = true;
            } else if (participates != weak_one_sided) {
                bp.tag = BranchTag::non_physical;
                bp.ambiguous = true;
            } else {
                bp.tag = BranchTag::non_physical;
            }
        } catch (const error&) {
            bp.tag = BranchTag::non_physical;
            bp.ambiguous = true;
        }
        out.points.push_back(bp);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Density recovery with delta-ladder extrapolation
// ---------------------------------------------------------------------------

namespace detail {

inline void validate_ladder(const std::vector<double>& delta_ladder, int cheb_degree) {
    if (delta_ladder.empty()) throw config_error("delta ladder must not be empty");
    for (std::size_t i = 0; i + 1 < delta_ladder.size(); ++i)
        if (delta_ladder[i] >= delta_ladder[i + 1])
            throw config_error("delta ladder must be strictly increasing");
    if (static_cast<int>(delta_ladder.size()) < cheb_degree + 1)
        throw config_error("delta ladder needs at least q+1 levels");
}

// Per-level weights of the delta -> 0 extrapolation: a least-squares
// degree-q Chebyshev fit over the ladder (mapped affinely to [-1, 1]),
// evaluated at delta = 0.
inline std::vector<double> ladder_weights(const std::vector<double>& delta_ladder, int cheb_degree) {
    const std::size_t L = delta_ladder.size();
    const double dmin = delta_ladder.front(), dmax = delta_ladder.back();
    auto to_eta = [&](double d) { return (2.0 * d - (dmax + dmin)) / (dmax - dmin); };
    auto cheb_row = [&](double eta, Eigen::VectorXd& row) {
        double t0 = 1.0, t1 = eta;
        for (int d = 0; d <= cheb_degree; ++d) {
            if (d == 0)
                row(d) = 1.0;
            else if (d == 1)
                row(d) = eta;
            else {
                double t2 = 2.0 * eta * t1 - t0;
                row(d) = t2;
                t0 = t1;
                t1 = t2;
            }
        }
    };
    Eigen::MatrixXd design(static_cast<Eigen::Index>(L), cheb_degree + 1);
    Eigen::VectorXd row(cheb_degree + 1);
    for (std::size_t k = 0; k < L; ++k) {
        cheb_row(to_eta(delta_ladder[k]), row);
        design.row(static_cast<Eigen::Index>(k)) = row;
    }
    Eigen::VectorXd cheb0(cheb_degree + 1);
    cheb_row(to_eta(0.0), cheb0);
    Eigen::MatrixXd pinv = (design.transpose() * design).ldlt().solve(design.transpose());
    Eigen::VectorXd w = pinv.transpose() * cheb0;
    return std::vector<double>(w.data(), w.data() + L);
}

}  // namespace detail

// rho_delta(lambda) = Im m(lambda + i delta) / pi per ladder level, then a
// degree-q Chebyshev fit in delta evaluated at delta = 0.  Removes the
// Poisson floor that a single finite offset leaves in spectral gaps.
inline DensityGrid density_from_curve(const BivariatePoly& p, const std::vector<double>& lambdas,
                                      const std::vector<double>& delta_ladder, int cheb_degree) {
    detail::validate_ladder(delta_ladder, cheb_degree);
    if (lambdas.size() < 1) throw parameter_error("density_from_curve: empty grid");

    const double scale = spectral_scale(p);
    const std::size_t L = delta_ladder.size(), n = lambdas.size();
    std::vector<std::vector<double>> rho_levels(L, std::vector<double>(n));
    parallel_for(L, [&](std::size_t k) {
        auto vals = stieltjes_sweep(p, lambdas, delta_ladder[k], scale);
        for (std::size_t i = 0; i < n; ++i)
            rho_levels[k][i] = vals[i].imag() / 3.14159265358979323846;
    });

    DensityGrid grid;
    grid.lambdas = lambdas;
    grid.delta_ladder = delta_ladder;
    grid.rho.resize(n);
    if (L == 1 || cheb_degree == 0) {
        grid.rho = rho_levels[0];
        grid.extrapolated = false;
        for (auto& r : grid.rho) r = std::max(0.0, r);
        return grid;
    }
    auto w = detail::ladder_weights(delta_ladder, cheb_degree);
    for (std::size_t i = 0; i < n; ++i) {
        double v = 0.0;
        for (std::size_t k = 0; k < L; ++k) v += w[k] * rho_levels[k][i];
        grid.rho[i] = std::max(0.0, v);
    }
    grid.extrapolated = true;
    return grid;
}

// Default ladder: {1e-6, 1e-5, 1e-4, 1e-3} x spectral width.
inline std::vector<double> default_delta_ladder(double width) {
    return {1e-6 * width, 1e-5 * width, 1e-4 * width, 1e-3 * width};
}

// ---------------------------------------------------------------------------
// Moments straight off the relation
// ---------------------------------------------------------------------------

struct FarFieldExpansion {
    int e_max = 0;
    std::vector<cplx> roots;  // roots of the leading-edge polynomial L
    cplx theta0;              // root nearest -1
};

// The far-field consistency polynomial L(theta) = sum_{i-j=e_max} c_ij theta^j.
// A Stieltjes-compatible branch needs a root of L near -1.
inline FarFieldExpansion theta0_candidates(const BivariatePoly& p) {
    FarFieldExpansion out;
    out.e_max = p.e_max();
    std::vector<double> lcoef(static_cast<std::size_t>(p.deg_m()) + 1, 0.0);
    int top = -1;
    double cscale = p.max_abs_coeff();
    for (int j = 0; j <= p.deg_m(); ++j) {
        int i = out.e_max + j;
        if (i < 0 || i > p.deg_z()) continue;
        double c = p.coeff(i, j);
        if (std::abs(c) > 1e-12 * cscale) top = std::max(top, j);
        lcoef[static_cast<std::size_t>(j)] = c;
    }
    if (top <= 0)
        throw no_stieltjes_branch_error("theta0_candidates: leading-edge polynomial is constant");
    lcoef.resize(static_cast<std::size_t>(top) + 1);
    auto rr = poly_roots(lcoef);
    out.roots = rr.roots;
    double best = std::numeric_limits<double>::infinity();
    for (cplx r : rr.roots) {
        double d = std::abs(r - cplx(-1.0, 0.0));
        if (d < best) {
            best = d;
            out.theta0 = r;
        }
    }
    if (best > 0.9)
        throw no_stieltjes_branch_error("theta0_candidates: no root of L near -1");
    return out;
}

// First n moments of the branch with m(z) = sum theta_k z^{-k-1}:
// an O(n^2) recurrence on the series coefficients, no root selection.
inline MomentVector moments_from_polynomial(const BivariatePoly& p, int n) {
    if (n < 0) throw parameter_error("moments_from_polynomial: n must be >= 0");
    auto ff = theta0_candidates(p);
    const int e_max = ff.e_max;
    const int s = p.deg_m();

    // L'(theta0)
    cplx lprime = 0.0;
    for (int j = 1; j <= s; ++j) {
        int i = e_max + j;
        if (i < 0 || i > p.deg_z()) continue;
        cplx t = static_cast<double>(j) * p.coeff(i, j);
        for (int k = 0; k < j - 1; ++k) t *= ff.theta0;
        lprime += t;
    }
    if (std::abs(lprime) < 1e-12)
        throw degenerate_expansion_error("moments_from_polynomial: L'(theta0) = 0");

    auto active = p.active_indices();
    std::vector<cplx> theta(static_cast<std::size_t>(n) + 1, 0.0);
    theta[0] = ff.theta0;
    // d[j][k]: coefficient k of S(w)^j; dtil excludes theta_k itself.
    std::vector<std::vector<cplx>> d(static_cast<std::size_t>(s) + 1,
                                     std::vector<cplx>(static_cast<std::size_t>(n) + 1, 0.0));
    std::vector<std::vector<cplx>> dtil = d;
    d[0][0] = 1.0;
    dtil[0][0] = 1.0;
    for (int j = 1; j <= s; ++j) d[static_cast<std::size_t>(j)][0] = d[static_cast<std::size_t>(j - 1)][0] * ff.theta0;

    for (int k = 1; k <= n; ++k) {
        for (int j = 1; j <= s; ++j) {
            cplx acc = 0.0;
            for (int l = 0; l <= k - 1; ++l)
                acc += theta[static_cast<std::size_t>(l)] * dtil[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(k - l)];
            dtil[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = acc;
        }
        cplx rhs = 0.0;
        for (auto [i, j] : active) {
            int pdiff = i - j;
            if (pdiff == e_max) {
                rhs += p.coeff(i, j) * dtil[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
            } else {
                int kk = k - e_max + pdiff;
                if (kk >= 0 && kk < k)  // lower-order d only
                    rhs += p.coeff(i, j) * d[static_cast<std::size_t>(j)][static_cast<std::size_t>(kk)];
            }
        }
        theta[static_cast<std::size_t>(k)] = -rhs / lprime;
        for (int j = 1; j <= s; ++j) {
            cplx acc = 0.0;
            for (int l = 0; l <= k; ++l)
                acc += theta[static_cast<std::size_t>(l)] * d[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(k - l)];
            d[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = acc;
        }
    }

    std::vector<double> mu(static_cast<std::size_t>(n) + 1);
    mu[0] = 1.0;
    for (int k = 1; k <= n; ++k) {
        cplx v = theta[static_cast<std::size_t>(k)] / theta[0];
        mu[static_cast<std::size_t>(k)] = v.real();
    }
    return MomentVector(std::move(mu));
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

inline void write_density(const std::string& path, const DensityGrid& grid) {
    std::ofstream out(path);
    if (!out) throw error("write_density: cannot open " + path);
    out << "lambda,rho\n";
    char buf[80];
    for (std::size_t i = 0; i < grid.lambdas.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", grid.lambdas[i], grid.rho[i]);
        out << buf;
    }
}

inline DensityGrid read_density(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("read_density: cannot open " + path);
    DensityGrid g;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        char* end = nullptr;
        double lam = std::strtod(line.c_str(), &end);
        if (end == line.c_str() || *end != ',') throw validation_error("read_density: bad row");
        double rho = std::strtod(end + 1, nullptr);
        g.lambdas.push_back(lam);
        g.rho.push_back(rho);
    }
    return g;
}

inline nlohmann::json branch_points_to_json(const BranchPointSet& set) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : set.points) {
        const char* tag = p.tag == BranchTag::physical_edge ? "physical-edge"
                          : p.tag == BranchTag::complex_pair ? "complex"
                                                             : "non-physical";
        nlohmann::json rec{{"z_re", p.z.real()}, {"z_im", p.z.imag()},
                           {"m_re", p.m.real()}, {"m_im", p.m.imag()},
                           {"tag", tag}};
        if (p.ambiguous) rec["ambiguous"] = true;
        arr.push_back(std::move(rec));
    }
    return arr;
}

}  // namespace fdpm
