#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "fdpm/errors.hpp"

namespace fdpm {

using cplx = std::complex<double>;

struct RootResult {
    std::vector<cplx> roots;
    bool degree_dropped = false;  // leading coefficients were numerically zero
    int effective_degree = 0;
};

namespace detail {

// Parlett-Reinsch balancing restricted to powers of two (no rounding).
inline void balance_matrix(Eigen::MatrixXcd& a) {
    const int n = static_cast<int>(a.rows());
    bool converged = false;
    while (!converged) {
        converged = true;
        for (int i = 0; i < n; ++i) {
            double r = 0.0, c = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                c += std::abs(a(j, i));
                r += std::abs(a(i, j));
            }
            if (c == 0.0 || r == 0.0) continue;
            double f = 1.0, s = c + r;
            while (c < r / 2.0) {
                c *= 2.0;
                r /= 2.0;
                f *= 2.0;
            }
            while (c >= r * 2.0) {
                c /= 2.0;
                r *= 2.0;
                f /= 2.0;
            }
            if ((c + r) < 0.95 * s && f != 1.0) {
                converged = false;
                a.col(i) *= f;
                a.row(i) /= f;
            }
        }
    }
}

inline cplx poly_eval(const std::vector<cplx>& a, cplx x) {
    cplx acc = 0.0;
    for (std::size_t j = a.size(); j-- > 0;) acc = acc * x + a[j];
    return acc;
}

inline void poly_eval_d(const std::vector<cplx>& a, cplx x, cplx& p, cplx& dp) {
    p = 0.0;
    dp = 0.0;
    for (std::size_t j = a.size(); j-- > 0;) {
        dp = dp * x + p;
        p = p * x + a[j];
    }
}

}  // namespace detail

// All roots of sum_j a[j] x^j via balanced companion-matrix eigenvalues,
// with a couple of Newton polishing steps.  Leading coefficients that are
// numerically zero relative to the largest one are dropped and flagged.
inline RootResult poly_roots(std::vector<cplx> a, double drop_tol = 1e-13) {
    double scale = 0.0;
    for (const auto& v : a) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) throw degenerate_point_error("poly_roots: all coefficients vanish");

    int deg = static_cast<int>(a.size()) - 1;
    bool dropped = false;
    while (deg > 0 && std::abs(a[static_cast<std::size_t>(deg)]) <= drop_tol * scale) {
        --deg;
        dropped = true;
    }
    RootResult out;
    out.degree_dropped = dropped;
    out.effective_degree = deg;
    if (deg == 0) return out;

    a.resize(static_cast<std::size_t>(deg) + 1);
    Eigen::MatrixXcd comp = Eigen::MatrixXcd::Zero(deg, deg);
    for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
    for (int i = 0; i < deg; ++i) comp(i, deg - 1) = -a[static_cast<std::size_t>(i)] / a[static_cast<std::size_t>(deg)];
    detail::balance_matrix(comp);
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(comp, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success) throw error("poly_roots: eigensolver failed");

    out.roots.resize(static_cast<std::size_t>(deg));
    for (int i = 0; i < deg; ++i) {
        cplx r = es.eigenvalues()(i);
        for (int it = 0; it < 3; ++it) {
            cplx p, dp;
            detail::poly_eval_d(a, r, p, dp);
            if (std::abs(dp) == 0.0) break;
            cplx step = p / dp;
            if (!std::isfinite(step.real()) || !std::isfinite(step.imag())) break;
            if (std::abs(step) > 0.5 * (1.0 + std::abs(r))) break;  // keep clustered roots put
            r -= step;
        }
        out.roots[static_cast<std::size_t>(i)] = r;
    }
    std::sort(out.roots.begin(), out.roots.end(), [](cplx x, cplx y) {
        if (x.real() != y.real()) return x.real() < y.real();
        return x.imag() < y.imag();
    });
    return out;
}

inline RootResult poly_roots(const std::vector<double>& a, double drop_tol = 1e-13) {
    std::vector<cplx> ac(a.begin(), a.end());
    return poly_roots(std::move(ac), drop_tol);
}

// Real roots of a real polynomial (imaginary parts below a relative cut).
inline std::vector<double> real_roots(const std::vector<double>& a, double imag_tol = 1e-8) {
    RootResult r = poly_roots(a);
    std::vector<double> out;
    for (cplx z : r.roots) {
        double mag = std::max(1.0, std::abs(z));
        if (std::abs(z.imag()) <= imag_tol * mag) out.push_back(z.real());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace fdpm
