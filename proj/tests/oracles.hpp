// Analytic reference laws used as independent oracles by the tests.  These
// deliberately avoid the library's continuation machinery: closed forms and
// quadrature only.
#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "fdpm/spectra.hpp"

namespace oracles {

using cplx = std::complex<double>;
inline constexpr double pi = 3.14159265358979323846;

// Marchenko-Pastur with mean sigma2: Herglotz root of the quadratic.
inline cplx mp_stieltjes(double lam, double sigma2, cplx z) {
    cplx b = z - sigma2 * (1.0 - lam);
    cplx disc = std::sqrt(b * b - 4.0 * lam * sigma2 * z);
    cplx r1 = (-b + disc) / (2.0 * lam * sigma2 * z);
    cplx r2 = (-b - disc) / (2.0 * lam * sigma2 * z);
    if (z.imag() > 0.0) return r1.imag() > 0.0 ? r1 : r2;
    if (z.imag() < 0.0) return r1.imag() < 0.0 ? r1 : r2;
    // real z: the branch decaying like -1/z
    return std::abs(r1 + 1.0 / z) < std::abs(r2 + 1.0 / z) ? r1 : r2;
}

inline double mp_edge_low(double lam, double sigma2 = 1.0) {
    double s = std::sqrt(lam);
    return sigma2 * (1.0 - s) * (1.0 - s);
}
inline double mp_edge_high(double lam, double sigma2 = 1.0) {
    double s = std::sqrt(lam);
    return sigma2 * (1.0 + s) * (1.0 + s);
}

inline double mp_density(double lam, double sigma2, double x) {
    double a = mp_edge_low(lam, sigma2), b = mp_edge_high(lam, sigma2);
    if (x <= a || x >= b) return 0.0;
    return std::sqrt((b - x) * (x - a)) / (2.0 * pi * lam * sigma2 * x);
}

inline cplx semicircle_stieltjes(double sigma2, cplx z) {
    cplx disc = std::sqrt(z * z - 4.0 * sigma2);
    cplx r1 = (-z + disc) / (2.0 * sigma2);
    cplx r2 = (-z - disc) / (2.0 * sigma2);
    if (z.imag() > 0.0) return r1.imag() > 0.0 ? r1 : r2;
    if (z.imag() < 0.0) return r1.imag() < 0.0 ? r1 : r2;
    return std::abs(r1 + 1.0 / z) < std::abs(r2 + 1.0 / z) ? r1 : r2;
}

inline double semicircle_density(double sigma2, double x) {
    double r = 4.0 * sigma2 - x * x;
    return r > 0.0 ? std::sqrt(r) / (2.0 * pi * sigma2) : 0.0;
}

// Deterministic n-point quantile sample of a density on [a, b]:
// lambda_i = F^{-1}((i - 1/2)/n) by bisection on the quadrature CDF.
inline fdpm::EigenSample quantile_sample(const std::function<double(double)>& density, double a,
                                         double b, std::size_t n, std::size_t cells = 20000) {
    std::vector<double> cdf(cells + 1, 0.0);
    double h = (b - a) / static_cast<double>(cells);
    for (std::size_t i = 0; i < cells; ++i) {
        double x0 = a + h * static_cast<double>(i);
        cdf[i + 1] = cdf[i] + 0.5 * h * (density(x0) + density(x0 + h));
    }
    double total = cdf.back();
    std::vector<double> vals(n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double target = total * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        while (k < cells && cdf[k + 1] < target) ++k;
        double t = (target - cdf[k]) / std::max(cdf[k + 1] - cdf[k], 1e-300);
        vals[i] = a + h * (static_cast<double>(k) + t);
    }
    return fdpm::EigenSample(std::move(vals), n);
}

// Raw moment of a density by trapezoid quadrature.
inline double density_moment(const std::function<double(double)>& density, double a, double b, int p,
                             std::size_t cells = 200000) {
    double h = (b - a) / static_cast<double>(cells);
    double acc = 0.0;
    for (std::size_t i = 0; i <= cells; ++i) {
        double x = a + h * static_cast<double>(i);
        double w = (i == 0 || i == cells) ? 0.5 : 1.0;
        acc += w * std::pow(x, p) * density(x);
    }
    return acc * h;
}

}  // namespace oracles
