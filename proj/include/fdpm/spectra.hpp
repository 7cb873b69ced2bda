#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fdpm/errors.hpp"

namespace fdpm {

using cplx = std::complex<double>;

namespace detail {

// Pairwise (tree) reduction.  Keeps rounding error growth at O(log n)
// so samples with n up to 1e5 eigenvalues stay at full precision.
template <typename T, typename Fn>
T pairwise_sum(std::size_t lo, std::size_t hi, Fn&& term) {
    if (hi - lo <= 64) {
        T acc{};
        for (std::size_t i = lo; i < hi; ++i) acc += term(i);
        return acc;
    }
    std::size_t mid = lo + (hi - lo) / 2;
    return pairwise_sum<T>(lo, mid, term) + pairwise_sum<T>(mid, hi, term);
}

}  // namespace detail

// Sorted eigenvalues of a (sub)matrix together with the dimension they came
// from.  When samples from several submatrices of the same matrix are pooled,
// `values` holds the concatenation and `source_size` keeps the submatrix
// dimension; the empirical measure is always uniform on `values`.
struct EigenSample {
    std::vector<double> values;   // ascending
    std::size_t source_size = 0;  // matrix dimension the values came from

    EigenSample() = default;

    explicit EigenSample(std::vector<double> vals)
        : EigenSample(std::move(vals), 0) {
        source_size = values.size();
    }

    EigenSample(std::vector<double> vals, std::size_t n) : values(std::move(vals)), source_size(n) {
        std::sort(values.begin(), values.end());
        for (double v : values)
            if (!std::isfinite(v)) throw validation_error("EigenSample: non-finite eigenvalue");
        if (source_size == 0) source_size = values.size();
    }

    // Pool several samples of equally-sized submatrices into one empirical
    // measure.  The pooling rule is plain concatenation.
    static EigenSample pooled(const std::vector<EigenSample>& parts) {
        if (parts.empty()) throw parameter_error("EigenSample::pooled: no samples");
        std::vector<double> all;
        for (const auto& p : parts) all.insert(all.end(), p.values.begin(), p.values.end());
        return EigenSample(std::move(all), parts.front().source_size);
    }

    std::size_t size() const { return values.size(); }
    double min() const { return values.empty() ? 0.0 : values.front(); }
    double max() const { return values.empty() ? 0.0 : values.back(); }
    double width() const { return max() - min(); }
};

// Raw moments mu_0..mu_r of a probability measure; mu_0 is exactly 1.
struct MomentVector {
    std::vector<double> entries;

    MomentVector() : entries{1.0} {}
    explicit MomentVector(std::vector<double> e) : entries(std::move(e)) {
        if (entries.empty()) throw parameter_error("MomentVector: needs at least mu_0");
        entries[0] = 1.0;
    }

    std::size_t order() const { return entries.size() - 1; }
    double operator[](std::size_t p) const { return entries[p]; }
};

// m_n(z) = (1/n) sum 1/(lambda_i - z).
//
// Rejects z within 1e-12 * spectral width of an eigenvalue: closer than that
// the Cauchy kernel is pure cancellation noise.
inline cplx empirical_stieltjes(const EigenSample& sample, cplx z) {
    const auto& v = sample.values;
    if (v.empty()) throw parameter_error("empirical_stieltjes: empty sample");
    double width = sample.width();
    double guard = 1e-12 * (width > 0 ? width : std::max(1.0, std::abs(sample.max())));
    if (std::abs(z.imag()) < guard) {
        auto it = std::lower_bound(v.begin(), v.end(), z.real());
        for (auto p : {it, it == v.begin() ? it : std::prev(it)}) {
            if (p != v.end() && std::abs(*p - z) < guard)
                throw pole_error("empirical_stieltjes: z coincides with an eigenvalue");
        }
    }
    cplx acc = detail::pairwise_sum<cplx>(0, v.size(), [&](std::size_t i) { return 1.0 / (v[i] - z); });
    return acc / static_cast<double>(v.size());
}

// Raw moments of the empirical measure, mu_p = (1/n) sum lambda_i^p.
inline MomentVector empirical_moments(const EigenSample& sample, int r) {
    if (r < 0) throw parameter_error("empirical_moments: r must be >= 0");
    if (sample.values.empty()) throw parameter_error("empirical_moments: empty sample");
    std::vector<double> mu(static_cast<std::size_t>(r) + 1);
    mu[0] = 1.0;
    const auto& v = sample.values;
    for (int p = 1; p <= r; ++p) {
        double s = detail::pairwise_sum<double>(0, v.size(), [&](std::size_t i) { return std::pow(v[i], p); });
        mu[static_cast<std::size_t>(p)] = s / static_cast<double>(v.size());
    }
    return MomentVector(std::move(mu));
}

namespace detail {

// W1 between two piecewise-constant CDFs given as sorted support points with
// equal step weights 1/n.  Exact 1-D optimal transport for unequal sizes.
inline double w1_sorted(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t na = a.size(), nb = b.size();
    // Merge the two sorted supports, integrating |F_a - F_b| between
    // consecutive breakpoints.
    double dist = 0.0;
    double fa = 0.0, fb = 0.0;
    std::size_t i = 0, j = 0;
    double x = std::min(a.front(), b.front());
    while (i < na || j < nb) {
        double xa = i < na ? a[i] : std::numeric_limits<double>::infinity();
        double xb = j < nb ? b[j] : std::numeric_limits<double>::infinity();
        double xn = std::min(xa, xb);
        dist += std::abs(fa - fb) * (xn - x);
        x = xn;
        while (i < na && a[i] == xn) {
            fa += 1.0 / static_cast<double>(na);
            ++i;
        }
        while (j < nb && b[j] == xn) {
            fb += 1.0 / static_cast<double>(nb);
            ++j;
        }
    }
    return dist;
}

}  // namespace detail

// Wasserstein-1 distance between the empirical measures of two samples,
// optionally on log-eigenvalues.
inline double wasserstein1(const EigenSample& a, const EigenSample& b, bool log_scale = false) {
    if (a.values.empty() || b.values.empty()) throw parameter_error("wasserstein1: empty sample");
    if (!log_scale) return detail::w1_sorted(a.values, b.values);
    auto take_log = [](const std::vector<double>& v) {
        std::vector<double> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (v[i] <= 0.0) throw domain_error("wasserstein1: log scale needs positive eigenvalues");
            out[i] = std::log(v[i]);
        }
        return out;
    };
    return detail::w1_sorted(take_log(a.values), take_log(b.values));
}

// A point mass (location, weight).  Used when a density grid carries only
// the absolutely-continuous part of the measure.
struct AtomMass {
    double location = 0.0;
    double weight = 0.0;
};

// Sampled density: abscissae, values, and the delta-ladder the values were
// recovered with.  Holds only the absolutely-continuous part; atoms ride
// along separately as AtomMass records.
struct DensityGrid {
    std::vector<double> lambdas;      // ascending
    std::vector<double> rho;          // nonnegative after clamping
    std::vector<double> delta_ladder; // offsets used for recovery
    bool extrapolated = false;

    double mass() const {
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < lambdas.size(); ++i)
            acc += 0.5 * (rho[i] + rho[i + 1]) * (lambdas[i + 1] - lambdas[i]);
        return acc;
    }

    // Trapezoid CDF at the grid nodes, starting from zero.
    std::vector<double> cdf() const {
        std::vector<double> f(lambdas.size(), 0.0);
        for (std::size_t i = 0; i + 1 < lambdas.size(); ++i)
            f[i + 1] = f[i] + 0.5 * (rho[i] + rho[i + 1]) * (lambdas[i + 1] - lambdas[i]);
        return f;
    }

    double peak() const {
        double m = 0.0;
        for (double v : rho) m = std::max(m, v);
        return m;
    }
};

namespace detail {

struct CdfBreak {
    double x;
    double jump;  // CDF increment at/over this abscissa
};

// W1 between an empirical sample CDF and a piecewise-linear density CDF
// (plus optional atoms), normalized by the plotted spectral width.
inline double w1_sample_vs_cdf(const std::vector<double>& sample,
                               const std::vector<double>& grid_x,
                               const std::vector<double>& grid_cdf, double grid_mass,
                               const std::vector<AtomMass>& atoms, double& width_out) {
    // Integrate |F_sample - F_model| over the union of supports on a fine
    // merged breakpoint set.  F_model is linear between grid nodes (trapezoid
    // CDF) with steps at atoms; F_sample is a staircase.
    std::vector<double> breaks;
    breaks.reserve(sample.size() + grid_x.size() + atoms.size());
    breaks.insert(breaks.end(), sample.begin(), sample.end());
    breaks.insert(breaks.end(), grid_x.begin(), grid_x.end());
    for (const auto& a : atoms) breaks.push_back(a.location);
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    if (breaks.size() < 2) {
        width_out = 0.0;
        return 0.0;
    }
    width_out = breaks.back() - breaks.front();

    auto model_cdf = [&](double x) {
        double f = 0.0;
        for (const auto& a : atoms)
            if (a.location <= x) f += a.weight;
        if (x <= grid_x.front()) return f;
        if (x >= grid_x.back()) return f + grid_mass;
        auto it = std::upper_bound(grid_x.begin(), grid_x.end(), x);
        std::size_t k = static_cast<std::size_t>(it - grid_x.begin()) - 1;
        double t = (x - grid_x[k]) / (grid_x[k + 1] - grid_x[k]);
        return f + grid_cdf[k] + t * (grid_cdf[k + 1] - grid_cdf[k]);
    };
    auto sample_cdf = [&](double x) {
        auto it = std::upper_bound(sample.begin(), sample.end(), x);
        return static_cast<double>(it - sample.begin()) / static_cast<double>(sample.size());
    };

    double dist = 0.0;
    for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
        double x0 = breaks[k], x1 = breaks[k + 1];
        if (x1 <= x0) continue;
        // Two-point Gauss on each cell; F_model is near-linear and F_sample
        // constant inside a cell, so this is effectively exact.
        const double g = 0.2113248654051871;  // (1 - 1/sqrt(3)) / 2
        for (double t : {g, 1.0 - g}) {
            double x = x0 + t * (x1 - x0);
            dist += 0.5 * (x1 - x0) * std::abs(sample_cdf(x) - model_cdf(x));
        }
    }
    return dist;
}

}  // namespace detail

// W1 between the empirical CDF of a sample and the CDF of a density grid
// (plus any atoms carried separately), normalized by the plotted spectral
// width L.  This is the distance reported alongside the flow outputs.
inline double density_wasserstein(const EigenSample& sample, const DensityGrid& grid,
                                  const std::vector<AtomMass>& atoms = {}) {
    if (sample.values.empty()) throw parameter_error("density_wasserstein: empty sample");
    if (grid.lambdas.size() < 2 || grid.lambdas.back() <= grid.lambdas.front())
        throw domain_error("density_wasserstein: zero-width grid");
    for (double r : grid.rho)
        if (r < -1e-12) throw domain_error("density_wasserstein: negative density");
    double width = 0.0;
    double w1 = detail::w1_sample_vs_cdf(sample.values, grid.lambdas, grid.cdf(), grid.mass(), atoms, width);
    if (width <= 0.0) throw domain_error("density_wasserstein: degenerate plotted width");
    return w1 / width;
}

// W1/L between two density grids (each optionally with atoms).
inline double grid_wasserstein(const DensityGrid& a, const DensityGrid& b,
                               const std::vector<AtomMass>& atoms_a = {},
                               const std::vector<AtomMass>& atoms_b = {}) {
    auto breaks = a.lambdas;
    breaks.insert(breaks.end(), b.lambdas.begin(), b.lambdas.end());
    for (const auto& at : atoms_a) breaks.push_back(at.location);
    for (const auto& at : atoms_b) breaks.push_back(at.location);
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    if (breaks.size() < 2) throw domain_error("grid_wasserstein: degenerate grids");

    auto cdf_of = [](const DensityGrid& g, const std::vector<AtomMass>& atoms) {
        auto grid_cdf = g.cdf();
        return [&g, grid_cdf, atoms](double x) {
            double f = 0.0;
            for (const auto& at : atoms)
                if (at.location <= x) f += at.weight;
            if (x <= g.lambdas.front()) return f;
            if (x >= g.lambdas.back()) return f + grid_cdf.back();
            auto it = std::upper_bound(g.lambdas.begin(), g.lambdas.end(), x);
            std::size_t k = static_cast<std::size_t>(it - g.lambdas.begin()) - 1;
            double t = (x - g.lambdas[k]) / (g.lambdas[k + 1] - g.lambdas[k]);
            return f + grid_cdf[k] + t * (grid_cdf[k + 1] - grid_cdf[k]);
        };
    };
    auto fa = cdf_of(a, atoms_a);
    auto fb = cdf_of(b, atoms_b);
    double dist = 0.0;
    for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
        double x0 = breaks[k], x1 = breaks[k + 1];
        const double g = 0.2113248654051871;
        for (double t : {g, 1.0 - g}) {
            double x = x0 + t * (x1 - x0);
            dist += 0.5 * (x1 - x0) * std::abs(fa(x) - fb(x));
        }
    }
    return dist / (breaks.back() - breaks.front());
}

}  // namespace fdpm

// ---------------------------------------------------------------------------
// Eigenvalue file format: UTF-8 text, one decimal float per line, optional
// "# size: <n>" header comment.  Missing header: size inferred from count.
// ---------------------------------------------------------------------------

namespace fdpm {

inline void write_eigenvalues(const std::string& path, const EigenSample& sample) {
    std::ofstream out(path);
    if (!out) throw error("write_eigenvalues: cannot open " + path);
    out << "# size: " << sample.source_size << "\n";
    char buf[64];
    for (double v : sample.values) {
        std::snprintf(buf, sizeof buf, "%.17g\n", v);
        out << buf;
    }
}

inline EigenSample read_eigenvalues(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("read_eigenvalues: cannot open " + path);
    std::vector<double> vals;
    std::size_t declared = 0;
    std::string line;
    while (std::getline(in, line)) {
        std::size_t pos = line.find_first_not_of(" \t\r");
        if (pos == std::string::npos) continue;
        if (line[pos] == '#') {
            std::size_t at = line.find("size:");
            if (at != std::string::npos) declared = std::strtoull(line.c_str() + at + 5, nullptr, 10);
            continue;
        }
        char* end = nullptr;
        double v = std::strtod(line.c_str() + pos, &end);
        if (end == line.c_str() + pos) throw validation_error("read_eigenvalues: bad line '" + line + "'");
        vals.push_back(v);
    }
    return EigenSample(std::move(vals), declared);
}

}  // namespace fdpm
