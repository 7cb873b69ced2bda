#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "fdpm/bivariate_poly.hpp"
#include "fdpm/errors.hpp"
#include "fdpm/spectra.hpp"

namespace fdpm {

// A closed real interval; bulks of the spectrum are lists of these.
struct Interval {
    double lo = 0.0, hi = 0.0;
    double width() const { return hi - lo; }
    double center() const { return 0.5 * (lo + hi); }
};

struct FitConfig {
    int d_z = 1;
    int s = 2;
    int n_samples = 64;          // even; conjugate pairs
    double eta = 0.0;            // Tikhonov weight
    std::optional<int> moment_order;  // r; constraints enforced when set

    // Contour geometry: per-bulk ellipse semi-axis multiples of the bulk
    // half-width, one global contour as a multiple of the total half-width,
    // and an exclusion buffer around the real support.
    std::vector<double> bulk_axis_factors = {1.5, 3.0};
    double global_axis_factor = 5.0;
    double buffer_factor = 1e-3;  // times bulk width
    bool log_spacing = false;     // set automatically for wide-scale supports
};

struct FitResult {
    BivariatePoly poly;
    double residual = 0.0;        // ||A c|| / ||A||_F on the complex design
    bool ambiguous = false;       // near-degenerate smallest singular pair
    double singular_gap = 0.0;    // sigma_{N-1} - sigma_N of the stacked matrix
};

namespace detail {

// Bernstein ellipse with foci (lo, hi): z(theta) = center + A cos(theta)
// + i B sin(theta) with semi-axes A >= B, A^2 - B^2 = half_width^2.
struct ContourEllipse {
    double center, axis_a, axis_b;
    cplx at(double theta) const { return {center + axis_a * std::cos(theta), axis_b * std::sin(theta)}; }
};

inline ContourEllipse ellipse_for(const Interval& iv, double axis_factor) {
    double h = 0.5 * iv.width();
    double a = axis_factor * h;
    double b2 = a * a - h * h;
    return {iv.center(), a, b2 > 0 ? std::sqrt(b2) : 0.0};
}

}  // namespace detail

// Sample points in conjugate pairs on Bernstein ellipses around each bulk
// plus one global contour, all separated from the real support by the
// configured buffer.  For supports spanning more than two decades the angular
// spacing is warped toward the small-|z| side.
inline std::vector<cplx> sample_contours(const std::vector<Interval>& support, const FitConfig& cfg) {
    if (support.empty()) throw parameter_error("sample_contours: empty support");
    std::vector<Interval> bulks = support;
    std::sort(bulks.begin(), bulks.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
    for (std::size_t i = 0; i + 1 < bulks.size(); ++i)
        if (bulks[i].hi >= bulks[i + 1].lo) throw parameter_error("sample_contours: intervals must be disjoint");
    for (const auto& b : bulks)
        if (!(b.hi > b.lo)) throw parameter_error("sample_contours: empty interval");
    if (cfg.n_samples < 2 || cfg.n_samples % 2 != 0)
        throw config_error("sample_contours: n_samples must be even and >= 2");

    Interval total{bulks.front().lo, bulks.back().hi};
    double wmin = bulks.front().width(), wmax = bulks.front().width();
    for (const auto& b : bulks) {
        wmin = std::min(wmin, b.width());
        wmax = std::max(wmax, b.width());
    }
    bool log_spacing = cfg.log_spacing || wmax / wmin > 100.0;

    // One contour family per bulk (its ellipses share the budget) plus the
    // global family.
    struct Family {
        std::vector<detail::ContourEllipse> ellipses;
        double buffer;
    };
    std::vector<Family> families;
    for (const auto& b : bulks) {
        Family f;
        for (double factor : cfg.bulk_axis_factors) f.ellipses.push_back(detail::ellipse_for(b, factor));
        f.buffer = cfg.buffer_factor * b.width();
        families.push_back(std::move(f));
    }
    families.push_back({{detail::ellipse_for(total, cfg.global_axis_factor)}, cfg.buffer_factor * total.width()});

    const std::size_t upper_total = static_cast<std::size_t>(cfg.n_samples) / 2;
    const std::size_t n_fam = families.size();
    std::vector<cplx> points;
    points.reserve(static_cast<std::size_t>(cfg.n_samples));

    for (std::size_t f = 0; f < n_fam; ++f) {
        std::size_t share = upper_total / n_fam + (f < upper_total % n_fam ? 1 : 0);
        const auto& fam = families[f];
        for (std::size_t e = 0; e < fam.ellipses.size(); ++e) {
            std::size_t cnt = share / fam.ellipses.size() + (e < share % fam.ellipses.size() ? 1 : 0);
            const auto& el = fam.ellipses[e];
            if (el.axis_b <= fam.buffer)
                throw config_error("sample_contours: buffer exceeds ellipse minor axis");
            double theta_min = std::asin(std::min(1.0, fam.buffer / el.axis_b));
            double span = 3.14159265358979323846 - 2.0 * theta_min;
            if (span <= 0) throw config_error("sample_contours: infeasible contour geometry");
            for (std::size_t k = 0; k < cnt; ++k) {
                double u = (static_cast<double>(k) + 0.5) / static_cast<double>(cnt);
                if (log_spacing) {
                    // Concentrate samples toward the endpoint nearest zero,
                    // where the multi-scale structure lives.
                    const double kappa = 4.0;
                    u = (std::exp(kappa * u) - 1.0) / (std::exp(kappa) - 1.0);
                    if (el.center < 0) u = 1.0 - u;
                }
                double theta = theta_min + span * u;
                cplx z = el.at(theta);
                points.push_back(z);
                points.push_back(std::conj(z));
            }
        }
    }
    return points;
}

// Row l of the moment-constraint system B c = 0 for index set A:
//   B[l, (i,j)] = (-1)^j  mu*^j_{i - j - e_max + l},    l = 0..r,
// where mu*^j is the j-fold discrete self-convolution of (mu_0..mu_r),
// mu*^0 = [1], and out-of-range entries are zero.
inline Eigen::MatrixXd moment_constraint_matrix(const std::vector<std::pair<int, int>>& index_set,
                                                const MomentVector& moments) {
    if (index_set.empty()) throw parameter_error("moment_constraint_matrix: empty index set");
    const int r = static_cast<int>(moments.order());
    int e_max = std::numeric_limits<int>::min();
    int j_max = 0;
    for (auto [i, j] : index_set) {
        e_max = std::max(e_max, i - j);
        j_max = std::max(j_max, j);
    }
    // Convolution powers mu*^j up to j_max.
    std::vector<std::vector<double>> conv(static_cast<std::size_t>(j_max) + 1);
    conv[0] = {1.0};
    for (int j = 1; j <= j_max; ++j) {
        const auto& prev = conv[static_cast<std::size_t>(j - 1)];
        std::vector<double> cur(prev.size() + static_cast<std::size_t>(r), 0.0);
        for (std::size_t p = 0; p < prev.size(); ++p)
            for (int q = 0; q <= r; ++q) cur[p + static_cast<std::size_t>(q)] += prev[p] * moments[static_cast<std::size_t>(q)];
        conv[static_cast<std::size_t>(j)] = std::move(cur);
    }
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(r + 1, static_cast<Eigen::Index>(index_set.size()));
    for (int l = 0; l <= r; ++l) {
        for (std::size_t col = 0; col < index_set.size(); ++col) {
            auto [i, j] = index_set[col];
            int q = i - j - e_max + l;
            const auto& cj = conv[static_cast<std::size_t>(j)];
            if (q < 0 || q >= static_cast<int>(cj.size())) continue;
            double sign = (j % 2 == 0) ? 1.0 : -1.0;
            b(l, static_cast<Eigen::Index>(col)) = sign * cj[static_cast<std::size_t>(q)];
        }
    }
    return b;
}

// Rectangular index set {0..d_z} x {0..s} in row-major order.
inline std::vector<std::pair<int, int>> rectangular_index_set(int d_z, int s) {
    std::vector<std::pair<int, int>> a;
    a.reserve(static_cast<std::size_t>(d_z + 1) * (s + 1));
    for (int i = 0; i <= d_z; ++i)
        for (int j = 0; j <= s; ++j) a.emplace_back(i, j);
    return a;
}

// Total-least-squares fit of the algebraic relation from samples of the
// physical branch.  Builds the design matrix A_{l,(i,j)} = z_l^i m_l^j,
// optionally restricts to the null space of the moment constraints, stacks
// real part, imaginary part and sqrt(eta) I, and takes the right singular
// vector of the smallest singular value.
inline FitResult fit_polynomial(const std::vector<cplx>& points, const std::vector<cplx>& values,
                                const FitConfig& cfg, const std::optional<MomentVector>& moments = {}) {
    if (points.size() != values.size()) throw parameter_error("fit_polynomial: points/values size mismatch");
    const auto index_set = rectangular_index_set(cfg.d_z, cfg.s);
    const std::size_t n = points.size();
    const std::size_t N = index_set.size();
    if (n < N) throw parameter_error("fit_polynomial: need at least |A| samples");

    // Conjugate pairing keeps the stacked system genuinely real; verify it.
    {
        std::vector<bool> used(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i] || std::abs(points[i].imag()) < 1e-14) continue;
            bool found = false;
            for (std::size_t j = 0; j < n; ++j) {
                if (used[j] || j == i) continue;
                if (std::abs(points[j] - std::conj(points[i])) <= 1e-12 * (1.0 + std::abs(points[i]))) {
                    if (std::abs(values[j] - std::conj(values[i])) > 1e-10 * (1.0 + std::abs(values[i])))
                        throw parameter_error("fit_polynomial: values at conjugate points are not conjugate");
                    used[i] = used[j] = true;
                    found = true;
                    break;
                }
            }
            if (!found) throw parameter_error("fit_polynomial: sample points are not in conjugate pairs");
        }
    }

    Eigen::MatrixXcd design(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(N));
    for (std::size_t l = 0; l < n; ++l) {
        // z^i m^j by running products over the row-major index set.
        for (std::size_t col = 0; col < N; ++col) {
            auto [i, j] = index_set[col];
            cplx v = 1.0;
            for (int k = 0; k < i; ++k) v *= points[l];
            for (int k = 0; k < j; ++k) v *= values[l];
            design(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(col)) = v;
        }
    }

    Eigen::MatrixXd basis;  // columns span the feasible coefficient space
    if (moments) {
        Eigen::MatrixXd b = moment_constraint_matrix(index_set, *moments);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeFullV);
        double tol = std::max(b.rows(), b.cols()) * svd.singularValues()(0) * 1e-14;
        Eigen::Index rank = 0;
        for (Eigen::Index k = 0; k < svd.singularValues().size(); ++k)
            if (svd.singularValues()(k) > tol) ++rank;
        if (rank >= static_cast<Eigen::Index>(N))
            throw constraint_error("fit_polynomial: moment constraints leave no feasible direction");
        basis = svd.matrixV().rightCols(static_cast<Eigen::Index>(N) - rank);
    } else {
        basis = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
    }

    Eigen::MatrixXcd reduced = design * basis;
    const Eigen::Index nc = basis.cols();
    Eigen::MatrixXd stacked(2 * static_cast<Eigen::Index>(n) + nc, nc);
    stacked.topRows(static_cast<Eigen::Index>(n)) = reduced.real();
    stacked.middleRows(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) = reduced.imag();
    stacked.bottomRows(nc) = std::sqrt(std::max(0.0, cfg.eta)) * Eigen::MatrixXd::Identity(nc, nc);

    Eigen::BDCSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    Eigen::VectorXd y = svd.matrixV().col(nc - 1);
    Eigen::VectorXd c = basis * y;

    FitResult out;
    if (nc >= 2) {
        out.singular_gap = sv(nc - 2) - sv(nc - 1);
        out.ambiguous = out.singular_gap < 1e-12;
    }
    BivariatePoly p(cfg.d_z, cfg.s);
    for (std::size_t col = 0; col < N; ++col) {
        auto [i, j] = index_set[col];
        p.coeff(i, j) = c(static_cast<Eigen::Index>(col));
    }
    out.poly = p.normalized();

    Eigen::VectorXd cn(static_cast<Eigen::Index>(N));
    for (std::size_t col = 0; col < N; ++col) {
        auto [i, j] = index_set[col];
        cn(static_cast<Eigen::Index>(col)) = out.poly.coeff(i, j);
    }
    out.residual = (design * cn).norm() / design.norm();
    return out;
}

// Refit over a small degree ladder and keep the smallest (s, d_z) whose
// residual is within 3x of the best one seen.
template <typename SampleFn>
FitResult fit_auto(SampleFn&& sample_at, const std::vector<Interval>& support, FitConfig cfg,
                   const std::optional<MomentVector>& moments, int s_max = 8, int dz_max = 4) {
    struct Entry {
        FitResult fit;
        int s, dz;
    };
    std::vector<Entry> entries;
    double best = std::numeric_limits<double>::infinity();
    for (int s = 2; s <= s_max; ++s) {
        for (int dz = 1; dz <= dz_max; ++dz) {
            FitConfig c = cfg;
            c.s = s;
            c.d_z = dz;
            c.n_samples = std::max(c.n_samples, 4 * (s + 1) * (dz + 1));
            if (c.n_samples % 2) ++c.n_samples;
            auto pts = sample_contours(support, c);
            std::vector<cplx> vals(pts.size());
            for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = sample_at(pts[i]);
            try {
                Entry e{fit_polynomial(pts, vals, c, moments), s, dz};
                best = std::min(best, e.fit.residual);
                entries.push_back(std::move(e));
            } catch (const error&) {
                continue;
            }
        }
    }
    if (entries.empty()) throw constraint_error("fit_auto: no degree combination produced a fit");
    // smallest model first: sort by (s + dz, s), pick first within 3x of best
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.s + a.dz != b.s + b.dz) return a.s + a.dz < b.s + b.dz;
        return a.s < b.s;
    });
    for (auto& e : entries)
        if (e.fit.residual <= 3.0 * best) return e.fit;
    return entries.front().fit;
}

// Split a sample into bulk intervals and point clusters.  Plumbing for the
// CLI: bulks feed the contour generator, clusters of (near-)identical values
// are treated as atoms.
struct DetectedSupport {
    std::vector<Interval> bulks;
    std::vector<AtomMass> atoms;
};

inline DetectedSupport detect_support(const EigenSample& sample, double gap_factor = 0.05,
                                      double atom_width_factor = 1e-9) {
    if (sample.values.empty()) throw parameter_error("detect_support: empty sample");
    const auto& v = sample.values;
    double width = sample.width();
    if (width <= 0) {
        return {{}, {{v.front(), 1.0}}};
    }
    double gap_cut = gap_factor * width;
    DetectedSupport out;
    std::size_t start = 0;
    for (std::size_t i = 1; i <= v.size(); ++i) {
        if (i == v.size() || v[i] - v[i - 1] > gap_cut) {
            double lo = v[start], hi = v[i - 1];
            double mass = static_cast<double>(i - start) / static_cast<double>(v.size());
            if (hi - lo < atom_width_factor * width) {
                out.atoms.push_back({0.5 * (lo + hi), mass});
            } else {
                out.bulks.push_back({lo, hi});
            }
            start = i;
        }
    }
    return out;
}

}  // namespace fdpm
