#pragma once

#include <algorithm>
#include <array>
#include <cfenv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "fdpm/bivariate_poly.hpp"
#include "fdpm/errors.hpp"
#include "fdpm/rng.hpp"
#include "fdpm/spectra.hpp"

#ifdef FDPM_HAVE_LAPACKE
#include <lapacke.h>
extern "C" void dsyrk_(const char* uplo, const char* trans, const int* n, const int* k,
                       const double* alpha, const double* a, const int* lda, const double* beta,
                       double* c, const int* ldc);
#endif

namespace fdpm {

// Free Levy law: drift + semicircular part + compound free Poisson part with
// a finite-atom jump measure.
struct FreeLevyParams {
    double drift = 0.0;        // a
    double sigma = 0.0;        // semicircular scale (variance sigma^2), >= 0
    double rate = 1.0;         // lambda > 0
    std::vector<double> atoms;    // t_1..t_r, distinct, nonzero
    std::vector<double> weights;  // w_1..w_r, positive, sum to 1

    void validate() const {
        if (!(rate > 0.0)) throw parameter_error("FreeLevyParams: rate must be positive");
        if (sigma < 0.0) throw parameter_error("FreeLevyParams: sigma must be >= 0");
        if (atoms.size() != weights.size() || atoms.empty())
            throw parameter_error("FreeLevyParams: atoms/weights size mismatch");
        double ws = 0.0;
        for (double w : weights) {
            if (!(w > 0.0)) throw parameter_error("FreeLevyParams: weights must be positive");
            ws += w;
        }
        if (std::abs(ws - 1.0) > 1e-12) throw parameter_error("FreeLevyParams: weights must sum to 1");
        for (std::size_t i = 0; i < atoms.size(); ++i) {
            if (atoms[i] == 0.0) throw parameter_error("FreeLevyParams: atoms must be nonzero");
            for (std::size_t j = i + 1; j < atoms.size(); ++j)
                if (atoms[i] == atoms[j]) throw parameter_error("FreeLevyParams: atoms must be distinct");
        }
    }
};

// Semicircle law with variance sigma2:  sigma2 m^2 + z m + 1 = 0.
inline BivariatePoly semicircle_polynomial(double sigma2 = 1.0) {
    if (!(sigma2 > 0.0)) throw parameter_error("semicircle_polynomial: sigma2 must be positive");
    BivariatePoly p(1, 2);
    p.coeff(0, 0) = 1.0;
    p.coeff(1, 1) = 1.0;
    p.coeff(0, 2) = sigma2;
    return p;
}

// Marchenko-Pastur with aspect ratio lambda and scale sigma2:
//   P(z, m) = lambda sigma2 z m^2 + (z - sigma2 (1 - lambda)) m + 1.
// Convention: mean sigma2, second moment sigma2^2 (1 + lambda); for
// lambda > 1 the law carries an atom at zero of mass 1 - 1/lambda.
inline BivariatePoly mp_polynomial(double lambda, double sigma2) {
    if (!(lambda > 0.0) || !(sigma2 > 0.0)) throw parameter_error("mp_polynomial: parameters must be positive");
    BivariatePoly p(1, 2);
    p.coeff(0, 0) = 1.0;
    p.coeff(0, 1) = -sigma2 * (1.0 - lambda);
    p.coeff(1, 1) = 1.0;
    p.coeff(1, 2) = lambda * sigma2;
    return p;
}

namespace detail {

// Polynomial in m whose coefficients are degree-1 polynomials in z,
// represented as pairs (alpha, beta) meaning alpha + beta z.
using LinZPoly = std::vector<std::array<double, 2>>;

inline LinZPoly linz_mul(const LinZPoly& a, const LinZPoly& b) {
    LinZPoly out(a.size() + b.size() - 1, {0.0, 0.0});
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) {
            out[i + j][0] += a[i][0] * b[j][0];
            // degree in z stays <= 1 for the laws built here
            out[i + j][1] += a[i][0] * b[j][1] + a[i][1] * b[j][0];
        }
    return out;
}

inline void linz_axpy(LinZPoly& acc, double scale, const LinZPoly& a, std::size_t shift) {
    if (acc.size() < a.size() + shift) acc.resize(a.size() + shift, {0.0, 0.0});
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc[i + shift][0] += scale * a[i][0];
        acc[i + shift][1] += scale * a[i][1];
    }
}

}  // namespace detail

// Free Levy law as an algebraic relation.  Clearing denominators in
// z = R(-m) - 1/m with R(w) = a + sigma^2 w + rate * sum_i w_i t_i / (1 - t_i w)
// gives
//   P(z,m) = (sigma^2 m^2 + (z-a) m + 1) prod_i (1 + t_i m)
//            - rate * m * sum_i w_i t_i prod_{j != i} (1 + t_j m),
// of degree r+2 in m for sigma > 0 and r+1 for sigma = 0.
inline BivariatePoly free_levy_polynomial(const FreeLevyParams& params) {
    params.validate();
    const std::size_t r = params.atoms.size();
    detail::LinZPoly quad = {{1.0, 0.0}, {-params.drift, 1.0}, {params.sigma * params.sigma, 0.0}};
    detail::LinZPoly acc = quad;
    for (std::size_t i = 0; i < r; ++i)
        acc = detail::linz_mul(acc, {{1.0, 0.0}, {params.atoms[i], 0.0}});
    for (std::size_t i = 0; i < r; ++i) {
        detail::LinZPoly prod = {{1.0, 0.0}};
        for (std::size_t j = 0; j < r; ++j)
            if (j != i) prod = detail::linz_mul(prod, {{1.0, 0.0}, {params.atoms[j], 0.0}});
        detail::linz_axpy(acc, -params.rate * params.weights[i] * params.atoms[i], prod, 1);
    }
    int s = static_cast<int>(acc.size()) - 1;
    BivariatePoly p(1, s);
    for (int j = 0; j <= s; ++j) {
        p.coeff(0, j) = acc[static_cast<std::size_t>(j)][0];
        p.coeff(1, j) = acc[static_cast<std::size_t>(j)][1];
    }
    // sigma = 0 drops the top degree exactly; trim it rather than carrying a
    // zero column.
    if (params.sigma == 0.0) {
        BivariatePoly q(1, s - 1);
        for (int j = 0; j < s; ++j) {
            q.coeff(0, j) = p.coeff(0, j);
            q.coeff(1, j) = p.coeff(1, j);
        }
        return q;
    }
    return p;
}

// Compound free Poisson with a two-atom jump measure (the cubic case).
inline BivariatePoly cfp_polynomial(const FreeLevyParams& params) {
    if (params.atoms.size() != 2)
        throw parameter_error("cfp_polynomial: exactly two atoms required");
    if (params.drift != 0.0 || params.sigma != 0.0)
        throw parameter_error("cfp_polynomial: drift and sigma must be zero");
    return free_levy_polynomial(params);
}

// Pennington-Bahri Hessian model:  R(w) = 1/(1 - lambda w) + 2 eps w.
//   P(z, m) = 2 eps lambda m^3 + (lambda z + 2 eps) m^2 + (z - 1 + lambda) m + 1.
inline BivariatePoly pennington_bahri_polynomial(double lambda, double eps) {
    if (!(lambda > 0.0) || lambda > 1.0) throw parameter_error("pennington_bahri: lambda in (0,1]");
    if (!(eps > 0.0)) throw parameter_error("pennington_bahri: eps must be positive");
    BivariatePoly p(1, 3);
    p.coeff(0, 0) = 1.0;
    p.coeff(0, 1) = lambda - 1.0;
    p.coeff(1, 1) = 1.0;
    p.coeff(0, 2) = 2.0 * eps;
    p.coeff(1, 2) = lambda;
    p.coeff(0, 3) = 2.0 * eps * lambda;
    return p;
}

// ---------------------------------------------------------------------------
// Matrix samplers
// ---------------------------------------------------------------------------

struct MpModel {
    double lambda = 0.5;
    double sigma2 = 1.0;
};
struct CfpModel {
    FreeLevyParams params;  // drift = sigma = 0
};
struct FreeLevyModel {
    FreeLevyParams params;
};
struct PenningtonBahriModel {
    double lambda = 0.75;
    double epsilon = 0.1;
};

struct MatrixSampleSpec {
    std::size_t n = 2;
    std::uint64_t seed = 0;
    std::variant<MpModel, CfpModel, FreeLevyModel, PenningtonBahriModel> model;
};

// Caps guarding desk-scale runs.
inline std::size_t& matrix_memory_cap_bytes() {
    static std::size_t cap = std::size_t{6} * 1024 * 1024 * 1024;
    return cap;
}
inline std::size_t& dense_solver_cap() {
    static std::size_t cap = 16384;
    return cap;
}

namespace detail {

inline std::size_t round_half_even(double x) {
    // nearbyint honours the default to-nearest-even rounding mode.
    return static_cast<std::size_t>(std::nearbyint(x));
}

inline void check_matrix_budget(std::size_t n, double factor) {
    double bytes = factor * static_cast<double>(n) * static_cast<double>(n) * 8.0;
    if (bytes > static_cast<double>(matrix_memory_cap_bytes()))
        throw resource_error("sample_matrix: matrix exceeds configured memory cap");
}

// Deterministic diagonal population spectrum: floor(w_i p) copies of t_i,
// remainder assigned to the largest-weight atom.
inline std::vector<double> population_diagonal(const FreeLevyParams& fl, std::size_t p) {
    std::vector<double> diag;
    diag.reserve(p);
    std::size_t used = 0;
    for (std::size_t i = 0; i < fl.atoms.size(); ++i) {
        std::size_t c = static_cast<std::size_t>(std::floor(fl.weights[i] * static_cast<double>(p)));
        c = std::min(c, p - used);
        diag.insert(diag.end(), c, fl.atoms[i]);
        used += c;
    }
    std::size_t top = static_cast<std::size_t>(
        std::max_element(fl.weights.begin(), fl.weights.end()) - fl.weights.begin());
    diag.insert(diag.end(), p - used, fl.atoms[top]);
    return diag;
}

// C = (1/k) X^T X for X (p x k), written into a symmetric n x n matrix.
inline Eigen::MatrixXd gram_over_k(const Eigen::MatrixXd& x) {
    const int p = static_cast<int>(x.rows());
    const int k = static_cast<int>(x.cols());
    Eigen::MatrixXd c(k, k);
#ifdef FDPM_HAVE_LAPACKE
    {
        const double alpha = 1.0 / static_cast<double>(p), beta = 0.0;
        const char uplo = 'L', trans = 'T';
        dsyrk_(&uplo, &trans, &k, &p, &alpha, x.data(), &p, &beta, c.data(), &k);
        c.triangularView<Eigen::StrictlyUpper>() = c.transpose();
    }
#else
    c.noalias() = x.transpose() * x / static_cast<double>(p);
#endif
    return c;
}

inline void add_wigner(Eigen::MatrixXd& a, double scale, philox_rng& rng) {
    const std::size_t n = static_cast<std::size_t>(a.rows());
    const double off = scale / std::sqrt(static_cast<double>(n));
    const double dia = scale * std::sqrt(2.0 / static_cast<double>(n));
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i <= j; ++i) {
            double g = rng.normal();
            if (i == j) {
                a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += dia * g;
            } else {
                double v = off * g;
                a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += v;
                a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) += v;
            }
        }
    }
}

}  // namespace detail

// Symmetric matrix realization of the requested law.  Deterministic in the
// seed: the entry stream comes from the counter-based generator, filled in a
// fixed order.
inline Eigen::MatrixXd sample_matrix(const MatrixSampleSpec& spec) {
    if (spec.n < 2) throw parameter_error("sample_matrix: n must be >= 2");
    const std::size_t n = spec.n;
    philox_rng rng(spec.seed);

    if (const auto* mp = std::get_if<MpModel>(&spec.model)) {
        if (!(mp->lambda > 0.0) || !(mp->sigma2 > 0.0))
            throw parameter_error("sample_matrix: MP parameters must be positive");
        // n x n Wishart part with column count q chosen so n/q ~ lambda.
        std::size_t q = std::max<std::size_t>(1, detail::round_half_even(static_cast<double>(n) / mp->lambda));
        detail::check_matrix_budget(n, 1.0 + static_cast<double>(q) / static_cast<double>(n));
        Eigen::MatrixXd x(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(n));
        const double sd = std::sqrt(mp->sigma2);
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = sd * rng.normal();
        return detail::gram_over_k(x);
    }

    const bool is_cfp = std::holds_alternative<CfpModel>(spec.model);
    if (is_cfp || std::holds_alternative<FreeLevyModel>(spec.model)) {
        FreeLevyParams fl = is_cfp ? std::get<CfpModel>(spec.model).params
                                   : std::get<FreeLevyModel>(spec.model).params;
        if (is_cfp) {
            fl.drift = 0.0;
            fl.sigma = 0.0;
        }
        fl.validate();
        std::size_t p = std::max<std::size_t>(1, detail::round_half_even(fl.rate * static_cast<double>(n)));
        detail::check_matrix_budget(n, 1.0 + static_cast<double>(p) / static_cast<double>(n));
        std::vector<double> diag = detail::population_diagonal(fl, p);
        Eigen::MatrixXd x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(n));
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            for (Eigen::Index i = 0; i < x.rows(); ++i)
                x(i, j) = std::sqrt(diag[static_cast<std::size_t>(i)]) * rng.normal();
        // (1/n) X^T X: companion sample covariance with population spectrum nu.
        Eigen::MatrixXd a = detail::gram_over_k(x) * (static_cast<double>(p) / static_cast<double>(n));
        if (fl.drift != 0.0) a.diagonal().array() += fl.drift;
        if (fl.sigma > 0.0) detail::add_wigner(a, fl.sigma, rng);
        return a;
    }

    const auto& pb = std::get<PenningtonBahriModel>(spec.model);
    std::size_t q = std::max<std::size_t>(1, detail::round_half_even(static_cast<double>(n) / pb.lambda));
    detail::check_matrix_budget(n, 1.0 + static_cast<double>(q) / static_cast<double>(n));
    Eigen::MatrixXd x(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(n));
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = rng.normal();
    Eigen::MatrixXd a = detail::gram_over_k(x);
    detail::add_wigner(a, std::sqrt(2.0 * pb.epsilon), rng);
    return a;
}

// Uniformly chosen k x k principal submatrix.
inline Eigen::MatrixXd subsample_principal(const Eigen::MatrixXd& a, std::size_t k, std::uint64_t seed) {
    const std::size_t n = static_cast<std::size_t>(a.rows());
    if (a.rows() != a.cols()) throw parameter_error("subsample_principal: matrix must be square");
    if (k < 1 || k > n) throw parameter_error("subsample_principal: k out of range");
    philox_rng rng(seed, /*stream=*/1);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t r = 0; r < k; ++r)
            sub(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                a(static_cast<Eigen::Index>(idx[r]), static_cast<Eigen::Index>(idx[c]));
    return sub;
}

// Ascending eigenvalues of a dense symmetric matrix.
inline EigenSample symmetric_eigenvalues(const Eigen::MatrixXd& a) {
    const std::size_t n = static_cast<std::size_t>(a.rows());
    if (a.rows() != a.cols()) throw validation_error("symmetric_eigenvalues: matrix must be square");
    if (n > dense_solver_cap()) throw resource_error("symmetric_eigenvalues: n exceeds dense-solver cap");
    double amax = a.cwiseAbs().maxCoeff();
    double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10 * std::max(amax, 1e-300))
        throw validation_error("symmetric_eigenvalues: matrix is not symmetric");

#ifdef FDPM_HAVE_LAPACKE
    Eigen::MatrixXd work = a;
    std::vector<double> w(n);
    int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'N', 'L', static_cast<int>(n), work.data(),
                              static_cast<int>(n), w.data());
    if (info != 0) throw error("symmetric_eigenvalues: dsyevd failed");
    return EigenSample(std::move(w), n);
#else
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw error("symmetric_eigenvalues: eigensolver failed");
    std::vector<double> w(es.eigenvalues().data(), es.eigenvalues().data() + n);
    return EigenSample(std::move(w), n);
#endif
}

// ---------------------------------------------------------------------------
// Binary matrix file: 8-byte little-endian dimension header, then row-major
// float64 entries.
// ---------------------------------------------------------------------------

inline void write_matrix(const std::string& path, const Eigen::MatrixXd& a) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("write_matrix: cannot open " + path);
    std::uint64_t dim = static_cast<std::uint64_t>(a.rows());
    out.write(reinterpret_cast<const char*>(&dim), 8);
    std::vector<double> row(static_cast<std::size_t>(a.cols()));
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) row[static_cast<std::size_t>(j)] = a(i, j);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(double)));
    }
}

inline Eigen::MatrixXd read_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error("read_matrix: cannot open " + path);
    std::uint64_t dim = 0;
    in.read(reinterpret_cast<char*>(&dim), 8);
    Eigen::MatrixXd a(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    std::vector<double> row(dim);
    for (std::uint64_t i = 0; i < dim; ++i) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(dim * sizeof(double)));
        if (!in) throw validation_error("read_matrix: truncated file");
        for (std::uint64_t j = 0; j < dim; ++j)
            a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
    return a;
}

}  // namespace fdpm
