#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fdpm/errors.hpp"

namespace fdpm {

using cplx = std::complex<double>;

// Real bivariate polynomial P(z, m) = sum_{i<=d_z, j<=s} c_{ij} z^i m^j.
//
// This is the object every stage of the pipeline consumes and produces: the
// fitted algebraic relation for a Stieltjes transform, the closed-form laws,
// and the evolved relations all live here.  Coefficients are stored dense
// row-major over (i, j); the active support of a fit is the set of indices
// with numerically nonzero entries.
class BivariatePoly {
public:
    BivariatePoly() : dz_(0), s_(0), c_(1, 0.0) {}

    BivariatePoly(int dz, int s)
        : dz_(dz), s_(s), c_(static_cast<std::size_t>(dz + 1) * (s + 1), 0.0) {
        if (dz < 0 || s < 0) throw parameter_error("BivariatePoly: negative degree");
    }

    static BivariatePoly from_rows(const std::vector<std::vector<double>>& rows) {
        int dz = static_cast<int>(rows.size()) - 1;
        int s = dz >= 0 ? static_cast<int>(rows.front().size()) - 1 : -1;
        BivariatePoly p(dz, s);
        for (int i = 0; i <= dz; ++i) {
            if (static_cast<int>(rows[i].size()) != s + 1)
                throw parameter_error("BivariatePoly: ragged coefficient rows");
            for (int j = 0; j <= s; ++j) p.coeff(i, j) = rows[i][j];
        }
        return p;
    }

    int deg_z() const { return dz_; }
    int deg_m() const { return s_; }

    double coeff(int i, int j) const { return c_[idx(i, j)]; }
    double& coeff(int i, int j) { return c_[idx(i, j)]; }
    const std::vector<double>& raw() const { return c_; }

    double max_abs_coeff() const {
        double m = 0.0;
        for (double v : c_) m = std::max(m, std::abs(v));
        return m;
    }

    double norm2() const {
        double s = 0.0;
        for (double v : c_) s += v * v;
        return std::sqrt(s);
    }

    // Indices whose coefficient is nonzero relative to the largest entry.
    std::vector<std::pair<int, int>> active_indices(double rel_tol = 1e-12) const {
        double tol = rel_tol * max_abs_coeff();
        std::vector<std::pair<int, int>> out;
        for (int i = 0; i <= dz_; ++i)
            for (int j = 0; j <= s_; ++j)
                if (std::abs(coeff(i, j)) > tol) out.emplace_back(i, j);
        return out;
    }

    // max{i - j : c_ij active}; drives the far-field expansion.
    int e_max(double rel_tol = 1e-12) const {
        double tol = rel_tol * max_abs_coeff();
        int e = std::numeric_limits<int>::min();
        for (int i = 0; i <= dz_; ++i)
            for (int j = 0; j <= s_; ++j)
                if (std::abs(coeff(i, j)) > tol) e = std::max(e, i - j);
        if (e == std::numeric_limits<int>::min())
            throw degenerate_point_error("e_max: zero polynomial");
        return e;
    }

    // Coefficient polynomials a_j(z): P = sum_j a_j(z) m^j.
    std::vector<double> m_power_coeffs(int j) const {
        std::vector<double> a(static_cast<std::size_t>(dz_) + 1);
        for (int i = 0; i <= dz_; ++i) a[static_cast<std::size_t>(i)] = coeff(i, j);
        return a;
    }

    // a_j(z) for all j at fixed z, i.e. the univariate polynomial in m.
    std::vector<cplx> m_coeffs_at(cplx z) const {
        std::vector<cplx> a(static_cast<std::size_t>(s_) + 1);
        for (int j = 0; j <= s_; ++j) {
            cplx acc = 0.0;
            for (int i = dz_; i >= 0; --i) acc = acc * z + coeff(i, j);
            a[static_cast<std::size_t>(j)] = acc;
        }
        return a;
    }

    cplx eval(cplx z, cplx m) const {
        cplx acc = 0.0;
        for (int i = dz_; i >= 0; --i) acc = acc * z + row_eval(i, m);
        return acc;
    }

    struct Grads {
        cplx p, pz, pm;
    };

    // P, dP/dz and dP/dm in one pass; this sits in every Newton loop.
    Grads eval_grads(cplx z, cplx m) const {
        cplx p = 0.0, pz = 0.0, pm = 0.0;
        for (int i = dz_; i >= 0; --i) {
            cplx r, rm;
            row_eval_d(i, m, r, rm);
            pz = pz * z + p;
            p = p * z + r;
            pm = pm * z + rm;
        }
        return {p, pz, pm};
    }

    // Partial-derivative polynomial d^{a+b} P / dz^a dm^b.
    BivariatePoly derivative(int a, int b) const {
        int ndz = std::max(0, dz_ - a), ns = std::max(0, s_ - b);
        BivariatePoly d(ndz, ns);
        if (dz_ - a < 0 || s_ - b < 0) return d;
        for (int i = 0; i + a <= dz_; ++i)
            for (int j = 0; j + b <= s_; ++j) {
                double f = 1.0;
                for (int k = 1; k <= a; ++k) f *= i + k;
                for (int k = 1; k <= b; ++k) f *= j + k;
                d.coeff(i, j) = f * coeff(i + a, j + b);
            }
        return d;
    }

    // ||c||_2 = 1 with the first (row-major) nonzero entry positive.
    BivariatePoly normalized() const {
        double n = norm2();
        if (n == 0.0) throw degenerate_point_error("normalized: zero polynomial");
        double sign = 1.0;
        double tol = 1e-14 * max_abs_coeff();
        for (double v : c_) {
            if (std::abs(v) > tol) {
                sign = v > 0 ? 1.0 : -1.0;
                break;
            }
        }
        BivariatePoly out(dz_, s_);
        for (std::size_t k = 0; k < c_.size(); ++k) out.c_[k] = c_[k] * sign / n;
        return out;
    }

    // Remove common monomial factors z^a m^b and trim numerically-zero top
    // rows/columns, then renormalize.  The reduction threshold is relative
    // to the largest coefficient.
    BivariatePoly reduced(double rel_tol = 1e-12) const {
        double tol = rel_tol * max_abs_coeff();
        int lo_i = dz_ + 1, lo_j = s_ + 1, hi_i = -1, hi_j = -1;
        for (int i = 0; i <= dz_; ++i)
            for (int j = 0; j <= s_; ++j)
                if (std::abs(coeff(i, j)) > tol) {
                    lo_i = std::min(lo_i, i);
                    hi_i = std::max(hi_i, i);
                    lo_j = std::min(lo_j, j);
                    hi_j = std::max(hi_j, j);
                }
        if (hi_i < 0) throw degenerate_point_error("reduced: zero polynomial");
        BivariatePoly out(hi_i - lo_i, hi_j - lo_j);
        for (int i = lo_i; i <= hi_i; ++i)
            for (int j = lo_j; j <= hi_j; ++j) {
                double v = coeff(i, j);
                out.coeff(i - lo_i, j - lo_j) = std::abs(v) > tol ? v : 0.0;
            }
        return out.normalized();
    }

private:
    std::size_t idx(int i, int j) const {
        if (i < 0 || i > dz_ || j < 0 || j > s_) throw parameter_error("BivariatePoly: index out of range");
        return static_cast<std::size_t>(i) * (s_ + 1) + j;
    }

    cplx row_eval(int i, cplx m) const {
        cplx acc = 0.0;
        for (int j = s_; j >= 0; --j) acc = acc * m + coeff(i, j);
        return acc;
    }

    void row_eval_d(int i, cplx m, cplx& r, cplx& rm) const {
        r = 0.0;
        rm = 0.0;
        for (int j = s_; j >= 0; --j) {
            rm = rm * m + r;
            r = r * m + coeff(i, j);
        }
    }

    int dz_, s_;
    std::vector<double> c_;
};

// Cosine of the angle between two coefficient vectors (after normalization);
// used to compare fitted against reference polynomials.
inline double coefficient_angle(const BivariatePoly& a, const BivariatePoly& b) {
    if (a.deg_z() != b.deg_z() || a.deg_m() != b.deg_m())
        throw parameter_error("coefficient_angle: degree mismatch");
    BivariatePoly an = a.normalized(), bn = b.normalized();
    double dot = 0.0;
    for (int i = 0; i <= a.deg_z(); ++i)
        for (int j = 0; j <= a.deg_m(); ++j) dot += an.coeff(i, j) * bn.coeff(i, j);
    dot = std::clamp(std::abs(dot), 0.0, 1.0);
    return std::acos(dot);
}

// ---------------------------------------------------------------------------
// Polynomial file: JSON {d_z, s, coeffs (row-major [i][j]), residual, meta}.
// ---------------------------------------------------------------------------

inline nlohmann::json poly_to_json(const BivariatePoly& p, double residual = 0.0,
                                   nlohmann::json meta = nlohmann::json::object()) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i <= p.deg_z(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j <= p.deg_m(); ++j) row.push_back(p.coeff(i, j));
        rows.push_back(std::move(row));
    }
    if (!meta.contains("degrees")) meta["degrees"] = {{"d_z", p.deg_z()}, {"s", p.deg_m()}};
    return nlohmann::json{{"d_z", p.deg_z()},
                          {"s", p.deg_m()},
                          {"coeffs", std::move(rows)},
                          {"residual", residual},
                          {"meta", std::move(meta)}};
}

inline BivariatePoly poly_from_json(const nlohmann::json& j, double* residual = nullptr,
                                    nlohmann::json* meta = nullptr) {
    int dz = j.at("d_z").get<int>();
    int s = j.at("s").get<int>();
    BivariatePoly p(dz, s);
    const auto& rows = j.at("coeffs");
    for (int i = 0; i <= dz; ++i)
        for (int k = 0; k <= s; ++k) p.coeff(i, k) = rows.at(i).at(k).get<double>();
    if (residual) *residual = j.value("residual", 0.0);
    if (meta && j.contains("meta")) *meta = j.at("meta");
    return p;
}

inline void write_poly(const std::string& path, const BivariatePoly& p, double residual = 0.0,
                       nlohmann::json meta = nlohmann::json::object()) {
    std::ofstream out(path);
    if (!out) throw error("write_poly: cannot open " + path);
    out << poly_to_json(p, residual, std::move(meta)).dump(2) << "\n";
}

inline BivariatePoly read_poly(const std::string& path, double* residual = nullptr,
                               nlohmann::json* meta = nullptr) {
    std::ifstream in(path);
    if (!in) throw error("read_poly: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return poly_from_json(j, residual, meta);
}

}  // namespace fdpm
