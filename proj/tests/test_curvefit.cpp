#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "fdpm/curvefit.hpp"
#include "fdpm/ensembles.hpp"
#include "fdpm/rng.hpp"
#include "oracles.hpp"

using namespace fdpm;
using Catch::Approx;

TEST_CASE("contour sampling", "[curvefit]") {
    SECTION("single bulk: conjugate pairs off the axis") {
        FitConfig cfg;
        cfg.n_samples = 8;
        auto pts = sample_contours({{-2.0, 2.0}}, cfg);
        REQUIRE(pts.size() == 8);
        double eps = cfg.buffer_factor * 4.0;
        for (std::size_t i = 0; i < pts.size(); i += 2) {
            REQUIRE(pts[i + 1] == std::conj(pts[i]));
            REQUIRE(std::abs(pts[i].imag()) > eps);
        }
    }
    SECTION("two bulks spread points across three contour families") {
        FitConfig cfg;
        cfg.n_samples = 48;
        Interval b1{0.0, 1.0}, b2{3.0, 4.0};
        auto pts = sample_contours({b1, b2}, cfg);
        REQUIRE(pts.size() == 48);
        int near1 = 0, near2 = 0, global = 0;
        for (cplx z : pts) {
            // bulk ellipses have semi-major <= 3 * half-width
            if (std::abs(z.real() - b1.center()) <= 1.6) ++near1;
            else if (std::abs(z.real() - b2.center()) <= 1.6) ++near2;
            else ++global;
        }
        REQUIRE(near1 >= 12);
        REQUIRE(near2 >= 12);
        REQUIRE(global >= 4);
    }
    SECTION("translation equivariance") {
        FitConfig cfg;
        cfg.n_samples = 16;
        auto base = sample_contours({{-1.0, 1.0}}, cfg);
        auto shifted = sample_contours({{9.0, 11.0}}, cfg);
        for (std::size_t i = 0; i < base.size(); ++i)
            REQUIRE(std::abs(shifted[i] - (base[i] + 10.0)) < 1e-12);
    }
    SECTION("infeasible buffer") {
        FitConfig cfg;
        cfg.n_samples = 8;
        cfg.buffer_factor = 10.0;  // buffer wider than any minor axis
        REQUIRE_THROWS_AS(sample_contours({{0.0, 1.0}}, cfg), config_error);
    }
}

TEST_CASE("moment constraint matrix", "[curvefit]") {
    SECTION("two-fold convolution of [1, 1]") {
        // row l of B uses mu*^j; for mu = (1, 1), mu*2 = (1, 2, 1)
        auto idx = rectangular_index_set(1, 2);
        MomentVector mu({1.0, 1.0});
        auto b = moment_constraint_matrix(idx, mu);
        REQUIRE(b.rows() == 2);
        // column (1,2): i-j-e_max+l with e_max = 1: l=0 -> q=-2 (zero),
        // l=1 -> q=-1 (zero); column (0,2) never contributes; check the
        // convolution through column (1,1): q = l-1; l=1 -> mu*1_0 = 1, sign -1.
        Eigen::Index col_11 = 0;
        for (std::size_t k = 0; k < idx.size(); ++k)
            if (idx[k] == std::make_pair(1, 1)) col_11 = static_cast<Eigen::Index>(k);
        REQUIRE(b(1, col_11) == Approx(-1.0));
    }
    SECTION("l = 0 row on a rectangular support reduces to c_{dz,0} = 0") {
        auto idx = rectangular_index_set(2, 3);
        MomentVector mu({1.0});
        auto b = moment_constraint_matrix(idx, mu);
        REQUIRE(b.rows() == 1);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            double expect = idx[k] == std::make_pair(2, 0) ? 1.0 : 0.0;
            REQUIRE(b(0, static_cast<Eigen::Index>(k)) == Approx(expect).margin(1e-15));
        }
    }
    SECTION("MP coefficients annihilate the leading row") {
        auto p = mp_polynomial(0.25, 1.0);
        // active support of the MP quadratic (c_{10} = c_{02} = 0 excluded)
        std::vector<std::pair<int, int>> idx{{0, 0}, {0, 1}, {1, 1}, {1, 2}};
        MomentVector mu({1.0});
        auto b = moment_constraint_matrix(idx, mu);
        double acc = 0.0;
        for (std::size_t k = 0; k < idx.size(); ++k)
            acc += b(0, static_cast<Eigen::Index>(k)) * p.coeff(idx[k].first, idx[k].second);
        REQUIRE(std::abs(acc) < 1e-14);
    }
}

TEST_CASE("implicit fit of the algebraic relation", "[curvefit]") {
    auto mp_values = [](const std::vector<cplx>& pts) {
        std::vector<cplx> vals(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = oracles::mp_stieltjes(0.25, 1.0, pts[i]);
        return vals;
    };
    FitConfig cfg;
    cfg.d_z = 1;
    cfg.s = 2;
    cfg.n_samples = 64;
    auto pts = sample_contours({{oracles::mp_edge_low(0.25), oracles::mp_edge_high(0.25)}}, cfg);
    auto vals = mp_values(pts);
    MomentVector mu0({1.0});

    SECTION("recovers the MP quadratic from exact samples") {
        auto fit = fit_polynomial(pts, vals, cfg, mu0);
        REQUIRE(fit.residual < 1e-10);
        REQUIRE(coefficient_angle(fit.poly, mp_polynomial(0.25, 1.0)) < 1e-6);
        REQUIRE_FALSE(fit.ambiguous);
    }
    SECTION("reality symmetry of the fitted relation") {
        auto fit = fit_polynomial(pts, vals, cfg, mu0);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            cplx a = fit.poly.eval(std::conj(pts[i]), std::conj(vals[i]));
            cplx b = std::conj(fit.poly.eval(pts[i], vals[i]));
            REQUIRE(std::abs(a - b) < 1e-12);
        }
    }
    SECTION("Tikhonov perturbation stays below eta") {
        auto clean = fit_polynomial(pts, vals, cfg, mu0);
        FitConfig reg = cfg;
        reg.eta = 1e-6;
        auto smoothed = fit_polynomial(pts, vals, reg, mu0);
        REQUIRE(std::abs(smoothed.residual - clean.residual) <= reg.eta);
    }
    SECTION("constraint satisfaction with full moment rows") {
        MomentVector mu({1.0, 1.0, 1.25});
        auto fit = fit_polynomial(pts, vals, cfg, mu);
        auto idx = rectangular_index_set(cfg.d_z, cfg.s);
        auto b = moment_constraint_matrix(idx, mu);
        for (Eigen::Index r = 0; r < b.rows(); ++r) {
            double acc = 0.0;
            for (std::size_t k = 0; k < idx.size(); ++k)
                acc += b(r, static_cast<Eigen::Index>(k)) * fit.poly.coeff(idx[k].first, idx[k].second);
            REQUIRE(std::abs(acc) < 1e-10);
        }
    }
    SECTION("scale gauge of the coefficient vector") {
        auto fit = fit_polynomial(pts, vals, cfg, mu0);
        BivariatePoly scaled = fit.poly;
        for (int i = 0; i <= scaled.deg_z(); ++i)
            for (int j = 0; j <= scaled.deg_m(); ++j) scaled.coeff(i, j) *= -41.5;
        REQUIRE(coefficient_angle(scaled, fit.poly) < 1e-14);
    }
    SECTION("conjugate-pair precondition is enforced") {
        auto bad = vals;
        bad[1] += cplx(0.0, 1e-3);  // breaks the pairing
        REQUIRE_THROWS_AS(fit_polynomial(pts, bad, cfg, mu0), parameter_error);
    }
    SECTION("over-constraining throws") {
        FitConfig tiny = cfg;
        tiny.d_z = 0;
        tiny.s = 1;
        MomentVector mu({1.0, 1.0, 1.25, 1.8125, 2.0, 2.5});
        REQUIRE_THROWS_AS(fit_polynomial(pts, vals, tiny, mu), constraint_error);
    }
}

TEST_CASE("degree ladder on noisy data", "[curvefit]") {
    // Quantile MP sample with deterministic jitter: residuals are nonzero, so
    // nested supports must not increase them.
    auto base = oracles::quantile_sample([](double x) { return oracles::mp_density(0.25, 1.0, x); },
                                         oracles::mp_edge_low(0.25), oracles::mp_edge_high(0.25), 2000);
    philox_rng rng(31);
    std::vector<double> jittered = base.values;
    for (auto& v : jittered) v += 1e-4 * (rng.uniform() - 0.5);
    EigenSample sample(std::move(jittered));
    auto sample_at = [&](cplx z) { return empirical_stieltjes(sample, z); };
    std::vector<Interval> support{{sample.min(), sample.max()}};

    SECTION("residual is non-increasing in nested supports") {
        double prev = std::numeric_limits<double>::infinity();
        for (int s = 2; s <= 4; ++s) {
            FitConfig cfg;
            cfg.d_z = 1;
            cfg.s = s;
            cfg.n_samples = 96;
            auto pts = sample_contours(support, cfg);
            std::vector<cplx> vals(pts.size());
            for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = sample_at(pts[i]);
            auto fit = fit_polynomial(pts, vals, cfg, MomentVector({1.0}));
            REQUIRE(fit.residual <= prev * (1.0 + 1e-9));
            prev = fit.residual;
        }
    }
    SECTION("auto ladder picks the quadratic for MP data") {
        FitConfig cfg;
        cfg.n_samples = 96;
        auto fit = fit_auto(sample_at, support, cfg, MomentVector({1.0}), 4, 2);
        REQUIRE(fit.poly.deg_m() == 2);
        REQUIRE(fit.poly.deg_z() == 1);
    }
}

TEST_CASE("fit from a sampled CFP submatrix spectrum", "[curvefit]") {
    // Law of a 1/6 principal subsample of the two-atom CFP benchmark:
    // rate 0.6 with atoms scaled by 1/6.  Fit from an actual matrix sample
    // and compare the recovered density against the sample itself.
    FreeLevyParams sub{0, 0, 0.6, {2.0 / 6.0, 5.5 / 6.0}, {0.75, 0.25}};
    auto ev = symmetric_eigenvalues(sample_matrix({1000, 77, CfpModel{sub}}));
    auto support = detect_support(ev);
    REQUIRE(support.bulks.size() == 1);
    REQUIRE(support.atoms.size() == 1);
    REQUIRE(support.atoms[0].weight == Approx(0.4).margin(0.02));

    FitConfig cfg;
    cfg.d_z = 1;
    cfg.s = 3;
    cfg.n_samples = 96;
    auto pts = sample_contours(support.bulks, cfg);
    std::vector<cplx> vals(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = empirical_stieltjes(ev, pts[i]);
    auto fit = fit_polynomial(pts, vals, cfg, MomentVector({1.0}));
    REQUIRE(fit.residual < 1e-2);

    auto edges = branch_points(fit.poly).physical_edges();
    REQUIRE(edges.size() >= 2);
    std::vector<double> grid;
    for (int i = 0; i < 800; ++i)
        grid.push_back(edges.front() + (edges.back() - edges.front()) * (i + 0.5) / 800.0);
    auto dg = density_from_curve(fit.poly, grid, default_delta_ladder(edges.back() - edges.front()), 2);
    // Compare conditional-on-bulk measures: rescale the (mass ~0.6) grid to a
    // probability density and match it against the nonzero eigenvalues.
    std::vector<double> bulk_only;
    for (double v : ev.values)
        if (v > 1e-8) bulk_only.push_back(v);
    EigenSample bulk_sample(std::move(bulk_only));
    double mass = dg.mass();
    REQUIRE(mass == Approx(0.6).margin(0.05));
    for (auto& r : dg.rho) r /= mass;
    REQUIRE(density_wasserstein(bulk_sample, dg) <= 0.02);
}
