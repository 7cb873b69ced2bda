#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fdpm/rng.hpp"
#include "fdpm/spectra.hpp"
#include "oracles.hpp"

using namespace fdpm;
using Catch::Approx;

TEST_CASE("empirical Stieltjes transform on closed forms", "[spectra]") {
    SECTION("single atom Cauchy kernel") {
        EigenSample s({1.0});
        cplx m = empirical_stieltjes(s, cplx(0.0, 1.0));
        REQUIRE(m.real() == Approx(0.5).margin(1e-15));
        REQUIRE(m.imag() == Approx(0.5).margin(1e-15));
    }
    SECTION("symmetric cancellation") {
        EigenSample s({0.0, 2.0});
        cplx m = empirical_stieltjes(s, cplx(1.0, 0.0));
        REQUIRE(std::abs(m) < 1e-15);
    }
    SECTION("semicircle sample vs analytic transform at 2i") {
        auto s = oracles::quantile_sample([](double x) { return oracles::semicircle_density(1.0, x); },
                                          -2.0, 2.0, 4000);
        cplx m = empirical_stieltjes(s, cplx(0.0, 2.0));
        cplx expect = cplx(0.0, std::sqrt(2.0) - 1.0);
        REQUIRE(std::abs(m - expect) < 0.02);
    }
    SECTION("pole guard") {
        EigenSample s({0.0, 1.0, 2.0});
        REQUIRE_THROWS_AS(empirical_stieltjes(s, cplx(1.0, 1e-15)), pole_error);
    }
}

TEST_CASE("empirical Stieltjes symmetry, Herglotz and normalization", "[spectra]") {
    auto s = oracles::quantile_sample([](double x) { return oracles::mp_density(0.25, 1.0, x); },
                                      oracles::mp_edge_low(0.25), oracles::mp_edge_high(0.25), 500);
    philox_rng rng(11);
    SECTION("conjugate symmetry at 1000 random points") {
        for (int k = 0; k < 1000; ++k) {
            cplx z(6.0 * rng.uniform() - 3.0, 3.0 * rng.uniform() + 1e-3);
            cplx up = empirical_stieltjes(s, z);
            cplx dn = empirical_stieltjes(s, std::conj(z));
            REQUIRE(std::abs(dn - std::conj(up)) < 1e-14);
        }
    }
    SECTION("Herglotz on data") {
        for (int k = 0; k < 200; ++k) {
            cplx z(6.0 * rng.uniform() - 3.0, 2.0 * rng.uniform() + 1e-6);
            REQUIRE(empirical_stieltjes(s, z).imag() > 0.0);
        }
    }
    SECTION("far-field normalization") {
        double r = 1e6 * std::abs(s.max());
        cplx z(0.3 * r, 0.95 * r);
        cplx m = empirical_stieltjes(s, z);
        REQUIRE(std::abs(z * m + 1.0) <= 2.0 * std::abs(s.max()) / std::abs(z));
    }
}

TEST_CASE("empirical moments", "[spectra]") {
    SECTION("constant sample") {
        auto mu = empirical_moments(EigenSample({1.0, 1.0}), 2);
        REQUIRE(mu[0] == 1.0);
        REQUIRE(mu[1] == Approx(1.0));
        REQUIRE(mu[2] == Approx(1.0));
    }
    SECTION("symmetry") {
        auto mu = empirical_moments(EigenSample({-1.0, 1.0}), 3);
        REQUIRE(mu[1] == Approx(0.0).margin(1e-16));
        REQUIRE(mu[2] == Approx(1.0));
        REQUIRE(mu[3] == Approx(0.0).margin(1e-16));
    }
    SECTION("MP second moment from a quantile sample") {
        auto s = oracles::quantile_sample([](double x) { return oracles::mp_density(0.25, 1.0, x); },
                                          oracles::mp_edge_low(0.25), oracles::mp_edge_high(0.25), 3000);
        auto mu = empirical_moments(s, 2);
        REQUIRE(mu[2] == Approx(1.25).margin(0.02));
    }
    SECTION("matches brute-force power sums") {
        philox_rng rng(3);
        std::vector<double> v(257);
        for (auto& x : v) x = 4.0 * rng.uniform() - 2.0;
        EigenSample s(v);
        auto mu = empirical_moments(s, 6);
        for (int p = 0; p <= 6; ++p) {
            double brute = 0.0;
            for (double x : s.values) brute += std::pow(x, p);
            brute /= static_cast<double>(s.size());
            REQUIRE(mu[static_cast<std::size_t>(p)] == Approx(brute).epsilon(1e-12));
        }
    }
}

TEST_CASE("Wasserstein-1 between samples", "[spectra]") {
    SECTION("identical samples") {
        EigenSample a({1.0, 2.0, 3.0});
        REQUIRE(wasserstein1(a, a) == 0.0);
    }
    SECTION("unit shift") {
        REQUIRE(wasserstein1(EigenSample({0.0, 0.0}), EigenSample({1.0, 1.0})) == Approx(1.0));
    }
    SECTION("sorted coupling") {
        REQUIRE(wasserstein1(EigenSample({1.0, 3.0}), EigenSample({2.0, 2.0})) == Approx(1.0));
    }
    SECTION("unequal sizes against refinement") {
        // Exact CDF coupling: {0, 1} vs {0, 0, 1, 1} have equal measures.
        REQUIRE(wasserstein1(EigenSample({0.0, 1.0}), EigenSample({0.0, 0.0, 1.0, 1.0})) ==
                Approx(0.0).margin(1e-15));
    }
    SECTION("log scale domain error") {
        REQUIRE_THROWS_AS(wasserstein1(EigenSample({-1.0, 1.0}), EigenSample({1.0, 2.0}), true),
                          domain_error);
    }
    SECTION("log scale value") {
        double d = wasserstein1(EigenSample({1.0}), EigenSample({std::exp(1.0)}), true);
        REQUIRE(d == Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("Wasserstein-1 between a sample and a density grid", "[spectra]") {
    // Uniform density on [0, 1].
    DensityGrid uniform;
    for (int i = 0; i <= 1000; ++i) {
        uniform.lambdas.push_back(i / 1000.0);
        uniform.rho.push_back(1.0);
    }
    SECTION("quantile construction stays under the grid spacing") {
        std::size_t n = 400;
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        double d = density_wasserstein(EigenSample(std::move(v)), uniform);
        REQUIRE(d <= 1.0 / 1000.0 + 1.0 / (4.0 * static_cast<double>(n)));
    }
    SECTION("equispaced sample vs uniform grid is O(1/n)") {
        std::size_t n = 256;
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        double d = density_wasserstein(EigenSample(std::move(v)), uniform);
        REQUIRE(d <= 2.0 / static_cast<double>(n));
    }
    SECTION("MP quantile sample vs analytic grid") {
        auto s = oracles::quantile_sample([](double x) { return oracles::mp_density(0.25, 1.0, x); },
                                          oracles::mp_edge_low(0.25), oracles::mp_edge_high(0.25), 3000);
        DensityGrid mp;
        for (int i = 0; i <= 3000; ++i) {
            double x = oracles::mp_edge_low(0.25) +
                       (oracles::mp_edge_high(0.25) - oracles::mp_edge_low(0.25)) * i / 3000.0;
            mp.lambdas.push_back(x);
            mp.rho.push_back(oracles::mp_density(0.25, 1.0, x));
        }
        REQUIRE(density_wasserstein(s, mp) <= 0.01);
    }
    SECTION("zero-width grid rejected") {
        DensityGrid g;
        g.lambdas = {1.0, 1.0};
        g.rho = {0.5, 0.5};
        REQUIRE_THROWS_AS(density_wasserstein(EigenSample({1.0}), g), domain_error);
    }
}

TEST_CASE("eigenvalue file format", "[spectra]") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "fdpm_spectra_test";
    fs::create_directories(dir);
    auto path = (dir / "eigs.txt").string();

    philox_rng rng(21);
    std::vector<double> v(97);
    for (auto& x : v) x = 10.0 * rng.uniform() - 5.0;
    EigenSample s(v, 97);
    write_eigenvalues(path, s);
    EigenSample r = read_eigenvalues(path);
    REQUIRE(r.source_size == 97);
    REQUIRE(r.values == s.values);  // 17 significant digits round-trip doubles

    SECTION("header is optional") {
        std::ofstream out(path);
        out << "0.5\n1.5\n";
        out.close();
        EigenSample q = read_eigenvalues(path);
        REQUIRE(q.source_size == 2);
        REQUIRE(q.values.size() == 2);
    }
    SECTION("pooling keeps the submatrix size") {
        EigenSample a({1.0, 2.0}, 2), b({3.0, 4.0}, 2);
        auto pooled = EigenSample::pooled({a, b});
        REQUIRE(pooled.values.size() == 4);
        REQUIRE(pooled.source_size == 2);
    }
}
