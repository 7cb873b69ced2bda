#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fdpm/ensembles.hpp"
#include "fdpm/features.hpp"
#include "fdpm/flow.hpp"
#include "fdpm/rng.hpp"
#include "oracles.hpp"

using namespace fdpm;
using Catch::Approx;

TEST_CASE("edge evolution on closed-form laws", "[features]") {
    SECTION("MP edges under a doubled ratio") {
        auto track = evolve_edges(mp_polynomial(0.1, 1.0), TauSchedule::geometric(2.0));
        auto e = track.alive_at(track.taus.size() - 1);
        REQUIRE(e.size() == 2);
        REQUIRE(e[0] == Approx(oracles::mp_edge_low(0.2)).margin(1e-6));
        REQUIRE(e[1] == Approx(oracles::mp_edge_high(0.2)).margin(1e-6));
    }
    SECTION("semicircle edges scale as 2 sqrt(tau)") {
        auto track = evolve_edges(semicircle_polynomial(1.0), TauSchedule::geometric(4.0));
        auto e = track.alive_at(track.taus.size() - 1);
        REQUIRE(e.size() == 2);
        REQUIRE(e[0] == Approx(-4.0).margin(1e-6));
        REQUIRE(e[1] == Approx(4.0).margin(1e-6));
    }
    SECTION("free Levy subsample track ends with three bulks matching the density") {
        auto p = free_levy_polynomial({0, 0.2, 0.4, {0.5, 1.375}, {0.75, 0.25}});
        auto schedule = TauSchedule::geometric(4.0);
        auto track = evolve_edges(p, schedule);
        REQUIRE(track.bulk_count.front() == 1);
        REQUIRE(track.bulk_count.back() == 3);
        // edge curves lie on the boundary of the positive-density region
        auto frames = decompress_density(p, schedule);
        const auto& grid = frames.back().grid;
        double width = grid.lambdas.back() - grid.lambdas.front();
        double floor = 1e-4 * grid.peak();
        for (double edge : track.alive_at(track.taus.size() - 1)) {
            double nearest = 1e300;
            for (std::size_t i = 1; i < grid.lambdas.size(); ++i) {
                bool lo = grid.rho[i - 1] <= floor, hi = grid.rho[i] <= floor;
                if (lo != hi) nearest = std::min(nearest, std::abs(0.5 * (grid.lambdas[i - 1] + grid.lambdas[i]) - edge));
            }
            REQUIRE(nearest <= 0.01 * width);
        }
    }
    SECTION("annihilated endpoints stay annihilated") {
        // merging configuration: two bulks that join under decompression
        FreeLevyParams fl{0, 0, 0.5, {1.0, 1.6}, {0.5, 0.5}};
        auto p = cfp_polynomial(fl);
        auto track = evolve_edges(p, TauSchedule::geometric(8.0));
        bool merged = false;
        for (std::size_t f = 1; f < track.taus.size(); ++f) {
            if (track.bulk_count[f] < track.bulk_count[f - 1]) merged = true;
            if (merged) REQUIRE(track.bulk_count[f] <= track.bulk_count[f - 1]);
        }
        REQUIRE(merged);
    }
}

TEST_CASE("cusp events", "[features]") {
    SECTION("CFP subsample splits once") {
        auto p = cfp_polynomial({0, 0, 0.6, {2.0 / 6, 5.5 / 6}, {0.75, 0.25}});
        auto track = evolve_edges(p, TauSchedule::geometric(6.0));
        auto cusps = find_cusps(p, 1.0, 6.0, cusp_seeds_from_track(p, track));
        REQUIRE(cusps.size() == 1);
        REQUIRE(cusps[0].tau_star > 1.0);
        REQUIRE(cusps[0].tau_star < 6.0);
        // bulk count transitions adjacent to tau*
        std::size_t fstar = 0;
        for (std::size_t f = 1; f < track.taus.size(); ++f)
            if (track.bulk_count[f] != track.bulk_count[f - 1]) fstar = f;
        REQUIRE(fstar > 0);
        REQUIRE(track.taus[fstar - 1] <= cusps[0].tau_star * 1.05);
        REQUIRE(cusps[0].tau_star <= track.taus[fstar] * 1.05);
        // cusp equations hold at the event
        detail::EdgeSystem sys(p);
        detail::CuspSystem cs{&sys};
        double f3[3];
        cs.eval(cusps[0].point.zeta.real(), cusps[0].point.y.real(), cusps[0].tau_star, f3);
        REQUIRE(std::abs(f3[0]) < 1e-8);
        REQUIRE(std::abs(f3[1]) < 1e-8);
        REQUIRE(std::abs(f3[2]) < 1e-6);
    }
    SECTION("free Levy subsample splits twice") {
        auto p = free_levy_polynomial({0, 0.2, 0.4, {0.5, 1.375}, {0.75, 0.25}});
        auto track = evolve_edges(p, TauSchedule::geometric(4.0));
        auto cusps = find_cusps(p, 1.0, 4.0, cusp_seeds_from_track(p, track));
        REQUIRE(cusps.size() == 2);
    }
    SECTION("MP never develops a cusp") {
        auto p = mp_polynomial(0.25, 1.0);
        auto track = evolve_edges(p, TauSchedule::geometric(8.0));
        auto cusps = find_cusps(p, 1.0, 8.0, cusp_seeds_from_track(p, track));
        REQUIRE(cusps.empty());
    }
}

TEST_CASE("atom weights", "[features]") {
    SECTION("CFP residue at the origin") {
        auto w = atom_weight_from_polynomial(cfp_polynomial({0, 0, 0.1, {2.0, 5.5}, {0.75, 0.25}}), 0.0);
        REQUIRE(w);
        REQUIRE(*w == Approx(0.9).margin(1e-12));
    }
    SECTION("MP with ratio above one") {
        auto w = atom_weight_from_polynomial(mp_polynomial(2.0, 1.0), 0.0);
        REQUIRE(w);
        REQUIRE(*w == Approx(0.5).margin(1e-12));
    }
    SECTION("MP below one has no physical atom") {
        REQUIRE_FALSE(atom_weight_from_polynomial(mp_polynomial(0.25, 1.0), 0.0));
    }
    SECTION("non-root location is rejected") {
        REQUIRE_THROWS_AS(atom_weight_from_polynomial(mp_polynomial(0.25, 1.0), 1.0), parameter_error);
    }
    SECTION("weight law") {
        REQUIRE(evolve_atom(0.8, 2.0) == Approx(0.9).margin(1e-15));
        REQUIRE(evolve_atom(0.8, 16.0) == Approx(0.9875).margin(1e-15));
        REQUIRE(evolve_atom(1.0, 7.3) == 1.0);
        double prev = 0.3;
        for (double tau : {1.0, 1.5, 2.0, 4.0, 32.0}) {
            double w = evolve_atom(0.3, tau);
            REQUIRE(w >= prev - 1e-15);
            prev = w;
        }
    }
}

TEST_CASE("edge velocities", "[features]") {
    SECTION("semicircle right edge at tau = 1") {
        auto p = semicircle_polynomial(1.0);
        for (const auto& b : branch_points(p).points)
            if (b.tag == BranchTag::physical_edge && b.z.real() > 0)
                REQUIRE(edge_velocity(p, {b.z, b.m}, 1.0) == Approx(1.0).margin(1e-8));
    }
    SECTION("MP right edge at tau = 1") {
        auto p = mp_polynomial(0.25, 1.0);
        for (const auto& b : branch_points(p).points)
            if (b.tag == BranchTag::physical_edge && b.z.real() > 1.0)
                REQUIRE(edge_velocity(p, {b.z, b.m}, 1.0) == Approx(0.75).margin(1e-8));
    }
    SECTION("matches central differences of the tracked edges") {
        philox_rng rng(19);
        int checked = 0;
        while (checked < 20) {
            double lam = 0.1 + 0.6 * rng.uniform();
            double tau = 1.0 + 3.0 * rng.uniform();
            auto p = mp_polynomial(lam, 1.0);
            detail::EdgeSystem sys(p);
            auto cands = detail::edge_candidates(p, sys, tau);
            for (const auto& c : cands) {
                if (std::abs(c.z.imag()) > 1e-9) continue;
                double v = edge_velocity(p, {c.zeta, c.y}, tau);
                // central difference in t = log tau
                double h = 1e-4;
                auto at = [&](double tt) {
                    cplx zeta = c.zeta, y = c.y;
                    REQUIRE(sys.newton(zeta, y, std::exp(tt)));
                    return (zeta - (std::exp(tt) - 1.0) / y).real();
                };
                double t0 = std::log(tau);
                double fd = (at(t0 + h) - at(t0 - h)) / (2.0 * h);
                REQUIRE(v == Approx(fd).margin(1e-4));
                ++checked;
            }
        }
    }
    SECTION("initial velocity from the Hilbert transform") {
        REQUIRE(initial_edge_velocity(1.0 / oracles::pi) == Approx(1.0).margin(1e-12));
        REQUIRE(initial_edge_velocity(-0.2) < 0.0);
        REQUIRE_THROWS_AS(initial_edge_velocity(0.0), degenerate_edge_error);
    }
    SECTION("outermost edges move outward on every test law") {
        for (auto p : {mp_polynomial(0.25, 1.0), semicircle_polynomial(1.0),
                       cfp_polynomial({0, 0, 0.6, {2.0 / 6, 5.5 / 6}, {0.75, 0.25}})}) {
            auto set = branch_points(p);
            std::vector<BranchPoint> phys;
            for (const auto& b : set.points)
                if (b.tag == BranchTag::physical_edge) phys.push_back(b);
            std::sort(phys.begin(), phys.end(),
                      [](const BranchPoint& a, const BranchPoint& b) { return a.z.real() < b.z.real(); });
            // H = -m(edge)/pi; outermost: H(a1) < 0 < H(bk)
            double h_lo = -phys.front().m.real() / oracles::pi;
            double h_hi = -phys.back().m.real() / oracles::pi;
            REQUIRE(h_lo < 0.0);
            REQUIRE(h_hi > 0.0);
            REQUIRE(initial_edge_velocity(h_lo) < 0.0);
            REQUIRE(initial_edge_velocity(h_hi) > 0.0);
        }
    }
}

TEST_CASE("moment evolution", "[features]") {
    SECTION("first moment is invariant") {
        MomentVector mu({1.0, 0.7, 2.0, 3.0});
        for (double tau : {1.0, 2.0, 10.0}) REQUIRE(evolve_moments(mu, tau)[1] == Approx(0.7).margin(1e-15));
    }
    SECTION("centered semicircle second moment scales linearly") {
        MomentVector mu({1.0, 0.0, 1.0});
        REQUIRE(evolve_moments(mu, 5.0)[2] == Approx(5.0).margin(1e-12));
    }
    SECTION("MP second moment") {
        for (double lam : {0.1, 0.25, 0.7}) {
            MomentVector mu({1.0, 1.0, 1.0 + lam});
            REQUIRE(evolve_moments(mu, 3.0)[2] == Approx(1.0 + 3.0 * lam).margin(1e-12));
        }
    }
}

TEST_CASE("finite-size left-edge correction", "[features]") {
    auto p = mp_polynomial(0.25, 1.0);
    double tau = 2.0;
    auto track = evolve_edges(p, TauSchedule::geometric(tau));
    double uncorrected = track.alive_at(track.taus.size() - 1).front();
    REQUIRE(uncorrected == Approx(oracles::mp_edge_low(0.5)).margin(1e-6));

    SECTION("converges to the uncorrected edge") {
        auto r = finite_size_left_edge(p, 1e12, tau, uncorrected);
        REQUIRE(std::abs(r.corrected - uncorrected) <= 1e-6);
    }
    SECTION("correction scale decays like n^(-2/3)") {
        // slope check on a short ladder; the acceptance suite runs the full one
        std::vector<double> lx, ly;
        for (int e = 8; e <= 13; ++e) {
            double n = std::pow(2.0, e);
            auto r = finite_size_left_edge(p, n, tau, uncorrected);
            REQUIRE(r.correction_available);
            double d = std::abs(r.corrected - uncorrected);
            REQUIRE(d > 0.0);
            lx.push_back(std::log(n));
            ly.push_back(std::log(d));
        }
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            sx += lx[i];
            sy += ly[i];
            sxx += lx[i] * lx[i];
            sxy += lx[i] * ly[i];
        }
        double nn = static_cast<double>(lx.size());
        double slope = (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
        REQUIRE(slope == Approx(-2.0 / 3.0).margin(0.1));
    }
    SECTION("shrinking left edge keeps a positive finite-size correction") {
        // ratio pushed until the macroscopic left edge nearly reaches zero
        auto q = mp_polynomial(0.2, 1.0);
        double t2 = 4.8;  // lambda tau = 0.96, edge ~ 4e-4
        auto tr = evolve_edges(q, TauSchedule::geometric(t2));
        double edge = tr.alive_at(tr.taus.size() - 1).front();
        REQUIRE(edge < 5e-4);
        auto r = finite_size_left_edge(q, 4096, t2, edge);
        REQUIRE(r.correction_available);
        REQUIRE(r.corrected > 0.0);
        REQUIRE(r.corrected > edge);
    }
}

TEST_CASE("edge track output", "[features]") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "fdpm_feat_test";
    fs::create_directories(dir);
    auto p = mp_polynomial(0.1, 1.0);
    auto track = evolve_edges(p, TauSchedule::geometric(2.0, 4));
    auto path = (dir / "edges.csv").string();
    write_edge_track(path, track, 1000.0);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "tau,n_equivalent,a1,b1,bulk_count");
    std::string row;
    std::getline(in, row);
    REQUIRE(row.substr(0, 2) == "1,");
}
