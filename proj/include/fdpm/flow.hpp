#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdpm/curve.hpp"
#include "fdpm/decompress.hpp"
#include "fdpm/features.hpp"

namespace fdpm {

// One stored frame of the decompression flow.
struct FlowFrame {
    double tau = 1.0;
    DensityGrid grid;
    std::vector<AtomMass> atoms;  // evolved atom weights at this ratio
};

struct FlowOptions {
    int grid_points = 600;             // total per frame, shared across bulks
    std::vector<double> delta_ladder;  // absolute offsets; empty = per-frame default
    int cheb_degree = 2;
    double grid_margin = 0.10;         // extension beyond the evolved edges
    std::vector<double> lambdas;       // explicit grid; empty = adaptive per frame
};

namespace detail {

// Per-frame abscissae: every surviving bulk extended by the margin, points
// allocated proportionally to width with a floor so narrow bulks stay
// resolved.
inline std::vector<double> frame_grid(const std::vector<double>& alive_edges, int total_points,
                                      double margin) {
    std::vector<double> grid;
    if (alive_edges.size() < 2) return grid;
    struct Seg {
        double lo, hi;
    };
    std::vector<Seg> segs;
    for (std::size_t i = 0; i + 1 < alive_edges.size(); i += 2) {
        double lo = alive_edges[i], hi = alive_edges[i + 1];
        double ext = margin * (hi - lo);
        segs.push_back({lo - ext, hi + ext});
    }
    // Merge overlapping extended segments.
    std::vector<Seg> merged;
    for (const auto& s : segs) {
        if (!merged.empty() && s.lo <= merged.back().hi)
            merged.back().hi = std::max(merged.back().hi, s.hi);
        else
            merged.push_back(s);
    }
    double total_w = 0.0;
    for (const auto& s : merged) total_w += s.hi - s.lo;
    for (const auto& s : merged) {
        int pts = std::max(24, static_cast<int>(std::lround(total_points * (s.hi - s.lo) / total_w)));
        for (int i = 0; i < pts; ++i)
            grid.push_back(s.lo + (s.hi - s.lo) * (i + 0.5) / pts);
    }
    std::sort(grid.begin(), grid.end());
    return grid;
}

}  // namespace detail

// Decompression flow with densities: evolves the edges to derive a grid per
// stored ratio, recovers the density of each frame through the lifted system
// with the delta ladder, and carries atom weights along the closed-form law.
inline std::vector<FlowFrame> decompress_density(const BivariatePoly& p, const TauSchedule& schedule,
                                                 const FlowOptions& options = {}) {
    schedule.validate();
    EdgeTrack track = evolve_edges(p, schedule);
    std::vector<AtomState> atoms0 = detect_atoms(p);
    const double scale = spectral_scale(p);

    std::vector<FlowFrame> frames(schedule.frames());
    for (std::size_t f = 0; f < schedule.frames(); ++f) {
        double tau = schedule.ratios[f];
        FlowFrame& frame = frames[f];
        frame.tau = tau;

        std::vector<double> lambdas = options.lambdas;
        if (lambdas.empty())
            lambdas = detail::frame_grid(track.alive_at(f), options.grid_points, options.grid_margin);
        if (lambdas.empty()) throw config_error("decompress_density: no grid for frame");

        std::vector<double> ladder = options.delta_ladder;
        if (ladder.empty()) {
            auto alive = track.alive_at(f);
            double width = alive.size() >= 2 ? alive.back() - alive.front() : 1.0;
            ladder = default_delta_ladder(width);
        }

        if (tau == 1.0) {
            frame.grid = density_from_curve(p, lambdas, ladder, options.cheb_degree);
        } else {
            detail::validate_ladder(ladder, options.cheb_degree);
            const std::size_t L = ladder.size(), n = lambdas.size();
            std::vector<std::vector<double>> rho_levels(L, std::vector<double>(n));
            parallel_for(L, [&](std::size_t k) {
                auto vals = decompressed_sweep(p, tau, lambdas, ladder[k], scale);
                for (std::size_t i = 0; i < n; ++i)
                    rho_levels[k][i] = vals[i].imag() / 3.14159265358979323846;
            });
            frame.grid.lambdas = lambdas;
            frame.grid.delta_ladder = ladder;
            frame.grid.rho.resize(n);
            if (L == 1 || options.cheb_degree == 0) {
                frame.grid.rho = rho_levels[0];
                frame.grid.extrapolated = false;
                for (auto& r : frame.grid.rho) r = std::max(0.0, r);
            } else {
                auto w = detail::ladder_weights(ladder, options.cheb_degree);
                for (std::size_t i = 0; i < n; ++i) {
                    double v = 0.0;
                    for (std::size_t k = 0; k < L; ++k) v += w[k] * rho_levels[k][i];
                    frame.grid.rho[i] = std::max(0.0, v);
                }
                frame.grid.extrapolated = true;
            }
        }
        for (const auto& a : atoms0)
            frame.atoms.push_back({a.location, evolve_atom(a.weight, tau)});
    }
    return frames;
}

// Spec-shaped overload: fixed lambda grid and ladder for every frame.
inline std::vector<FlowFrame> decompress_density(const BivariatePoly& p, const std::vector<double>& lambdas,
                                                 const TauSchedule& schedule,
                                                 const std::vector<double>& delta_ladder, int cheb_degree) {
    FlowOptions opt;
    opt.lambdas = lambdas;
    opt.delta_ladder = delta_ladder;
    opt.cheb_degree = cheb_degree;
    return decompress_density(p, schedule, opt);
}

// Flow output: one density CSV per ratio plus an index JSON listing
// {tau, n_equivalent, file}.
inline nlohmann::json write_flow(const std::string& dir, const std::vector<FlowFrame>& frames,
                                 double n0 = 1.0) {
    std::filesystem::create_directories(dir);
    nlohmann::json index = nlohmann::json::array();
    for (std::size_t f = 0; f < frames.size(); ++f) {
        char name[64];
        std::snprintf(name, sizeof name, "density_%04zu.csv", f);
        write_density(dir + "/" + name, frames[f].grid);
        nlohmann::json rec{{"tau", frames[f].tau},
                           {"n_equivalent", static_cast<long long>(std::llround(n0 * frames[f].tau))},
                           {"file", name}};
        if (!frames[f].atoms.empty()) {
            nlohmann::json atoms = nlohmann::json::array();
            for (const auto& a : frames[f].atoms)
                atoms.push_back({{"location", a.location}, {"weight", a.weight}});
            rec["atoms"] = std::move(atoms);
        }
        index.push_back(std::move(rec));
    }
    std::ofstream out(dir + "/index.json");
    if (!out) throw error("write_flow: cannot open index in " + dir);
    out << index.dump(2) << "\n";
    return index;
}

}  // namespace fdpm
