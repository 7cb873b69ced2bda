// fdpm command-line tool: sample ensembles, fit algebraic spectral curves,
// evaluate densities, run decompression flows, and track spectral features.
//
// Exit codes: 0 success, 2 bad flags, 3 resource cap, 4 fit ambiguity or
// constraint failure, 5 continuation stiffness, 6 cusp solver failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fdpm/curve.hpp"
#include "fdpm/curvefit.hpp"
#include "fdpm/decompress.hpp"
#include "fdpm/ensembles.hpp"
#include "fdpm/features.hpp"
#include "fdpm/flow.hpp"
#include "fdpm/parallel.hpp"
#include "fdpm/spectra.hpp"
#include "fdpm/version.hpp"

namespace {

using nlohmann::json;
using namespace fdpm;

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::uint64_t h = 1469598103934665603ull;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof buf);
        std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct ManifestWriter {
    json config = json::object();
    json inputs = json::object();
    std::string command;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void add_input(const std::string& path) { inputs[path] = hex64(fnv1a64_file(path)); }

    // One manifest per output: directories own manifest.json, plain files a
    // sibling <file>.manifest.json.
    void write(const std::string& out_path, bool is_dir) const {
        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        json m{{"schema", "fdpm-manifest/1"},
               {"command", command},
               {"config", config},
               {"inputs", inputs},
               {"version", fdpm::version_string},
               {"wall_time_sec", wall}};
        std::string path = is_dir ? out_path + "/manifest.json" : out_path + ".manifest.json";
        if (is_dir) std::filesystem::create_directories(out_path);
        std::ofstream f(path);
        f << m.dump(2) << "\n";
    }
};

std::vector<double> parse_csv_doubles(const std::string& s) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        out.push_back(std::stod(s.substr(pos, next - pos)));
        pos = next + 1;
    }
    return out;
}

// "lo:hi:n" -> n uniform points
std::vector<double> parse_grid(const std::string& s) {
    auto c1 = s.find(':');
    auto c2 = s.find(':', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
        throw parameter_error("grid spec must be lo:hi:n");
    double lo = std::stod(s.substr(0, c1));
    double hi = std::stod(s.substr(c1 + 1, c2 - c1 - 1));
    int n = std::stoi(s.substr(c2 + 1));
    if (n < 2 || hi <= lo) throw parameter_error("grid spec must satisfy lo < hi, n >= 2");
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
    return g;
}

std::vector<Interval> parse_bulks(const std::string& s) {
    std::vector<Interval> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        std::string part = s.substr(pos, next - pos);
        auto colon = part.find(':');
        if (colon == std::string::npos) throw parameter_error("bulk spec must be lo:hi[,lo:hi...]");
        out.push_back({std::stod(part.substr(0, colon)), std::stod(part.substr(colon + 1))});
        pos = next + 1;
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"spectral density extrapolation on algebraic curves"};
    app.set_version_flag("--version", fdpm::version_string);
    std::size_t threads = 0;
    std::string config_path;
    bool print_config = false;
    app.add_option("--threads", threads, "worker threads (0 = all cores)");
    app.add_option("--config", config_path, "JSON config file (flags take precedence)");
    app.add_flag("--print-config", print_config, "dump the effective configuration and exit");
    app.require_subcommand(0, 1);

    // ---- sample ----
    auto* sample = app.add_subcommand("sample", "sample a matrix ensemble and write its eigenvalues");
    std::string s_model = "mp", s_out;
    std::size_t s_n = 1000, s_sub = 0;
    std::uint64_t s_seed = 0;
    double s_lam = 0.5, s_sigma2 = 1.0, s_rate = 0.1, s_sigma = 0.0, s_drift = 0.0, s_eps = 0.1;
    std::string s_atoms = "2,5.5", s_weights = "0.75,0.25", s_matrix_out;
    sample->add_option("--model", s_model, "mp | cfp | flevy | pb")->required();
    sample->add_option("--n", s_n, "matrix dimension")->required();
    sample->add_option("--seed", s_seed, "RNG seed");
    sample->add_option("--out", s_out, "eigenvalue output file")->required();
    sample->add_option("--lam", s_lam, "aspect ratio (mp, pb)");
    sample->add_option("--sigma2", s_sigma2, "scale (mp)");
    sample->add_option("--rate", s_rate, "rate (cfp, flevy)");
    sample->add_option("--atoms", s_atoms, "jump atoms t_i, comma separated");
    sample->add_option("--weights", s_weights, "jump weights w_i, comma separated");
    sample->add_option("--sigma", s_sigma, "semicircular scale (flevy)");
    sample->add_option("--drift", s_drift, "drift (flevy)");
    sample->add_option("--eps", s_eps, "epsilon (pb)");
    sample->add_option("--subsample", s_sub, "emit eigenvalues of a k x k principal submatrix");
    sample->add_option("--save-matrix", s_matrix_out, "also write the matrix (binary)");

    // ---- fit ----
    auto* fit = app.add_subcommand("fit", "fit the algebraic relation from an eigenvalue file");
    std::string f_eigs, f_out, f_bulks;
    int f_degm = 3, f_degz = 1, f_moments = 0, f_nsamples = 0;
    double f_eta = 0.0;
    bool f_auto = false;
    fit->add_option("--eigs", f_eigs, "eigenvalue file")->required();
    fit->add_option("--out", f_out, "polynomial JSON output")->required();
    fit->add_option("--deg-m", f_degm, "degree in m");
    fit->add_option("--deg-z", f_degz, "degree in z");
    fit->add_option("--moments", f_moments, "moment constraints up to order r (-1 disables)");
    fit->add_option("--eta", f_eta, "Tikhonov weight");
    fit->add_option("--n-samples", f_nsamples, "contour samples (even; 0 = auto)");
    fit->add_flag("--auto", f_auto, "pick degrees by residual ladder");
    fit->add_option("--bulks", f_bulks, "override detected support, lo:hi[,lo:hi...]");

    // ---- density ----
    auto* density = app.add_subcommand("density", "evaluate the density of a fitted relation");
    std::string d_poly, d_out, d_grid = "auto", d_deltas = "auto";
    int d_q = 2, d_points = 600;
    density->add_option("--poly", d_poly, "polynomial JSON")->required();
    density->add_option("--out", d_out, "density CSV output")->required();
    density->add_option("--grid", d_grid, "lo:hi:n or auto");
    density->add_option("--deltas", d_deltas, "comma-separated ladder or auto");
    density->add_option("--q", d_q, "extrapolation degree");
    density->add_option("--points", d_points, "grid points in auto mode");

    // ---- decompress ----
    auto* dec = app.add_subcommand("decompress", "run the decompression flow");
    std::string x_poly, x_out, x_grid = "auto", x_deltas = "auto";
    double x_tau = 0.0;
    std::size_t x_target = 0, x_n0 = 0;
    int x_q = 2, x_points = 600, x_fpo = 8;
    dec->add_option("--poly", x_poly, "polynomial JSON")->required();
    dec->add_option("--out", x_out, "output directory")->required();
    dec->add_option("--tau", x_tau, "decompression ratio (>= 1)");
    dec->add_option("--target-size", x_target, "target dimension N (tau = N / n0)");
    dec->add_option("--n0", x_n0, "source dimension n0 (default: poly metadata)");
    dec->add_option("--grid", x_grid, "lo:hi:n or auto (per-frame adaptive)");
    dec->add_option("--deltas", x_deltas, "comma-separated ladder or auto");
    dec->add_option("--q", x_q, "extrapolation degree");
    dec->add_option("--points", x_points, "grid points per frame in auto mode");
    dec->add_option("--frames-per-octave", x_fpo, "stored frames per doubling of tau");

    // ---- features ----
    auto* feat = app.add_subcommand("features", "evolve edges, cusps, atoms, or moments");
    feat->require_subcommand(1);
    auto* fe_edges = feat->add_subcommand("edges", "edge trajectories CSV");
    auto* fe_cusps = feat->add_subcommand("cusps", "cusp events JSON");
    auto* fe_atoms = feat->add_subcommand("atoms", "atom weight trajectories CSV");
    auto* fe_moms = feat->add_subcommand("moments", "moment evolution CSV");
    std::string g_poly, g_out;
    double g_taumax = 4.0;
    std::size_t g_n0 = 0;
    int g_fpo = 8, g_order = 3;
    for (auto* sc : {fe_edges, fe_cusps, fe_atoms, fe_moms}) {
        sc->add_option("--poly", g_poly, "polynomial JSON")->required();
        sc->add_option("--out", g_out, "output file")->required();
        sc->add_option("--tau-max", g_taumax, "largest ratio");
        sc->add_option("--n0", g_n0, "source dimension for n_equivalent");
        sc->add_option("--frames-per-octave", g_fpo, "frames per doubling of tau");
    }
    fe_moms->add_option("--order", g_order, "highest moment order");

    // Config-file defaults: inject "--key=value" for keys absent from argv.
    std::vector<std::string> args(argv + 1, argv + argc);
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (!config_path.empty()) {
        std::ifstream cf(config_path);
        if (!cf) {
            std::cerr << "fdpm: cannot open config " << config_path << "\n";
            return 2;
        }
        json conf;
        cf >> conf;
        for (auto it = conf.begin(); it != conf.end(); ++it) {
            std::string key = "--" + it.key();
            bool present = false;
            for (const auto& a : args)
                if (a == key || a.rfind(key + "=", 0) == 0) present = true;
            if (!present)
                args.push_back(key + "=" + (it.value().is_string() ? it.value().get<std::string>()
                                                                   : it.value().dump()));
        }
    }

    try {
        std::vector<const char*> cargs;
        cargs.push_back("fdpm");
        for (const auto& a : args) cargs.push_back(a.c_str());
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    thread_count() = threads;

    ManifestWriter manifest;
    for (int i = 0; i < argc; ++i) manifest.command += std::string(i ? " " : "") + argv[i];

    // ------------------------------------------------------------------ sample
    if (*sample) {
        MatrixSampleSpec spec;
        spec.n = s_n;
        spec.seed = s_seed;
        if (s_model == "mp") {
            spec.model = MpModel{s_lam, s_sigma2};
        } else if (s_model == "cfp") {
            spec.model = CfpModel{FreeLevyParams{0, 0, s_rate, parse_csv_doubles(s_atoms), parse_csv_doubles(s_weights)}};
        } else if (s_model == "flevy") {
            spec.model = FreeLevyModel{FreeLevyParams{s_drift, s_sigma, s_rate, parse_csv_doubles(s_atoms), parse_csv_doubles(s_weights)}};
        } else if (s_model == "pb") {
            spec.model = PenningtonBahriModel{s_lam, s_eps};
        } else {
            std::cerr << "fdpm sample: unknown model '" << s_model << "'\n";
            return 2;
        }
        manifest.config = {{"model", s_model}, {"n", s_n}, {"seed", s_seed}, {"subsample", s_sub}};
        if (print_config) {
            std::cout << manifest.config.dump(2) << "\n";
            return 0;
        }
        Eigen::MatrixXd a = sample_matrix(spec);
        if (!s_matrix_out.empty()) write_matrix(s_matrix_out, a);
        if (s_sub > 0) a = subsample_principal(a, s_sub, s_seed);
        EigenSample ev = symmetric_eigenvalues(a);
        write_eigenvalues(s_out, ev);
        manifest.write(s_out, false);
        std::cout << "wrote " << ev.size() << " eigenvalues to " << s_out << "\n";
        return 0;
    }

    // ------------------------------------------------------------------- fit
    if (*fit) {
        manifest.add_input(f_eigs);
        manifest.config = {{"deg_m", f_degm}, {"deg_z", f_degz}, {"moments", f_moments},
                           {"eta", f_eta},    {"auto", f_auto},  {"n_samples", f_nsamples}};
        if (print_config) {
            std::cout << manifest.config.dump(2) << "\n";
            return 0;
        }
        EigenSample ev = read_eigenvalues(f_eigs);
        std::vector<Interval> bulks;
        if (!f_bulks.empty()) {
            bulks = parse_bulks(f_bulks);
        } else {
            bulks = detect_support(ev).bulks;
        }
        if (bulks.empty()) {
            std::cerr << "fdpm fit: no bulk support detected\n";
            return 4;
        }
        std::optional<MomentVector> moments;
        if (f_moments >= 0) moments = empirical_moments(ev, f_moments);
        auto sample_at = [&](cplx z) { return empirical_stieltjes(ev, z); };

        FitResult result;
        FitConfig cfg;
        cfg.eta = f_eta;
        if (f_auto) {
            cfg.n_samples = f_nsamples > 0 ? f_nsamples : 64;
            result = fit_auto(sample_at, bulks, cfg, moments);
        } else {
            cfg.d_z = f_degz;
            cfg.s = f_degm;
            cfg.n_samples = f_nsamples > 0 ? f_nsamples
                                           : std::max(64, 4 * (f_degm + 1) * (f_degz + 1));
            if (cfg.n_samples % 2) ++cfg.n_samples;
            auto pts = sample_contours(bulks, cfg);
            std::vector<cplx> vals(pts.size());
            for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = sample_at(pts[i]);
            result = fit_polynomial(pts, vals, cfg, moments);
        }
        if (result.ambiguous) {
            std::cerr << "fdpm fit: degenerate smallest singular pair (gap "
                      << result.singular_gap << "); fit is ambiguous\n";
            return 4;
        }
        json meta{{"eta", f_eta},
                  {"r", f_moments},
                  {"source_size", ev.source_size},
                  {"sample_count", ev.size()}};
        write_poly(f_out, result.poly, result.residual, meta);
        manifest.write(f_out, false);
        std::printf("residual %.6e  (deg_m %d, deg_z %d)\n", result.residual, result.poly.deg_m(),
                    result.poly.deg_z());
        return 0;
    }

    // --------------------------------------------------------------- density
    if (*density) {
        manifest.add_input(d_poly);
        manifest.config = {{"grid", d_grid}, {"deltas", d_deltas}, {"q", d_q}, {"points", d_points}};
        if (print_config) {
            std::cout << manifest.config.dump(2) << "\n";
            return 0;
        }
        BivariatePoly p = read_poly(d_poly);
        std::vector<double> grid;
        if (d_grid == "auto") {
            auto bps = branch_points(p).physical_edges();
            grid = fdpm::detail::frame_grid(bps, d_points, 0.05);
        } else {
            grid = parse_grid(d_grid);
        }
        std::vector<double> ladder;
        if (d_deltas == "auto") {
            double width = grid.back() - grid.front();
            ladder = default_delta_ladder(width);
        } else {
            ladder = parse_csv_doubles(d_deltas);
        }
        DensityGrid dg = density_from_curve(p, grid, ladder, d_q);
        write_density(d_out, dg);
        manifest.write(d_out, false);
        std::printf("wrote %zu density points, mass %.6f\n", dg.lambdas.size(), dg.mass());
        return 0;
    }

    // ------------------------------------------------------------ decompress
    if (*dec) {
        manifest.add_input(x_poly);
        json meta;
        BivariatePoly p = read_poly(x_poly, nullptr, &meta);
        std::size_t n0 = x_n0;
        if (n0 == 0 && meta.contains("source_size")) n0 = meta["source_size"].get<std::size_t>();
        double tau = x_tau;
        if (x_target > 0) {
            if (n0 == 0) {
                std::cerr << "fdpm decompress: --target-size needs --n0 or polynomial metadata\n";
                return 2;
            }
            tau = static_cast<double>(x_target) / static_cast<double>(n0);
        }
        if (tau < 1.0) {
            std::cerr << "fdpm decompress: need --tau >= 1 or --target-size\n";
            return 2;
        }
        manifest.config = {{"tau", tau},       {"n0", n0},     {"grid", x_grid},
                           {"deltas", x_deltas}, {"q", x_q},     {"points", x_points},
                           {"frames_per_octave", x_fpo}};
        if (print_config) {
            std::cout << manifest.config.dump(2) << "\n";
            return 0;
        }
        FlowOptions opt;
        opt.grid_points = x_points;
        opt.cheb_degree = x_q;
        if (x_grid != "auto") opt.lambdas = parse_grid(x_grid);
        if (x_deltas != "auto") opt.delta_ladder = parse_csv_doubles(x_deltas);
        auto frames = decompress_density(p, TauSchedule::geometric(tau, x_fpo), opt);
        write_flow(x_out, frames, n0 > 0 ? static_cast<double>(n0) : 1.0);
        manifest.write(x_out, true);
        std::printf("wrote %zu frames to %s (tau %.4f)\n", frames.size(), x_out.c_str(), tau);
        return 0;
    }

    // -------------------------------------------------------------- features
    if (*feat) {
        manifest.add_input(g_poly);
        BivariatePoly p = read_poly(g_poly);
        TauSchedule schedule = TauSchedule::geometric(g_taumax, g_fpo);
        double n0 = g_n0 > 0 ? static_cast<double>(g_n0) : 1.0;
        manifest.config = {{"tau_max", g_taumax}, {"n0", g_n0}, {"frames_per_octave", g_fpo}};
        if (print_config) {
            std::cout << manifest.config.dump(2) << "\n";
            return 0;
        }

        if (*fe_edges) {
            EdgeTrack track = evolve_edges(p, schedule);
            write_edge_track(g_out, track, n0);
            manifest.write(g_out, false);
            std::printf("tracked %zu frames, final bulk count %d\n", track.taus.size(),
                        track.bulk_count.back());
            return 0;
        }
        if (*fe_cusps) {
            EdgeTrack track = evolve_edges(p, schedule);
            auto seeds = cusp_seeds_from_track(p, track);
            auto cusps = find_cusps(p, 1.0, g_taumax, seeds);
            bool transitions = false;
            for (std::size_t f = 1; f < track.bulk_count.size(); ++f)
                if (track.bulk_count[f] != track.bulk_count[f - 1]) transitions = true;
            std::ofstream out(g_out);
            out << cusps_to_json(cusps).dump(2) << "\n";
            manifest.write(g_out, false);
            if (cusps.empty() && transitions) {
                std::cerr << "fdpm features cusps: solver found no cusp; falling back to "
                             "crossing detection (bulk-count transitions at";
                for (std::size_t f = 1; f < track.bulk_count.size(); ++f)
                    if (track.bulk_count[f] != track.bulk_count[f - 1])
                        std::cerr << " tau=" << track.taus[f];
                std::cerr << ")\n";
                return 6;
            }
            std::printf("found %zu cusp event(s)\n", cusps.size());
            return 0;
        }
        if (*fe_atoms) {
            auto atoms = detect_atoms(p);
            std::ofstream out(g_out);
            out << "tau,n_equivalent";
            for (std::size_t a = 0; a < atoms.size(); ++a)
                out << ",location" << a + 1 << ",weight" << a + 1;
            out << "\n";
            char buf[64];
            for (double t : schedule.ratios) {
                std::snprintf(buf, sizeof buf, "%.17g", t);
                out << buf << "," << static_cast<long long>(std::llround(n0 * t));
                for (const auto& a : atoms) {
                    std::snprintf(buf, sizeof buf, ",%.17g,%.17g", a.location, evolve_atom(a.weight, t));
                    out << buf;
                }
                out << "\n";
            }
            manifest.write(g_out, false);
            std::printf("tracked %zu atom(s)\n", atoms.size());
            return 0;
        }
        if (*fe_moms) {
            MomentVector mu0 = moments_from_polynomial(p, g_order);
            std::ofstream out(g_out);
            out << "tau,n_equivalent";
            for (int k = 0; k <= g_order; ++k) out << ",mu" << k;
            out << "\n";
            char buf[64];
            for (double t : schedule.ratios) {
                MomentVector mu = evolve_moments(mu0, t);
                std::snprintf(buf, sizeof buf, "%.17g", t);
                out << buf << "," << static_cast<long long>(std::llround(n0 * t));
                for (int k = 0; k <= g_order; ++k) {
                    std::snprintf(buf, sizeof buf, ",%.17g", mu[static_cast<std::size_t>(k)]);
                    out << buf;
                }
                out << "\n";
            }
            manifest.write(g_out, false);
            return 0;
        }
    }

    std::cout << app.help() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const fdpm::resource_error& e) {
        std::cerr << "fdpm: " << e.what() << "\n";
        return 3;
    } catch (const fdpm::constraint_error& e) {
        std::cerr << "fdpm: " << e.what() << "\n";
        return 4;
    } catch (const fdpm::stiffness_error& e) {
        std::cerr << "fdpm: " << e.what() << " (z = " << e.where().real() << (e.where().imag() < 0 ? " - " : " + ")
                  << std::abs(e.where().imag()) << "i, tau = " << e.tau() << ")\n";
        return 5;
    } catch (const fdpm::error& e) {
        std::cerr << "fdpm: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "fdpm: " << e.what() << "\n";
        return 1;
    }
}
