// mgwm: simulate, calibrate, report and validate watermark-detection scenarios.
#include "mgwm/app.hpp"
#include "mgwm/config.hpp"
#include "mgwm/io.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace mgwm;

namespace {

enum Exit { ok = 0, runtime = 1, usage = 2 };

struct Flags {
    std::string scenario;
    std::string out;
    std::string thresholds;
    std::optional<std::uint64_t> seed;
    int runs = 100;
    bool plots = false;
    bool force = false;
    bool quiet = false;
};

fs::path output_dir(const Flags& f, const std::string& name)
{
    if (!f.out.empty()) return f.out;
    if (const char* root = std::getenv("MGWM_OUT_ROOT")) return fs::path(root) / name;
    return fs::path("runs") / name;
}

void guard_overwrite(const fs::path& file, bool force)
{
    if (fs::exists(file) && !force)
        throw ConfigError(fmt::format("{} already exists; pass --force to overwrite", file.string()));
}

Scenario load(const Flags& f)
{
    if (f.scenario.empty()) throw ConfigError("no scenario given");
    Scenario sc = load_scenario(f.scenario);
    if (f.seed) sc.reseed(*f.seed);
    if (!f.thresholds.empty()) {
        if (!fs::exists(f.thresholds)) throw ConfigError(fmt::format("thresholds file {} does not exist", f.thresholds));
        sc.thresholds = load_thresholds(f.thresholds);
        sc.thresholds_file = f.thresholds;
    }
    return sc;
}

int cmd_simulate(const Flags& f)
{
    Scenario sc = load(f);
    const fs::path dir = output_dir(f, sc.name);
    guard_overwrite(dir / "manifest.json", f.force);
    const System sys = build_system_for(sc);
    for (const auto& w : sys.warnings) std::cerr << "warning: " << w << '\n';
    std::string source = sc.thresholds_file.empty() ? "scenario" : sc.thresholds_file;
    if (sc.detectors_enabled && !sc.thresholds) {
        CalibrationRequest req;
        req.runs = f.runs;
        if (!f.quiet) std::cerr << fmt::format("calibrating thresholds on {} honest runs...\n", req.runs);
        const CalibrationResult cr = calibrate_scenario(sc, sys, req);
        sc.thresholds = cr.thresholds;
        source = fmt::format("auto-calibrated: {} runs from seed {}, quantile {}, safety factor {}", req.runs,
                             req.seed_base, req.quantile, req.safety_factor);
    }
    const TimeSeries ts = run_scenario(sc, sys);
    write_run_artifacts(dir, sc, ts, source, f.plots);
    if (!f.quiet) std::cout << summary_text(sc, ts) << "artifacts: " << dir.string() << '\n';
    if (ts.diverged && sc.attacks.empty()) {
        std::cerr << "error: unattacked scenario diverged: " << ts.diverged_reason << '\n';
        return runtime;
    }
    return ok;
}

int cmd_calibrate(const Flags& f)
{
    if (f.runs < 20) throw ConfigError(fmt::format("calibration needs at least 20 runs, got {}", f.runs));
    Scenario sc = load(f);
    const fs::path dir = output_dir(f, sc.name + "_calibration");
    const fs::path file = dir / "thresholds.json";
    guard_overwrite(file, f.force);
    const System sys = build_system_for(sc);
    CalibrationRequest req;
    req.runs = f.runs;
    if (f.seed) req.seed_base = *f.seed;
    const CalibrationResult cr = calibrate_scenario(sc, sys, req);
    fs::create_directories(dir);
    write_thresholds(file, cr, sc.source_sha256, req.seed_base);
    if (!f.quiet)
        std::cout << fmt::format("chi1* = {:.6g}  chi2* = {:.6g}  ({} windows from {} runs, quantile {}, factor {})\n{}\n",
                                 cr.thresholds.chi1, cr.thresholds.chi2, cr.windows, cr.runs, cr.quantile,
                                 cr.safety_factor, file.string());
    return ok;
}

int cmd_report(const std::string& dir, const Flags& f)
{
    const std::string text = render_report(dir);
    std::cout << text;
    if (!f.out.empty()) {
        guard_overwrite(f.out, f.force);
        std::ofstream(f.out, std::ios::binary) << text;
    }
    return ok;
}

int cmd_validate(const Flags& f)
{
    const Scenario sc = load(f);
    const System sys = build_system_for(sc);
    std::cout << fmt::format("scenario {} ok: {} DGUs, {} steps of {} s, {} attack(s)\n", sc.name, sys.n_dgu(), sc.steps(),
                             sc.Ts, sc.attacks.size());
    std::cout << fmt::format("equilibrium: |f| {:.2e}, |g| {:.2e}, bus voltages", sys.eq.f_residual, sys.eq.g_residual);
    for (int b = 0; b < sys.eq.bus_voltages.size(); ++b) std::cout << fmt::format(" {:.5f}", sys.eq.bus_voltages(b));
    std::cout << '\n';
    const SpectrumSummary sp = summarize_spectrum(closed_loop_matrix(sys.plant, sys.gains));
    std::cout << fmt::format("honest closed loop: spectral radius {:.6f} excluding {} unit eigenvalue(s)\n",
                             sp.radius_excluding_unit, sp.unit_count);
    for (std::size_t i = 0; i < sys.reduced.size(); ++i)
        std::cout << fmt::format("detector {}: reduced order {} of {}, Riccati residual {:.2e}\n", i + 1,
                                 sys.reduced[i].dim(), sys.reduced[i].full_dim, sys.riccati[i].residual);
    for (const auto& w : sys.warnings) std::cout << "warning: " << w << '\n';
    return ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Dynamic-watermarking detector for droop-controlled microgrids"};
    app.require_subcommand(1);
    Flags f;
    std::string report_dir;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* s) {
        s->add_option("scenario,--scenario", f.scenario, "scenario file")->required();
        s->add_flag("--quiet", f.quiet, "suppress the summary");
    };
    auto* sim = app.add_subcommand("simulate", "run one scenario and write CSVs + manifest");
    add_common(sim);
    sim->add_option("--seed", seed, "master seed");
    sim->add_option("--thresholds", f.thresholds, "thresholds file from calibrate");
    sim->add_option("--out", f.out, "output directory (default $MGWM_OUT_ROOT/<name> or runs/<name>)");
    sim->add_option("--runs", f.runs, "honest runs for auto-calibration when no thresholds are given")->check(CLI::Range(20, 100000));
    sim->add_flag("--plots", f.plots, "also write SVG plots");
    sim->add_flag("--force", f.force, "overwrite an existing run");

    auto* cal = app.add_subcommand("calibrate", "estimate thresholds from attack-free runs");
    add_common(cal);
    cal->add_option("--seed", seed, "first master seed of the honest runs");
    cal->add_option("--out", f.out, "output directory");
    cal->add_option("--runs", f.runs, "number of honest runs (>= 20)");
    cal->add_flag("--force", f.force, "overwrite an existing thresholds file");

    auto* rep = app.add_subcommand("report", "detection statistics from run artifacts");
    rep->add_option("dir", report_dir, "run directory")->required();
    rep->add_option("--out", f.out, "also save the table to this file");
    rep->add_flag("--force", f.force, "overwrite --out");

    auto* val = app.add_subcommand("validate", "check a scenario and its model");
    add_common(val);
    val->add_option("--thresholds", f.thresholds, "thresholds file to check as well");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : usage;
    }
    for (auto* s : {sim, cal})
        if (s->parsed() && s->count("--seed")) f.seed = seed;

    try {
        if (sim->parsed()) return cmd_simulate(f);
        if (cal->parsed()) return cmd_calibrate(f);
        if (rep->parsed()) return cmd_report(report_dir, f);
        return cmd_validate(f);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return runtime;
    }
}
