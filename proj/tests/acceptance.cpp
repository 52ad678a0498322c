// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero when any
// selected criterion fails.
#include "mgwm/app.hpp"
#include "mgwm/attack.hpp"
#include "mgwm/config.hpp"
#include "mgwm/io.hpp"
#include "mgwm/sim.hpp"

#include <CLI11.hpp>
#include <boost/numeric/odeint.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <random>

using namespace mgwm;
namespace fs = std::filesystem;

namespace {

const fs::path kData = MGWM_DATA_DIR;

Scenario scenario(const std::string& name) { return load_scenario(kData / "scenarios" / (name + ".scn")); }

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Thresholds calibrated(const Scenario& sc, const System& sys)
{
    return calibrate_scenario(sc, sys, CalibrationRequest{}).thresholds;
}

// First window end where `confirm` consecutive windows fired chi1.
std::optional<double> first_chi1_confirmation(const std::vector<WindowRecord>& ws, int confirm)
{
    int streak = 0;
    for (const auto& w : ws) {
        streak = w.chi1_fired ? streak + 1 : 0;
        if (streak >= confirm) return w.t_end;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------- 1

Verdict destabilization_detection()
{
    Scenario sc = scenario("destab_fig3");
    const System sys = build_system_for(sc);
    const Thresholds th = calibrated(sc, sys);
    const double onset = attack_onset(sc);
    int hits = 0, hits10 = 0;
    double worst = 0.0, latest = 0.0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        Scenario run = sc;
        run.reseed(seed);
        run.thresholds = th;
        const auto t0 = std::chrono::steady_clock::now();
        const TimeSeries ts = run_scenario(run, sys, {false, {}});
        worst = std::max(worst, seconds_since(t0));
        const auto first = first_chi1_confirmation(ts.windows[0], sc.detector.confirm);
        if (first && *first > onset && *first <= onset + 2.5) {
            ++hits;
            latest = std::max(latest, *first);
        }
        // Same run judged against the case-study chi1* = 10.
        std::vector<WindowRecord> ws = ts.windows[0];
        for (auto& w : ws) w.chi1_fired = w.chi1 >= 10.0;
        const auto f10 = first_chi1_confirmation(ws, sc.detector.confirm);
        if (f10 && *f10 > onset && *f10 <= onset + 2.5) ++hits10;
    }
    return {hits >= 45 && worst < 60.0,
            fmt::format("{}/50 seeds confirm on chi1 in (16, 18.5] s (latest {:.3f} s) with calibrated chi1* = {:.4g}; "
                        "{}/50 with chi1* = 10; slowest run {:.3f} s",
                        hits, latest, th.chi1, hits10, worst)};
}

// ---------------------------------------------------------------- 2

Verdict instability_reproduction()
{
    const Scenario sc = scenario("destab_fig3");
    const System sys = build_system_for(sc);
    const auto& f = std::get<DestabFilter>(sc.attacks[0].tmpl);
    const RationalFilter filt(f.num, f.den);
    // DGU1 voltage is channel 1.
    const SpectrumSummary attacked = summarize_spectrum(closed_loop_matrix(sys.plant, sys.gains, {filt.state_space(1)}));
    const SpectrumSummary honest = summarize_spectrum(closed_loop_matrix(sys.plant, sys.gains));
    double rho_all = 0.0;
    for (int i = 0; i < attacked.eigenvalues.size(); ++i) rho_all = std::max(rho_all, std::abs(attacked.eigenvalues(i)));

    Scenario run = sc;
    run.detectors_enabled = false;
    run.duration = std::round(600.0 / sc.Ts) * sc.Ts;
    const TimeSeries ts = run_scenario(run, sys);
    const long k0 = step_at(16.0, sc.Ts);
    // Envelope of |dV1| per 10 s block after the attack.
    const long block = std::lround(10.0 / sc.Ts);
    std::vector<double> env;
    for (long s = k0; s + block <= ts.steps; s += block) env.push_back(ts.y.col(1).segment(s, block).cwiseAbs().maxCoeff());
    int rises = 0;
    for (std::size_t i = 1; i < env.size(); ++i) rises += env[i] > env[i - 1];
    const bool unstable = attacked.radius_excluding_unit > 1.0;
    return {unstable && ts.diverged,
            fmt::format("attacked loop spectral radius {:.6f} excluding {} unit eigenvalue(s) (all: {:.6f}, honest {:.6f}); "
                        "600 s run {}; |dV1| envelope rose in {}/{} blocks ({:.3e} -> {:.3e})",
                        attacked.radius_excluding_unit, attacked.unit_count, rho_all, honest.radius_excluding_unit,
                        ts.diverged ? "diverged" : "did not diverge", rises, env.size() ? env.size() - 1 : 0,
                        env.empty() ? 0.0 : env.front(), env.empty() ? 0.0 : env.back())};
}

// ---------------------------------------------------------------- 3

Verdict honest_false_alarms()
{
    Scenario sc = scenario("honest");
    const System sys = build_system_for(sc);
    sc.thresholds = calibrated(sc, sys);
    MonteCarloOptions mc;
    mc.runs = 100;
    mc.seed_base = 1; // calibration used 1000000 onward
    const auto runs = monte_carlo(sc, sys, mc);
    long windows = 0, alarms = 0, confirmed = 0;
    for (const auto& r : runs)
        for (const auto& d : r.dgu) {
            windows += d.windows;
            alarms += d.alarms;
            confirmed += d.confirmed;
        }
    const double rate = static_cast<double>(alarms) / static_cast<double>(windows);
    return {confirmed == 0 && rate <= 0.005,
            fmt::format("100 runs x 60 s: {} confirmed alarms, window alarm rate {:.3e} ({} of {}) with chi1* {:.4g} chi2* {:.4g}",
                        confirmed, rate, alarms, windows, sc.thresholds->chi1, sc.thresholds->chi2)};
}

// ---------------------------------------------------------------- 4

// Exact covariance of [x; sigma_prev] over the run, including sensor noise and watermark.
double predicted_state_std(const System& sys, double nu_e, long steps)
{
    const StateSpace& p = sys.plant;
    const int n = p.nx(), ny = p.ny();
    const Mat Acl = closed_loop_matrix(p, sys.gains);
    Vec k1(ny);
    for (int i = 0; i < sys.n_dgu(); ++i) {
        k1(2 * i) = sys.gains[i].alpha_p + sys.gains[i].beta_p * p.Ts;
        k1(2 * i + 1) = sys.gains[i].alpha_q + sys.gains[i].beta_q * p.Ts;
    }
    Mat Gv = Mat::Zero(n + ny, ny);
    Gv.topRows(n) = p.B_ref * k1.asDiagonal();
    Gv.bottomRows(ny) = Mat::Identity(ny, ny);
    Mat Ge = Mat::Zero(n + ny, ny);
    Ge.topRows(n) = p.B_ref;
    Mat Q = Gv * p.V * Gv.transpose() + nu_e * Ge * Ge.transpose();
    Q.topLeftCorner(n, n) += p.R;
    Mat P = Mat::Zero(n + ny, n + ny);
    P.topLeftCorner(n, n) = p.R;
    double worst = 0.0;
    for (long k = 0; k < steps; ++k) {
        worst = std::max(worst, P.diagonal().head(n).maxCoeff());
        P = Acl * P * Acl.transpose() + Q;
    }
    return std::sqrt(worst);
}

Verdict watermark_transparency()
{
    const Scenario sc = scenario("honest");
    const System sys = build_system_for(sc);
    const Vec u0 = sys.eq.u0.head(2 * sys.n_dgu());
    double worst = 0.0, worst_incr = 0.0, sup = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Scenario on = sc, off = sc;
        on.reseed(seed);
        off.reseed(seed);
        off.nu_e = 0.0;
        on.detectors_enabled = off.detectors_enabled = false;
        const TimeSeries a = run_scenario(on, sys), b = run_scenario(off, sys);
        const Mat ua = (a.h + a.e).rowwise() + u0.transpose();
        const Mat ub = (b.h + b.e).rowwise() + u0.transpose();
        worst = std::max(worst, (ua - ub).norm() / ub.norm());
        worst_incr = std::max(worst_incr, ((a.h + a.e) - (b.h + b.e)).norm() / (b.h + b.e).norm());
        sup = std::max(sup, a.x_inf.maxCoeff());
    }
    const SpectrumSummary s = summarize_spectrum(closed_loop_matrix(sys.plant, sys.gains));
    const double sd = predicted_state_std(sys, sc.nu_e, sc.steps());
    return {worst <= 0.02 && s.radius_excluding_unit < 1.0 && sup <= 10.0 * sd,
            fmt::format("relative RMS of commands with vs without watermark {:.3e} (max of 10 seeds; deviations alone {:.3f}); "
                        "closed-loop radius {:.6f} excluding {} conserved mode(s); sup|dx| {:.3e} vs predicted std {:.3e}",
                        worst, worst_incr, s.radius_excluding_unit, s.unit_count, sup, sd)};
}

// ---------------------------------------------------------------- 5

Verdict indicator_convergence()
{
    Scenario base = scenario("honest");
    const System sys = build_system_for(base);
    base.thresholds.reset();
    const int seeds = 20;
    std::vector<double> T0s{1e3, 1e4, 1e5}, scale;
    int outliers = 0, entries = 0, roundoff = 0;
    // d = G nu spans only as many directions as there are outputs; entries outside that span are
    // zero to working precision and their standard error is roundoff, so a t-test says nothing there.
    const Mat& G = sys.riccati[0].G;
    const double floor = 64.0 * std::numeric_limits<double>::epsilon() *
                         (G * sys.riccati[0].W * G.transpose()).cwiseAbs().maxCoeff();
    for (double T0d : T0s) {
        const int T0 = static_cast<int>(T0d);
        Scenario sc = base;
        sc.detector.T0 = T0;
        sc.detector.stride = T0;
        sc.duration = (T0 + 1) * sc.Ts;
        std::vector<Vec> samples; // unique entries of M and N per seed
        for (int s = 0; s < seeds; ++s) {
            sc.reseed(5000 + s);
            Vec v;
            RunOptions opt;
            opt.keep_series = false;
            opt.on_window = [&](int dgu, const Detector& det, const WindowRecord&) {
                if (dgu != 0) return;
                const Mat M = det.window().M(), N = det.window().N();
                const int r = static_cast<int>(M.rows());
                v.resize(r * (r + 1) / 2 + N.size());
                int idx = 0;
                for (int i = 0; i < r; ++i)
                    for (int j = i; j < r; ++j) v(idx++) = M(i, j);
                for (int i = 0; i < N.size(); ++i) v(idx++) = N.data()[i];
            };
            run_scenario(sc, sys, opt);
            if (v.size() == 0) throw Error("no window closed");
            samples.push_back(v);
        }
        const int m = static_cast<int>(samples[0].size());
        Vec mean = Vec::Zero(m), sq = Vec::Zero(m);
        for (const auto& v : samples) {
            mean += v;
            sq += v.cwiseAbs2();
        }
        mean /= seeds;
        const Vec rms = (sq / seeds).cwiseSqrt();
        scale.push_back(rms.mean());
        if (T0 == 100000) {
            entries = m;
            for (int i = 0; i < m; ++i) {
                double var = 0.0;
                for (const auto& v : samples) var += (v(i) - mean(i)) * (v(i) - mean(i));
                const double se = std::sqrt(var / (seeds - 1) / seeds);
                if (std::abs(mean(i)) <= floor)
                    ++roundoff;
                else if (std::abs(mean(i)) > 4.0 * se)
                    ++outliers;
            }
        }
    }
    // Least-squares slope of log(scale) against log(T0).
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < T0s.size(); ++i) {
        mx += std::log(T0s[i]);
        my += std::log(scale[i]);
    }
    mx /= T0s.size();
    my /= T0s.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < T0s.size(); ++i) {
        sxy += (std::log(T0s[i]) - mx) * (std::log(scale[i]) - my);
        sxx += (std::log(T0s[i]) - mx) * (std::log(T0s[i]) - mx);
    }
    const double slope = sxy / sxx;
    return {std::abs(slope + 0.5) <= 0.15 && outliers == 0,
            fmt::format("DGU1 RMS entry size {:.3e}, {:.3e}, {:.3e} at T0 = 1e3, 1e4, 1e5: log-log slope {:.3f}; "
                        "{} of {} unique entries beyond 4 standard errors at T0 = 1e5 ({} seeds; {} below the roundoff floor {:.1e})",
                        scale[0], scale[1], scale[2], slope, outliers, entries, seeds, roundoff, floor)};
}

// ---------------------------------------------------------------- 6

using ublas_vec = boost::numeric::ublas::vector<double>;
using ublas_mat = boost::numeric::ublas::matrix<double>;

Vec integrate_lti(const Mat& A, const Vec& Bu, const Vec& x0, double Ts)
{
    namespace ode = boost::numeric::odeint;
    const int n = static_cast<int>(A.rows());
    ublas_vec x(n);
    for (int i = 0; i < n; ++i) x(i) = x0(i);
    auto rhs = [&](const ublas_vec& s, ublas_vec& ds, double) {
        for (int i = 0; i < n; ++i) {
            double v = Bu(i);
            for (int j = 0; j < n; ++j) v += A(i, j) * s(j);
            ds(i) = v;
        }
    };
    auto jac = [&](const ublas_vec&, ublas_mat& J, double, ublas_vec& dfdt) {
        for (int i = 0; i < n; ++i) {
            dfdt(i) = 0.0;
            for (int j = 0; j < n; ++j) J(i, j) = A(i, j);
        }
    };
    ode::integrate_adaptive(ode::make_controlled<ode::rosenbrock4<double>>(1e-16, 1e-14), std::make_pair(rhs, jac), x,
                            0.0, Ts, Ts / 1000);
    Vec out(n);
    for (int i = 0; i < n; ++i) out(i) = x(i);
    return out;
}

Verdict numerical_kernels()
{
    const Scenario sc = scenario("honest");
    const System sys = build_system_for(sc);
    double dare = 0.0;
    for (int i = 0; i < sys.n_dgu(); ++i) {
        const ReducedModel& rm = sys.reduced[i];
        dare = std::max(dare, riccati_residual(rm.A, rm.C, rm.R, rm.V, sys.riccati[i].P));
    }

    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    double zoh = 0.0;
    for (int t = 0; t < 3; ++t) {
        Vec x0(sys.continuous.nx()), u(sys.continuous.n_ref());
        for (int i = 0; i < x0.size(); ++i) x0(i) = 1e-3 * n01(rng);
        for (int i = 0; i < u.size(); ++i) u(i) = 1e-3 * n01(rng);
        const Vec ref = integrate_lti(sys.continuous.A, sys.continuous.B_ref * u, x0, sc.Ts);
        zoh = std::max(zoh, (sys.plant.A * x0 + sys.plant.B_ref * u - ref).norm() / ref.norm());
    }

    const MicrogridDae dae(sys.cfg);
    const DaeJacobians J = dae_jacobians(dae, sys.eq.x0, sys.eq.y0, sys.eq.u0);
    const int nx = dae.nx(), ny = dae.ny(), nu = dae.nu();
    Mat Jf(nx, nx + ny + nu), Jg(ny, nx + ny + nu);
    Jf << J.fx, J.fy, J.fu;
    Jg << J.gx, J.gy, J.gu;
    double jac = 0.0;
    const double h = 1e-6;
    for (int t = 0; t < 20; ++t) {
        Vec d(nx + ny + nu);
        for (int i = 0; i < d.size(); ++i) d(i) = n01(rng);
        d /= d.norm();
        Vec fp, gp, fm, gm;
        dae.eval(sys.eq.x0 + h * d.head(nx), sys.eq.y0 + h * d.segment(nx, ny), sys.eq.u0 + h * d.tail(nu), fp, gp);
        dae.eval(sys.eq.x0 - h * d.head(nx), sys.eq.y0 - h * d.segment(nx, ny), sys.eq.u0 - h * d.tail(nu), fm, gm);
        const Vec af = Jf * d, ag = Jg * d;
        jac = std::max(jac, ((fp - fm) / (2 * h) - af).norm() / af.norm());
        jac = std::max(jac, ((gp - gm) / (2 * h) - ag).norm() / ag.norm());
    }

    double impulse = 0.0;
    const DetectorPlant dp{sys.plant, sys.gains, sc.nu_e, sc.watermark_p, sc.watermark_q};
    for (int i = 0; i < sys.n_dgu(); ++i) {
        const Interconnection ic = build_interconnection(dp, i);
        const ReducedModel& rm = sys.reduced[i];
        Mat Xf(ic.A.rows(), ic.B_ref.cols() + ic.B_L.cols()), Xr(rm.dim(), Xf.cols());
        Xf << ic.B_ref, ic.B_L;
        Xr << rm.B_ref, rm.B_L;
        double scale = 0.0, gap = 0.0;
        for (int k = 0; k < 500; ++k) {
            const Mat hf = ic.C * Xf, hr = rm.C * Xr;
            scale = std::max(scale, hf.cwiseAbs().maxCoeff());
            gap = std::max(gap, (hf - hr).cwiseAbs().maxCoeff());
            Xf = ic.A * Xf;
            Xr = rm.A * Xr;
        }
        impulse = std::max(impulse, gap / scale);
    }
    return {dare <= 1e-10 && zoh <= 1e-9 && jac <= 1e-4 && impulse <= 1e-8,
            fmt::format("DARE residual {:.2e}; ZOH vs stiff integrator {:.2e}; Jacobian vs central differences {:.2e}; "
                        "reduced impulse response over 500 steps {:.2e} (orders {}, {}, {} of {})",
                        dare, zoh, jac, impulse, sys.reduced[0].dim(), sys.reduced[1].dim(), sys.reduced[2].dim(),
                        sys.reduced[0].full_dim)};
}

// ---------------------------------------------------------------- 7

struct Coverage {
    long windows = 0, alarms = 0, confirmed = 0;
};

Coverage attacked_windows(const std::string& name)
{
    Scenario sc = scenario(name);
    const System sys = build_system_for(sc);
    sc.thresholds = calibrated(sc, sys);
    MonteCarloOptions mc;
    mc.runs = 50;
    mc.seed_base = 1;
    mc.keep_windows = true;
    const auto runs = monte_carlo(sc, sys, mc);
    Coverage c;
    for (const auto& a : sc.attacks) {
        const long k0 = step_at(a.start_time, sc.Ts), k1 = step_at(a.end_time, sc.Ts);
        for (const auto& r : runs)
            for (const auto& w : r.windows[a.target_dgu]) {
                // The window's first increment uses samples k_end - T0 and later.
                if (w.k_end - sc.detector.T0 < k0 || w.k_end >= k1) continue;
                ++c.windows;
                c.alarms += w.alarm;
            }
    }
    for (const auto& r : runs)
        for (const auto& d : r.dgu) c.confirmed += d.confirmed;
    return c;
}

Verdict attack_coverage()
{
    const Coverage noise = attacked_windows("noise_inject");
    const Coverage replay = attacked_windows("replay");
    const Coverage pass = attacked_windows("passthrough");
    const double rn = double(noise.alarms) / double(noise.windows), rr = double(replay.alarms) / double(replay.windows);
    return {rn >= 0.95 && rr >= 0.95 && pass.confirmed == 0,
            fmt::format("noise injection {:.4f} ({} of {} attacked windows); replay {:.4f} ({} of {}); "
                        "passthrough {} confirmed alarms; 50 seeds each",
                        rn, noise.alarms, noise.windows, rr, replay.alarms, replay.windows, pass.confirmed)};
}

// ---------------------------------------------------------------- 8

Verdict determinism()
{
    const fs::path root = fs::temp_directory_path() / "mgwm_acceptance_determinism";
    fs::remove_all(root);
    int same = 0, total = 0;
    std::string diff;
    for (const char* name : {"honest", "destab_fig3", "noise_inject", "replay", "passthrough"}) {
        Scenario sc = scenario(name);
        sc.thresholds = Thresholds{0.25, 1.1e-4};
        const System sys = build_system_for(sc);
        for (int rep = 0; rep < 2; ++rep)
            write_run_artifacts(root / name / std::to_string(rep), sc, run_scenario(sc, sys), "fixed", false);
        for (const char* f : {"series.csv", "windows.csv"}) {
            ++total;
            if (sha256_file(root / name / "0" / f) == sha256_file(root / name / "1" / f))
                ++same;
            else
                diff += fmt::format(" {}/{}", name, f);
        }
    }
    fs::remove_all(root);
    return {same == total, fmt::format("{} of {} CSV streams hash-identical across reruns{}", same, total,
                                       diff.empty() ? "" : "; differing:" + diff)};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"acceptance criteria"};
    std::vector<int> only;
    app.add_option("--criterion", only, "run only these criteria (1-8)")->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);

    struct Item {
        int id;
        const char* title;
        Verdict (*fn)();
    };
    const std::vector<Item> items{
        {1, "destabilization detection", destabilization_detection},
        {2, "instability reproduction", instability_reproduction},
        {3, "honest-run false alarms", honest_false_alarms},
        {4, "watermark transparency", watermark_transparency},
        {5, "indicator convergence", indicator_convergence},
        {6, "numerical kernels", numerical_kernels},
        {7, "attack-template coverage", attack_coverage},
        {8, "determinism", determinism},
    };
    int failed = 0;
    for (const auto& it : items) {
        if (!only.empty() && std::find(only.begin(), only.end(), it.id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = it.fn();
        } catch (const std::exception& e) {
            v = {false, fmt::format("error: {}", e.what())};
        }
        failed += !v.pass;
        std::cout << fmt::format("{} criterion {} ({}): {} [{:.1f} s]\n", v.pass ? "PASS" : "FAIL", it.id, it.title, v.detail,
                                 seconds_since(t0))
                  << std::flush;
    }
    return failed ? 1 : 0;
}
