#include "mgwm/sim.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

namespace mgwm {

std::uint64_t mix_seed(std::uint64_t master, std::uint64_t tag)
{
    std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

Seeds derive_seeds(std::uint64_t master)
{
    return {mix_seed(master, 1), mix_seed(master, 2), mix_seed(master, 3), mix_seed(master, 4)};
}

long Scenario::steps() const { return std::lround(duration / Ts); }

void Scenario::validate() const
{
    if (!(Ts > 0)) throw ConfigError("Ts must be positive");
    if (!(duration > 0)) throw ConfigError("duration must be positive");
    const double n = duration / Ts;
    if (std::abs(n - std::round(n)) > 1e-6 * std::max(1.0, n))
        throw ConfigError(fmt::format("duration {} s is not a whole number of {} s steps ({:.6f})", duration, Ts, n));
    if (!(nu_e >= 0)) throw ConfigError("nu_e must be nonnegative");
    if (!(divergence_bound > 0)) throw ConfigError("divergence bound must be positive");
    if (detector.T0 <= 0 || detector.stride <= 0 || detector.confirm <= 0)
        throw ConfigError("detector T0, stride and confirm must be positive");
    const int nd = static_cast<int>(model.dgus.size());
    for (const auto& a : attacks) {
        if (a.target_dgu >= nd) throw ConfigError(fmt::format("attack targets DGU {} but the model has {}", a.target_dgu + 1, nd));
        a.validate(Ts);
    }
    for (const auto& s : load_steps) {
        if (s.load < 0 || s.load >= static_cast<int>(model.loads.size()))
            throw ConfigError(fmt::format("load step names load {} which does not exist", s.load + 1));
        if (!(s.time >= 0)) throw ConfigError("load step time must be nonnegative");
    }
    if (thresholds && !(thresholds->chi1 > 0 && thresholds->chi2 > 0)) throw ConfigError("thresholds must be positive");
}

void Scenario::reseed(std::uint64_t master)
{
    master_seed = master;
    seeds = derive_seeds(master);
}

System build_system(const MicrogridConfig& cfg, double Ts, double nu_e, bool wp, bool wq, Discretization method,
                    bool build_detectors)
{
    System s;
    s.cfg = cfg;
    const MicrogridDae dae(cfg);
    s.eq = find_equilibrium(dae);
    s.continuous = linearize(dae, s.eq.x0, s.eq.y0, s.eq.u0, cfg.process_cov, cfg.measurement_cov);
    s.plant = discretize(s.continuous, Ts, method);
    s.plant.validate();
    // The droop law reads y[k] and acts at k; a direct feedthrough would make that loop algebraic.
    const double dref = s.plant.D_ref.size() ? s.plant.D_ref.cwiseAbs().maxCoeff() : 0.0;
    if (dref > 1e-12 * std::max(1.0, s.plant.C.cwiseAbs().maxCoeff()))
        throw NumericalError(fmt::format("plant has command feedthrough {:.3e}; droop loop would be algebraic", dref));
    for (const auto& d : cfg.dgus) s.gains.push_back(gains_of(d));
    if (build_detectors) {
        DetectorPlant dp{s.plant, s.gains, nu_e, wp, wq};
        for (int i = 0; i < s.n_dgu(); ++i) {
            s.reduced.push_back(build_reduced_model(dp, i, {}, &s.warnings));
            s.riccati.push_back(solve_riccati(s.reduced.back()));
        }
    }
    return s;
}

namespace {

Mat psd_factor(const Mat& S)
{
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()));
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

struct Gauss {
    explicit Gauss(std::uint64_t seed) : rng(seed) {}
    Vec draw(const Mat& L)
    {
        Vec w(L.cols());
        for (int i = 0; i < w.size(); ++i) w(i) = n01(rng);
        return L * w;
    }
    std::mt19937_64 rng;
    std::normal_distribution<double> n01{0.0, 1.0};
};

} // namespace

TimeSeries run_scenario(const Scenario& sc, const System& sys, const RunOptions& opt)
{
    sc.validate();
    const StateSpace& P = sys.plant;
    if (std::abs(P.Ts - sc.Ts) > 1e-15) throw ConfigError("system was built for a different Ts");
    const int nd = sys.n_dgu();
    const int ny = 2 * nd;
    const int nl = P.n_load();
    const long K = sc.steps();

    TimeSeries ts;
    ts.Ts = sc.Ts;
    if (opt.keep_series) {
        ts.y = Mat::Zero(K, ny);
        ts.z = Mat::Zero(K, ny);
        ts.h = Mat::Zero(K, ny);
        ts.e = Mat::Zero(K, ny);
        ts.innovation = Mat::Zero(K, ny);
        ts.x_inf = Vec::Zero(K);
    }
    ts.windows.resize(nd);

    Gauss proc(sc.seeds.process), meas(sc.seeds.measurement);
    const Mat Lr = psd_factor(P.R);
    const Mat Lv = psd_factor(P.V);

    std::vector<DroopController> droop;
    std::vector<WatermarkSource> wm;
    for (int i = 0; i < nd; ++i) {
        droop.emplace_back(sys.gains[i], sc.Ts);
        wm.emplace_back(sc.nu_e, mix_seed(sc.seeds.watermark, i), sc.watermark_p, sc.watermark_q, false);
    }
    std::vector<AttackChannel> attacks;
    for (std::size_t a = 0; a < sc.attacks.size(); ++a)
        attacks.emplace_back(sc.attacks[a], sc.Ts, mix_seed(sc.seeds.attack, a));

    std::vector<Detector> det;
    if (sc.detectors_enabled) {
        if (static_cast<int>(sys.reduced.size()) != nd) throw ConfigError("system was built without detectors");
        DetectorConfig dc = sc.detector;
        const double inf = std::numeric_limits<double>::infinity();
        dc.thresholds = sc.thresholds.value_or(Thresholds{inf, inf});
        for (int i = 0; i < nd; ++i) det.emplace_back(i, sys.reduced[i], sys.riccati[i], dc, sc.Ts);
    }

    std::vector<std::pair<long, LoadStep>> steps;
    for (const auto& s : sc.load_steps) steps.emplace_back(step_at(s.time, sc.Ts), s);
    std::sort(steps.begin(), steps.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::size_t next_step = 0;
    Vec uL = Vec::Zero(nl);
    const double SB = sys.cfg.net.base_power;

    Vec x = proc.draw(Lr);
    Vec u(ny), y(ny), z(ny);
    for (long k = 0; k < K; ++k) {
        while (next_step < steps.size() && steps[next_step].first <= k) {
            const LoadStep& s = steps[next_step++].second;
            uL(2 * s.load) += s.dP / SB;
            uL(2 * s.load + 1) += s.dQ / SB;
        }
        y = P.C * x + meas.draw(Lv);
        if (nl) y += P.D_L * uL;
        z = y;
        for (auto& a : attacks) {
            const int i = a.spec().target_dgu;
            z.segment<2>(2 * i) = a.apply(k, z.segment<2>(2 * i));
        }
        for (int i = 0; i < nd; ++i) {
            const Vec2 h = droop[i].step(z(2 * i), z(2 * i + 1));
            const Vec2 e = wm[i].draw();
            u.segment<2>(2 * i) = h + e;
            if (opt.keep_series) {
                ts.h.row(k).segment<2>(2 * i) = h.transpose();
                ts.e.row(k).segment<2>(2 * i) = e.transpose();
            }
            if (!det.empty()) {
                if (auto w = det[i].step(k, z.segment<2>(2 * i), h, e, uL)) {
                    if (opt.on_window) opt.on_window(i, det[i], *w);
                    ts.windows[i].push_back(*w);
                }
                if (opt.keep_series) ts.innovation.row(k).segment<2>(2 * i) = det[i].kalman().innovation().transpose();
            }
        }
        const double xn = x.cwiseAbs().maxCoeff();
        if (opt.keep_series) {
            ts.y.row(k) = y.transpose();
            ts.z.row(k) = z.transpose();
            ts.x_inf(k) = xn;
        }
        ts.steps = k + 1;
        x = P.A * x + P.B_ref * u + proc.draw(Lr);
        if (nl) x += P.B_L * uL;
        const double xn1 = x.cwiseAbs().maxCoeff();
        if (!std::isfinite(xn1) || xn1 > sc.divergence_bound) {
            ts.diverged = true;
            ts.diverged_step = k;
            ts.diverged_reason = std::isfinite(xn1)
                                     ? fmt::format("|x|_inf = {:.3e} exceeded {:.3e} after step {}", xn1, sc.divergence_bound, k)
                                     : fmt::format("state became non-finite after step {}", k);
            break;
        }
    }
    if (opt.keep_series && ts.steps < K) {
        for (Mat* m : {&ts.y, &ts.z, &ts.h, &ts.e, &ts.innovation}) m->conservativeResize(ts.steps, Eigen::NoChange);
        ts.x_inf.conservativeResize(ts.steps);
    }
    return ts;
}

RunSummary summarize(const TimeSeries& ts, int run, std::uint64_t seed, bool keep_windows)
{
    RunSummary r;
    r.run = run;
    r.master_seed = seed;
    r.diverged = ts.diverged;
    r.diverged_time = ts.diverged ? ts.diverged_step * ts.Ts : 0.0;
    for (const auto& ws : ts.windows) {
        DguSummary d;
        for (const auto& w : ws) {
            ++d.windows;
            d.max_chi1 = std::max(d.max_chi1, w.chi1);
            d.max_chi2 = std::max(d.max_chi2, w.chi2);
            if (w.alarm) {
                ++d.alarms;
                if (!d.first_alarm) d.first_alarm = w.t_end;
            }
            if (w.confirmed) {
                ++d.confirmed;
                if (!d.first_confirmed) d.first_confirmed = w.t_end;
            }
        }
        r.dgu.push_back(d);
    }
    if (keep_windows) r.windows = ts.windows;
    return r;
}

std::vector<RunSummary> monte_carlo(const Scenario& sc, const System& sys, const MonteCarloOptions& opt)
{
    if (opt.runs < 1) throw ConfigError("monte carlo needs at least one run");
    std::vector<RunSummary> out(opt.runs);
    std::atomic<int> next{0};
    std::mutex err_mu;
    std::exception_ptr first_err;
    int err_run = -1;
    auto worker = [&] {
        for (int r; (r = next++) < opt.runs;) {
            try {
                Scenario s = sc;
                s.reseed(opt.seed_base + static_cast<std::uint64_t>(r));
                RunOptions ro;
                ro.keep_series = false;
                const TimeSeries ts = run_scenario(s, sys, ro);
                out[r] = summarize(ts, r, s.master_seed, opt.keep_windows);
            } catch (...) {
                std::lock_guard lk(err_mu);
                if (!first_err || r < err_run) {
                    first_err = std::current_exception();
                    err_run = r;
                }
            }
        }
    };
    unsigned nt = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
    nt = std::min<unsigned>(nt, static_cast<unsigned>(opt.runs));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < nt; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (first_err) {
        try {
            std::rethrow_exception(first_err);
        } catch (const std::exception& e) {
            throw Error(fmt::format("run {}: {}", err_run, e.what()));
        }
    }
    return out;
}

std::vector<std::vector<WindowRecord>> pooled_windows(const std::vector<RunSummary>& runs)
{
    std::vector<std::vector<WindowRecord>> out;
    for (const auto& r : runs) {
        std::vector<WindowRecord> all;
        for (const auto& w : r.windows) all.insert(all.end(), w.begin(), w.end());
        out.push_back(std::move(all));
    }
    return out;
}

} // namespace mgwm
