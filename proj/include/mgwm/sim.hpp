#pragma once

#include "mgwm/attack.hpp"
#include "mgwm/common.hpp"
#include "mgwm/detector.hpp"
#include "mgwm/droop.hpp"
#include "mgwm/grid_model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mgwm {

// Step change of one load, in W and var, applied from `time` on.
struct LoadStep {
    double time = 0.0;
    int load = 0;
    double dP = 0.0;
    double dQ = 0.0;
};

struct Seeds {
    std::uint64_t process = 0;
    std::uint64_t measurement = 0;
    std::uint64_t watermark = 0;
    std::uint64_t attack = 0;
};

// splitmix64 finalizer; used to derive independent streams from one master seed.
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t tag);
Seeds derive_seeds(std::uint64_t master);

struct Scenario {
    std::string name;
    std::string source_path;   // scenario file, when loaded from one
    std::string source_sha256;
    std::string model_path;
    std::string model_sha256;
    MicrogridConfig model;
    double duration = 60.0;
    double Ts = 0.0083;
    Discretization method = Discretization::zoh;
    std::uint64_t master_seed = 1;
    Seeds seeds;
    double nu_e = 1e-7;
    bool watermark_p = true;
    bool watermark_q = true;
    std::vector<AttackSpec> attacks;
    DetectorConfig detector;
    bool detectors_enabled = true;
    std::optional<Thresholds> thresholds; // none: windows are recorded but never alarm
    std::string thresholds_file;
    std::vector<LoadStep> load_steps;
    double divergence_bound = 1e3;

    long steps() const;
    void validate() const;
    // Replace the master seed and re-derive every stream.
    void reseed(std::uint64_t master);
};

// Everything built once from the model and reused across runs. Detectors keep
// pointers into `reduced`, so a System must outlive the runs that use it.
struct System {
    MicrogridConfig cfg;
    Equilibrium eq;
    StateSpace continuous;
    StateSpace plant;
    std::vector<DroopGains> gains;
    std::vector<ReducedModel> reduced;
    std::vector<RiccatiSolution> riccati;
    std::vector<std::string> warnings;
    int n_dgu() const { return static_cast<int>(gains.size()); }
};

System build_system(const MicrogridConfig& cfg, double Ts, double nu_e, bool watermark_p = true, bool watermark_q = true,
                    Discretization method = Discretization::zoh, bool build_detectors = true);

// One row per simulated step; matrices are steps x (2 n_dgu).
struct TimeSeries {
    double Ts = 0.0;
    long steps = 0;
    Mat y, z, h, e, innovation;
    Vec x_inf;
    std::vector<std::vector<WindowRecord>> windows; // per DGU
    bool diverged = false;
    long diverged_step = -1;
    std::string diverged_reason;
};

struct RunOptions {
    bool keep_series = true;
    // Called whenever a detector closes a window; the detector's state is that of the window end.
    std::function<void(int dgu, const Detector&, const WindowRecord&)> on_window;
};

TimeSeries run_scenario(const Scenario& sc, const System& sys, const RunOptions& opt = {});

struct DguSummary {
    double max_chi1 = 0.0;
    double max_chi2 = 0.0;
    long windows = 0;
    long alarms = 0;
    long confirmed = 0;
    std::optional<double> first_alarm;
    std::optional<double> first_confirmed;
};

struct RunSummary {
    int run = 0;
    std::uint64_t master_seed = 0;
    bool diverged = false;
    double diverged_time = 0.0;
    std::vector<DguSummary> dgu;
    std::vector<std::vector<WindowRecord>> windows; // kept when requested
};

RunSummary summarize(const TimeSeries& ts, int run = 0, std::uint64_t seed = 0, bool keep_windows = false);

struct MonteCarloOptions {
    int runs = 1;
    std::uint64_t seed_base = 1;
    bool keep_windows = false;
    unsigned threads = 0; // 0: hardware concurrency
};

std::vector<RunSummary> monte_carlo(const Scenario& sc, const System& sys, const MonteCarloOptions& opt);

// Every window of every DGU of every run, pooled per run for calibration.
std::vector<std::vector<WindowRecord>> pooled_windows(const std::vector<RunSummary>& runs);

} // namespace mgwm
