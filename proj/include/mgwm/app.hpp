#pragma once

#include "mgwm/detector.hpp"
#include "mgwm/sim.hpp"

#include <filesystem>
#include <string>

namespace mgwm {

// Same scenario with every attack removed.
Scenario honest_variant(const Scenario& sc);

// Earliest attack start, or +inf for an attack-free scenario.
double attack_onset(const Scenario& sc);

struct CalibrationRequest {
    int runs = 100;
    std::uint64_t seed_base = 1000000; // kept apart from the seeds used for evaluation runs
    double quantile = 0.999;
    double safety_factor = 1.5;
};

// Runs the attack-free variant of sc and pools every window of every DGU.
CalibrationResult calibrate_scenario(const Scenario& sc, const System& sys, const CalibrationRequest& req);

System build_system_for(const Scenario& sc);

// Writes series.csv, windows.csv, summary.txt and manifest.json (plus SVGs when asked).
void write_run_artifacts(const std::filesystem::path& dir, const Scenario& sc, const TimeSeries& ts,
                         const std::string& threshold_source, bool plots);

std::string summary_text(const Scenario& sc, const TimeSeries& ts);

// Detection statistics recomputed from the artifacts alone.
std::string render_report(const std::filesystem::path& dir);

} // namespace mgwm
