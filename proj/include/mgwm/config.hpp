#pragma once

#include "mgwm/detector.hpp"
#include "mgwm/grid_model.hpp"
#include "mgwm/sim.hpp"

#include <filesystem>
#include <string>

namespace mgwm {

// Model files carry ohms, henries, watts and vars; everything is converted to
// per-unit on the declared voltage and power bases at load time.
MicrogridConfig load_model(const std::filesystem::path& path);
MicrogridConfig parse_model(const std::string& text, const std::string& origin = "<model>");

inline constexpr int kScenarioSchema = 1;

// Relative model and threshold paths resolve against the scenario's directory.
Scenario load_scenario(const std::filesystem::path& path);
Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir,
                        const std::string& origin = "<scenario>");

Thresholds load_thresholds(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);

} // namespace mgwm
