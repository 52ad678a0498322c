#pragma once

#include "mgwm/config.hpp"
#include "mgwm/sim.hpp"

#include <filesystem>
#include <string>

namespace testing {

inline std::filesystem::path data_dir() { return MGWM_DATA_DIR; }
inline std::filesystem::path scenario_path(const std::string& name) { return data_dir() / "scenarios" / (name + ".scn"); }
inline mgwm::MicrogridConfig bundled_model() { return mgwm::load_model(data_dir() / "models" / "tamu4bus.yaml"); }

// Scratch directory unique to one test binary.
inline std::filesystem::path scratch(const std::string& tag)
{
    auto p = std::filesystem::temp_directory_path() / ("mgwm_test_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testing
