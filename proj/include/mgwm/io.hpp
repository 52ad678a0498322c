#pragma once

#include "mgwm/detector.hpp"
#include "mgwm/sim.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mgwm {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int kCsvSchema = 1;

std::string sha256_hex(const std::string& data);
std::string sha256_file(const std::filesystem::path& path);

// Column names for the per-step stream, fixed order.
std::vector<std::string> series_columns(int n_dgu);
std::vector<std::string> window_columns();

// First line of every CSV: "# mgwm-csv schema=<n> stream=<name>".
void write_series_csv(const std::filesystem::path& path, const TimeSeries& ts);
void write_windows_csv(const std::filesystem::path& path, const TimeSeries& ts);

struct CsvTable {
    std::string stream;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    int column(const std::string& name) const; // -1 when absent
};
CsvTable read_csv(const std::filesystem::path& path);

// Threshold file (JSON) written by calibrate.
void write_thresholds(const std::filesystem::path& path, const CalibrationResult& r, const std::string& scenario_hash,
                      std::uint64_t seed_base);

struct SvgSeries {
    std::string label;
    std::vector<double> x, y;
    std::string color = "#1f77b4";
};
struct SvgPlot {
    std::string title, xlabel, ylabel;
    std::vector<SvgSeries> series;
    std::optional<double> hline;   // e.g. threshold
    std::optional<double> vline;   // e.g. attack onset
    bool log_y = false;
};
void write_svg(const std::filesystem::path& path, const SvgPlot& p);

} // namespace mgwm
