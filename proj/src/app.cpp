#include "mgwm/app.hpp"

#include "mgwm/config.hpp"
#include "mgwm/io.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <map>

namespace mgwm {

namespace fs = std::filesystem;
using json = nlohmann::json;

Scenario honest_variant(const Scenario& sc)
{
    Scenario h = sc;
    h.attacks.clear();
    return h;
}

double attack_onset(const Scenario& sc)
{
    double t = std::numeric_limits<double>::infinity();
    for (const auto& a : sc.attacks) t = std::min(t, a.start_time);
    return t;
}

System build_system_for(const Scenario& sc)
{
    return build_system(sc.model, sc.Ts, sc.nu_e, sc.watermark_p, sc.watermark_q, sc.method, sc.detectors_enabled);
}

CalibrationResult calibrate_scenario(const Scenario& sc, const System& sys, const CalibrationRequest& req)
{
    Scenario h = honest_variant(sc);
    h.thresholds.reset();
    h.detectors_enabled = true;
    MonteCarloOptions mc;
    mc.runs = req.runs;
    mc.seed_base = req.seed_base;
    mc.keep_windows = true;
    const auto runs = monte_carlo(h, sys, mc);
    for (const auto& r : runs)
        if (r.diverged) throw NumericalError(fmt::format("honest calibration run {} diverged", r.run));
    return calibrate_thresholds(pooled_windows(runs), req.quantile, req.safety_factor);
}

static std::string fmt_opt(const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : std::string("-"); }

std::string summary_text(const Scenario& sc, const TimeSeries& ts)
{
    const RunSummary s = summarize(ts);
    std::string out = fmt::format("scenario {}: {} of {} steps, Ts {} s\n", sc.name, ts.steps, sc.steps(), sc.Ts);
    if (ts.diverged) out += fmt::format("diverged at t = {:.4f} s: {}\n", ts.diverged_step * sc.Ts, ts.diverged_reason);
    const double onset = attack_onset(sc);
    if (std::isfinite(onset)) out += fmt::format("attack onset {:.4f} s\n", onset);
    if (sc.thresholds)
        out += fmt::format("thresholds chi1* {:.6g} chi2* {:.6g}\n", sc.thresholds->chi1, sc.thresholds->chi2);
    else
        out += "thresholds: none (indicators recorded only)\n";
    out += fmt::format("{:>4} {:>8} {:>8} {:>10} {:>12} {:>12} {:>12} {:>12}\n", "dgu", "windows", "alarms", "confirmed",
                       "first_alarm", "first_conf", "max_chi1", "max_chi2");
    for (std::size_t i = 0; i < s.dgu.size(); ++i) {
        const auto& d = s.dgu[i];
        out += fmt::format("{:>4} {:>8} {:>8} {:>10} {:>12} {:>12} {:>12.5g} {:>12.5g}\n", i + 1, d.windows, d.alarms,
                           d.confirmed, fmt_opt(d.first_alarm), fmt_opt(d.first_confirmed), d.max_chi1, d.max_chi2);
    }
    return out;
}

static void plots(const fs::path& dir, const Scenario& sc, const TimeSeries& ts)
{
    const int nd = static_cast<int>(ts.windows.size());
    const int target = sc.attacks.empty() ? 0 : sc.attacks.front().target_dgu;
    const double onset = attack_onset(sc);
    std::vector<double> t(ts.steps);
    for (long k = 0; k < ts.steps; ++k) t[k] = k * ts.Ts;
    auto col = [&](const Mat& m, int c) { return std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows()); };

    SvgPlot v;
    v.title = fmt::format("Voltage deviation at DGU {}", target + 1);
    v.xlabel = "time (s)";
    v.ylabel = "dV (pu)";
    v.series.push_back({"actual", t, col(ts.y, 2 * target + 1), "#1f77b4"});
    v.series.push_back({"reported", t, col(ts.z, 2 * target + 1), "#ff7f0e"});
    if (std::isfinite(onset)) v.vline = onset;
    write_svg(dir / "voltage.svg", v);

    SvgPlot c;
    c.title = fmt::format("chi1 at DGU {}", target + 1);
    c.xlabel = "window end (s)";
    c.ylabel = "chi1";
    c.log_y = true;
    const char* colors[] = {"#1f77b4", "#2ca02c", "#9467bd", "#8c564b"};
    for (int i = 0; i < nd; ++i) {
        SvgSeries s{fmt::format("DGU {}", i + 1), {}, {}, colors[i % 4]};
        for (const auto& w : ts.windows[i]) {
            s.x.push_back(w.t_end);
            s.y.push_back(w.chi1);
        }
        if (i == target || nd <= 4) c.series.push_back(std::move(s));
    }
    if (sc.thresholds) c.hline = sc.thresholds->chi1;
    if (std::isfinite(onset)) c.vline = onset;
    write_svg(dir / "chi1.svg", c);

    SvgPlot u;
    u.title = fmt::format("Active-power command at DGU {}", target + 1);
    u.xlabel = "time (s)";
    u.ylabel = "dP_ref (pu)";
    std::vector<double> hp = col(ts.h, 2 * target), up = hp;
    for (long k = 0; k < ts.steps; ++k) up[k] += ts.e(k, 2 * target);
    u.series.push_back({"droop output", t, hp, "#1f77b4"});
    u.series.push_back({"watermarked", t, up, "#d62728"});
    write_svg(dir / "commands.svg", u);
}

void write_run_artifacts(const fs::path& dir, const Scenario& sc, const TimeSeries& ts,
                         const std::string& threshold_source, bool with_plots)
{
    fs::create_directories(dir);
    write_series_csv(dir / "series.csv", ts);
    write_windows_csv(dir / "windows.csv", ts);
    {
        std::ofstream out(dir / "summary.txt", std::ios::binary);
        out << summary_text(sc, ts);
    }
    if (with_plots) plots(dir, sc, ts);

    json m;
    m["format"] = "mgwm-manifest";
    m["tool_version"] = kToolVersion;
    m["csv_schema"] = kCsvSchema;
    m["scenario"] = {{"name", sc.name}, {"path", sc.source_path}, {"sha256", sc.source_sha256}};
    m["model"] = {{"path", sc.model_path}, {"sha256", sc.model_sha256}};
    m["seeds"] = {{"master", sc.master_seed},
                  {"process", sc.seeds.process},
                  {"measurement", sc.seeds.measurement},
                  {"watermark", sc.seeds.watermark},
                  {"attack", sc.seeds.attack}};
    m["Ts"] = sc.Ts;
    m["steps_planned"] = sc.steps();
    m["steps_run"] = ts.steps;
    m["n_dgu"] = ts.windows.size();
    m["nu_e"] = sc.nu_e;
    m["T0"] = sc.detector.T0;
    m["stride"] = sc.detector.stride;
    m["confirm"] = sc.detector.confirm;
    m["diverged"] = ts.diverged;
    if (ts.diverged) m["diverged_time"] = ts.diverged_step * sc.Ts;
    json th = nullptr;
    if (sc.thresholds) th = {{"chi1", sc.thresholds->chi1}, {"chi2", sc.thresholds->chi2}, {"source", threshold_source}};
    m["thresholds"] = th;
    json atk = json::array();
    for (const auto& a : sc.attacks) {
        json j = {{"dgu", a.target_dgu + 1}, {"template", a.template_name()}, {"start", a.start_time}};
        j["end"] = std::isfinite(a.end_time) ? json(a.end_time) : json("inf");
        atk.push_back(j);
    }
    m["attacks"] = atk;
    json files = json::object();
    for (const char* f : {"series.csv", "windows.csv", "summary.txt"}) files[f] = sha256_file(dir / f);
    m["files"] = files;
    // Hash over what identifies the run: tool, inputs, seeds and thresholds.
    json ident = {{"tool_version", kToolVersion}, {"scenario", m["scenario"]["sha256"]}, {"model", m["model"]["sha256"]},
                  {"seeds", m["seeds"]}, {"thresholds", th}};
    m["manifest_hash"] = sha256_hex(ident.dump());
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << m.dump(2) << '\n';
}

std::string render_report(const fs::path& dir)
{
    const fs::path mp = dir / "manifest.json";
    if (!fs::exists(mp)) throw ConfigError(fmt::format("missing manifest {}", mp.string()));
    json m;
    try {
        m = json::parse(read_text(mp));
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("{}: corrupt manifest: {}", mp.string(), e.what()));
    }
    for (const char* key : {"n_dgu", "Ts", "attacks", "files", "steps_run"})
        if (!m.contains(key)) throw ConfigError(fmt::format("{}: manifest lacks '{}'", mp.string(), key));
    for (const auto& [name, hash] : m["files"].items()) {
        const fs::path f = dir / name;
        if (!fs::exists(f)) throw ConfigError(fmt::format("missing stream {}", f.string()));
        if (sha256_file(f) != hash.get<std::string>())
            throw ConfigError(fmt::format("stream {} does not match its manifest hash", f.string()));
    }
    const CsvTable series = read_csv(dir / "series.csv");
    if (static_cast<long>(series.rows.size()) != m["steps_run"].get<long>())
        throw ConfigError(fmt::format("series.csv has {} rows, manifest says {}", series.rows.size(), m["steps_run"].get<long>()));
    const CsvTable win = read_csv(dir / "windows.csv");
    for (const auto& c : window_columns())
        if (win.column(c) < 0) throw ConfigError(fmt::format("windows.csv lacks column '{}'", c));

    const int nd = m["n_dgu"].get<int>();
    double onset = std::numeric_limits<double>::infinity();
    for (const auto& a : m["attacks"]) {
        // A passthrough "attack" changes nothing; it does not start an attack interval.
        if (a["template"] == "passthrough") continue;
        onset = std::min(onset, a["start"].get<double>());
    }
    const double Ts = m["Ts"].get<double>();
    const int T0 = m.value("T0", 0);

    struct Acc {
        long windows = 0, alarms = 0, confirmed = 0, false_alarms = 0, false_confirmed = 0;
        long windows_in_attack = 0, alarms_in_attack = 0;
        double max1 = 0, max2 = 0;
        std::optional<double> first_conf;
    };
    std::vector<Acc> acc(nd);
    const int ct = win.column("t_end"), cd = win.column("dgu"), c1 = win.column("chi1"), c2 = win.column("chi2"),
              ca = win.column("alarm"), cc = win.column("confirmed");
    for (const auto& r : win.rows) {
        const int d = static_cast<int>(r[cd]) - 1;
        if (d < 0 || d >= nd) throw ConfigError(fmt::format("windows.csv names DGU {} outside 1..{}", d + 1, nd));
        Acc& a = acc[d];
        const double t = r[ct];
        const bool alarm = r[ca] != 0.0, conf = r[cc] != 0.0;
        ++a.windows;
        a.max1 = std::max(a.max1, r[c1]);
        a.max2 = std::max(a.max2, r[c2]);
        a.alarms += alarm;
        a.confirmed += conf;
        // A window is clean when it ends before the onset sample.
        const bool clean = t < onset;
        if (clean) {
            a.false_alarms += alarm;
            a.false_confirmed += conf;
        }
        if (t - (T0 - 1) * Ts >= onset - 1e-9) {
            ++a.windows_in_attack;
            a.alarms_in_attack += alarm;
        }
        if (conf && !clean && !a.first_conf) a.first_conf = t;
    }

    std::string out;
    out += fmt::format("run: {} (manifest {})\n", m["scenario"].value("name", "?"), m.value("manifest_hash", "?"));
    out += fmt::format("steps: {}  diverged: {}\n", m["steps_run"].get<long>(), m.value("diverged", false) ? "yes" : "no");
    if (std::isfinite(onset))
        out += fmt::format("attack onset: {:.4f} s\n", onset);
    else
        out += "attack onset: none\n";
    out += fmt::format("{:>4} {:>8} {:>8} {:>10} {:>12} {:>12} {:>14} {:>12} {:>11} {:>11}\n", "dgu", "windows", "alarms",
                       "confirmed", "false_alarm", "false_conf", "attack_detect", "latency_s", "max_chi1", "max_chi2");
    for (int i = 0; i < nd; ++i) {
        const Acc& a = acc[i];
        const std::string rate =
            a.windows_in_attack ? fmt::format("{}/{}", a.alarms_in_attack, a.windows_in_attack) : std::string("-");
        const std::string lat =
            (std::isfinite(onset) && a.first_conf) ? fmt::format("{:.4f}", *a.first_conf - onset) : std::string("");
        out += fmt::format("{:>4} {:>8} {:>8} {:>10} {:>12} {:>12} {:>14} {:>12} {:>11.5g} {:>11.5g}\n", i + 1, a.windows,
                           a.alarms, a.confirmed, a.false_alarms, a.false_confirmed, rate, lat, a.max1, a.max2);
    }
    return out;
}

} // namespace mgwm
