#include "mgwm/io.hpp"

#include "mgwm/config.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace mgwm {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string sha256_hex(const std::string& data)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
    std::string out;
    for (unsigned i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
    return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

std::vector<std::string> series_columns(int n)
{
    std::vector<std::string> c{"k", "t"};
    auto add = [&](const char* pre, const char* a, const char* b) {
        for (int i = 1; i <= n; ++i) {
            c.push_back(fmt::format("{}_{}{}", pre, a, i));
            c.push_back(fmt::format("{}_{}{}", pre, b, i));
        }
    };
    add("y", "w", "v");
    add("z", "w", "v");
    add("h", "P", "Q");
    add("e", "P", "Q");
    add("nu", "w", "v");
    c.push_back("x_inf");
    return c;
}

std::vector<std::string> window_columns()
{
    return {"k_end", "t_end", "dgu", "chi1", "chi2", "alarm", "chi1_fired", "chi2_fired", "confirmed"};
}

static std::ofstream open_out(const fs::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(fmt::format("cannot write {}", path.string()));
    return out;
}

static void header(std::ofstream& out, const char* stream, const std::vector<std::string>& cols)
{
    out << fmt::format("# mgwm-csv schema={} stream={}\n", kCsvSchema, stream);
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
}

void write_series_csv(const fs::path& path, const TimeSeries& ts)
{
    auto out = open_out(path);
    const int ny = static_cast<int>(ts.y.cols());
    header(out, "series", series_columns(ny / 2));
    std::string line;
    for (long k = 0; k < ts.y.rows(); ++k) {
        line = fmt::format("{},{:.17g}", k, k * ts.Ts);
        for (const Mat* m : {&ts.y, &ts.z, &ts.h, &ts.e, &ts.innovation})
            for (int j = 0; j < ny; ++j) line += fmt::format(",{:.17g}", (*m)(k, j));
        line += fmt::format(",{:.17g}\n", ts.x_inf(k));
        out << line;
    }
}

void write_windows_csv(const fs::path& path, const TimeSeries& ts)
{
    auto out = open_out(path);
    header(out, "windows", window_columns());
    // Interleave DGUs by window end so the file reads in time order.
    std::vector<WindowRecord> all;
    for (const auto& w : ts.windows) all.insert(all.end(), w.begin(), w.end());
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.k_end != b.k_end ? a.k_end < b.k_end : a.dgu < b.dgu;
    });
    for (const auto& w : all)
        out << fmt::format("{},{:.17g},{},{:.17g},{:.17g},{},{},{},{}\n", w.k_end, w.t_end, w.dgu + 1, w.chi1, w.chi2,
                           int(w.alarm), int(w.chi1_fired), int(w.chi2_fired), int(w.confirmed));
}

int CsvTable::column(const std::string& name) const
{
    const auto it = std::find(columns.begin(), columns.end(), name);
    return it == columns.end() ? -1 : static_cast<int>(it - columns.begin());
}

CsvTable read_csv(const fs::path& path)
{
    if (!fs::exists(path)) throw ConfigError(fmt::format("missing stream file {}", path.string()));
    std::ifstream in(path);
    std::string line;
    CsvTable t;
    if (!std::getline(in, line)) throw ConfigError(fmt::format("{}: empty file", path.string()));
    int schema = 0;
    char stream[64] = {0};
    if (std::sscanf(line.c_str(), "# mgwm-csv schema=%d stream=%63s", &schema, stream) != 2)
        throw ConfigError(fmt::format("{}:1: missing schema header", path.string()));
    if (schema != kCsvSchema) throw ConfigError(fmt::format("{}:1: unsupported CSV schema {}", path.string(), schema));
    t.stream = stream;
    if (!std::getline(in, line)) throw ConfigError(fmt::format("{}:2: missing column header", path.string()));
    {
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) t.columns.push_back(c);
    }
    long ln = 2;
    while (std::getline(in, line)) {
        ++ln;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) {
            char* end = nullptr;
            const double v = std::strtod(c.c_str(), &end);
            if (end == c.c_str()) throw ConfigError(fmt::format("{}:{}: bad number '{}'", path.string(), ln, c));
            row.push_back(v);
        }
        if (row.size() != t.columns.size())
            throw ConfigError(fmt::format("{}:{}: expected {} fields, got {} (truncated file?)", path.string(), ln,
                                          t.columns.size(), row.size()));
        t.rows.push_back(std::move(row));
    }
    return t;
}

void write_thresholds(const fs::path& path, const CalibrationResult& r, const std::string& scenario_hash,
                      std::uint64_t seed_base)
{
    json j;
    j["format"] = "mgwm-thresholds";
    j["version"] = 1;
    j["chi1"] = r.thresholds.chi1;
    j["chi2"] = r.thresholds.chi2;
    j["quantile"] = r.quantile;
    j["safety_factor"] = r.safety_factor;
    j["quantile_chi1"] = r.quantile_chi1;
    j["quantile_chi2"] = r.quantile_chi2;
    j["runs"] = r.runs;
    j["windows"] = r.windows;
    j["seed_base"] = seed_base;
    j["scenario_sha256"] = scenario_hash;
    j["tool_version"] = kToolVersion;
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

Thresholds load_thresholds(const fs::path& path)
{
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
    if (j.value("format", "") != "mgwm-thresholds") throw ConfigError(fmt::format("{}: not a thresholds file", path.string()));
    if (!j.contains("chi1") || !j.contains("chi2") || !j["chi1"].is_number() || !j["chi2"].is_number())
        throw ConfigError(fmt::format("{}: chi1/chi2 missing", path.string()));
    Thresholds t{j["chi1"].get<double>(), j["chi2"].get<double>()};
    if (!(t.chi1 > 0 && t.chi2 > 0)) throw ConfigError(fmt::format("{}: thresholds must be positive", path.string()));
    return t;
}

// ---------------------------------------------------------------- SVG

void write_svg(const fs::path& path, const SvgPlot& p)
{
    const double W = 800, H = 420, L = 80, R = 20, T = 40, B = 60;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    auto tf = [&](double y) { return p.log_y ? std::log10(std::max(y, 1e-300)) : y; };
    for (const auto& s : p.series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, tf(s.y[i]));
            y1 = std::max(y1, tf(s.y[i]));
        }
    if (p.hline) {
        y0 = std::min(y0, tf(*p.hline));
        y1 = std::max(y1, tf(*p.hline));
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y0 -= 1, y1 += 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto X = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto Y = [&](double y) { return H - B - (tf(y) - y0) / (y1 - y0) * (H - T - B); };
    auto Yr = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };

    std::string s = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        W, H);
    s += fmt::format("<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n", W / 2, p.title);
    s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", L, T,
                     W - L - R, H - T - B);
    for (int i = 0; i <= 5; ++i) {
        const double xv = x0 + i * (x1 - x0) / 5, yv = y0 + i * (y1 - y0) / 5;
        s += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{:.4g}</text>\n", X(xv), H - B + 18, xv);
        const double lab = p.log_y ? std::pow(10.0, yv) : yv;
        s += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", L - 6, Yr(yv) + 4, lab);
        s += fmt::format("<line x1=\"{}\" x2=\"{}\" y1=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#ddd\"/>\n", L, W - R, Yr(yv), Yr(yv));
    }
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", (L + W - R) / 2, H - 15, p.xlabel);
    s += fmt::format("<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
                     (T + H - B) / 2, (T + H - B) / 2, p.ylabel);
    if (p.hline)
        s += fmt::format("<line x1=\"{}\" x2=\"{}\" y1=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"red\" stroke-dasharray=\"6 4\"/>\n", L,
                         W - R, Y(*p.hline), Y(*p.hline));
    if (p.vline && *p.vline >= x0 && *p.vline <= x1)
        s += fmt::format("<line x1=\"{:.2f}\" x2=\"{:.2f}\" y1=\"{}\" y2=\"{}\" stroke=\"gray\" stroke-dasharray=\"3 3\"/>\n",
                         X(*p.vline), X(*p.vline), T, H - B);
    int li = 0;
    for (const auto& sr : p.series) {
        std::string pts;
        // Thin long series so the file stays small.
        const std::size_t step = std::max<std::size_t>(1, sr.x.size() / 4000);
        for (std::size_t i = 0; i < sr.x.size(); i += step)
            if (std::isfinite(sr.y[i])) pts += fmt::format("{:.2f},{:.2f} ", X(sr.x[i]), Y(sr.y[i]));
        s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1\" points=\"{}\"/>\n", sr.color, pts);
        s += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", L + 10, T + 16 + 14 * li++, sr.color, sr.label);
    }
    s += "</svg>\n";
    auto out = open_out(path);
    out << s;
}

} // namespace mgwm
