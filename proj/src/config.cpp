#include "mgwm/config.hpp"

#include "mgwm/io.hpp"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace mgwm {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

// Every error names origin:line:column of the offending node.
struct Ctx {
    std::string origin;

    [[noreturn]] void fail(const YAML::Node& n, const std::string& msg) const
    {
        const auto m = n.Mark();
        if (m.is_null()) throw ConfigError(fmt::format("{}: {}", origin, msg));
        throw ConfigError(fmt::format("{}:{}:{}: {}", origin, m.line + 1, m.column + 1, msg));
    }

    YAML::Node need(const YAML::Node& parent, const char* key) const
    {
        const YAML::Node n = parent[key];
        if (!n) fail(parent, fmt::format("missing field '{}'", key));
        return n;
    }

    template <class T>
    T as(const YAML::Node& n, const char* what) const
    {
        try {
            return n.as<T>();
        } catch (const YAML::Exception&) {
            fail(n, fmt::format("field '{}' has the wrong type", what));
        }
    }

    double num(const YAML::Node& parent, const char* key) const
    {
        const YAML::Node n = need(parent, key);
        const std::string s = as<std::string>(n, key);
        if (s == "inf" || s == ".inf") return std::numeric_limits<double>::infinity();
        const double v = as<double>(n, key);
        if (!std::isfinite(v)) fail(n, fmt::format("field '{}' must be finite", key));
        return v;
    }

    double num_or(const YAML::Node& parent, const char* key, double dflt) const
    {
        return parent[key] ? num(parent, key) : dflt;
    }

    int index(const YAML::Node& parent, const char* key, int count, const char* what) const
    {
        const YAML::Node n = need(parent, key);
        const int v = as<int>(n, key);
        if (v < 1 || v > count) fail(n, fmt::format("{} {} out of range 1..{}", what, v, count));
        return v - 1;
    }

    void known(const YAML::Node& map, std::initializer_list<const char*> keys) const
    {
        if (!map.IsMap()) fail(map, "expected a mapping");
        for (const auto& kv : map) {
            const std::string k = kv.first.as<std::string>();
            bool ok = false;
            for (const char* c : keys) ok = ok || k == c;
            if (!ok) fail(kv.first, fmt::format("unknown field '{}'", k));
        }
    }
};

YAML::Node parse_yaml(const std::string& text, const std::string& origin)
{
    try {
        return YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(fmt::format("{}:{}:{}: {}", origin, e.mark.line + 1, e.mark.column + 1, e.msg));
    }
}

} // namespace

MicrogridConfig parse_model(const std::string& text, const std::string& origin)
{
    const Ctx c{origin};
    const YAML::Node root = parse_yaml(text, origin);
    c.known(root, {"name", "bases", "buses", "reference_bus", "branches", "dgus", "loads", "load_voltage_exponent", "noise"});
    MicrogridConfig m;
    m.name = root["name"] ? c.as<std::string>(root["name"], "name") : "model";

    const YAML::Node bases = c.need(root, "bases");
    c.known(bases, {"voltage", "power", "frequency"});
    m.net.nominal_voltage = c.num(bases, "voltage");
    m.net.base_power = c.num(bases, "power");
    m.net.nominal_frequency = c.num(bases, "frequency");
    if (!(m.net.nominal_voltage > 0)) c.fail(bases["voltage"], "voltage base must be positive");
    if (!(m.net.base_power > 0)) c.fail(bases["power"], "power base must be positive");
    if (!(m.net.nominal_frequency > 0)) c.fail(bases["frequency"], "frequency must be positive");

    const YAML::Node buses = c.need(root, "buses");
    if (!buses.IsSequence() || buses.size() == 0) c.fail(buses, "buses must be a nonempty list of names");
    for (const auto& b : buses) m.net.bus_names.push_back(c.as<std::string>(b, "buses"));
    m.net.bus_count = static_cast<int>(m.net.bus_names.size());
    m.net.reference_bus = c.index(root, "reference_bus", m.net.bus_count, "reference bus");

    const double ZB = m.net.base_impedance();
    const YAML::Node branches = c.need(root, "branches");
    if (!branches.IsSequence()) c.fail(branches, "branches must be a list");
    for (const auto& b : branches) {
        c.known(b, {"from", "to", "R", "X"});
        Branch br;
        br.from = c.index(b, "from", m.net.bus_count, "bus");
        br.to = c.index(b, "to", m.net.bus_count, "bus");
        const cplx z(c.num(b, "R") / ZB, c.num(b, "X") / ZB);
        if (std::abs(z) == 0.0) c.fail(b, "branch impedance is zero");
        const cplx y = 1.0 / z;
        br.G = y.real();
        br.B = y.imag();
        m.net.branches.push_back(br);
    }

    const YAML::Node dgus = c.need(root, "dgus");
    if (!dgus.IsSequence()) c.fail(dgus, "dgus must be a list");
    for (const auto& d : dgus) {
        c.known(d, {"bus", "T_omega", "T_V", "T_theta", "alpha_p", "beta_p", "alpha_q", "beta_q", "K_p1", "K_i1", "K_p2",
                    "K_i2", "V_dc", "R_in", "X_in", "L_in", "V_ref"});
        DguModel g;
        g.bus = c.index(d, "bus", m.net.bus_count, "bus");
        g.T_omega = c.num(d, "T_omega");
        g.T_V = c.num(d, "T_V");
        g.T_theta = c.num_or(d, "T_theta", g.T_V);
        g.alpha_p = c.num(d, "alpha_p");
        g.beta_p = c.num(d, "beta_p");
        g.alpha_q = c.num(d, "alpha_q");
        g.beta_q = c.num(d, "beta_q");
        g.K_p1 = c.num(d, "K_p1");
        g.K_i1 = c.num(d, "K_i1");
        g.K_p2 = c.num_or(d, "K_p2", g.K_p1);
        g.K_i2 = c.num_or(d, "K_i2", g.K_i1);
        g.V_dc = c.num(d, "V_dc");
        g.R_in = c.num(d, "R_in");
        if (d["L_in"] && d["X_in"]) c.fail(d, "give either L_in or X_in, not both");
        if (d["L_in"])
            g.L_in = c.num(d, "L_in");
        else
            g.L_in = c.num(d, "X_in") / m.net.nominal_frequency;
        g.V_ref = c.num_or(d, "V_ref", 1.0);
        try {
            g.validate();
        } catch (const ConfigError& e) {
            c.fail(d, e.what());
        }
        m.dgus.push_back(g);
        m.net.dgu_buses.push_back(g.bus);
    }

    if (root["loads"]) {
        const YAML::Node loads = root["loads"];
        if (!loads.IsSequence()) c.fail(loads, "loads must be a list");
        for (const auto& l : loads) {
            c.known(l, {"bus", "P", "Q"});
            LoadModel lm;
            lm.bus = c.index(l, "bus", m.net.bus_count, "bus");
            lm.P_L = c.num(l, "P");
            lm.Q_L = c.num(l, "Q");
            m.loads.push_back(lm);
            m.net.load_buses.push_back(lm.bus);
        }
    }
    m.load_voltage_exponent = c.num_or(root, "load_voltage_exponent", 2.0);
    if (root["noise"]) {
        const YAML::Node n = root["noise"];
        c.known(n, {"process", "measurement"});
        m.process_cov = c.num_or(n, "process", m.process_cov);
        m.measurement_cov = c.num_or(n, "measurement", m.measurement_cov);
    }
    try {
        m.validate();
    } catch (const ConfigError& e) {
        c.fail(root, e.what());
    }
    return m;
}

MicrogridConfig load_model(const fs::path& path) { return parse_model(read_text(path), path.string()); }

namespace {

TargetSignal parse_signal(const Ctx& c, const YAML::Node& n)
{
    const std::string s = c.as<std::string>(n, "signal");
    if (s == "frequency") return TargetSignal::frequency;
    if (s == "voltage") return TargetSignal::voltage;
    if (s == "both") return TargetSignal::both;
    c.fail(n, fmt::format("unknown signal '{}' (frequency, voltage, both)", s));
}

std::vector<double> parse_coeffs(const Ctx& c, const YAML::Node& parent, const char* key)
{
    const YAML::Node n = c.need(parent, key);
    if (!n.IsSequence() || n.size() == 0) c.fail(n, fmt::format("'{}' must be a nonempty list", key));
    std::vector<double> v;
    for (const auto& x : n) v.push_back(c.as<double>(x, key));
    return v;
}

AttackSpec parse_attack(const Ctx& c, const YAML::Node& a, int n_dgu, double Ts)
{
    AttackSpec s;
    s.target_dgu = c.index(a, "dgu", n_dgu, "DGU");
    s.signal = a["signal"] ? parse_signal(c, a["signal"]) : TargetSignal::both;
    s.start_time = c.num_or(a, "start", 0.0);
    s.end_time = c.num_or(a, "end", std::numeric_limits<double>::infinity());
    const std::string t = c.as<std::string>(c.need(a, "template"), "template");
    if (t == "passthrough") {
        c.known(a, {"dgu", "signal", "start", "end", "template"});
        s.tmpl = Passthrough{};
    } else if (t == "noise_injection") {
        c.known(a, {"dgu", "signal", "start", "end", "template", "variance"});
        s.tmpl = NoiseInjection{c.num(a, "variance")};
    } else if (t == "replay") {
        c.known(a, {"dgu", "signal", "start", "end", "template", "record_start", "record_end"});
        s.tmpl = Replay{c.num(a, "record_start"), c.num(a, "record_end")};
    } else if (t == "destab_filter") {
        c.known(a, {"dgu", "signal", "start", "end", "template", "num", "den", "mu_variance"});
        s.tmpl = DestabFilter{parse_coeffs(c, a, "num"), parse_coeffs(c, a, "den"), c.num_or(a, "mu_variance", 0.0)};
    } else {
        c.fail(a["template"], fmt::format("unknown attack template '{}'", t));
    }
    try {
        s.validate(Ts);
    } catch (const ConfigError& e) {
        c.fail(a, e.what());
    }
    return s;
}

} // namespace

Scenario parse_scenario(const std::string& text, const fs::path& base_dir, const std::string& origin)
{
    const Ctx c{origin};
    const YAML::Node root = parse_yaml(text, origin);
    c.known(root, {"schema", "name", "model", "steps", "duration", "Ts", "discretization", "seed", "seeds", "watermark",
                   "detector", "divergence_bound", "load_steps", "attacks"});
    const int schema = c.as<int>(c.need(root, "schema"), "schema");
    if (schema != kScenarioSchema)
        c.fail(root["schema"], fmt::format("unsupported schema {} (this build reads {})", schema, kScenarioSchema));

    Scenario sc;
    sc.name = root["name"] ? c.as<std::string>(root["name"], "name") : "scenario";
    const YAML::Node mnode = c.need(root, "model");
    fs::path mp = c.as<std::string>(mnode, "model");
    if (mp.is_relative()) mp = base_dir / mp;
    sc.model_path = mp.lexically_normal().string();
    if (!fs::exists(mp)) c.fail(mnode, fmt::format("model file {} does not exist", sc.model_path));
    sc.model = load_model(mp);
    sc.model_sha256 = sha256_file(mp);

    sc.Ts = c.num(root, "Ts");
    if (!(sc.Ts > 0)) c.fail(root["Ts"], "Ts must be positive");
    if (root["steps"] && root["duration"]) c.fail(root, "give either steps or duration, not both");
    if (root["steps"]) {
        const long n = c.as<long>(root["steps"], "steps");
        if (n <= 0) c.fail(root["steps"], "steps must be positive");
        sc.duration = static_cast<double>(n) * sc.Ts;
    } else {
        sc.duration = c.num(root, "duration");
        const double n = sc.duration / sc.Ts;
        if (!(sc.duration > 0) || std::abs(n - std::round(n)) > 1e-6 * std::max(1.0, n))
            c.fail(root["duration"], fmt::format("duration {} s is not a positive whole number of {} s steps", sc.duration, sc.Ts));
    }
    if (root["discretization"]) {
        const std::string d = c.as<std::string>(root["discretization"], "discretization");
        if (d == "zoh")
            sc.method = Discretization::zoh;
        else if (d == "tustin")
            sc.method = Discretization::tustin;
        else
            c.fail(root["discretization"], fmt::format("unknown discretization '{}' (zoh, tustin)", d));
    }
    sc.reseed(root["seed"] ? c.as<std::uint64_t>(root["seed"], "seed") : 1);
    if (root["seeds"]) {
        const YAML::Node s = root["seeds"];
        c.known(s, {"process", "measurement", "watermark", "attack"});
        if (s["process"]) sc.seeds.process = c.as<std::uint64_t>(s["process"], "process");
        if (s["measurement"]) sc.seeds.measurement = c.as<std::uint64_t>(s["measurement"], "measurement");
        if (s["watermark"]) sc.seeds.watermark = c.as<std::uint64_t>(s["watermark"], "watermark");
        if (s["attack"]) sc.seeds.attack = c.as<std::uint64_t>(s["attack"], "attack");
    }
    if (root["watermark"]) {
        const YAML::Node w = root["watermark"];
        c.known(w, {"nu_e", "channels"});
        sc.nu_e = c.num_or(w, "nu_e", sc.nu_e);
        if (!(sc.nu_e >= 0)) c.fail(w["nu_e"], "nu_e must be nonnegative");
        if (w["channels"]) {
            sc.watermark_p = sc.watermark_q = false;
            const YAML::Node ch = w["channels"];
            if (!ch.IsSequence()) c.fail(ch, "channels must be a list of P and/or Q");
            for (const auto& x : ch) {
                const std::string s = c.as<std::string>(x, "channels");
                if (s == "P")
                    sc.watermark_p = true;
                else if (s == "Q")
                    sc.watermark_q = true;
                else
                    c.fail(x, fmt::format("unknown watermark channel '{}'", s));
            }
        }
    }
    if (root["detector"]) {
        const YAML::Node d = root["detector"];
        c.known(d, {"enabled", "T0", "stride", "confirm", "thresholds", "thresholds_file"});
        if (d["enabled"]) sc.detectors_enabled = c.as<bool>(d["enabled"], "enabled");
        if (d["T0"]) sc.detector.T0 = c.as<int>(d["T0"], "T0");
        if (d["stride"]) sc.detector.stride = c.as<int>(d["stride"], "stride");
        if (d["confirm"]) sc.detector.confirm = c.as<int>(d["confirm"], "confirm");
        if (sc.detector.T0 <= 0) c.fail(d["T0"], "T0 must be positive");
        if (sc.detector.stride <= 0) c.fail(d["stride"], "stride must be positive");
        if (sc.detector.confirm <= 0) c.fail(d["confirm"], "confirm must be positive");
        if (d["thresholds"] && d["thresholds_file"]) c.fail(d, "give either thresholds or thresholds_file");
        if (d["thresholds"]) {
            const YAML::Node t = d["thresholds"];
            c.known(t, {"chi1", "chi2"});
            sc.thresholds = Thresholds{c.num(t, "chi1"), c.num(t, "chi2")};
            if (!(sc.thresholds->chi1 > 0 && sc.thresholds->chi2 > 0)) c.fail(t, "thresholds must be positive");
        }
        if (d["thresholds_file"]) {
            fs::path tp = c.as<std::string>(d["thresholds_file"], "thresholds_file");
            if (tp.is_relative()) tp = base_dir / tp;
            sc.thresholds_file = tp.lexically_normal().string();
            if (!fs::exists(tp)) c.fail(d["thresholds_file"], fmt::format("thresholds file {} does not exist", sc.thresholds_file));
            sc.thresholds = load_thresholds(tp);
        }
    }
    sc.divergence_bound = c.num_or(root, "divergence_bound", sc.divergence_bound);
    if (!(sc.divergence_bound > 0)) c.fail(root["divergence_bound"], "divergence_bound must be positive");
    if (root["load_steps"]) {
        const YAML::Node ls = root["load_steps"];
        if (!ls.IsSequence()) c.fail(ls, "load_steps must be a list");
        for (const auto& l : ls) {
            c.known(l, {"time", "load", "dP", "dQ"});
            LoadStep s;
            s.time = c.num(l, "time");
            s.load = c.index(l, "load", static_cast<int>(sc.model.loads.size()), "load");
            s.dP = c.num_or(l, "dP", 0.0);
            s.dQ = c.num_or(l, "dQ", 0.0);
            if (!(s.time >= 0)) c.fail(l["time"], "time must be nonnegative");
            sc.load_steps.push_back(s);
        }
    }
    if (root["attacks"]) {
        const YAML::Node as = root["attacks"];
        if (!as.IsSequence()) c.fail(as, "attacks must be a list");
        for (const auto& a : as) sc.attacks.push_back(parse_attack(c, a, static_cast<int>(sc.model.dgus.size()), sc.Ts));
    }
    try {
        sc.validate();
    } catch (const ConfigError& e) {
        c.fail(root, e.what());
    }
    return sc;
}

Scenario load_scenario(const fs::path& path)
{
    if (!fs::exists(path)) throw ConfigError(fmt::format("scenario file {} does not exist", path.string()));
    const std::string text = read_text(path);
    Scenario sc = parse_scenario(text, path.parent_path(), path.string());
    sc.source_path = path.string();
    sc.source_sha256 = sha256_hex(text);
    return sc;
}

} // namespace mgwm
