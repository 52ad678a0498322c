#include "mgwm/grid_model.hpp"

#include <fmt/format.h>

#include <cmath>
#include <set>

namespace mgwm {

CMat NetworkModel::admittance() const
{
    CMat Y = CMat::Zero(bus_count, bus_count);
    for (const auto& br : branches) {
        const cplx y(br.G, br.B);
        Y(br.from, br.from) += y;
        Y(br.to, br.to) += y;
        Y(br.from, br.to) -= y;
        Y(br.to, br.from) -= y;
    }
    return Y;
}

void NetworkModel::validate() const
{
    if (bus_count <= 0) throw ConfigError("network has no buses");
    auto in_range = [&](int b) { return b >= 0 && b < bus_count; };
    for (const auto& br : branches) {
        if (!in_range(br.from) || !in_range(br.to))
            throw ConfigError(fmt::format("branch {}-{} references a bus outside [1, {}]", br.from + 1, br.to + 1,
                                          bus_count));
        if (br.from == br.to) throw ConfigError(fmt::format("branch at bus {} connects the bus to itself", br.from + 1));
    }
    for (int b : dgu_buses)
        if (!in_range(b)) throw ConfigError(fmt::format("DGU bus {} does not exist", b + 1));
    for (int b : load_buses)
        if (!in_range(b)) throw ConfigError(fmt::format("load bus {} does not exist", b + 1));
    if (!in_range(reference_bus)) throw ConfigError("reference bus does not exist");
    if (nominal_voltage <= 0 || base_power <= 0 || nominal_frequency <= 0)
        throw ConfigError("nominal voltage, base power and nominal frequency must be positive");

    // Connectivity by flood fill.
    std::vector<int> seen(bus_count, 0);
    std::vector<int> stack{reference_bus};
    seen[reference_bus] = 1;
    while (!stack.empty()) {
        int b = stack.back();
        stack.pop_back();
        for (const auto& br : branches) {
            int o = br.from == b ? br.to : (br.to == b ? br.from : -1);
            if (o >= 0 && !seen[o]) {
                seen[o] = 1;
                stack.push_back(o);
            }
        }
    }
    for (int b = 0; b < bus_count; ++b)
        if (!seen[b]) throw ConfigError(fmt::format("bus {} is not connected to the reference bus", b + 1));
}

namespace {

struct Layout {
    std::vector<int> theta_of; // bus -> unknown index or -1
    std::vector<int> v_of;
    int lambda = -1;
    std::vector<int> p_rows; // buses with a P equation
    std::vector<int> q_rows;
    int n = 0;
};

Layout make_layout(const NetworkModel& net, const std::vector<BusSpec>& buses, const PowerFlowOptions& opt)
{
    const int N = net.bus_count;
    Layout L;
    L.theta_of.assign(N, -1);
    L.v_of.assign(N, -1);
    for (int b = 0; b < N; ++b)
        if (b != opt.reference_bus) L.theta_of[b] = L.n++;
    for (int b = 0; b < N; ++b)
        if (buses[b].type == BusType::pq) L.v_of[b] = L.n++;
    if (opt.distributed_slack) L.lambda = L.n++;
    for (int b = 0; b < N; ++b) {
        if (buses[b].type != BusType::slack || opt.distributed_slack) L.p_rows.push_back(b);
        if (buses[b].type == BusType::pq) L.q_rows.push_back(b);
    }
    return L;
}

template <class S>
Eigen::Matrix<S, Eigen::Dynamic, 1> mismatch(const NetworkModel& net, const CMat& Y, const std::vector<BusSpec>& buses,
                                             const PowerFlowOptions& opt, const Layout& L,
                                             const Eigen::Matrix<S, Eigen::Dynamic, 1>& z, std::vector<S>* Vout = nullptr,
                                             std::vector<S>* Tout = nullptr)
{
    using std::cos;
    using std::pow;
    using std::sin;
    const int N = net.bus_count;
    std::vector<S> V(N), T(N);
    for (int b = 0; b < N; ++b) {
        V[b] = L.v_of[b] >= 0 ? z(L.v_of[b]) : S(buses[b].V_set);
        T[b] = L.theta_of[b] >= 0 ? z(L.theta_of[b]) : S(0.0);
    }
    S lambda = L.lambda >= 0 ? z(L.lambda) : S(0.0);
    std::vector<S> P(N), Q(N);
    for (int i = 0; i < N; ++i) {
        S p(0.0), q(0.0);
        for (int j = 0; j < N; ++j) {
            const double G = Y(i, j).real(), B = Y(i, j).imag();
            if (G == 0.0 && B == 0.0) continue;
            S dt = T[i] - T[j];
            S c = cos(dt), s = sin(dt);
            p += V[j] * (G * c + B * s);
            q += V[j] * (G * s - B * c);
        }
        P[i] = V[i] * p;
        Q[i] = V[i] * q;
    }
    Eigen::Matrix<S, Eigen::Dynamic, 1> r(L.p_rows.size() + L.q_rows.size());
    int k = 0;
    for (int b : L.p_rows) {
        S load = opt.load_exponent == 0.0 ? S(buses[b].S_load.real())
                                          : S(buses[b].S_load.real()) * pow(V[b], opt.load_exponent);
        r(k++) = S(buses[b].S_gen.real()) + buses[b].participation * lambda - load - P[b];
    }
    for (int b : L.q_rows) {
        S load = opt.load_exponent == 0.0 ? S(buses[b].S_load.imag())
                                          : S(buses[b].S_load.imag()) * pow(V[b], opt.load_exponent);
        r(k++) = S(buses[b].S_gen.imag()) - load - Q[b];
    }
    if (Vout) *Vout = V;
    if (Tout) *Tout = T;
    return r;
}

} // namespace

PowerFlowResult solve_power_flow(const NetworkModel& net, const std::vector<BusSpec>& buses,
                                 const PowerFlowOptions& opt)
{
    net.validate();
    const int N = net.bus_count;
    if (static_cast<int>(buses.size()) != N) throw ConfigError("bus specification count differs from bus count");
    if (opt.reference_bus < 0 || opt.reference_bus >= N) throw ConfigError("power flow needs a reference bus");
    if (!opt.distributed_slack && buses[opt.reference_bus].type != BusType::slack)
        throw ConfigError("without distributed slack the reference bus must be a slack bus");
    for (int b = 0; b < N; ++b)
        if (b != opt.reference_bus && buses[b].type == BusType::slack)
            throw ConfigError(fmt::format("bus {} is a second slack bus", b + 1));
    if (opt.distributed_slack) {
        double total = 0.0;
        for (const auto& s : buses) total += s.participation;
        if (!(total > 0.0)) throw ConfigError("distributed slack needs positive participation factors");
    }

    const CMat Y = net.admittance();
    const Layout L = make_layout(net, buses, opt);
    if (static_cast<int>(L.p_rows.size() + L.q_rows.size()) != L.n)
        throw ConfigError("power flow is not square for this bus type assignment");

    Vec z(L.n);
    for (int b = 0; b < N; ++b) {
        if (L.theta_of[b] >= 0) z(L.theta_of[b]) = 0.0;
        if (L.v_of[b] >= 0) z(L.v_of[b]) = buses[opt.reference_bus].V_set;
    }
    if (L.lambda >= 0) z(L.lambda) = 0.0;

    PowerFlowResult res;
    for (int it = 0;; ++it) {
        ADVec za(L.n);
        for (int k = 0; k < L.n; ++k) za(k) = AD(z(k), L.n, k);
        ADVec ra = mismatch<AD>(net, Y, buses, opt, L, za);
        Vec r(L.n);
        Mat J(L.n, L.n);
        for (int k = 0; k < L.n; ++k) {
            r(k) = ra(k).value();
            if (ra(k).derivatives().size() == L.n)
                J.row(k) = ra(k).derivatives().transpose();
            else
                J.row(k).setZero();
        }
        const double nr = L.n ? r.cwiseAbs().maxCoeff() : 0.0;
        res.residual_history.push_back(nr);
        if (!std::isfinite(nr)) throw NumericalError(fmt::format("power flow produced non-finite mismatch at iteration {}", it));
        if (nr <= opt.tolerance) {
            res.iterations = it;
            res.residual = nr;
            break;
        }
        if (it >= opt.max_iterations) {
            std::string hist;
            for (double h : res.residual_history) hist += fmt::format(" {:.3e}", h);
            throw NumericalError(fmt::format("power flow did not converge in {} iterations, final residual {:.3e}; history:{}",
                                             opt.max_iterations, nr, hist));
        }
        Eigen::FullPivLU<Mat> lu(J);
        if (!lu.isInvertible())
            throw NumericalError(fmt::format("singular power-flow Jacobian at iteration {}", it));
        z -= lu.solve(r);
    }

    std::vector<double> V, T;
    mismatch<double>(net, Y, buses, opt, L, z, &V, &T);
    res.V = Eigen::Map<Vec>(V.data(), N);
    res.theta = Eigen::Map<Vec>(T.data(), N);
    CVec Vc(N);
    for (int b = 0; b < N; ++b) Vc(b) = std::polar(res.V(b), res.theta(b));
    res.S_injection = Vc.cwiseProduct((Y * Vc).conjugate());
    res.lambda = L.lambda >= 0 ? z(L.lambda) : 0.0;
    return res;
}

PowerFlowResult solve_power_flow(const NetworkModel& net, const CVec& injections)
{
    std::vector<BusSpec> buses(net.bus_count);
    for (int b = 0; b < net.bus_count; ++b) {
        buses[b].type = b == net.reference_bus ? BusType::slack : BusType::pq;
        buses[b].S_gen = injections(b);
        buses[b].V_set = 1.0;
    }
    PowerFlowOptions opt;
    opt.reference_bus = net.reference_bus;
    return solve_power_flow(net, buses, opt);
}

double power_flow_residual(const NetworkModel& net, const std::vector<BusSpec>& buses, const PowerFlowOptions& opt,
                           const PowerFlowResult& r)
{
    const CMat Y = net.admittance();
    const int N = net.bus_count;
    CVec Vc(N);
    for (int b = 0; b < N; ++b) Vc(b) = std::polar(r.V(b), r.theta(b));
    CVec S = Vc.cwiseProduct((Y * Vc).conjugate());
    double worst = 0.0;
    for (int b = 0; b < N; ++b) {
        const double scale = opt.load_exponent == 0.0 ? 1.0 : std::pow(r.V(b), opt.load_exponent);
        cplx spec = buses[b].S_gen + buses[b].participation * r.lambda - buses[b].S_load * scale;
        double dp = std::abs(spec.real() - S(b).real());
        double dq = std::abs(spec.imag() - S(b).imag());
        // Slack buses balance by definition, pv buses have free Q.
        if (buses[b].type != BusType::slack || opt.distributed_slack) worst = std::max(worst, dp);
        if (buses[b].type == BusType::pq) worst = std::max(worst, dq);
    }
    return worst;
}

} // namespace mgwm
