#include "mgwm/grid_model.hpp"

#include <fmt/format.h>

#include <cmath>
#include <set>

namespace mgwm {

void DguModel::validate() const
{
    if (!(T_omega > 0 && T_V > 0 && T_theta > 0)) throw ConfigError("DGU measurement time constants must be positive");
    if (!(L_in > 0)) throw ConfigError("DGU inverter inductance must be positive");
    if (!(V_dc > 0)) throw ConfigError("DGU DC-link voltage must be positive");
    if (K_i1 == 0.0 || K_i2 == 0.0) throw ConfigError("current-controller integral gains must be nonzero");
}

void MicrogridConfig::validate() const
{
    net.validate();
    std::set<int> taken;
    for (const auto& d : dgus) {
        d.validate();
        if (d.bus < 0 || d.bus >= net.bus_count) throw ConfigError(fmt::format("DGU bus {} does not exist", d.bus + 1));
        if (!taken.insert(d.bus).second) throw ConfigError(fmt::format("two DGUs attached to bus {}", d.bus + 1));
    }
    for (const auto& l : loads)
        if (l.bus < 0 || l.bus >= net.bus_count) throw ConfigError(fmt::format("load bus {} does not exist", l.bus + 1));
    if (dgus.empty()) throw ConfigError("model has no DGU");
    if (!(process_cov >= 0)) throw ConfigError("process covariance must be nonnegative");
    if (!(measurement_cov > 0)) throw ConfigError("measurement covariance must be positive");
}

MicrogridDae::MicrogridDae(MicrogridConfig cfg) : cfg_(std::move(cfg))
{
    cfg_.validate();
    Y_ = cfg_.net.admittance();
    const double ZB = cfg_.net.base_impedance();
    const double IB = cfg_.net.base_current();
    const double VB = cfg_.net.nominal_voltage;
    const double wn = cfg_.net.nominal_frequency;
    for (const auto& d : cfg_.dgus) {
        PuDgu p{};
        p.bus = d.bus;
        p.T_omega = d.T_omega;
        p.T_V = d.T_V;
        p.T_theta = d.T_theta;
        p.Kp1 = d.K_p1 * IB;
        p.Ki1 = d.K_i1 * IB;
        p.Kp2 = d.K_p2 * IB;
        p.Ki2 = d.K_i2 * IB;
        p.Vdc = d.V_dc / VB;
        p.R = d.R_in / ZB;
        p.X = wn * d.L_in / ZB;
        pu_.push_back(p);
    }
}

std::vector<OutputIndex> MicrogridDae::outputs() const
{
    std::vector<OutputIndex> out;
    for (int i = 0; i < n_dgu(); ++i) {
        out.push_back({true, y_index(i, omega)});
        out.push_back({true, y_voltage(pu_[i].bus)});
    }
    return out;
}

std::vector<std::string> MicrogridDae::state_names() const
{
    static const char* names[] = {"omega_m", "V_m", "theta_m", "gamma_d", "gamma_q", "i_d", "i_q"};
    std::vector<std::string> out;
    for (int i = 0; i < n_dgu(); ++i)
        for (const char* n : names) out.push_back(fmt::format("{}_{}", n, i + 1));
    return out;
}

template <class S>
void MicrogridDae::eval_impl(const Eigen::Matrix<S, Eigen::Dynamic, 1>& x, const Eigen::Matrix<S, Eigen::Dynamic, 1>& y,
                             const Eigen::Matrix<S, Eigen::Dynamic, 1>& u, Eigen::Matrix<S, Eigen::Dynamic, 1>& f,
                             Eigen::Matrix<S, Eigen::Dynamic, 1>& g) const
{
    using std::cos;
    using std::pow;
    using std::sin;
    const int N = n_bus();
    const int n = n_dgu();
    const double wn = cfg_.net.nominal_frequency;
    const double kexp = cfg_.load_voltage_exponent;
    f.resize(nx());
    g.resize(ny());

    std::vector<S> Vd(N), Vq(N);
    for (int b = 0; b < N; ++b) {
        Vd[b] = y(y_voltage(b)) * cos(y(y_angle(b)));
        Vq[b] = y(y_voltage(b)) * sin(y(y_angle(b)));
    }

    // Network side: V conj(Y V).
    std::vector<S> Pnet(N), Qnet(N), Pinj(N, S(0.0)), Qinj(N, S(0.0));
    for (int b = 0; b < N; ++b) {
        S ire(0.0), iim(0.0);
        for (int j = 0; j < N; ++j) {
            const double G = Y_(b, j).real(), B = Y_(b, j).imag();
            if (G == 0.0 && B == 0.0) continue;
            ire += G * Vd[j] - B * Vq[j];
            iim += G * Vq[j] + B * Vd[j];
        }
        Pnet[b] = Vd[b] * ire + Vq[b] * iim;
        Qnet[b] = Vq[b] * ire - Vd[b] * iim;
    }
    for (std::size_t l = 0; l < cfg_.loads.size(); ++l) {
        const int b = cfg_.loads[l].bus;
        S scale = kexp == 0.0 ? S(1.0) : pow(y(y_voltage(b)), kexp);
        Pinj[b] -= u(n_ref() + 2 * static_cast<int>(l)) * scale;
        Qinj[b] -= u(n_ref() + 2 * static_cast<int>(l) + 1) * scale;
    }

    const int ref = cfg_.net.reference_bus;
    for (int i = 0; i < n; ++i) {
        const PuDgu& p = pu_[i];
        const int b = p.bus;
        const int xs = kStatesPerDgu * i;
        const int ya = y_index(i, omega);
        const S& wm = x(xs + omega_m);
        const S& Vm = x(xs + V_m);
        const S& tm = x(xs + theta_m);
        const S& gd = x(xs + gamma_d);
        const S& gq = x(xs + gamma_q);
        const S& id = x(xs + i_d);
        const S& iq = x(xs + i_q);
        const S& w = y(ya + omega);
        const S& idr = y(ya + i_dref);
        const S& iqr = y(ya + i_qref);
        const S& md = y(ya + m_d);
        const S& mq = y(ya + m_q);
        const S& ud = y(ya + u_d);
        const S& uq = y(ya + u_q);
        const S& P = u(2 * i);
        const S& Q = u(2 * i + 1);

        // Angles are measured against the reference bus (PCC).
        S threl = y(y_angle(b)) - y(y_angle(ref));
        S Vdm = Vm * cos(tm);
        S Vqm = Vm * sin(tm);
        S Vm2 = Vm * Vm;

        g(ya + omega) = w - 1.0 - (threl - tm) / (p.T_theta * wn);
        g(ya + i_dref) = idr - (P * Vdm + Q * Vqm) / Vm2;
        g(ya + i_qref) = iqr - (P * Vqm - Q * Vdm) / Vm2;
        g(ya + m_d) = md - p.Kp1 * (idr - id) - p.Ki1 * gd;
        g(ya + m_q) = mq - p.Kp2 * (iqr - iq) - p.Ki2 * gq;
        g(ya + u_d) = ud - md * p.Vdc;
        g(ya + u_q) = uq - mq * p.Vdc;

        f(xs + omega_m) = (w - wm) / p.T_omega;
        f(xs + V_m) = (y(y_voltage(b)) - Vm) / p.T_V;
        f(xs + theta_m) = (threl - tm) / p.T_theta;
        f(xs + gamma_d) = idr - id;
        f(xs + gamma_q) = iqr - iq;
        const double k = wn / p.X;
        f(xs + i_d) = k * (ud - Vd[b] - p.R * id + w * p.X * iq);
        f(xs + i_q) = k * (uq - Vq[b] - p.R * iq - w * p.X * id);

        Pinj[b] += Vd[b] * id + Vq[b] * iq;
        Qinj[b] += Vq[b] * id - Vd[b] * iq;
    }

    for (int b = 0; b < N; ++b) {
        g(y_voltage(b)) = Pinj[b] - Pnet[b];
        g(y_angle(b)) = Qinj[b] - Qnet[b];
    }
}

void MicrogridDae::eval(const Vec& x, const Vec& y, const Vec& u, Vec& f, Vec& g) const
{
    eval_impl<double>(x, y, u, f, g);
}

void MicrogridDae::eval(const ADVec& x, const ADVec& y, const ADVec& u, ADVec& f, ADVec& g) const
{
    eval_impl<AD>(x, y, u, f, g);
}

DaeJacobians dae_jacobians(const DaeSystem& dae, const Vec& x, const Vec& y, const Vec& u)
{
    const int nx = dae.nx(), ny = dae.ny(), nu = dae.nu();
    const int nz = nx + ny + nu;
    ADVec xa(nx), ya(ny), ua(nu);
    for (int k = 0; k < nx; ++k) xa(k) = AD(x(k), nz, k);
    for (int k = 0; k < ny; ++k) ya(k) = AD(y(k), nz, nx + k);
    for (int k = 0; k < nu; ++k) ua(k) = AD(u(k), nz, nx + ny + k);
    ADVec fa, ga;
    dae.eval(xa, ya, ua, fa, ga);

    auto rows = [&](const ADVec& v) {
        Mat J = Mat::Zero(v.size(), nz);
        for (int r = 0; r < v.size(); ++r)
            if (v(r).derivatives().size() == nz) J.row(r) = v(r).derivatives().transpose();
        return J;
    };
    Mat Jf = rows(fa), Jg = rows(ga);
    DaeJacobians J;
    J.fx = Jf.leftCols(nx);
    J.fy = Jf.middleCols(nx, ny);
    J.fu = Jf.rightCols(nu);
    J.gx = Jg.leftCols(nx);
    J.gy = Jg.middleCols(nx, ny);
    J.gu = Jg.rightCols(nu);
    return J;
}

Equilibrium find_equilibrium(const MicrogridDae& dae, const Setpoints& sp)
{
    const auto& cfg = dae.config();
    const auto& net = cfg.net;
    const int N = net.bus_count;
    const int n = dae.n_dgu();
    const double SB = net.base_power;

    std::vector<BusSpec> buses(N);
    for (const auto& l : cfg.loads) buses[l.bus].S_load += cplx(l.P_L, l.Q_L) / SB;
    for (int i = 0; i < n; ++i) {
        const int b = dae.pu(i).bus;
        buses[b].type = BusType::pv;
        buses[b].V_set = sp.V_ref.empty() ? cfg.dgus[i].V_ref : sp.V_ref.at(i);
        buses[b].participation = 1.0 / n;
        // Each DGU covers its local load; the rest (remote loads and losses) is shared.
        buses[b].S_gen = cplx(buses[b].S_load.real() * std::pow(buses[b].V_set, cfg.load_voltage_exponent), 0.0);
    }
    PowerFlowOptions opt;
    opt.reference_bus = net.reference_bus;
    opt.distributed_slack = true;
    opt.load_exponent = cfg.load_voltage_exponent;
    PowerFlowResult pf;
    try {
        pf = solve_power_flow(net, buses, opt);
    } catch (const NumericalError& e) {
        throw NumericalError(std::string("equilibrium: ") + e.what());
    }

    Equilibrium eq;
    eq.bus_voltages = pf.V;
    eq.bus_angles = pf.theta;
    eq.residual_history = pf.residual_history;
    eq.loss_share = pf.lambda / n;
    eq.x0 = Vec::Zero(dae.nx());
    eq.y0 = Vec::Zero(dae.ny());
    eq.u0 = Vec::Zero(dae.nu());
    for (int b = 0; b < N; ++b) {
        eq.y0(dae.y_voltage(b)) = pf.V(b);
        eq.y0(dae.y_angle(b)) = pf.theta(b);
    }
    for (std::size_t l = 0; l < cfg.loads.size(); ++l) {
        eq.u0(dae.n_ref() + 2 * l) = cfg.loads[l].P_L / SB;
        eq.u0(dae.n_ref() + 2 * l + 1) = cfg.loads[l].Q_L / SB;
    }
    const double theta_ref = pf.theta(net.reference_bus);
    for (int i = 0; i < n; ++i) {
        const auto& p = dae.pu(i);
        const int b = p.bus;
        const cplx Vc = std::polar(pf.V(b), pf.theta(b));
        const double scale = std::pow(pf.V(b), cfg.load_voltage_exponent);
        const cplx Sd = pf.S_injection(b) + buses[b].S_load * scale;
        const cplx I = std::conj(Sd / Vc);
        const double id = I.real(), iq = I.imag();
        const double ud = Vc.real() + p.R * id - p.X * iq;
        const double uq = Vc.imag() + p.R * iq + p.X * id;
        const double md = ud / p.Vdc, mq = uq / p.Vdc;
        eq.x0.segment(dae.x_index(i, MicrogridDae::omega_m), 7) << 1.0, pf.V(b), pf.theta(b) - theta_ref, md / p.Ki1,
            mq / p.Ki2, id, iq;
        eq.y0.segment(dae.y_index(i, MicrogridDae::omega), 7) << 1.0, id, iq, md, mq, ud, uq;
        eq.u0(2 * i) = Sd.real();
        eq.u0(2 * i + 1) = Sd.imag();
    }

    Vec f, g;
    dae.eval(eq.x0, eq.y0, eq.u0, f, g);
    eq.f_residual = f.cwiseAbs().maxCoeff();
    eq.g_residual = g.cwiseAbs().maxCoeff();
    if (!(eq.f_residual <= 1e-8) || !(eq.g_residual <= 1e-8)) {
        std::string hist;
        for (double h : eq.residual_history) hist += fmt::format(" {:.3e}", h);
        throw NumericalError(fmt::format("equilibrium residual too large (f {:.3e}, g {:.3e}); power-flow history:{}",
                                         eq.f_residual, eq.g_residual, hist));
    }
    return eq;
}

} // namespace mgwm
