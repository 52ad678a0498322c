#pragma once

#include "mgwm/common.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <optional>
#include <string>
#include <vector>

namespace mgwm {

// Series branch admittance in per-unit (y = G + jB, inductive lines have B < 0).
struct Branch {
    int from = 0;
    int to = 0;
    double G = 0.0;
    double B = 0.0;
};

// Bus indices are zero-based inside the library; model files use one-based ids.
struct NetworkModel {
    int bus_count = 0;
    std::vector<std::string> bus_names;
    std::vector<Branch> branches;
    std::vector<int> dgu_buses;
    std::vector<int> load_buses;
    int reference_bus = 0;
    double nominal_voltage = 220.0;   // V, per-unit voltage base
    double nominal_frequency = 377.0; // rad/s
    double base_power = 1000.0;       // VA, per-unit power base

    double base_impedance() const { return nominal_voltage * nominal_voltage / base_power; }
    double base_current() const { return base_power / nominal_voltage; }

    CMat admittance() const;
    void validate() const;
};

struct DguModel {
    int bus = 0;
    double T_omega = 0.02;
    double T_V = 0.02;
    double T_theta = 0.02;
    double alpha_p = 0.0, beta_p = 0.0, alpha_q = 0.0, beta_q = 0.0;
    double K_p1 = 0.0, K_i1 = 0.0, K_p2 = 0.0, K_i2 = 0.0;
    double V_dc = 400.0; // V
    double R_in = 0.0;   // ohm
    double L_in = 0.0;   // H
    double V_ref = 1.0;  // pu
    double omega_ref = 1.0;
    // P*_ref, Q*_ref in W and var. Informational; the equilibrium decides them.
    double steady_P = 0.0;
    double steady_Q = 0.0;

    void validate() const;
};

struct LoadModel {
    int bus = 0;
    double P_L = 0.0; // W
    double Q_L = 0.0; // var
};

// Everything a model definition file carries.
struct MicrogridConfig {
    std::string name;
    NetworkModel net;
    std::vector<DguModel> dgus;
    std::vector<LoadModel> loads;
    // Load demand scales as S_L * V^k. k = 2 is constant impedance, k = 0 constant power.
    double load_voltage_exponent = 2.0;
    double process_cov = 1e-8;     // R' = r I
    double measurement_cov = 1e-8; // V' = v I

    void validate() const;
};

// ---------------------------------------------------------------- power flow

enum class BusType { slack, pv, pq };

struct BusSpec {
    BusType type = BusType::pq;
    cplx S_gen{0.0, 0.0};  // pu, fixed generation (P used for pv buses)
    cplx S_load{0.0, 0.0}; // pu at V = 1
    double V_set = 1.0;    // slack and pv buses
    double participation = 0.0; // share of the distributed slack
};

struct PowerFlowOptions {
    int reference_bus = 0;
    double tolerance = 1e-10;
    int max_iterations = 50;
    double load_exponent = 0.0;
    // When set, the real-power mismatch is absorbed by an extra unknown lambda
    // spread over buses according to BusSpec::participation.
    bool distributed_slack = false;
};

struct PowerFlowResult {
    Vec V;
    Vec theta;
    CVec S_injection; // network injection V conj(Y V)
    double lambda = 0.0;
    int iterations = 0;
    double residual = 0.0;
    std::vector<double> residual_history;
};

PowerFlowResult solve_power_flow(const NetworkModel& net, const std::vector<BusSpec>& buses,
                                 const PowerFlowOptions& opt);

// Reference bus is the slack at 1.0 pu, every other bus is PQ with the given injection.
PowerFlowResult solve_power_flow(const NetworkModel& net, const CVec& injections);

// Largest |S_spec - V conj(YV)| over all buses, with loads evaluated at the solution voltage.
double power_flow_residual(const NetworkModel& net, const std::vector<BusSpec>& buses,
                           const PowerFlowOptions& opt, const PowerFlowResult& r);

// ---------------------------------------------------------------- DAE

using AD = Eigen::AutoDiffScalar<Vec>;
using ADVec = Eigen::Matrix<AD, Eigen::Dynamic, 1>;

struct OutputIndex {
    bool algebraic = true;
    int index = 0;
};

// x' = f(x, y, u), 0 = g(x, y, u). Inputs are ordered [u_ref; u_L].
class DaeSystem {
public:
    virtual ~DaeSystem() = default;
    virtual int nx() const = 0;
    virtual int ny() const = 0;
    virtual int n_ref() const = 0;
    virtual int n_load() const = 0;
    int nu() const { return n_ref() + n_load(); }
    virtual std::vector<OutputIndex> outputs() const = 0;
    virtual void eval(const Vec& x, const Vec& y, const Vec& u, Vec& f, Vec& g) const = 0;
    virtual void eval(const ADVec& x, const ADVec& y, const ADVec& u, ADVec& f, ADVec& g) const = 0;
};

struct DaeJacobians {
    Mat fx, fy, fu, gx, gy, gu;
};

DaeJacobians dae_jacobians(const DaeSystem& dae, const Vec& x, const Vec& y, const Vec& u);

// Network + DGU model in per-unit.
// States per DGU (DGU-major): omega_m, V_m, theta_m, gamma_d, gamma_q, i_d, i_q.
// Algebraic vector: V[bus], theta[bus], then per DGU: omega, i_dref, i_qref, m_d, m_q, u_d, u_q.
// Inputs: P_ref, Q_ref per DGU, then P_L, Q_L per load, all per-unit.
class MicrogridDae final : public DaeSystem {
public:
    static constexpr int kStatesPerDgu = 7;
    static constexpr int kAlgPerDgu = 7;
    enum State { omega_m = 0, V_m, theta_m, gamma_d, gamma_q, i_d, i_q };
    enum Alg { omega = 0, i_dref, i_qref, m_d, m_q, u_d, u_q };

    explicit MicrogridDae(MicrogridConfig cfg);

    int nx() const override { return kStatesPerDgu * n_dgu(); }
    int ny() const override { return 2 * n_bus() + kAlgPerDgu * n_dgu(); }
    int n_ref() const override { return 2 * n_dgu(); }
    int n_load() const override { return 2 * static_cast<int>(cfg_.loads.size()); }
    std::vector<OutputIndex> outputs() const override;
    void eval(const Vec& x, const Vec& y, const Vec& u, Vec& f, Vec& g) const override;
    void eval(const ADVec& x, const ADVec& y, const ADVec& u, ADVec& f, ADVec& g) const override;

    int n_dgu() const { return static_cast<int>(cfg_.dgus.size()); }
    int n_bus() const { return cfg_.net.bus_count; }
    int x_index(int dgu, State s) const { return kStatesPerDgu * dgu + s; }
    int y_voltage(int bus) const { return bus; }
    int y_angle(int bus) const { return n_bus() + bus; }
    int y_index(int dgu, Alg a) const { return 2 * n_bus() + kAlgPerDgu * dgu + a; }

    const MicrogridConfig& config() const { return cfg_; }
    const CMat& admittance() const { return Y_; }
    std::vector<std::string> state_names() const;

    // Per-unit electrical parameters of one DGU.
    struct PuDgu {
        int bus;
        double T_omega, T_V, T_theta;
        double Kp1, Ki1, Kp2, Ki2; // acting on per-unit current, producing modulation
        double Vdc;                // pu
        double R, X;               // pu at nominal frequency
    };
    const PuDgu& pu(int dgu) const { return pu_[dgu]; }

private:
    template <class S>
    void eval_impl(const Eigen::Matrix<S, Eigen::Dynamic, 1>& x, const Eigen::Matrix<S, Eigen::Dynamic, 1>& y,
                   const Eigen::Matrix<S, Eigen::Dynamic, 1>& u, Eigen::Matrix<S, Eigen::Dynamic, 1>& f,
                   Eigen::Matrix<S, Eigen::Dynamic, 1>& g) const;

    MicrogridConfig cfg_;
    CMat Y_;
    std::vector<PuDgu> pu_;
};

struct Equilibrium {
    Vec bus_voltages;
    Vec bus_angles;
    Vec x0, y0, u0;
    double f_residual = 0.0;
    double g_residual = 0.0;
    double loss_share = 0.0; // pu of real power each DGU picks up beyond its local load
    std::vector<double> residual_history;
};

struct Setpoints {
    // Empty means "use each DGU's V_ref".
    std::vector<double> V_ref;
};

// Solves the power flow with DGU buses voltage-controlled and losses shared evenly,
// then reconstructs every state and algebraic variable. u0 carries P*_ref, Q*_ref.
Equilibrium find_equilibrium(const MicrogridDae& dae, const Setpoints& sp = {});

// ---------------------------------------------------------------- state space

struct StateSpace {
    bool discrete = false;
    Mat A, B_ref, B_L, C, D_ref, D_L;
    Mat R; // process covariance
    Mat V; // measurement covariance
    double Ts = 0.0;

    int nx() const { return static_cast<int>(A.rows()); }
    int n_ref() const { return static_cast<int>(B_ref.cols()); }
    int n_load() const { return static_cast<int>(B_L.cols()); }
    int ny() const { return static_cast<int>(C.rows()); }
    void validate() const;
};

// Implicit-function elimination of y. R' = r I, V' = v I on the output rows.
StateSpace linearize(const DaeSystem& dae, const Vec& x0, const Vec& y0, const Vec& u0, double process_cov = 1e-8,
                     double measurement_cov = 1e-8);

enum class Discretization { zoh, tustin };

// ZOH via the augmented matrix exponential. Tustin keeps C and D and maps
// A_d = (I - A Ts/2)^-1 (I + A Ts/2), B_d = (I - A Ts/2)^-1 B Ts.
// Process covariance becomes R' Ts, measurement covariance is unchanged.
StateSpace discretize(const StateSpace& c, double Ts, Discretization method = Discretization::zoh);

// exp(A t) and its integral times B in one shot.
void zoh_pair(const Mat& A, const Mat& B, double Ts, Mat& Ad, Mat& Bd);

} // namespace mgwm
