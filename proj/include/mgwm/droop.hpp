#pragma once

#include "mgwm/common.hpp"
#include "mgwm/grid_model.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace mgwm {

struct DroopGains {
    double alpha_p = 0.0, beta_p = 0.0, alpha_q = 0.0, beta_q = 0.0;
};

DroopGains gains_of(const DguModel& d);

// Discrete PI droop:
//   dP[k] = alpha_p dw[k] + beta_p Ts sum_{j<=k} dw[j]
//   dQ[k] = alpha_q dv[k] + beta_q Ts sum_{j<=k} dv[j]
class DroopController {
public:
    DroopController(DroopGains g, double Ts);
    Vec2 step(double dw, double dv);
    void reset() { sum_.setZero(); }
    const Vec2& sums() const { return sum_; }
    const DroopGains& gains() const { return g_; }
    double Ts() const { return Ts_; }

private:
    DroopGains g_;
    double Ts_;
    Vec2 sum_ = Vec2::Zero();
};

// i.i.d. N(0, nu_e) watermark on the enabled command channels.
class WatermarkSource {
public:
    WatermarkSource(double nu_e, std::uint64_t seed, bool on_p = true, bool on_q = true, bool keep_log = true);
    Vec2 draw();
    const std::vector<Vec2>& log() const { return log_; }
    double variance() const { return nu_; }

private:
    double nu_;
    bool on_p_, on_q_, keep_log_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> n01_{0.0, 1.0};
    std::vector<Vec2> log_;
};

Vec2 inject_watermark(const Vec2& cmd, WatermarkSource& wm);

// Linear SISO filter sitting between one sensor channel and its controller:
// xi+ = A xi + B y, z = C xi + D y. Channel numbering is 2*dgu + (0 for omega, 1 for V).
struct ChannelFilter {
    int channel = 0;
    Mat A, B, C;
    double D = 1.0;
};

// One-step map of [x; droop sums of the previous step; filter states] for the
// discrete plant with every droop controller closed. Loads and noise are left out.
Mat closed_loop_matrix(const StateSpace& plant, const std::vector<DroopGains>& gains,
                       const std::vector<ChannelFilter>& filters = {});

// Spectral radius after discarding eigenvalues within tol of exactly 1.
struct SpectrumSummary {
    double radius_excluding_unit = 0.0;
    int unit_count = 0;
    Eigen::VectorXcd eigenvalues;
};
SpectrumSummary summarize_spectrum(const Mat& A, double unit_tol = 1e-7);

} // namespace mgwm
