#pragma once

#include "mgwm/common.hpp"
#include "mgwm/droop.hpp"
#include "mgwm/grid_model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mgwm {

// What a detector designer knows about the microgrid: the discrete plant, every
// droop law, and the watermark statistics used by the other controllers.
struct DetectorPlant {
    StateSpace plant; // discrete, R and V already mapped
    std::vector<DroopGains> gains;
    double nu_e = 0.0;
    bool watermark_p = true;
    bool watermark_q = true;
};

// Plant with every controller except open_dgu closed. State is [x; sigma_j for j != i].
// Noise vector w = [xi (nx); gamma_j (2 per other DGU); e_j (2 per other DGU)] with covariance Sw.
struct Interconnection {
    Mat A, B_ref, B_L, B_w, C, D_L;
    Mat Sw;
    Mat V;
    Mat R() const { return B_w * Sw * B_w.transpose(); }
};

Interconnection build_interconnection(const DetectorPlant& dp, int open_dgu);

struct ReducedModel {
    Mat A, B_ref, B_L, C, D_L, R, V;
    Mat basis;         // full state -> reduced: x_m = basis^T-like map (reduced = T^+ x), kept for audits
    int full_dim = 0;
    bool whitened = false;
    double cb_min_singular = 0.0;
    int dim() const { return static_cast<int>(A.rows()); }
};

struct ReductionOptions {
    double rank_tol = 1e-8;
    // Re-express the reduced model in coordinates where the steady prior covariance is I.
    bool whiten = true;
};

// Orthonormal basis of the reachable subspace of (A, B) by a staircase of SVDs.
Mat reachable_basis(const Mat& A, const Mat& B, double rel_tol);

// Minimal realization of the interconnection. Noise columns count as inputs so the
// kept part is exactly what the Kalman filter needs.
ReducedModel minimal_realization(const Interconnection& ic, double rel_tol);

ReducedModel build_reduced_model(const DetectorPlant& dp, int open_dgu, const ReductionOptions& opt = {},
                                 std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------- Riccati

struct RiccatiOptions {
    double tolerance = 1e-10; // Frobenius residual of the fixed point
    long max_iterations = 2000000;
    // Doubling converges quadratically; plain iteration crawls when a marginal
    // mode is only weakly observable. Either way the result is polished and
    // checked with the plain map.
    bool doubling = true;
};

struct RiccatiSolution {
    Mat P, G, W;
    long iterations = 0;
    double residual = 0.0;
};

// Prior covariance of the steady Kalman predictor:
// P = A P A^T + R - A P C^T (C P C^T + V)^-1 C P A^T.
Mat riccati_map(const Mat& A, const Mat& C, const Mat& R, const Mat& V, const Mat& P);
double riccati_residual(const Mat& A, const Mat& C, const Mat& R, const Mat& V, const Mat& P);
RiccatiSolution solve_riccati(const Mat& A, const Mat& C, const Mat& R, const Mat& V, const RiccatiOptions& opt = {});
RiccatiSolution solve_riccati(const ReducedModel& rm, const RiccatiOptions& opt = {});

// ---------------------------------------------------------------- Kalman filter

class KalmanFilter {
public:
    KalmanFilter(const ReducedModel& rm, const RiccatiSolution& rs);
    // Measurement update with z[k]; returns x[k|k].
    const Vec& update(const Vec& z, const Vec& u_L);
    // Time update with the applied command u[k] = h[k] + e[k].
    const Vec& predict(const Vec& u_ref, const Vec& u_L);
    const Vec& filtered() const { return xf_; }
    const Vec& predicted() const { return xp_; }
    const Vec& innovation() const { return nu_; }
    void reset();

private:
    const ReducedModel* rm_;
    Mat G_, IGC_;
    Vec xp_, xf_, nu_, zc_;
};

// ---------------------------------------------------------------- indicators

struct Thresholds {
    double chi1 = 0.0;
    double chi2 = 0.0;
};

struct AlarmDecision {
    bool alarm = false;
    bool chi1_fired = false;
    bool chi2_fired = false;
};

AlarmDecision threshold_test(double chi1, double chi2, const Thresholds& t);

// Sliding sums of d d^T and e d^T over the last T0 samples.
class IndicatorWindow {
public:
    IndicatorWindow(int state_dim, int input_dim, int T0, int stride, Mat GWGt);
    // Returns true when a window ends on this sample (full and on the stride grid).
    bool push(const Vec& d, const Vec& e);
    bool full() const { return count_ >= T0_; }
    Mat M() const;
    Mat N() const;
    double chi1() const;
    double chi2() const;
    // Recomputed from the stored samples, for consistency checks.
    Mat batch_M() const;
    Mat batch_N() const;
    int T0() const { return T0_; }
    long count() const { return count_; }

private:
    void rebase();
    int T0_, stride_;
    Mat GWGt_;
    Mat D_, E_; // ring buffers, one column per sample
    Mat Sdd_, Sed_;
    long count_ = 0;
    long since_rebase_ = 0;
};

struct WindowRecord {
    int dgu = 0;
    long k_end = 0;
    double t_end = 0.0;
    double chi1 = 0.0;
    double chi2 = 0.0;
    bool alarm = false;
    bool chi1_fired = false;
    bool chi2_fired = false;
    bool confirmed = false;
};

struct DetectorConfig {
    int T0 = 240;    // samples
    int stride = 1;  // samples between reported windows
    int confirm = 2; // consecutive alarming windows for a confirmed attack
    Thresholds thresholds{};
};

// One watermark detector attached to one droop controller.
class Detector {
public:
    Detector(int dgu, const ReducedModel& rm, const RiccatiSolution& rs, const DetectorConfig& cfg, double Ts);
    // Feed step k. h and e are the droop output and watermark applied at step k.
    std::optional<WindowRecord> step(long k, const Vec2& z, const Vec2& h, const Vec2& e, const Vec& u_L);
    const KalmanFilter& kalman() const { return kf_; }
    const IndicatorWindow& window() const { return win_; }
    const Mat& GWGt() const { return GWGt_; }
    void set_thresholds(const Thresholds& t) { cfg_.thresholds = t; }

private:
    int dgu_;
    const ReducedModel* rm_;
    DetectorConfig cfg_;
    double Ts_;
    KalmanFilter kf_;
    Mat GWGt_;
    IndicatorWindow win_;
    Vec xf_prev_;
    Vec2 h_prev_ = Vec2::Zero(), e_prev_ = Vec2::Zero();
    Vec uL_prev_;
    bool have_prev_ = false;
    int streak_ = 0;
};

// ---------------------------------------------------------------- calibration

struct CalibrationResult {
    Thresholds thresholds;
    double quantile_chi1 = 0.0;
    double quantile_chi2 = 0.0;
    double quantile = 0.999;
    double safety_factor = 1.5;
    std::size_t windows = 0;
    std::size_t runs = 0;
};

// Linear-interpolated empirical quantile.
double empirical_quantile(std::vector<double> v, double q);

// chi* = safety_factor * quantile over every honest window of every run.
CalibrationResult calibrate_thresholds(const std::vector<std::vector<WindowRecord>>& honest_runs, double quantile = 0.999,
                                       double safety_factor = 1.5);

} // namespace mgwm
