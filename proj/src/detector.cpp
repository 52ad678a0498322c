#include "mgwm/detector.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace mgwm {

// ---------------------------------------------------------------- interconnection

Interconnection build_interconnection(const DetectorPlant& dp, int i)
{
    const StateSpace& p = dp.plant;
    if (!p.discrete) throw ConfigError("detector needs a discrete plant");
    const int n = p.nx();
    const int nd = static_cast<int>(dp.gains.size());
    if (i < 0 || i >= nd) throw ConfigError(fmt::format("no DGU {} to open", i + 1));
    if (p.n_ref() != 2 * nd || p.ny() != 2 * nd) throw ConfigError("plant channels do not match the droop laws");
    const int nl = p.n_load();
    std::vector<int> others;
    for (int j = 0; j < nd; ++j)
        if (j != i) others.push_back(j);
    const int no = static_cast<int>(others.size());
    const int N = n + 2 * no;
    const int nw = n + 4 * no;

    Interconnection ic;
    ic.A = Mat::Zero(N, N);
    ic.B_ref = Mat::Zero(N, 2);
    ic.B_L = Mat::Zero(N, nl);
    ic.B_w = Mat::Zero(N, nw);
    ic.C = Mat::Zero(2, N);
    ic.Sw = Mat::Zero(nw, nw);

    ic.A.topLeftCorner(n, n) = p.A;
    ic.B_ref.topRows(n) = p.B_ref.middleCols(2 * i, 2);
    ic.B_L.topRows(n) = p.B_L;
    ic.B_w.block(0, 0, n, n) = Mat::Identity(n, n);
    ic.Sw.block(0, 0, n, n) = p.R;

    const double wp = dp.watermark_p ? dp.nu_e : 0.0;
    const double wq = dp.watermark_q ? dp.nu_e : 0.0;
    for (int c = 0; c < no; ++c) {
        const int j = others[c];
        const double Ts = p.Ts;
        const Eigen::Vector2d k1(dp.gains[j].alpha_p + dp.gains[j].beta_p * Ts, dp.gains[j].alpha_q + dp.gains[j].beta_q * Ts);
        const Eigen::Vector2d kb(dp.gains[j].beta_p * Ts, dp.gains[j].beta_q * Ts);
        const Mat Bj = p.B_ref.middleCols(2 * j, 2);
        const Mat Cj = p.C.middleRows(2 * j, 2);
        const Mat DLj = p.D_L.middleRows(2 * j, 2);
        const Mat BK = Bj * k1.asDiagonal();
        const int s = n + 2 * c;
        ic.A.topLeftCorner(n, n) += BK * Cj;
        ic.A.block(0, s, n, 2) = Bj * kb.asDiagonal();
        ic.A.block(s, 0, 2, n) = Cj;
        ic.A.block(s, s, 2, 2) = Mat::Identity(2, 2);
        ic.B_L.topRows(n) += BK * DLj;
        ic.B_L.middleRows(s, 2) = DLj;
        // Sensor noise of DGU j drives both its integrator and its command.
        const int gcol = n + 2 * c;
        ic.B_w.block(0, gcol, n, 2) = BK;
        ic.B_w.block(s, gcol, 2, 2) = Mat::Identity(2, 2);
        ic.Sw.block(gcol, gcol, 2, 2) = p.V.block(2 * j, 2 * j, 2, 2);
        // Watermark of DGU j is process noise for DGU i.
        const int ecol = n + 2 * no + 2 * c;
        ic.B_w.block(0, ecol, n, 2) = Bj;
        ic.Sw(ecol, ecol) = wp;
        ic.Sw(ecol + 1, ecol + 1) = wq;
    }
    ic.C.leftCols(n) = p.C.middleRows(2 * i, 2);
    ic.D_L = p.D_L.middleRows(2 * i, 2);
    ic.V = p.V.block(2 * i, 2 * i, 2, 2);
    return ic;
}

// ---------------------------------------------------------------- minimal realization

Mat reachable_basis(const Mat& A, const Mat& B, double rel_tol)
{
    const int n = static_cast<int>(A.rows());
    Mat Q(n, 0);
    Mat X = B;
    // Orthonormal staircase. The first stage is ranked against the largest singular
    // value of B, later stages (A times an orthonormal block) against ||A||_2.
    const double normA = n ? Eigen::JacobiSVD<Mat>(A).singularValues()(0) : 0.0;
    for (int stage = 0; stage <= n && Q.cols() < n; ++stage) {
        if (X.cols() == 0) break;
        if (Q.cols()) {
            X -= Q * (Q.transpose() * X);
            X -= Q * (Q.transpose() * X);
        }
        Eigen::JacobiSVD<Mat> svd(X, Eigen::ComputeThinU);
        const Vec& sv = svd.singularValues();
        const double ref = stage == 0 ? (sv.size() ? sv(0) : 0.0) : normA;
        if (!(ref > 0.0)) break;
        int r = 0;
        while (r < sv.size() && sv(r) > rel_tol * ref) ++r;
        r = std::min<int>(r, n - static_cast<int>(Q.cols()));
        if (r == 0) break;
        const Mat Qn = svd.matrixU().leftCols(r);
        Mat Qa(n, Q.cols() + r);
        Qa << Q, Qn;
        Q.swap(Qa);
        X = A * Qn;
    }
    return Q;
}

static Mat psd_sqrt(const Mat& S)
{
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()));
    Vec l = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * l.asDiagonal() * es.eigenvectors().transpose();
}

ReducedModel minimal_realization(const Interconnection& ic, double rel_tol)
{
    const int N = static_cast<int>(ic.A.rows());
    const Mat Bw = ic.B_w * psd_sqrt(ic.Sw);
    Mat Ball(N, ic.B_ref.cols() + ic.B_L.cols() + Bw.cols());
    Ball << ic.B_ref, ic.B_L, Bw;
    const Mat Tc = reachable_basis(ic.A, Ball, rel_tol);
    const Mat Ac = Tc.transpose() * ic.A * Tc;
    const Mat Cc = ic.C * Tc;
    const Mat To = reachable_basis(Ac.transpose(), Cc.transpose(), rel_tol);
    const Mat T = Tc * To;

    ReducedModel rm;
    rm.full_dim = N;
    rm.basis = T;
    rm.A = T.transpose() * ic.A * T;
    rm.B_ref = T.transpose() * ic.B_ref;
    rm.B_L = T.transpose() * ic.B_L;
    rm.C = ic.C * T;
    rm.D_L = ic.D_L;
    const Mat Rf = ic.R();
    rm.R = T.transpose() * Rf * T;
    rm.R = 0.5 * (rm.R + rm.R.transpose());
    rm.V = ic.V;
    return rm;
}

ReducedModel build_reduced_model(const DetectorPlant& dp, int open_dgu, const ReductionOptions& opt,
                                 std::vector<std::string>* warnings)
{
    const Interconnection ic = build_interconnection(dp, open_dgu);
    ReducedModel rm = minimal_realization(ic, opt.rank_tol);
    if (rm.dim() == 0) throw NumericalError(fmt::format("DGU {}: reduced model is empty", open_dgu + 1));
    if (warnings && rm.dim() < 0.1 * rm.full_dim)
        warnings->push_back(fmt::format("DGU {}: minimal realization kept {} of {} states", open_dgu + 1, rm.dim(),
                                        rm.full_dim));

    Eigen::JacobiSVD<Mat> cb(rm.C * rm.B_ref);
    const Vec& s = cb.singularValues();
    rm.cb_min_singular = s(s.size() - 1);
    if (!(s(0) > 0.0) || s(s.size() - 1) <= 1e-12 * s(0))
        throw NumericalError(fmt::format("DGU {}: C_m B_refm is rank deficient (singular values {:.3e}, {:.3e})",
                                         open_dgu + 1, s(0), s(s.size() - 1)));

    Eigen::SelfAdjointEigenSolver<Mat> ev(rm.V);
    if (ev.eigenvalues().minCoeff() <= 0.0) throw ConfigError("measurement covariance V must be positive definite");

    if (opt.whiten) {
        const RiccatiSolution rs = solve_riccati(rm);
        Eigen::LLT<Mat> llt(rs.P);
        if (llt.info() != Eigen::Success) throw NumericalError("Riccati solution is not positive definite");
        const Mat L = llt.matrixL();
        const Mat Li = L.triangularView<Eigen::Lower>().solve(Mat::Identity(rm.dim(), rm.dim()));
        rm.A = Li * rm.A * L;
        rm.B_ref = Li * rm.B_ref;
        rm.B_L = Li * rm.B_L;
        rm.C = rm.C * L;
        rm.R = Li * rm.R * Li.transpose();
        rm.R = 0.5 * (rm.R + rm.R.transpose());
        rm.basis = rm.basis * Li.transpose();
        rm.whitened = true;
    }
    return rm;
}

// ---------------------------------------------------------------- Riccati

Mat riccati_map(const Mat& A, const Mat& C, const Mat& R, const Mat& V, const Mat& P)
{
    const Mat W = C * P * C.transpose() + V;
    const Mat CPA = C * P * A.transpose();
    Mat Pn = A * P * A.transpose() + R - CPA.transpose() * W.ldlt().solve(CPA);
    return 0.5 * (Pn + Pn.transpose());
}

double riccati_residual(const Mat& A, const Mat& C, const Mat& R, const Mat& V, const Mat& P)
{
    return (riccati_map(A, C, R, V, P) - P).norm();
}

static Mat doubling(const Mat& A, const Mat& C, const Mat& R, const Mat& V, long max_it, long& its)
{
    // Structure-preserving doubling on the dual (control-form) equation.
    const int n = static_cast<int>(A.rows());
    const Mat I = Mat::Identity(n, n);
    Mat Ak = A.transpose();
    Mat Gk = C.transpose() * V.ldlt().solve(C);
    Mat Hk = R;
    for (its = 0; its < max_it; ++its) {
        Eigen::PartialPivLU<Mat> lu(I + Gk * Hk);
        const Mat W1 = lu.solve(Ak);
        const Mat W2 = lu.solve(Gk);
        const Mat Hn = Hk + Ak.transpose() * Hk * W1;
        Gk = Gk + Ak * W2 * Ak.transpose();
        Ak = Ak * W1;
        const double d = (Hn - Hk).norm();
        Hk = 0.5 * (Hn + Hn.transpose());
        if (d <= 1e-15 * Hk.norm()) break;
    }
    return Hk;
}

RiccatiSolution solve_riccati(const Mat& A, const Mat& C, const Mat& R, const Mat& V, const RiccatiOptions& opt)
{
    RiccatiSolution rs;
    Mat P = 0.5 * (R + R.transpose());
    if (opt.doubling) {
        P = doubling(A, C, R, V, 100, rs.iterations);
    } else {
        double best = std::numeric_limits<double>::infinity();
        long stall = 0;
        for (rs.iterations = 0; rs.iterations < opt.max_iterations; ++rs.iterations) {
            Mat Pn = riccati_map(A, C, R, V, P);
            const double d = (Pn - P).norm();
            P.swap(Pn);
            const double scale = std::max(P.norm(), std::numeric_limits<double>::min());
            if (d <= 1e-15 * scale) break;
            // Stop once the update stops shrinking at the rounding floor.
            if (d < best) {
                best = d;
                stall = 0;
            } else if (d <= 1e-11 * scale && ++stall > 50) {
                break;
            }
        }
    }
    // Polish a few steps so the residual reflects the iteration actually used.
    for (int k = 0; k < 3; ++k) P = riccati_map(A, C, R, V, P);
    rs.P = P;
    rs.residual = riccati_residual(A, C, R, V, P);
    const double scale = std::max(1.0, P.norm());
    if (!(rs.residual <= opt.tolerance * scale))
        throw NumericalError(fmt::format("Riccati iteration did not converge: residual {:.3e} after {} iterations",
                                         rs.residual, rs.iterations));
    Eigen::LLT<Mat> llt(P);
    if (llt.info() != Eigen::Success) throw NumericalError("Riccati solution is indefinite");
    rs.W = C * P * C.transpose() + V;
    rs.W = 0.5 * (rs.W + rs.W.transpose());
    rs.G = P * C.transpose() * rs.W.inverse();
    return rs;
}

RiccatiSolution solve_riccati(const ReducedModel& rm, const RiccatiOptions& opt)
{
    return solve_riccati(rm.A, rm.C, rm.R, rm.V, opt);
}

// ---------------------------------------------------------------- Kalman

KalmanFilter::KalmanFilter(const ReducedModel& rm, const RiccatiSolution& rs) : rm_(&rm), G_(rs.G)
{
    IGC_ = Mat::Identity(rm.dim(), rm.dim()) - G_ * rm.C;
    reset();
}

void KalmanFilter::reset()
{
    xp_ = Vec::Zero(rm_->dim());
    xf_ = Vec::Zero(rm_->dim());
    nu_ = Vec::Zero(rm_->C.rows());
}

const Vec& KalmanFilter::update(const Vec& z, const Vec& u_L)
{
    zc_ = z;
    if (rm_->D_L.cols()) zc_ -= rm_->D_L * u_L;
    nu_ = zc_ - rm_->C * xp_;
    xf_ = IGC_ * xp_ + G_ * zc_;
    return xf_;
}

const Vec& KalmanFilter::predict(const Vec& u_ref, const Vec& u_L)
{
    xp_ = rm_->A * xf_ + rm_->B_ref * u_ref;
    if (rm_->B_L.cols()) xp_ += rm_->B_L * u_L;
    return xp_;
}

// ---------------------------------------------------------------- indicators

AlarmDecision threshold_test(double chi1, double chi2, const Thresholds& t)
{
    AlarmDecision a;
    a.chi1_fired = chi1 >= t.chi1;
    a.chi2_fired = chi2 >= t.chi2;
    a.alarm = a.chi1_fired || a.chi2_fired;
    return a;
}

IndicatorWindow::IndicatorWindow(int r, int m, int T0, int stride, Mat GWGt)
    : T0_(T0), stride_(stride), GWGt_(0.5 * (GWGt + GWGt.transpose()))
{
    if (T0 <= 0) throw ConfigError("window length must be positive");
    if (stride <= 0) throw ConfigError("window stride must be positive");
    D_ = Mat::Zero(r, T0);
    E_ = Mat::Zero(m, T0);
    Sdd_ = Mat::Zero(r, r);
    Sed_ = Mat::Zero(m, r);
}

bool IndicatorWindow::push(const Vec& d, const Vec& e)
{
    const long slot = count_ % T0_;
    if (count_ >= T0_) {
        const auto dold = D_.col(slot);
        Sdd_.noalias() -= dold * dold.transpose();
        Sed_.noalias() -= E_.col(slot) * dold.transpose();
    }
    D_.col(slot) = d;
    E_.col(slot) = e;
    Sdd_.noalias() += d * d.transpose();
    Sed_.noalias() += e * d.transpose();
    ++count_;
    if (++since_rebase_ >= T0_ && full()) rebase();
    return full() && (count_ - T0_) % stride_ == 0;
}

void IndicatorWindow::rebase()
{
    Sdd_.noalias() = D_ * D_.transpose();
    Sed_.noalias() = E_ * D_.transpose();
    since_rebase_ = 0;
}

Mat IndicatorWindow::M() const
{
    if (!full()) throw Error("indicator window is not full");
    return Sdd_ / T0_ - GWGt_;
}

Mat IndicatorWindow::N() const
{
    if (!full()) throw Error("indicator window is not full");
    return Sed_ / T0_;
}

double IndicatorWindow::chi1() const { return std::abs(M().trace()); }
double IndicatorWindow::chi2() const { return N().cwiseAbs().sum(); }

Mat IndicatorWindow::batch_M() const
{
    if (!full()) throw Error("indicator window is not full");
    Mat S = Mat::Zero(D_.rows(), D_.rows());
    for (int c = 0; c < T0_; ++c) S += D_.col(c) * D_.col(c).transpose();
    return S / T0_ - GWGt_;
}

Mat IndicatorWindow::batch_N() const
{
    if (!full()) throw Error("indicator window is not full");
    Mat S = Mat::Zero(E_.rows(), D_.rows());
    for (int c = 0; c < T0_; ++c) S += E_.col(c) * D_.col(c).transpose();
    return S / T0_;
}

// ---------------------------------------------------------------- detector

static Mat gwg(const RiccatiSolution& rs)
{
    Mat X = rs.G * rs.W * rs.G.transpose();
    return 0.5 * (X + X.transpose());
}

Detector::Detector(int dgu, const ReducedModel& rm, const RiccatiSolution& rs, const DetectorConfig& cfg, double Ts)
    : dgu_(dgu), rm_(&rm), cfg_(cfg), Ts_(Ts), kf_(rm, rs), GWGt_(gwg(rs)),
      win_(rm.dim(), 2, cfg.T0, cfg.stride, GWGt_)
{
    if (cfg.confirm <= 0) throw ConfigError("confirmation count must be positive");
    xf_prev_ = Vec::Zero(rm.dim());
    uL_prev_ = Vec::Zero(rm.B_L.cols());
}

std::optional<WindowRecord> Detector::step(long k, const Vec2& z, const Vec2& h, const Vec2& e, const Vec& u_L)
{
    const Vec& xf = kf_.update(z, u_L);
    bool ready = false;
    if (have_prev_) {
        Vec d = xf - rm_->A * xf_prev_ - rm_->B_ref * h_prev_ - rm_->B_ref * e_prev_;
        if (rm_->B_L.cols()) d -= rm_->B_L * uL_prev_;
        ready = win_.push(d, e_prev_);
    }
    xf_prev_ = xf;
    kf_.predict(h + e, u_L);
    h_prev_ = h;
    e_prev_ = e;
    uL_prev_ = u_L;
    have_prev_ = true;
    if (!ready) return std::nullopt;

    WindowRecord r;
    r.dgu = dgu_;
    r.k_end = k;
    r.t_end = k * Ts_;
    r.chi1 = win_.chi1();
    r.chi2 = win_.chi2();
    const AlarmDecision a = threshold_test(r.chi1, r.chi2, cfg_.thresholds);
    r.alarm = a.alarm;
    r.chi1_fired = a.chi1_fired;
    r.chi2_fired = a.chi2_fired;
    streak_ = a.alarm ? streak_ + 1 : 0;
    r.confirmed = streak_ >= cfg_.confirm;
    return r;
}

// ---------------------------------------------------------------- calibration

double empirical_quantile(std::vector<double> v, double q)
{
    if (v.empty()) throw Error("quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

CalibrationResult calibrate_thresholds(const std::vector<std::vector<WindowRecord>>& runs, double quantile,
                                       double safety_factor)
{
    if (!(quantile > 0.0 && quantile < 1.0)) throw ConfigError("calibration quantile must lie in (0, 1)");
    if (!(safety_factor > 0.0)) throw ConfigError("calibration safety factor must be positive");
    if (runs.size() < 20) throw ConfigError(fmt::format("calibration needs at least 20 honest runs, got {}", runs.size()));
    std::vector<double> c1, c2;
    for (const auto& run : runs)
        for (const auto& w : run) {
            c1.push_back(w.chi1);
            c2.push_back(w.chi2);
        }
    const auto need = static_cast<std::size_t>(std::ceil(1.0 / (1.0 - quantile)));
    if (c1.size() < need) {
        const double per_run = runs.empty() ? 0.0 : static_cast<double>(c1.size()) / static_cast<double>(runs.size());
        const std::size_t min_runs =
            per_run > 0 ? static_cast<std::size_t>(std::ceil(static_cast<double>(need) / per_run)) : need;
        throw ConfigError(fmt::format("quantile {} needs at least {} windows; {} runs gave {}, use at least {} runs",
                                      quantile, need, runs.size(), c1.size(), std::max<std::size_t>(min_runs, 20)));
    }
    CalibrationResult r;
    r.quantile = quantile;
    r.safety_factor = safety_factor;
    r.windows = c1.size();
    r.runs = runs.size();
    r.quantile_chi1 = empirical_quantile(c1, quantile);
    r.quantile_chi2 = empirical_quantile(c2, quantile);
    r.thresholds = {safety_factor * r.quantile_chi1, safety_factor * r.quantile_chi2};
    return r;
}

} // namespace mgwm
