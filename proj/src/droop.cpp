#include "mgwm/droop.hpp"

#include <fmt/format.h>

namespace mgwm {

DroopGains gains_of(const DguModel& d) { return {d.alpha_p, d.beta_p, d.alpha_q, d.beta_q}; }

DroopController::DroopController(DroopGains g, double Ts) : g_(g), Ts_(Ts)
{
    if (!(Ts > 0)) throw ConfigError("droop sample period must be positive");
}

Vec2 DroopController::step(double dw, double dv)
{
    sum_(0) += dw;
    sum_(1) += dv;
    return {g_.alpha_p * dw + g_.beta_p * Ts_ * sum_(0), g_.alpha_q * dv + g_.beta_q * Ts_ * sum_(1)};
}

WatermarkSource::WatermarkSource(double nu_e, std::uint64_t seed, bool on_p, bool on_q, bool keep_log)
    : nu_(nu_e), on_p_(on_p), on_q_(on_q), keep_log_(keep_log), rng_(seed)
{
    if (!(nu_e >= 0)) throw ConfigError("watermark variance must be nonnegative");
}

Vec2 WatermarkSource::draw()
{
    const double s = std::sqrt(nu_);
    // Both normals are always drawn so switching a channel off does not shift the other.
    const double a = n01_(rng_), b = n01_(rng_);
    Vec2 e(on_p_ ? s * a : 0.0, on_q_ ? s * b : 0.0);
    if (keep_log_) log_.push_back(e);
    return e;
}

Vec2 inject_watermark(const Vec2& cmd, WatermarkSource& wm) { return cmd + wm.draw(); }

Mat closed_loop_matrix(const StateSpace& plant, const std::vector<DroopGains>& gains,
                       const std::vector<ChannelFilter>& filters)
{
    const int n = plant.nx();
    const int nc = static_cast<int>(gains.size());
    const int ny = 2 * nc;
    if (plant.ny() != ny || plant.n_ref() != ny) throw ConfigError("closed loop: gains do not match plant channels");
    int nf = 0;
    for (const auto& f : filters) nf += static_cast<int>(f.A.rows());
    const int N = n + ny + nf;

    // z = Zx x + Zf xi
    Mat Zx = plant.C;
    Mat Zf = Mat::Zero(ny, nf);
    Mat Acl = Mat::Zero(N, N);
    int off = 0;
    for (const auto& f : filters) {
        const int m = static_cast<int>(f.A.rows());
        const int ch = f.channel;
        if (ch < 0 || ch >= ny) throw ConfigError(fmt::format("closed loop: filter on unknown channel {}", ch));
        Zx.row(ch) = f.D * plant.C.row(ch);
        Zf.block(ch, off, 1, m) = f.C;
        Acl.block(n + ny + off, 0, m, n) = f.B * plant.C.row(ch);
        Acl.block(n + ny + off, n + ny + off, m, m) = f.A;
        off += m;
    }
    Vec k1(ny), kb(ny);
    for (int i = 0; i < nc; ++i) {
        const double Ts = plant.Ts;
        k1(2 * i) = gains[i].alpha_p + gains[i].beta_p * Ts;
        k1(2 * i + 1) = gains[i].alpha_q + gains[i].beta_q * Ts;
        kb(2 * i) = gains[i].beta_p * Ts;
        kb(2 * i + 1) = gains[i].beta_q * Ts;
    }
    // u = diag(k1) z + diag(kb) sigma_prev
    const Mat BK = plant.B_ref * k1.asDiagonal();
    Acl.topLeftCorner(n, n) = plant.A + BK * Zx;
    Acl.block(0, n, n, ny) = plant.B_ref * kb.asDiagonal();
    if (nf) Acl.block(0, n + ny, n, nf) = BK * Zf;
    Acl.block(n, 0, ny, n) = Zx;
    Acl.block(n, n, ny, ny) = Mat::Identity(ny, ny);
    if (nf) Acl.block(n, n + ny, ny, nf) = Zf;
    return Acl;
}

SpectrumSummary summarize_spectrum(const Mat& A, double unit_tol)
{
    SpectrumSummary s;
    Eigen::EigenSolver<Mat> es(A, false);
    s.eigenvalues = es.eigenvalues();
    for (int k = 0; k < s.eigenvalues.size(); ++k) {
        const auto lam = s.eigenvalues(k);
        if (std::abs(lam - 1.0) <= unit_tol)
            ++s.unit_count;
        else
            s.radius_excluding_unit = std::max(s.radius_excluding_unit, std::abs(lam));
    }
    return s;
}

} // namespace mgwm
