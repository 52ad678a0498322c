#include "mgwm/grid_model.hpp"

#include <fmt/format.h>
#include <unsupported/Eigen/MatrixFunctions>

namespace mgwm {

void StateSpace::validate() const
{
    const int n = nx();
    auto check = [](bool ok, const char* what) {
        if (!ok) throw ConfigError(fmt::format("state space: {}", what));
    };
    check(A.cols() == n, "A is not square");
    check(B_ref.rows() == n, "B_ref row count");
    check(B_L.rows() == n, "B_L row count");
    check(C.cols() == n, "C column count");
    check(D_ref.rows() == C.rows() && D_ref.cols() == B_ref.cols(), "D_ref shape");
    check(D_L.rows() == C.rows() && D_L.cols() == B_L.cols(), "D_L shape");
    check(R.rows() == n && R.cols() == n, "R shape");
    check(V.rows() == C.rows() && V.cols() == C.rows(), "V shape");
    check((R - R.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + R.cwiseAbs().maxCoeff()), "R not symmetric");
    check((V - V.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + V.cwiseAbs().maxCoeff()), "V not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> er(R), ev(V);
    check(R.size() == 0 || er.eigenvalues().minCoeff() >= -1e-12 * (1.0 + R.cwiseAbs().maxCoeff()), "R not PSD");
    check(V.size() == 0 || ev.eigenvalues().minCoeff() > 0.0, "V not positive definite");
    if (discrete) check(Ts > 0, "discrete model without sample period");
}

StateSpace linearize(const DaeSystem& dae, const Vec& x0, const Vec& y0, const Vec& u0, double process_cov,
                     double measurement_cov)
{
    const DaeJacobians J = dae_jacobians(dae, x0, y0, u0);
    Eigen::PartialPivLU<Mat> lu(J.gy);
    // PartialPivLU does not report singularity; check the reciprocal condition instead.
    const double rc = lu.rcond();
    if (!(rc > 1e-14)) throw NumericalError(fmt::format("algebraic Jacobian dg/dy is singular (rcond {:.3e})", rc));
    const Mat Sx = lu.solve(J.gx); // dy/dx = -Sx
    const Mat Su = lu.solve(J.gu);

    StateSpace ss;
    ss.discrete = false;
    const int nr = dae.n_ref(), nl = dae.n_load();
    const Mat A = J.fx - J.fy * Sx;
    const Mat B = J.fu - J.fy * Su;
    ss.A = A;
    ss.B_ref = B.leftCols(nr);
    ss.B_L = B.rightCols(nl);
    const auto outs = dae.outputs();
    const int no = static_cast<int>(outs.size());
    ss.C = Mat::Zero(no, dae.nx());
    Mat D = Mat::Zero(no, dae.nu());
    for (int r = 0; r < no; ++r) {
        if (outs[r].algebraic) {
            ss.C.row(r) = -Sx.row(outs[r].index);
            D.row(r) = -Su.row(outs[r].index);
        } else {
            ss.C(r, outs[r].index) = 1.0;
        }
    }
    ss.D_ref = D.leftCols(nr);
    ss.D_L = D.rightCols(nl);
    ss.R = process_cov * Mat::Identity(dae.nx(), dae.nx());
    ss.V = measurement_cov * Mat::Identity(no, no);
    return ss;
}

void zoh_pair(const Mat& A, const Mat& B, double Ts, Mat& Ad, Mat& Bd)
{
    const int n = static_cast<int>(A.rows()), m = static_cast<int>(B.cols());
    Mat M = Mat::Zero(n + m, n + m);
    M.topLeftCorner(n, n) = A * Ts;
    M.topRightCorner(n, m) = B * Ts;
    // The current loops are ~1e7 rad/s, so scaling and squaring needs ~23 squarings.
    // Extended precision keeps the accumulated rounding below 1e-11.
    using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    const LMat Ml = M.cast<long double>();
    const Mat E = LMat(Ml.exp()).cast<double>();
    Ad = E.topLeftCorner(n, n);
    Bd = E.topRightCorner(n, m);
}

StateSpace discretize(const StateSpace& c, double Ts, Discretization method)
{
    if (!(Ts > 0)) throw ConfigError("sample period must be positive");
    if (c.discrete) throw ConfigError("model is already discrete");
    const int n = c.nx(), nr = c.n_ref(), nl = c.n_load();
    Mat B(n, nr + nl);
    B << c.B_ref, c.B_L;
    StateSpace d = c;
    d.discrete = true;
    d.Ts = Ts;
    Mat Ad, Bd;
    if (method == Discretization::zoh) {
        zoh_pair(c.A, B, Ts, Ad, Bd);
    } else {
        const Mat I = Mat::Identity(n, n);
        Eigen::PartialPivLU<Mat> lu(I - 0.5 * Ts * c.A);
        Ad = lu.solve(I + 0.5 * Ts * c.A);
        Bd = lu.solve(B) * Ts;
    }
    d.A = Ad;
    d.B_ref = Bd.leftCols(nr);
    d.B_L = Bd.rightCols(nl);
    d.R = c.R * Ts;
    return d;
}

} // namespace mgwm
