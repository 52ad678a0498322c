#include "catch_amalgamated.hpp"

#include "mgwm/attack.hpp"

#include <cmath>
#include <random>

using namespace mgwm;

namespace {

constexpr double kTs = 0.0083;
const std::vector<double> kNum{0.0008, 0.0012};
const std::vector<double> kDen{0.2865, -1.285, 1.0};

AttackSpec spec(AttackTemplate t, TargetSignal sig = TargetSignal::both, double start = 1.0, double end = 1e9)
{
    AttackSpec s;
    s.target_dgu = 0;
    s.signal = sig;
    s.tmpl = std::move(t);
    s.start_time = start;
    s.end_time = end;
    return s;
}

std::vector<Vec2> random_stream(int n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    std::vector<Vec2> v(n);
    for (auto& s : v) s = Vec2(1e-3 * n01(rng), 1e-3 * n01(rng));
    return v;
}

} // namespace

TEST_CASE("passthrough reports the actual stream", "[attack]")
{
    AttackChannel ch(spec(Passthrough{}, TargetSignal::both, 0.0), kTs, 1);
    for (const auto& y : random_stream(500, 2)) CHECK(ch.apply(0, y) == y);
}

TEST_CASE("identity filter with no noise reports the actual stream", "[attack][filter]")
{
    AttackChannel ch(spec(DestabFilter{kDen, kDen, 0.0}, TargetSignal::both, 0.0), kTs, 1);
    long k = 0;
    for (const auto& y : random_stream(500, 3)) {
        const Vec2 r = ch.apply(k++, y);
        CHECK((r - y).cwiseAbs().maxCoeff() <= 1e-15);
    }
}

TEST_CASE("malicious filter settles at its DC gain", "[attack][filter][oracle]")
{
    RationalFilter f(kNum, kDen);
    // Difference-equation oracle: y[k] = 1.285 y[k-1] - 0.2865 y[k-2] + 0.0012 x[k-1] + 0.0008 x[k-2].
    double y1 = 0, y2 = 0, x1 = 0, x2 = 0;
    double out = 0;
    for (int k = 0; k < 30000; ++k) {
        const double x = 1.0;
        const double y = 1.285 * y1 - 0.2865 * y2 + 0.0012 * x1 + 0.0008 * x2;
        out = f.step(x);
        REQUIRE(std::abs(out - y) <= 1e-12 * (1.0 + std::abs(y)));
        y2 = y1;
        y1 = y;
        x2 = x1;
        x1 = x;
    }
    CHECK(out == Catch::Approx(0.002 / 0.0015).epsilon(1e-12));
    CHECK(f.dc_gain() == Catch::Approx(4.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("filter with zero input stays at zero", "[attack][filter]")
{
    RationalFilter f(kNum, kDen);
    for (int k = 0; k < 1000; ++k) CHECK(f.step(0.0) == 0.0);
    CHECK(f.registers().size() == 2);
}

TEST_CASE("malicious filter poles lie inside the unit circle", "[attack][filter][oracle]")
{
    const RationalFilter f(kNum, kDen);
    const Eigen::VectorXcd p = f.poles();
    REQUIRE(p.size() == 2);
    // Quadratic formula for z^2 - 1.285 z + 0.2865.
    const double disc = std::sqrt(1.285 * 1.285 - 4 * 0.2865);
    const double r_hi = (1.285 + disc) / 2, r_lo = (1.285 - disc) / 2;
    std::vector<double> got{p(0).real(), p(1).real()};
    std::sort(got.begin(), got.end());
    CHECK(got[0] == Catch::Approx(r_lo).epsilon(1e-12));
    CHECK(got[1] == Catch::Approx(r_hi).epsilon(1e-12));
    CHECK(got[0] == Catch::Approx(0.287).margin(5e-4));
    CHECK(got[1] == Catch::Approx(0.998).margin(5e-4));
    CHECK(std::abs(p(0).imag()) < 1e-12);
    CHECK(std::abs(p(0)) < 1.0);
    CHECK(std::abs(p(1)) < 1.0);
}

TEST_CASE("filter state-space form has the same impulse response", "[attack][filter]")
{
    RationalFilter f(kNum, kDen);
    const ChannelFilter ss = f.state_space(1);
    Vec xi = Vec::Zero(ss.A.rows());
    for (int k = 0; k < 200; ++k) {
        const double u = k == 0 ? 1.0 : 0.0;
        const double y_ss = (ss.C * xi)(0) + ss.D * u;
        xi = ss.A * xi + ss.B * u;
        CHECK(f.step(u) == Catch::Approx(y_ss).margin(1e-15));
    }
}

TEST_CASE("attack is inactive outside its interval", "[attack]")
{
    AttackChannel ch(spec(NoiseInjection{1.0}, TargetSignal::both, 1.0, 2.0), kTs, 7);
    const Vec2 y(0.1, 0.2);
    for (long k = 0; k < 400; ++k) {
        const double t = k * kTs;
        const Vec2 r = ch.apply(k, y);
        if (t < 1.0 - 1e-12 || t >= 2.0 - 1e-12)
            CHECK(r == y);
        else
            CHECK(r != y);
    }
}

TEST_CASE("voltage attack leaves the frequency channel untouched", "[attack][property]")
{
    const auto stream = random_stream(2000, 11);
    for (AttackTemplate t : {AttackTemplate{NoiseInjection{1e-3}}, AttackTemplate{DestabFilter{kNum, kDen, 5e-7}},
                             AttackTemplate{Replay{0.5, 2.0}}}) {
        AttackChannel ch(spec(t, TargetSignal::voltage, 3.0), kTs, 13);
        long k = 0;
        for (const auto& y : stream) {
            const Vec2 r = ch.apply(k++, y);
            CHECK(r(0) == y(0));
        }
    }
}

TEST_CASE("replay plays back the recorded samples exactly", "[attack][replay]")
{
    const auto stream = random_stream(3000, 19);
    AttackChannel ch(spec(Replay{1.0, 3.0}, TargetSignal::both, 5.0), kTs, 1);
    const long r0 = step_at(1.0, kTs), r1 = step_at(3.0, kTs), k0 = step_at(5.0, kTs);
    for (long k = 0; k < static_cast<long>(stream.size()); ++k) {
        const Vec2 r = ch.apply(k, stream[k]);
        if (k < k0) {
            CHECK(r == stream[k]);
        } else {
            const long src = r0 + (k - k0) % (r1 - r0);
            CHECK(r == stream[src]);
        }
    }
}

TEST_CASE("attack output is causal", "[attack][property]")
{
    auto a = random_stream(1000, 23), b = a;
    for (std::size_t k = 600; k < b.size(); ++k) b[k] *= -3.0;
    AttackChannel ca(spec(DestabFilter{kNum, kDen, 5e-7}, TargetSignal::both, 0.5), kTs, 29);
    AttackChannel cb(spec(DestabFilter{kNum, kDen, 5e-7}, TargetSignal::both, 0.5), kTs, 29);
    for (long k = 0; k < 600; ++k) CHECK(ca.apply(k, a[k]) == cb.apply(k, b[k]));
}

TEST_CASE("noise injection adds the configured variance", "[attack][statistics]")
{
    const double s2 = 1e-6;
    AttackChannel ch(spec(NoiseInjection{s2}, TargetSignal::both, 0.0), kTs, 31);
    const int n = 200000;
    double acc = 0.0;
    for (long k = 0; k < n; ++k) {
        const Vec2 d = ch.apply(k, Vec2::Zero());
        acc += d.squaredNorm();
    }
    const double var = acc / (2.0 * n);
    CHECK(std::abs(var - s2) <= 4.0 * s2 * std::sqrt(2.0 / (2.0 * n)));
}

TEST_CASE("attack specifications are validated", "[attack][errors]")
{
    CHECK_THROWS_AS(spec(Passthrough{}, TargetSignal::both, 2.0, 1.0).validate(kTs), ConfigError);
    CHECK_THROWS_AS(spec(Replay{1.0, 10.0}, TargetSignal::both, 5.0).validate(kTs), ConfigError);
    CHECK_THROWS_WITH(AttackChannel(spec(Replay{1.0, 10.0}, TargetSignal::both, 5.0), kTs, 1),
                      Catch::Matchers::ContainsSubstring("record window"));
    CHECK_THROWS_AS(spec(DestabFilter{kNum, {0.2865, -1.285, 2.0}, 0.0}).validate(kTs), ConfigError);
    CHECK_THROWS_AS(spec(DestabFilter{{1.0, 1.0, 1.0}, {0.5, 1.0}, 0.0}).validate(kTs), ConfigError);
    CHECK_THROWS_AS(spec(NoiseInjection{-1.0}).validate(kTs), ConfigError);
    CHECK_NOTHROW(spec(DestabFilter{kNum, kDen, 5e-7}).validate(kTs));
}

TEST_CASE("attack onset maps to the first sample at or after the start time", "[attack]")
{
    CHECK(step_at(0.0, kTs) == 0);
    CHECK(step_at(16.0, kTs) == 1928);
    CHECK(step_at(kTs * 10, kTs) == 10);
    CHECK(step_at(std::numeric_limits<double>::infinity(), kTs) == std::numeric_limits<long>::max());
}
