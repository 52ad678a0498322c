#include "catch_amalgamated.hpp"

#include "mgwm/attack.hpp"
#include "mgwm/droop.hpp"
#include "support.hpp"

#include <cmath>
#include <random>

using namespace mgwm;

namespace {

const DroopGains kTableGains{-0.001, -0.011, -15.17, -769.44};
constexpr double kTs = 0.0083;

} // namespace

TEST_CASE("droop with an all-zero history commands nothing", "[droop]")
{
    DroopController c(kTableGains, kTs);
    for (int k = 0; k < 5; ++k) CHECK(c.step(0.0, 0.0) == Vec2::Zero());
}

TEST_CASE("droop output after ten constant frequency samples", "[droop][oracle]")
{
    DroopController c(kTableGains, kTs);
    Vec2 out;
    for (int k = 0; k < 10; ++k) out = c.step(0.01, 0.0);
    // Direct summation: the integral term sums every sample up to and including this one.
    double sum = 0.0;
    for (int k = 0; k < 10; ++k) sum += 0.01;
    const double expected = kTableGains.alpha_p * 0.01 + kTableGains.beta_p * kTs * sum;
    CHECK(out(0) == Catch::Approx(expected).epsilon(1e-14));
    CHECK(out(0) == Catch::Approx(-1.913e-5).epsilon(1e-12));
    CHECK(out(1) == 0.0);
}

TEST_CASE("case-study reactive gains are a valid configuration", "[droop]")
{
    DguModel d = testing::bundled_model().dgus.front();
    d.alpha_q = -15.17;
    d.beta_q = -769.44;
    CHECK_NOTHROW(d.validate());
    const DroopGains g = gains_of(d);
    CHECK(g.alpha_q == -15.17);
    CHECK(g.beta_q == -769.44);
}

TEST_CASE("reset clears the accumulators", "[droop]")
{
    DroopController c(kTableGains, kTs);
    c.step(0.2, -0.1);
    c.step(0.1, 0.3);
    REQUIRE(c.sums() != Vec2::Zero());
    c.reset();
    CHECK(c.sums() == Vec2::Zero());
    DroopController fresh(kTableGains, kTs);
    CHECK(c.step(0.05, 0.07) == fresh.step(0.05, 0.07));
}

TEST_CASE("droop is linear in its input history", "[droop][property]")
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    DroopController a(kTableGains, kTs), b(kTableGains, kTs), ab(kTableGains, kTs);
    const double ca = 0.7, cb = -1.9;
    for (int k = 0; k < 1000; ++k) {
        const Vec2 ua(n01(rng), n01(rng)), ub(n01(rng), n01(rng));
        const Vec2 ya = a.step(ua(0), ua(1));
        const Vec2 yb = b.step(ub(0), ub(1));
        const Vec2 u = ca * ua + cb * ub;
        const Vec2 y = ab.step(u(0), u(1));
        const Vec2 lin = ca * ya + cb * yb;
        CHECK((y - lin).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + lin.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("zero watermark variance leaves the command unchanged", "[watermark]")
{
    WatermarkSource wm(0.0, 42);
    const Vec2 cmd(0.125, -3.5);
    for (int k = 0; k < 10; ++k) CHECK(inject_watermark(cmd, wm) == cmd);
    CHECK(wm.log().size() == 10);
}

TEST_CASE("case-study watermark variance is accepted", "[watermark]")
{
    WatermarkSource wm(1e-7, 1);
    CHECK(wm.variance() == 1e-7);
    CHECK_THROWS_AS(WatermarkSource(-1e-7, 1), ConfigError);
}

TEST_CASE("watermark log reproduces under the same seed", "[watermark][determinism]")
{
    WatermarkSource a(1e-7, 99), b(1e-7, 99), c(1e-7, 100);
    const Vec2 cmd(0.01, 0.02);
    for (int k = 0; k < 1000; ++k) {
        const Vec2 ua = inject_watermark(cmd, a);
        CHECK(ua == inject_watermark(cmd, b));
        CHECK(ua == cmd + a.log().back());
        inject_watermark(cmd, c);
    }
    CHECK(a.log() == b.log());
    CHECK(a.log() != c.log());
}

TEST_CASE("watermark sample covariance matches nu_e I", "[watermark][statistics]")
{
    const double nu = 1e-7;
    const int n = 1000000;
    WatermarkSource wm(nu, 2024, true, true, false);
    double spp = 0, sqq = 0, spq = 0, mp = 0, mq = 0;
    for (int k = 0; k < n; ++k) {
        const Vec2 e = wm.draw();
        spp += e(0) * e(0);
        sqq += e(1) * e(1);
        spq += e(0) * e(1);
        mp += e(0);
        mq += e(1);
    }
    CHECK(std::abs(spp / n - nu) <= 0.01 * nu);
    CHECK(std::abs(sqq / n - nu) <= 0.01 * nu);
    // Off-diagonal has standard error nu / sqrt(n).
    CHECK(std::abs(spq / n) <= 3.0 * nu / std::sqrt(n));
    CHECK(std::abs(mp / n) <= 4.0 * std::sqrt(nu / n));
    CHECK(std::abs(mq / n) <= 4.0 * std::sqrt(nu / n));
}

TEST_CASE("disabled watermark channels stay clean", "[watermark]")
{
    WatermarkSource wm(1e-7, 3, true, false);
    for (int k = 0; k < 100; ++k) {
        const Vec2 e = wm.draw();
        CHECK(e(1) == 0.0);
        CHECK(e(0) != 0.0);
    }
}

namespace {

struct LoopFixture {
    MicrogridConfig cfg = testing::bundled_model();
    StateSpace plant;
    std::vector<DroopGains> gains;
    LoopFixture()
    {
        const MicrogridDae dae(cfg);
        const Equilibrium eq = find_equilibrium(dae);
        plant = discretize(linearize(dae, eq.x0, eq.y0, eq.u0), kTs);
        for (const auto& d : cfg.dgus) gains.push_back(gains_of(d));
    }
};

} // namespace

TEST_CASE("closed-loop matrix reproduces stepping the controllers", "[closed_loop][property]")
{
    LoopFixture f;
    const int n = f.plant.nx(), nc = static_cast<int>(f.gains.size());
    const RationalFilter proto({0.0008, 0.0012}, {0.2865, -1.285, 1.0});
    const bool with_filter = GENERATE(false, true);
    std::vector<ChannelFilter> filters;
    if (with_filter) filters.push_back(proto.state_space(1));
    const Mat Acl = closed_loop_matrix(f.plant, f.gains, filters);

    std::mt19937_64 rng(17);
    std::normal_distribution<double> n01;
    Vec x(n);
    for (int i = 0; i < n; ++i) x(i) = 1e-3 * n01(rng);
    Vec s = Vec::Zero(Acl.rows());
    s.head(n) = x;

    std::vector<DroopController> droop;
    for (const auto& g : f.gains) droop.emplace_back(g, kTs);
    RationalFilter filt = proto;
    for (int k = 0; k < 200; ++k) {
        Vec z = f.plant.C * x;
        if (with_filter) z(1) = filt.step(z(1));
        Vec u(2 * nc);
        for (int i = 0; i < nc; ++i) u.segment<2>(2 * i) = droop[i].step(z(2 * i), z(2 * i + 1));
        x = f.plant.A * x + f.plant.B_ref * u;
        s = Acl * s;
        CHECK((s.head(n) - x).norm() <= 1e-9 * (1e-12 + x.norm()));
    }
}

TEST_CASE("closed-loop matrix rejects mismatched gains", "[closed_loop][errors]")
{
    LoopFixture f;
    f.gains.pop_back();
    CHECK_THROWS_AS(closed_loop_matrix(f.plant, f.gains), ConfigError);
    f.gains.push_back(f.gains.back());
    ChannelFilter bad;
    bad.channel = 99;
    bad.A = Mat::Zero(1, 1);
    bad.B = Mat::Zero(1, 1);
    bad.C = Mat::Zero(1, 1);
    CHECK_THROWS_AS(closed_loop_matrix(f.plant, f.gains, {bad}), ConfigError);
}

TEST_CASE("spectrum summary separates unit eigenvalues", "[closed_loop]")
{
    Mat A = Mat::Zero(3, 3);
    A.diagonal() << 1.0, 0.5, -0.9;
    const SpectrumSummary s = summarize_spectrum(A);
    CHECK(s.unit_count == 1);
    CHECK(s.radius_excluding_unit == Catch::Approx(0.9));
}
