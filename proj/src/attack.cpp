#include "mgwm/attack.hpp"

#include <fmt/format.h>
#include <unsupported/Eigen/Polynomials>

#include <cmath>

namespace mgwm {

long step_at(double t, double Ts)
{
    if (std::isinf(t)) return t > 0 ? std::numeric_limits<long>::max() : std::numeric_limits<long>::min();
    return static_cast<long>(std::ceil(t / Ts - 1e-9));
}

static int degree(const std::vector<double>& c)
{
    int d = static_cast<int>(c.size()) - 1;
    while (d > 0 && c[d] == 0.0) --d;
    return d;
}

void AttackSpec::validate(double Ts) const
{
    if (target_dgu < 0) throw ConfigError("attack target DGU must be positive");
    if (!(start_time < end_time)) throw ConfigError("attack start_time must precede end_time");
    if (!(start_time >= 0)) throw ConfigError("attack start_time must be nonnegative");
    if (const auto* n = std::get_if<NoiseInjection>(&tmpl)) {
        if (!(n->sigma2 >= 0)) throw ConfigError("noise-injection variance must be nonnegative");
    } else if (const auto* r = std::get_if<Replay>(&tmpl)) {
        if (!(r->record_start >= 0 && r->record_end > r->record_start))
            throw ConfigError("replay record window must be a nonempty interval");
        if (step_at(r->record_end, Ts) > step_at(start_time, Ts))
            throw ConfigError(fmt::format("replay starts at {} s before its record window [{}, {}) s is filled",
                                          start_time, r->record_start, r->record_end));
        if (step_at(r->record_end, Ts) <= step_at(r->record_start, Ts))
            throw ConfigError("replay record window holds no samples");
    } else if (const auto* d = std::get_if<DestabFilter>(&tmpl)) {
        if (d->den.empty() || d->num.empty()) throw ConfigError("filter needs numerator and denominator");
        if (d->den[degree(d->den)] != 1.0) throw ConfigError("filter denominator must be monic");
        if (degree(d->den) < degree(d->num)) throw ConfigError("filter must be proper (deg num <= deg den)");
        if (!(d->mu_sigma2 >= 0)) throw ConfigError("filter noise variance must be nonnegative");
    }
}

std::string AttackSpec::template_name() const
{
    switch (tmpl.index()) {
    case 0: return "passthrough";
    case 1: return "noise_injection";
    case 2: return "replay";
    default: return "destab_filter";
    }
}

bool AttackSpec::targets(int component) const
{
    if (signal == TargetSignal::both) return true;
    return (signal == TargetSignal::frequency) == (component == 0);
}

RationalFilter::RationalFilter(std::vector<double> num, std::vector<double> den)
{
    const int N = degree(den);
    const int M = degree(num);
    if (den.empty() || den[N] != 1.0) throw ConfigError("filter denominator must be monic");
    if (M > N) throw ConfigError("filter must be proper");
    // b(z)/a(z) = sum b_k z^{-k} / sum a_k z^{-k} after dividing by z^N.
    b_ = Vec::Zero(N + 1);
    a_ = Vec::Zero(N + 1);
    for (int k = 0; k <= N; ++k) {
        a_(k) = den[N - k];
        b_(k) = (N - k) <= M && (N - k) < static_cast<int>(num.size()) ? num[N - k] : 0.0;
    }
    s_ = Vec::Zero(N);
}

void RationalFilter::reset() { s_.setZero(); }

double RationalFilter::step(double x)
{
    const int N = order();
    if (N == 0) return b_(0) * x;
    const double y = b_(0) * x + s_(0);
    for (int i = 0; i + 1 < N; ++i) s_(i) = s_(i + 1) + b_(i + 1) * x - a_(i + 1) * y;
    s_(N - 1) = b_(N) * x - a_(N) * y;
    return y;
}

double RationalFilter::dc_gain() const { return b_.sum() / a_.sum(); }

Eigen::VectorXcd RationalFilter::poles() const
{
    const int N = order();
    if (N == 0) return Eigen::VectorXcd(0);
    // Ascending coefficients of z^N + a_1 z^{N-1} + ... + a_N.
    Vec c(N + 1);
    for (int k = 0; k <= N; ++k) c(k) = a_(N - k);
    Eigen::PolynomialSolver<double, Eigen::Dynamic> ps(c);
    return ps.roots();
}

ChannelFilter RationalFilter::state_space(int channel) const
{
    const int N = order();
    ChannelFilter f;
    f.channel = channel;
    f.A = Mat::Zero(N, N);
    f.B = Mat::Zero(N, 1);
    f.C = Mat::Zero(1, N);
    f.D = b_(0);
    if (N == 0) return f;
    f.C(0, 0) = 1.0;
    for (int i = 0; i < N; ++i) {
        f.A(i, 0) = -a_(i + 1);
        if (i + 1 < N) f.A(i, i + 1) = 1.0;
        f.B(i, 0) = b_(i + 1) - a_(i + 1) * b_(0);
    }
    return f;
}

AttackChannel::AttackChannel(AttackSpec spec, double Ts, std::uint64_t seed)
    : spec_(std::move(spec)), Ts_(Ts), rng_(seed)
{
    spec_.validate(Ts);
    k_start_ = step_at(spec_.start_time, Ts);
    k_end_ = step_at(spec_.end_time, Ts);
    if (const auto* r = std::get_if<Replay>(&spec_.tmpl)) {
        rec_start_ = step_at(r->record_start, Ts);
        rec_end_ = step_at(r->record_end, Ts);
        record_.reserve(static_cast<std::size_t>(rec_end_ - rec_start_));
    }
    if (const auto* d = std::get_if<DestabFilter>(&spec_.tmpl))
        for (int c = 0; c < 2; ++c) filters_.emplace_back(d->num, d->den);
}

Vec2 AttackChannel::apply(long k, const Vec2& actual)
{
    if (std::holds_alternative<Replay>(spec_.tmpl) && k >= rec_start_ && k < rec_end_) record_.push_back(actual);
    if (!active(k)) return actual;
    Vec2 out = actual;
    switch (spec_.tmpl.index()) {
    case 0:
        break;
    case 1: {
        const double s = std::sqrt(std::get<NoiseInjection>(spec_.tmpl).sigma2);
        for (int c = 0; c < 2; ++c) {
            const double w = n01_(rng_);
            if (spec_.targets(c)) out(c) += s * w;
        }
        break;
    }
    case 2: {
        const Vec2& r = record_[static_cast<std::size_t>((k - k_start_) % static_cast<long>(record_.size()))];
        for (int c = 0; c < 2; ++c)
            if (spec_.targets(c)) out(c) = r(c);
        break;
    }
    default: {
        const double s = std::sqrt(std::get<DestabFilter>(spec_.tmpl).mu_sigma2);
        for (int c = 0; c < 2; ++c) {
            if (!spec_.targets(c)) continue;
            out(c) = filters_[c].step(actual(c)) + s * n01_(rng_);
        }
        break;
    }
    }
    return out;
}

} // namespace mgwm
