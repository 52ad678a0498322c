#pragma once

#include "mgwm/common.hpp"
#include "mgwm/droop.hpp"

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace mgwm {

enum class TargetSignal { frequency, voltage, both };

struct Passthrough {};
struct NoiseInjection {
    double sigma2 = 0.0;
};
// Records the actual stream over [record_start, record_end) and plays it back on loop.
struct Replay {
    double record_start = 0.0;
    double record_end = 0.0;
};
// Rational filter on the targeted signal plus i.i.d. N(0, mu_sigma2) output noise.
// Coefficients are ascending powers of z.
struct DestabFilter {
    std::vector<double> num;
    std::vector<double> den;
    double mu_sigma2 = 0.0;
};

using AttackTemplate = std::variant<Passthrough, NoiseInjection, Replay, DestabFilter>;

struct AttackSpec {
    int target_dgu = 0;
    TargetSignal signal = TargetSignal::both;
    AttackTemplate tmpl = Passthrough{};
    double start_time = 0.0;
    double end_time = std::numeric_limits<double>::infinity();

    void validate(double Ts) const;
    std::string template_name() const;
    bool targets(int component) const; // 0 = omega, 1 = V
};

// First sample index k with k Ts >= t.
long step_at(double t, double Ts);

// Direct-form II transposed realization of b(z)/a(z).
class RationalFilter {
public:
    RationalFilter(std::vector<double> num_ascending, std::vector<double> den_ascending);
    double step(double x);
    void reset();
    const Vec& registers() const { return s_; }
    int order() const { return static_cast<int>(a_.size()) - 1; }
    double dc_gain() const;
    Eigen::VectorXcd poles() const;
    ChannelFilter state_space(int channel) const;

private:
    Vec b_, a_; // z^-1 form, a_(0) = 1
    Vec s_;
};

// Maps the actual sensor stream of one DGU to what its droop controller receives.
// It only ever sees sensor samples.
class AttackChannel {
public:
    AttackChannel(AttackSpec spec, double Ts, std::uint64_t seed);
    Vec2 apply(long k, const Vec2& actual);
    bool active(long k) const { return k >= k_start_ && k < k_end_; }
    const AttackSpec& spec() const { return spec_; }

private:
    AttackSpec spec_;
    double Ts_;
    long k_start_, k_end_;
    long rec_start_ = 0, rec_end_ = 0;
    std::mt19937_64 rng_;
    std::normal_distribution<double> n01_{0.0, 1.0};
    std::vector<RationalFilter> filters_;
    std::vector<Vec2> record_;
};

} // namespace mgwm
