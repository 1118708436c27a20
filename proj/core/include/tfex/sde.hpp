#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <variant>

#include "tfex/trajectory.hpp"

namespace tfex {

inline constexpr std::size_t kTriadDim = 3;
inline constexpr double kBlowUpGuard = 1e8;

using Vec3 = std::array<double, 3>;

struct NoForcing {};
struct ConstantForcing {
    Vec3 value{0, 0, 0};
};
struct PeriodicForcing {
    double amplitude = 1.0;
    double angular_frequency = 1.0;  // applied as amplitude*sin(w*t), all components
};
struct OuForcing {
    double rate = 1.0;       // dm = -rate*m dt + diffusion dW, shared value per component
    double diffusion = 0.0;
};
using Forcing = std::variant<NoForcing, ConstantForcing, PeriodicForcing, OuForcing>;

/// Triad system parameters. The linear part is the skew-symmetric coupling
///   du1 += L2*u3 - L3*u2,  du2 += L3*u1 - L1*u3,  du3 += L1*u2 - L2*u1.
struct RegimeSpec {
    Vec3 skew{0, 0, 0};       // L1, L2, L3
    Vec3 damping{1, 1, 1};    // d1, d2, d3 > 0
    Vec3 coupling{0, 0, 0};   // B1, B2, B3 (presets satisfy B1+B2+B3 = 0)
    Vec3 noise_std{0, 0, 0};  // sigma_i >= 0
    double noise_scale = 1.0; // c >= 0, multiplies every sigma_i
    Forcing forcing = NoForcing{};

    void validate() const;  // throws std::invalid_argument
    bool has_ou_forcing() const { return std::holds_alternative<OuForcing>(forcing); }
};

/// Presets 1..5: equipartition, forward cascade, dual cascade, periodic
/// cascade, random cascade.
RegimeSpec regime_preset(int regime);
std::string regime_name(int regime);

struct InitialDistribution {
    Vec3 mean{0, 0, 0};
    Vec3 std{0, 0, 0};

    void validate() const;
};

/// Default training/test initial law: N((-1, 0.5, -0.5), diag(0.5^2, 0.2^2, 0.1^2)).
InitialDistribution default_initial_distribution();

/// Deterministic drift of the triad system (noise excluded). forcing_state is
/// the current OU value when forcing is OU, ignored otherwise.
Vec3 drift_triad(const Vec3& state, double t, const RegimeSpec& spec, double forcing_state = 0.0);

/// One Euler-Maruyama step: state + h*drift + sigma (.) sqrt(h)*gauss.
template <std::size_t D>
std::array<double, D> em_step(const std::array<double, D>& state,
                              const std::array<double, D>& drift,
                              const std::array<double, D>& sigma, double h,
                              const std::array<double, D>& gauss) {
    std::array<double, D> next{};
    const double sqrt_h = std::sqrt(h);
    for (std::size_t i = 0; i < D; ++i)
        next[i] = state[i] + h * drift[i] + sigma[i] * sqrt_h * gauss[i];
    return next;
}

/// One OU step: m - rate*m*h + diffusion*sqrt(h)*gauss.
double ou_step(double m, double rate, double diffusion, double h, double gauss);

/// Simulate M independent trajectories of N steps. Noise is drawn from a
/// per-trajectory stream derived from (seed, m), so trajectory m is identical
/// regardless of M. OU forcing starts at m(0) = 0 per trajectory.
TrajectoryBatch simulate_batch(const RegimeSpec& spec, const InitialDistribution& init,
                               std::size_t M, std::size_t N, double h, std::uint64_t seed);

}  // namespace tfex
