#include "tfex/sde.hpp"

#include <cmath>
#include <stdexcept>

#include "tfex/parallel.hpp"
#include "tfex/rng.hpp"

namespace tfex {

namespace {

bool finite3(const Vec3& v) {
    return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]);
}

}  // namespace

void RegimeSpec::validate() const {
    if (!finite3(skew) || !finite3(damping) || !finite3(coupling) || !finite3(noise_std))
        throw std::invalid_argument("RegimeSpec: non-finite parameter");
    for (double di : damping)
        if (!(di > 0)) throw std::invalid_argument("RegimeSpec: damping must be > 0");
    for (double s : noise_std)
        if (!(s >= 0)) throw std::invalid_argument("RegimeSpec: noise_std must be >= 0");
    if (!(noise_scale >= 0) || !std::isfinite(noise_scale))
        throw std::invalid_argument("RegimeSpec: noise_scale must be >= 0");
    if (const auto* c = std::get_if<ConstantForcing>(&forcing)) {
        if (!finite3(c->value)) throw std::invalid_argument("RegimeSpec: non-finite forcing");
    } else if (const auto* p = std::get_if<PeriodicForcing>(&forcing)) {
        if (!std::isfinite(p->amplitude) || !std::isfinite(p->angular_frequency))
            throw std::invalid_argument("RegimeSpec: non-finite forcing");
    } else if (const auto* o = std::get_if<OuForcing>(&forcing)) {
        if (!(o->rate > 0) || !(o->diffusion >= 0))
            throw std::invalid_argument("RegimeSpec: OU forcing needs rate > 0, diffusion >= 0");
    }
}

void InitialDistribution::validate() const {
    if (!finite3(mean) || !finite3(std))
        throw std::invalid_argument("InitialDistribution: non-finite parameter");
    for (double s : std)
        if (!(s >= 0)) throw std::invalid_argument("InitialDistribution: std must be >= 0");
}

RegimeSpec regime_preset(int regime) {
    RegimeSpec s;
    switch (regime) {
        case 1:  // equipartition
            // Note the L2 sign: the published per-component equations pin the
            // linear part of regime 1 to +u2-2u3 / -u1-3u3 / +2u1+3u2, which
            // under our skew convention is L = (3, -2, -1).
            s.skew = {3.0, -2.0, -1.0};
            s.damping = {0.2, 0.1, 0.1};
            s.coupling = {1.0, -0.6, -0.4};
            s.noise_std = {1.0, 1.0, 1.0};
            s.forcing = NoForcing{};
            break;
        case 2:  // forward cascade
            s.skew = {0.0, 0.0, 0.0};
            s.damping = {1.0, 2.0, 2.0};
            s.coupling = {2.0, -1.0, -1.0};
            s.noise_std = {std::sqrt(10.0), 0.1, 0.1};
            s.forcing = NoForcing{};
            break;
        case 3:  // dual cascade
            s.skew = {0.09, 0.06, -0.03};
            s.damping = {1.0, 2.0, 2.0};
            s.coupling = {2.0, -1.0, -1.0};
            s.noise_std = {0.1, std::sqrt(0.1), std::sqrt(0.1)};
            s.forcing = ConstantForcing{{0.0, -1.0, 1.0}};
            break;
        case 4:  // periodic cascade
            s.skew = {0.0, 0.0, 0.0};
            s.damping = {1.0, 2.0, 2.0};
            s.coupling = {2.0, -1.0, -1.0};
            s.noise_std = {std::sqrt(10.0), 0.1, 0.1};
            s.forcing = PeriodicForcing{1.0, std::acos(-1.0) / 4.0};
            break;
        case 5:  // random cascade
            s.skew = {0.0, 0.0, 0.0};
            s.damping = {1.0, 2.0, 2.0};
            s.coupling = {2.0, -1.0, -1.0};
            s.noise_std = {std::sqrt(10.0), 0.1, 0.1};
            s.forcing = OuForcing{5.0, 0.2};
            break;
        default:
            throw std::invalid_argument("regime_preset: regime must be 1..5");
    }
    return s;
}

std::string regime_name(int regime) {
    switch (regime) {
        case 1: return "equipartition";
        case 2: return "forward-cascade";
        case 3: return "dual-cascade";
        case 4: return "periodic-cascade";
        case 5: return "random-cascade";
        default: return "custom";
    }
}

InitialDistribution default_initial_distribution() {
    return InitialDistribution{{-1.0, 0.5, -0.5}, {0.5, 0.2, 0.1}};
}

Vec3 drift_triad(const Vec3& u, double t, const RegimeSpec& spec, double forcing_state) {
    const auto& L = spec.skew;
    const auto& d = spec.damping;
    const auto& B = spec.coupling;

    Vec3 f{0, 0, 0};
    if (const auto* c = std::get_if<ConstantForcing>(&spec.forcing)) {
        f = c->value;
    } else if (const auto* p = std::get_if<PeriodicForcing>(&spec.forcing)) {
        const double v = p->amplitude * std::sin(p->angular_frequency * t);
        f = {v, v, v};
    } else if (std::holds_alternative<OuForcing>(spec.forcing)) {
        f = {forcing_state, forcing_state, forcing_state};
    }

    return Vec3{
        L[1] * u[2] - L[2] * u[1] - d[0] * u[0] + B[0] * u[1] * u[2] + f[0],
        L[2] * u[0] - L[0] * u[2] - d[1] * u[1] + B[1] * u[2] * u[0] + f[1],
        L[0] * u[1] - L[1] * u[0] - d[2] * u[2] + B[2] * u[0] * u[1] + f[2],
    };
}

double ou_step(double m, double rate, double diffusion, double h, double gauss) {
    return m - rate * m * h + diffusion * std::sqrt(h) * gauss;
}

TrajectoryBatch simulate_batch(const RegimeSpec& spec, const InitialDistribution& init,
                               std::size_t M, std::size_t N, double h, std::uint64_t seed) {
    spec.validate();
    init.validate();
    if (M < 1 || N < 1) throw std::invalid_argument("simulate_batch: M, N must be >= 1");
    if (!(h > 0) || !std::isfinite(h)) throw std::invalid_argument("simulate_batch: h must be > 0");

    Vec3 sigma;
    for (std::size_t i = 0; i < 3; ++i) sigma[i] = spec.noise_scale * spec.noise_std[i];

    const OuForcing* ou = std::get_if<OuForcing>(&spec.forcing);

    TrajectoryBatch batch(M, N, kTriadDim, h);

    std::vector<std::string> errors(M);
    parallel_for(M, [&](std::size_t m) {
        GaussStream rng(stream_seed(seed, m));
        Vec3 u;
        for (std::size_t i = 0; i < 3; ++i) u[i] = init.mean[i] + init.std[i] * rng.gauss();
        double forcing_state = 0.0;  // OU process mean; paper leaves m(0) open

        double* row = batch.state(m, 0);
        for (std::size_t i = 0; i < 3; ++i) row[i] = u[i];

        for (std::size_t n = 0; n < N; ++n) {
            const double t = batch.time(n);
            const Vec3 drift = drift_triad(u, t, spec, forcing_state);
            Vec3 g;
            for (std::size_t i = 0; i < 3; ++i) g[i] = rng.gauss();
            u = em_step(u, drift, sigma, h, g);
            if (ou) forcing_state = ou_step(forcing_state, ou->rate, ou->diffusion, h, rng.gauss());

            for (std::size_t i = 0; i < 3; ++i) {
                if (!(std::abs(u[i]) <= kBlowUpGuard)) {
                    errors[m] = "trajectory " + std::to_string(m) + " exceeded blow-up guard at step " +
                                std::to_string(n + 1);
                    return;
                }
            }
            double* next = batch.state(m, n + 1);
            for (std::size_t i = 0; i < 3; ++i) next[i] = u[i];
        }
    });

    for (const auto& e : errors)
        if (!e.empty()) throw std::runtime_error("simulate_batch: " + e);
    return batch;
}

}  // namespace tfex
