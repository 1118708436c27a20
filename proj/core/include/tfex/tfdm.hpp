#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tfex/nn.hpp"
#include "tfex/residual.hpp"

namespace tfex {

/// Forward-noising schedule alpha_tau = 1-tau, beta_tau^2 = tau on [0,1],
/// integrated with K Euler steps on the clipped interval [delta, 1-delta].
struct DiffusionSchedule {
    std::size_t K = 2000;
    double delta = 0.0;  // 0 selects the default 1/(2K)

    double alpha(double tau) const { return 1.0 - tau; }
    double beta_sq(double tau) const { return tau; }
    double clip() const { return delta > 0.0 ? delta : 0.5 / static_cast<double>(K); }
};

/// b(tau) = -1/(1-tau), q^2(tau) = (1+tau)/(1-tau); tau must lie in the
/// clipped range.
struct DriftCoeffs {
    double b;
    double q_sq;
};
DriftCoeffs drift_coeffs(double tau, const DiffusionSchedule& schedule);

/// Score of the forward-time marginal of the smoothed empirical mixture:
///   p_tau(z) = (1/k) sum_n N(z; alpha_tau R_n, (alpha_tau^2 C0^2 + beta_tau^2) I),
/// evaluated in closed form with log-sum-exp stabilization.
std::vector<double> gmm_score(std::span<const double> z, double tau,
                              std::span<const double> centers, std::size_t d, double c0,
                              const DiffusionSchedule& schedule);

/// Probability-flow ODE dZ = [b Z - q^2/2 V] dtau integrated with K uniform
/// Euler steps from tau = 1-delta (Z = xi) down to tau = delta.
std::vector<double> reverse_ode_solve(std::span<const double> xi,
                                      std::span<const double> centers, std::size_t d, double c0,
                                      const DiffusionSchedule& schedule);

/// One-step sampler distilled from reverse-flow pairs; outputs are rescaled
/// componentwise (residuals are whitened before flowing so the isotropic
/// smoothing C0 acts per component).
struct TfdmSampler {
    Mlp net;                    // d -> hidden -> d, tanh
    std::vector<double> scale;  // componentwise de-whitening

    std::vector<double> sample(std::span<const double> xi) const;
};

struct TfdmConfig {
    std::size_t K = 2000;
    double c0_factor = 0.25;         // C0 = c0_factor * componentwise residual std
    std::size_t center_count = 1024;
    bool centers_knn_centroid = false;  // default: seeded uniform subsample
    std::size_t pairs = 4096;        // reverse-flow training pairs
    std::size_t hidden = 50;
    std::size_t train_iters = 2000;
    double lr = 1e-2;
    double weight_decay = 1e-6;
    std::size_t minibatch = 1024;
    // time-dependent variant
    std::size_t pairs_per_step = 512;
    std::size_t step_train_iters = 500;
};

struct TrainTrace {
    std::vector<double> loss;
    double final_loss = 0.0;
};

/// Least-squares distillation of (xi, y) pairs into an Mlp (rows = samples).
Mlp train_tfdm_net(const Eigen::MatrixXd& xi, const Eigen::MatrixXd& y, const TfdmConfig& cfg,
                   std::uint64_t seed, TrainTrace* trace = nullptr);

/// Full time-independent pipeline: whiten residuals, pick centers, integrate
/// reverse flows for cfg.pairs Gaussian draws, distill.
TfdmSampler train_tfdm(const ResidualSet& residuals, const TfdmConfig& cfg, std::uint64_t seed,
                       TrainTrace* trace = nullptr);

/// One distilled net per time step, trained on that step's residuals; steps
/// beyond the trained horizon reuse the final net.
struct TimeDependentTfdm {
    std::vector<Mlp> nets;
    std::vector<double> scale;

    std::vector<double> sample(std::size_t step, std::span<const double> xi) const;
};

TimeDependentTfdm train_tfdm_time_dependent(const TrajectoryBatch& batch,
                                            const std::vector<ExpressionTemplate>& exprs,
                                            const TfdmConfig& cfg, std::uint64_t seed);

std::string tfdm_to_json(const TfdmSampler& sampler);
TfdmSampler tfdm_from_json(const std::string& text);
std::string tfdm_timedep_to_json(const TimeDependentTfdm& sampler);
TimeDependentTfdm tfdm_timedep_from_json(const std::string& text);

}  // namespace tfex
