#pragma once

#include <cstdint>
#include <string>

#include "tfex/nn.hpp"
#include "tfex/residual.hpp"
#include "tfex/tfdm.hpp"  // TrainTrace

namespace tfex {

/// Encoder/decoder pair over residuals; the encoder emits latent means and
/// log-variances, generation decodes latent prior draws.
struct VaeModel {
    Mlp encoder;  // d -> hidden -> 2*latent (mu, log-variance)
    Mlp decoder;  // latent -> hidden -> d
    std::size_t latent = 9;
    double h = 0.0;
    double alpha_mean = 0.1;
    double alpha_var = 1.0;
    double beta_kl = 1e-3;

    Eigen::MatrixXd generate(std::size_t n, std::uint64_t seed) const;
};

/// KL(N(mu, diag(sigma_sq)) || N(0, I)) over the latent space:
/// (mu'mu + tr(Sigma) - log det Sigma - L)/2.
double kl_divergence(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma_sq);

/// mu + sqrt(sigma_sq) (.) gauss.
Eigen::VectorXd reparam_sample(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma_sq,
                               const Eigen::VectorXd& gauss);

/// Weighted objective on one batch with fixed reparameterization noise eps:
///   alpha_mean * mean ||dec(z) - R||^2
/// + alpha_var  * || mean dec(z) dec(z)^T - h I ||_F^2
/// + beta_kl    * mean KL.
/// Returns the loss; fills the gradient w.r.t. [encoder params, decoder params]
/// when grad is non-null.
double vae_loss_grad(const VaeModel& model, const Eigen::MatrixXd& R, const Eigen::MatrixXd& eps,
                     Eigen::VectorXd* grad);

struct VaeConfig {
    std::size_t latent = 9;
    std::size_t hidden = 50;
    double alpha_mean = 0.1;
    double alpha_var = 1.0;
    double beta_kl = 1e-3;
    std::size_t train_iters = 2000;
    double lr = 1e-2;
    double weight_decay = 1e-6;
    std::size_t minibatch = 1024;
};

VaeModel train_vae(const ResidualSet& residuals, const VaeConfig& cfg, std::uint64_t seed,
                   TrainTrace* trace = nullptr);

/// Decoder applied to latent prior draws.
Eigen::MatrixXd vae_generate(const VaeModel& model, const Eigen::MatrixXd& gauss);

std::string vae_to_json(const VaeModel& model);
VaeModel vae_from_json(const std::string& text);

}  // namespace tfex
