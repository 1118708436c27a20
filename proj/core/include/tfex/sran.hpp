#pragma once

#include <cstdint>
#include <string>

#include "tfex/nn.hpp"
#include "tfex/residual.hpp"
#include "tfex/tfdm.hpp"  // TrainTrace

namespace tfex {

/// Gaussian-to-residual map trained with least squares plus a covariance
/// regularizer targeting h*I.
struct SranModel {
    Mlp net;
    double lambda = 0.1;
    double h = 0.0;

    Eigen::MatrixXd generate(std::size_t n, std::uint64_t seed) const;
};

/// mean_i ||G(xi_i) - R_i||^2 + lambda * || (1/n) sum_i G G^T - h I ||_F^2.
double sran_loss(const Mlp& net, const Eigen::MatrixXd& xi, const Eigen::MatrixXd& R,
                 double lambda, double h);

/// Same loss with the analytic parameter gradient.
double sran_loss_grad(const Mlp& net, const Eigen::MatrixXd& xi, const Eigen::MatrixXd& R,
                      double lambda, double h, Eigen::VectorXd& grad);

struct SranConfig {
    double lambda = 0.1;
    std::size_t hidden = 50;
    std::size_t train_iters = 2000;
    double lr = 1e-2;
    double weight_decay = 1e-6;
    std::size_t minibatch = 1024;
    bool repair_each_iteration = false;  // re-pair xi with R every minibatch draw
};

/// Pairs each residual with an independent standard-Gaussian input (one fixed
/// seeded matching per run) and trains the network.
SranModel train_sran(const ResidualSet& residuals, const SranConfig& cfg, std::uint64_t seed,
                     TrainTrace* trace = nullptr);

std::string sran_to_json(const SranModel& model);
SranModel sran_from_json(const std::string& text);

}  // namespace tfex
