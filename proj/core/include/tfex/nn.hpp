#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tfex {

enum class Activation { ReLU, Tanh };

/// Fully connected net with one activation for all hidden layers and a linear
/// output layer.
struct Mlp {
    std::vector<std::size_t> sizes;
    Activation activation = Activation::Tanh;
    std::vector<Eigen::MatrixXd> W;  // layer l maps sizes[l] -> sizes[l+1]
    std::vector<Eigen::VectorXd> b;

    Mlp() = default;
    Mlp(std::vector<std::size_t> layer_sizes, Activation act);

    std::size_t layers() const { return W.size(); }
    std::size_t in_dim() const { return sizes.front(); }
    std::size_t out_dim() const { return sizes.back(); }
    std::size_t param_count() const;

    /// Uniform(-r, r) with r = sqrt(6/(fan_in+fan_out)), seeded.
    void init_glorot(std::uint64_t seed);

    Eigen::VectorXd get_params() const;
    void set_params(const Eigen::VectorXd& p);

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
    /// Rows are samples.
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& X) const;

    /// Parameter gradient (flattened like get_params) of sum_ij dY_ij * Y_ij
    /// for the batch; optionally also the gradient w.r.t. the input rows.
    Eigen::VectorXd backward_batch(const Eigen::MatrixXd& X, const Eigen::MatrixXd& dY,
                                   Eigen::MatrixXd* dX = nullptr) const;
};

std::string mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const std::string& text);

/// Adam with decoupled weight decay; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::size_t step = 0;
    Eigen::VectorXd m;
    Eigen::VectorXd v;

    AdamState(std::size_t n, double lr_, double weight_decay_ = 0.0)
        : lr(lr_), weight_decay(weight_decay_), m(Eigen::VectorXd::Zero(n)),
          v(Eigen::VectorXd::Zero(n)) {}
};

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state);
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state,
               double lr_override);

/// lr0 * (1 + cos(pi*step/total)) / 2.
double cosine_lr(std::size_t step, std::size_t total, double lr0);

/// Objective callback: returns f(x) and fills grad when non-null.
using ObjectiveFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

/// Limited-memory quasi-Newton descent (memory 10) with backtracking line
/// search; the objective never increases across accepted steps. Returns the
/// input unchanged when the line search fails on the first iteration.
Eigen::VectorXd quasi_newton_refine(const ObjectiveFn& fn, Eigen::VectorXd params,
                                    std::size_t iters);

}  // namespace tfex
