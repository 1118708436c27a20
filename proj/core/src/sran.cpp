#include "tfex/sran.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "tfex/rng.hpp"

namespace tfex {

namespace {

// dL/dG_i for the combined objective; S_hat is the biased sample second moment.
Eigen::MatrixXd loss_output_grad(const Eigen::MatrixXd& G, const Eigen::MatrixXd& R,
                                 double lambda, double h) {
    const double n = static_cast<double>(G.rows());
    const Eigen::MatrixXd S_hat = G.transpose() * G / n;
    const Eigen::MatrixXd C =
        S_hat - h * Eigen::MatrixXd::Identity(G.cols(), G.cols());
    Eigen::MatrixXd dG = 2.0 / n * (G - R);
    dG += 4.0 * lambda / n * G * C;  // d/dG_i of lambda*||S_hat - hI||_F^2
    return dG;
}

double loss_value(const Eigen::MatrixXd& G, const Eigen::MatrixXd& R, double lambda, double h) {
    const double n = static_cast<double>(G.rows());
    const double mse = (G - R).squaredNorm() / n;
    const Eigen::MatrixXd S_hat = G.transpose() * G / n;
    const Eigen::MatrixXd C = S_hat - h * Eigen::MatrixXd::Identity(G.cols(), G.cols());
    return mse + lambda * C.squaredNorm();
}

}  // namespace

double sran_loss(const Mlp& net, const Eigen::MatrixXd& xi, const Eigen::MatrixXd& R,
                 double lambda, double h) {
    if (xi.rows() != R.rows()) throw std::invalid_argument("sran_loss: batch size mismatch");
    return loss_value(net.forward_batch(xi), R, lambda, h);
}

double sran_loss_grad(const Mlp& net, const Eigen::MatrixXd& xi, const Eigen::MatrixXd& R,
                      double lambda, double h, Eigen::VectorXd& grad) {
    if (xi.rows() != R.rows()) throw std::invalid_argument("sran_loss_grad: batch size mismatch");
    const Eigen::MatrixXd G = net.forward_batch(xi);
    grad = net.backward_batch(xi, loss_output_grad(G, R, lambda, h));
    return loss_value(G, R, lambda, h);
}

SranModel train_sran(const ResidualSet& residuals, const SranConfig& cfg, std::uint64_t seed,
                     TrainTrace* trace) {
    const std::size_t n = residuals.count();
    if (n < 1) throw std::invalid_argument("train_sran: empty residual set");
    const std::size_t d = residuals.d;

    // fixed random matching of Gaussian inputs to residuals
    Eigen::MatrixXd xi(n, d), R(n, d);
    GaussStream pair_rng(stream_seed(seed, 0x52a0));
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = residuals.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            xi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pair_rng.gauss();
            R(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
        }
    }

    SranModel model;
    model.lambda = cfg.lambda;
    model.h = residuals.h;
    model.net = Mlp({d, cfg.hidden, d}, Activation::Tanh);
    model.net.init_glorot(stream_seed(seed, 0x52a1));

    Eigen::VectorXd params = model.net.get_params();
    AdamState adam(static_cast<std::size_t>(params.size()), cfg.lr, cfg.weight_decay);
    GaussStream pick(stream_seed(seed, 0x52a2));

    const std::size_t batch = std::min(cfg.minibatch, n);
    Eigen::MatrixXd bx(batch, d), br(batch, d);
    Eigen::VectorXd grad;

    for (std::size_t it = 0; it < cfg.train_iters; ++it) {
        if (batch == n && !cfg.repair_each_iteration) {
            bx = xi;
            br = R;
        } else {
            for (std::size_t r = 0; r < batch; ++r) {
                const auto s = static_cast<Eigen::Index>(pick.below(n));
                br.row(static_cast<Eigen::Index>(r)) = R.row(s);
                if (cfg.repair_each_iteration) {
                    for (std::size_t j = 0; j < d; ++j)
                        bx(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
                            pick.gauss();
                } else {
                    bx.row(static_cast<Eigen::Index>(r)) = xi.row(s);
                }
            }
        }
        model.net.set_params(params);
        const double loss = sran_loss_grad(model.net, bx, br, cfg.lambda, model.h, grad);
        if (!std::isfinite(loss))
            throw std::runtime_error("train_sran: loss diverged at iteration " +
                                     std::to_string(it));
        if (trace) trace->loss.push_back(loss);
        adam_step(params, grad, adam);
    }
    model.net.set_params(params);
    if (trace) trace->final_loss = sran_loss(model.net, xi, R, cfg.lambda, model.h);
    return model;
}

Eigen::MatrixXd SranModel::generate(std::size_t n, std::uint64_t seed) const {
    const std::size_t d = net.in_dim();
    Eigen::MatrixXd xi(n, d);
    GaussStream rng(stream_seed(seed, 0x52a3));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            xi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.gauss();
    return net.forward_batch(xi);
}

std::string sran_to_json(const SranModel& model) {
    nlohmann::json j;
    j["net"] = nlohmann::json::parse(mlp_to_json(model.net));
    j["lambda"] = model.lambda;
    j["h"] = model.h;
    return j.dump();
}

SranModel sran_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    SranModel m;
    m.net = mlp_from_json(j.at("net").dump());
    m.lambda = j.at("lambda").get<double>();
    m.h = j.at("h").get<double>();
    return m;
}

}  // namespace tfex
