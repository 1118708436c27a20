#include "tfex/vae.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "tfex/rng.hpp"

namespace tfex {

double kl_divergence(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma_sq) {
    if (mu.size() != sigma_sq.size()) throw std::invalid_argument("kl_divergence: size mismatch");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        if (!(sigma_sq[i] > 0.0))
            throw std::invalid_argument("kl_divergence: variances must be positive");
        acc += mu[i] * mu[i] + sigma_sq[i] - std::log(sigma_sq[i]);
    }
    return 0.5 * (acc - static_cast<double>(mu.size()));
}

Eigen::VectorXd reparam_sample(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma_sq,
                               const Eigen::VectorXd& gauss) {
    if (mu.size() != sigma_sq.size() || mu.size() != gauss.size())
        throw std::invalid_argument("reparam_sample: size mismatch");
    return mu + sigma_sq.cwiseSqrt().cwiseProduct(gauss);
}

double vae_loss_grad(const VaeModel& model, const Eigen::MatrixXd& R, const Eigen::MatrixXd& eps,
                     Eigen::VectorXd* grad) {
    const auto n = R.rows();
    const auto d = R.cols();
    const auto L = static_cast<Eigen::Index>(model.latent);
    if (eps.rows() != n || eps.cols() != L)
        throw std::invalid_argument("vae_loss_grad: eps shape mismatch");
    const double inv_n = 1.0 / static_cast<double>(n);

    const Eigen::MatrixXd enc_out = model.encoder.forward_batch(R);
    const Eigen::MatrixXd mu = enc_out.leftCols(L);
    const Eigen::MatrixXd logvar = enc_out.rightCols(L);
    const Eigen::MatrixXd std_dev = (logvar.array() / 2.0).exp().matrix();
    const Eigen::MatrixXd z = mu + std_dev.cwiseProduct(eps);
    const Eigen::MatrixXd G = model.decoder.forward_batch(z);

    const double rec = model.alpha_mean * (G - R).squaredNorm() * inv_n;
    const Eigen::MatrixXd S_hat = G.transpose() * G * inv_n;
    const Eigen::MatrixXd C = S_hat - model.h * Eigen::MatrixXd::Identity(d, d);
    const double cov = model.alpha_var * C.squaredNorm();
    double kl = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        kl += 0.5 * (mu.row(i).squaredNorm() + logvar.row(i).array().exp().sum() -
                     logvar.row(i).sum() - static_cast<double>(L));
    kl *= model.beta_kl * inv_n;
    const double loss = rec + cov + kl;
    if (!grad) return loss;

    Eigen::MatrixXd dG = 2.0 * model.alpha_mean * inv_n * (G - R);
    dG += 4.0 * model.alpha_var * inv_n * G * C;

    Eigen::MatrixXd dz;
    const Eigen::VectorXd dec_grad = model.decoder.backward_batch(z, dG, &dz);

    Eigen::MatrixXd dmu = dz;
    Eigen::MatrixXd dlogvar = dz.cwiseProduct(eps).cwiseProduct(std_dev) * 0.5;
    dmu += model.beta_kl * inv_n * mu;
    dlogvar += model.beta_kl * inv_n * 0.5 *
               (logvar.array().exp() - 1.0).matrix();

    Eigen::MatrixXd d_enc(n, 2 * L);
    d_enc << dmu, dlogvar;
    const Eigen::VectorXd enc_grad = model.encoder.backward_batch(R, d_enc);

    grad->resize(enc_grad.size() + dec_grad.size());
    *grad << enc_grad, dec_grad;
    return loss;
}

VaeModel train_vae(const ResidualSet& residuals, const VaeConfig& cfg, std::uint64_t seed,
                   TrainTrace* trace) {
    const std::size_t n = residuals.count();
    if (n < 1) throw std::invalid_argument("train_vae: empty residual set");
    const std::size_t d = residuals.d;

    Eigen::MatrixXd R(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = residuals.row(i);
        for (std::size_t j = 0; j < d; ++j)
            R(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }

    VaeModel model;
    model.latent = cfg.latent;
    model.h = residuals.h;
    model.alpha_mean = cfg.alpha_mean;
    model.alpha_var = cfg.alpha_var;
    model.beta_kl = cfg.beta_kl;
    model.encoder = Mlp({d, cfg.hidden, 2 * cfg.latent}, Activation::Tanh);
    model.decoder = Mlp({cfg.latent, cfg.hidden, d}, Activation::Tanh);
    model.encoder.init_glorot(stream_seed(seed, 0xae01));
    model.decoder.init_glorot(stream_seed(seed, 0xae02));

    const std::size_t n_enc = model.encoder.param_count();
    Eigen::VectorXd params(n_enc + model.decoder.param_count());
    params << model.encoder.get_params(), model.decoder.get_params();

    AdamState adam(static_cast<std::size_t>(params.size()), cfg.lr, cfg.weight_decay);
    GaussStream pick(stream_seed(seed, 0xae03));

    const std::size_t batch = std::min(cfg.minibatch, n);
    Eigen::MatrixXd br(batch, d);
    Eigen::MatrixXd eps(batch, cfg.latent);
    Eigen::VectorXd grad;

    for (std::size_t it = 0; it < cfg.train_iters; ++it) {
        if (batch == n) {
            br = R;
        } else {
            for (std::size_t r = 0; r < batch; ++r)
                br.row(static_cast<Eigen::Index>(r)) =
                    R.row(static_cast<Eigen::Index>(pick.below(n)));
        }
        for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t l = 0; l < cfg.latent; ++l)
                eps(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(l)) = pick.gauss();

        model.encoder.set_params(params.head(static_cast<Eigen::Index>(n_enc)));
        model.decoder.set_params(params.tail(params.size() - static_cast<Eigen::Index>(n_enc)));
        const double loss = vae_loss_grad(model, br, eps, &grad);
        if (!std::isfinite(loss))
            throw std::runtime_error("train_vae: loss diverged at iteration " + std::to_string(it));
        if (trace) trace->loss.push_back(loss);
        adam_step(params, grad, adam);
    }
    model.encoder.set_params(params.head(static_cast<Eigen::Index>(n_enc)));
    model.decoder.set_params(params.tail(params.size() - static_cast<Eigen::Index>(n_enc)));
    if (trace && !trace->loss.empty()) trace->final_loss = trace->loss.back();
    return model;
}

Eigen::MatrixXd vae_generate(const VaeModel& model, const Eigen::MatrixXd& gauss) {
    if (static_cast<std::size_t>(gauss.cols()) != model.latent)
        throw std::invalid_argument("vae_generate: latent dimension mismatch");
    return model.decoder.forward_batch(gauss);
}

Eigen::MatrixXd VaeModel::generate(std::size_t n, std::uint64_t seed) const {
    Eigen::MatrixXd gauss(n, latent);
    GaussStream rng(stream_seed(seed, 0xae04));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < latent; ++l)
            gauss(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = rng.gauss();
    return vae_generate(*this, gauss);
}

std::string vae_to_json(const VaeModel& model) {
    nlohmann::json j;
    j["encoder"] = nlohmann::json::parse(mlp_to_json(model.encoder));
    j["decoder"] = nlohmann::json::parse(mlp_to_json(model.decoder));
    j["latent"] = model.latent;
    j["h"] = model.h;
    j["alpha_mean"] = model.alpha_mean;
    j["alpha_var"] = model.alpha_var;
    j["beta_kl"] = model.beta_kl;
    return j.dump();
}

VaeModel vae_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    VaeModel m;
    m.encoder = mlp_from_json(j.at("encoder").dump());
    m.decoder = mlp_from_json(j.at("decoder").dump());
    m.latent = j.at("latent").get<std::size_t>();
    m.h = j.at("h").get<double>();
    m.alpha_mean = j.at("alpha_mean").get<double>();
    m.alpha_var = j.at("alpha_var").get<double>();
    m.beta_kl = j.at("beta_kl").get<double>();
    return m;
}

}  // namespace tfex
