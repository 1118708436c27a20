#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "tfex/rng.hpp"
#include "tfex/vae.hpp"

using namespace tfex;

namespace {

ResidualSet gaussian_residuals(std::size_t n, double h, const std::array<double, 3>& mean,
                               std::uint64_t seed) {
    GaussStream rng(seed);
    ResidualSet residuals;
    residuals.d = 3;
    residuals.h = h;
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < 3; ++j)
            residuals.values.push_back(mean[j] + std::sqrt(h) * rng.gauss());
    return residuals;
}

}  // namespace

TEST_CASE("kl divergence closed form") {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(9);
    Eigen::VectorXd sig = Eigen::VectorXd::Ones(9);
    CHECK(kl_divergence(mu, sig) == doctest::Approx(0.0).scale(1).epsilon(1e-15));

    mu[0] = 1.0;
    CHECK(kl_divergence(mu, sig) == doctest::Approx(0.5).epsilon(1e-15));

    mu[0] = 0.0;
    sig[0] = 2.0;
    CHECK(kl_divergence(mu, sig) ==
          doctest::Approx(0.5 * (1.0 - std::log(2.0))).epsilon(1e-12));

    sig[0] = 0.0;
    CHECK_THROWS_AS(kl_divergence(mu, sig), std::invalid_argument);
}

TEST_CASE("kl divergence is nonnegative and zero only at the prior") {
    GaussStream rng(51);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::VectorXd mu(5), sig(5);
        for (int i = 0; i < 5; ++i) {
            mu[i] = rng.gauss();
            sig[i] = 0.05 + 3.0 * rng.uniform();
        }
        const double kl = kl_divergence(mu, sig);
        CHECK(kl >= -1e-12);
        if (mu.norm() > 1e-3 || (sig - Eigen::VectorXd::Ones(5)).norm() > 1e-3)
            CHECK(kl > 1e-8);
    }
}

TEST_CASE("reparameterization sample") {
    Eigen::VectorXd mu(2), sig(2), g(2);
    mu << 1, 1;
    sig << 4, 9;
    g << 1, -1;
    const Eigen::VectorXd z = reparam_sample(mu, sig, g);
    CHECK(z[0] == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(z[1] == doctest::Approx(-2.0).epsilon(1e-15));

    CHECK((reparam_sample(mu, sig, Eigen::VectorXd::Zero(2)) - mu).norm() == 0.0);
    const Eigen::VectorXd zg = reparam_sample(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2), g);
    CHECK((zg - g).norm() == 0.0);
}

TEST_CASE("objective is linear in its three weights") {
    GaussStream rng(52);
    VaeModel model;
    model.latent = 4;
    model.h = 0.01;
    model.encoder = Mlp({3, 6, 8}, Activation::Tanh);
    model.decoder = Mlp({4, 6, 3}, Activation::Tanh);
    model.encoder.init_glorot(52);
    model.decoder.init_glorot(53);

    Eigen::MatrixXd R(10, 3), eps(10, 4);
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 3; ++j) R(i, j) = 0.1 * rng.gauss();
        for (int j = 0; j < 4; ++j) eps(i, j) = rng.gauss();
    }

    const auto loss_with = [&](double am, double av, double bk) {
        VaeModel probe = model;
        probe.alpha_mean = am;
        probe.alpha_var = av;
        probe.beta_kl = bk;
        return vae_loss_grad(probe, R, eps, nullptr);
    };
    const double full = loss_with(0.1, 1.0, 1e-3);
    const double sum = loss_with(0.1, 0, 0) + loss_with(0, 1.0, 0) + loss_with(0, 0, 1e-3);
    CHECK(full == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("joint encoder/decoder gradient matches finite differences") {
    GaussStream rng(54);
    VaeModel model;
    model.latent = 3;
    model.h = 0.01;
    model.alpha_mean = 0.1;
    model.alpha_var = 1.0;
    model.beta_kl = 1e-3;
    model.encoder = Mlp({3, 4, 6}, Activation::Tanh);
    model.decoder = Mlp({3, 4, 3}, Activation::Tanh);
    model.encoder.init_glorot(54);
    model.decoder.init_glorot(55);

    Eigen::MatrixXd R(8, 3), eps(8, 3);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 3; ++j) {
            R(i, j) = 0.1 * rng.gauss();
            eps(i, j) = rng.gauss();
        }

    Eigen::VectorXd grad;
    vae_loss_grad(model, R, eps, &grad);

    const std::size_t n_enc = model.encoder.param_count();
    Eigen::VectorXd p0(n_enc + model.decoder.param_count());
    p0 << model.encoder.get_params(), model.decoder.get_params();
    std::vector<double> pv(p0.data(), p0.data() + p0.size());
    const auto numeric = test::central_diff(
        [&](const std::vector<double>& p) {
            VaeModel probe = model;
            const Eigen::Map<const Eigen::VectorXd> pm(p.data(), p.size());
            probe.encoder.set_params(pm.head(static_cast<Eigen::Index>(n_enc)));
            probe.decoder.set_params(pm.tail(pm.size() - static_cast<Eigen::Index>(n_enc)));
            return vae_loss_grad(probe, R, eps, nullptr);
        },
        pv, 1e-6);
    std::vector<double> av(grad.data(), grad.data() + grad.size());
    CHECK(test::grad_close(av, numeric, 1e-3, 1e-8));
}

TEST_CASE("zero-weight decoder emits its bias") {
    VaeModel model;
    model.latent = 9;
    model.decoder = Mlp({9, 5, 3}, Activation::Tanh);
    model.decoder.b.back() << 1.0, 2.0, 3.0;
    Eigen::MatrixXd gauss = Eigen::MatrixXd::Random(4, 9);
    const Eigen::MatrixXd out = vae_generate(model, gauss);
    CHECK(out.cols() == 3);
    for (int i = 0; i < 4; ++i) {
        CHECK(out(i, 0) == 1.0);
        CHECK(out(i, 1) == 2.0);
        CHECK(out(i, 2) == 3.0);
    }
}

TEST_CASE("training on zero residuals yields near-zero prior samples") {
    ResidualSet residuals;
    residuals.d = 3;
    residuals.h = 0.01;
    residuals.values.assign(3 * 2000, 0.0);
    VaeConfig cfg;
    cfg.train_iters = 500;
    const VaeModel model = train_vae(residuals, cfg, 5);
    const Eigen::MatrixXd samples = model.generate(2000, 6);
    const double rms = std::sqrt(samples.squaredNorm() / static_cast<double>(samples.size()));
    CHECK(rms < 1e-2);
}

TEST_CASE("training on N(0, hI) residuals matches the covariance target") {
    const ResidualSet residuals = gaussian_residuals(20000, 0.01, {0, 0, 0}, 56);
    VaeConfig cfg;
    const VaeModel model = train_vae(residuals, cfg, 7);
    const Eigen::MatrixXd samples = model.generate(10000, 8);
    const Eigen::MatrixXd second = samples.transpose() * samples / 10000.0;
    const Eigen::MatrixXd target = 0.01 * Eigen::MatrixXd::Identity(3, 3);
    CHECK((second - target).norm() < 0.20 * target.norm());
}

TEST_CASE("generated mean tracks a shifted residual distribution") {
    const std::array<double, 3> mu0{0.2, -0.1, 0.15};
    const ResidualSet residuals = gaussian_residuals(20000, 0.01, mu0, 57);
    VaeConfig cfg;
    const VaeModel model = train_vae(residuals, cfg, 9);
    const Eigen::MatrixXd samples = model.generate(10000, 10);
    Eigen::Vector3d mean = samples.colwise().mean().transpose();
    Eigen::Vector3d want(mu0[0], mu0[1], mu0[2]);
    CHECK((mean - want).norm() < 0.10 * want.norm());
}

TEST_CASE("dropping the KL term lowers the reconstruction error") {
    const ResidualSet residuals = gaussian_residuals(4000, 0.01, {0.05, 0, -0.05}, 58);
    VaeConfig with_kl;
    with_kl.train_iters = 800;
    VaeConfig no_kl = with_kl;
    no_kl.beta_kl = 0.0;
    const VaeModel a = train_vae(residuals, with_kl, 21);
    const VaeModel b = train_vae(residuals, no_kl, 21);

    // reconstruction MSE through the posterior mean on the training residuals
    const auto recon_mse = [&](const VaeModel& model) {
        Eigen::MatrixXd R(residuals.count(), 3);
        for (std::size_t i = 0; i < residuals.count(); ++i)
            for (int j = 0; j < 3; ++j)
                R(static_cast<Eigen::Index>(i), j) = residuals.row(i)[j];
        const Eigen::MatrixXd enc = model.encoder.forward_batch(R);
        const Eigen::MatrixXd mu = enc.leftCols(static_cast<Eigen::Index>(model.latent));
        const Eigen::MatrixXd dec = model.decoder.forward_batch(mu);
        return (dec - R).squaredNorm() / static_cast<double>(R.rows());
    };
    CHECK(recon_mse(b) < recon_mse(a));
}

TEST_CASE("vae json round trip") {
    const ResidualSet residuals = gaussian_residuals(512, 0.01, {0, 0, 0}, 59);
    VaeConfig cfg;
    cfg.train_iters = 50;
    const VaeModel model = train_vae(residuals, cfg, 30);
    const VaeModel loaded = vae_from_json(vae_to_json(model));
    CHECK(loaded.latent == model.latent);
    CHECK((loaded.encoder.get_params() - model.encoder.get_params()).norm() == 0.0);
    CHECK((loaded.decoder.get_params() - model.decoder.get_params()).norm() == 0.0);
    CHECK(loaded.h == model.h);
}
