#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "tfex/rng.hpp"
#include "tfex/sran.hpp"
#include "tfex/stats.hpp"

using namespace tfex;

namespace {

Mlp identity_net(std::size_t d) {
    Mlp net({d, d}, Activation::Tanh);
    net.W[0] = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d),
                                         static_cast<Eigen::Index>(d));
    return net;
}

}  // namespace

TEST_CASE("loss is zero for zero outputs, zero targets and h=0") {
    Mlp net({3, 8, 3}, Activation::Tanh);  // zero-initialized => G == 0
    Eigen::MatrixXd xi = Eigen::MatrixXd::Random(16, 3);
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(16, 3);
    CHECK(sran_loss(net, xi, R, 0.1, 0.0) == 0.0);
}

TEST_CASE("regularizer alone gives lambda * d * h^2") {
    Mlp net({3, 8, 3}, Activation::Tanh);
    Eigen::MatrixXd xi = Eigen::MatrixXd::Random(16, 3);
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(16, 3);
    CHECK(sran_loss(net, xi, R, 0.1, 0.01) == doctest::Approx(3e-5).epsilon(1e-12));
}

TEST_CASE("lambda = 0 reduces the loss to plain MSE") {
    GaussStream rng(41);
    Mlp net({3, 6, 3}, Activation::Tanh);
    net.init_glorot(41);
    Eigen::MatrixXd xi(32, 3), R(32, 3);
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 3; ++j) {
            xi(i, j) = rng.gauss();
            R(i, j) = rng.gauss();
        }
    const double loss = sran_loss(net, xi, R, 0.0, 0.01);
    const double mse = (net.forward_batch(xi) - R).squaredNorm() / 32.0;
    CHECK(loss == doctest::Approx(mse).epsilon(1e-14));
}

TEST_CASE("exact pairing with matched second moment has zero loss gradient") {
    // identity net fed its own targets: the MSE term and its gradient vanish;
    // rows are scaled basis vectors so the sample second moment equals h I
    const double h = 0.01;
    Mlp net = identity_net(3);
    Eigen::MatrixXd xi(3, 3);
    xi.setZero();
    const double r = std::sqrt(3.0 * h);
    xi(0, 0) = r;
    xi(1, 1) = r;
    xi(2, 2) = r;
    Eigen::VectorXd grad;
    const double loss = sran_loss_grad(net, xi, xi, 0.1, h, grad);
    CHECK(loss < 1e-28);
    CHECK(grad.norm() < 1e-12);
}

TEST_CASE("paired but random targets drive the second term to zero with batch size") {
    GaussStream rng(42);
    const double h = 0.01;
    Mlp net = identity_net(3);
    const std::size_t n = 20000;
    Eigen::MatrixXd R(n, 3);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < 3; ++j)
            R(static_cast<Eigen::Index>(i), j) = std::sqrt(h) * rng.gauss();
    const double loss = sran_loss(net, R, R, 0.1, h);  // first term exactly 0
    CHECK(loss < 1e-6);
}

TEST_CASE("analytic gradient matches finite differences") {
    GaussStream rng(43);
    Mlp net({3, 5, 3}, Activation::Tanh);
    net.init_glorot(43);
    Eigen::MatrixXd xi(12, 3), R(12, 3);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 3; ++j) {
            xi(i, j) = rng.gauss();
            R(i, j) = 0.1 * rng.gauss();
        }
    Eigen::VectorXd grad;
    sran_loss_grad(net, xi, R, 0.1, 0.01, grad);

    const Eigen::VectorXd p0 = net.get_params();
    std::vector<double> pv(p0.data(), p0.data() + p0.size());
    const auto numeric = test::central_diff(
        [&](const std::vector<double>& p) {
            Mlp probe = net;
            probe.set_params(Eigen::Map<const Eigen::VectorXd>(p.data(), p.size()));
            return sran_loss(probe, xi, R, 0.1, 0.01);
        },
        pv, 1e-6);
    std::vector<double> av(grad.data(), grad.data() + grad.size());
    CHECK(test::grad_close(av, numeric, 1e-4, 1e-8));
}

TEST_CASE("training on zero residuals produces near-zero samples") {
    ResidualSet residuals;
    residuals.d = 3;
    residuals.h = 0.01;
    residuals.values.assign(3 * 2000, 0.0);
    SranConfig cfg;
    cfg.train_iters = 500;
    const SranModel model = train_sran(residuals, cfg, 3);
    const Eigen::MatrixXd samples = model.generate(2000, 5);
    const double rms = std::sqrt(samples.squaredNorm() / static_cast<double>(samples.size()));
    CHECK(rms < 1e-2);
}

TEST_CASE("training on N(0, hI) residuals matches the covariance target") {
    GaussStream rng(44);
    const double h = 0.01;
    ResidualSet residuals;
    residuals.d = 3;
    residuals.h = h;
    for (int i = 0; i < 20000; ++i)
        for (int j = 0; j < 3; ++j) residuals.values.push_back(std::sqrt(h) * rng.gauss());

    SranConfig cfg;
    const SranModel model = train_sran(residuals, cfg, 11);
    const Eigen::MatrixXd samples = model.generate(10000, 12);
    const Eigen::MatrixXd second = samples.transpose() * samples / 10000.0;
    const Eigen::MatrixXd target = h * Eigen::MatrixXd::Identity(3, 3);
    CHECK((second - target).norm() < 0.15 * target.norm());
}

TEST_CASE("training is deterministic under a fixed seed") {
    GaussStream rng(45);
    ResidualSet residuals;
    residuals.d = 3;
    residuals.h = 0.01;
    for (int i = 0; i < 512; ++i)
        for (int j = 0; j < 3; ++j) residuals.values.push_back(0.1 * rng.gauss());
    SranConfig cfg;
    cfg.train_iters = 200;
    const SranModel a = train_sran(residuals, cfg, 77);
    const SranModel b = train_sran(residuals, cfg, 77);
    CHECK((a.net.get_params() - b.net.get_params()).norm() == 0.0);
}

TEST_CASE("sran json round trip") {
    GaussStream rng(46);
    ResidualSet residuals;
    residuals.d = 3;
    residuals.h = 0.01;
    for (int i = 0; i < 256; ++i)
        for (int j = 0; j < 3; ++j) residuals.values.push_back(0.1 * rng.gauss());
    SranConfig cfg;
    cfg.train_iters = 50;
    const SranModel model = train_sran(residuals, cfg, 78);
    const SranModel loaded = sran_from_json(sran_to_json(model));
    CHECK(loaded.lambda == model.lambda);
    CHECK(loaded.h == model.h);
    CHECK((loaded.net.get_params() - model.net.get_params()).norm() == 0.0);
}
