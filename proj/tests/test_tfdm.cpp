#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "tfex/residual.hpp"
#include "tfex/rng.hpp"
#include "tfex/sde.hpp"
#include "tfex/tfdm.hpp"

using namespace tfex;

namespace {

// log of the unnormalized mixture density at diffusion time tau
double log_mixture_density(std::span<const double> z, double tau,
                           std::span<const double> centers, std::size_t d, double c0,
                           const DiffusionSchedule& s) {
    const std::size_t k = centers.size() / d;
    const double alpha = s.alpha(tau);
    const double var = alpha * alpha * c0 * c0 + s.beta_sq(tau);
    double max_log = -1e300;
    std::vector<double> logs(k);
    for (std::size_t n = 0; n < k; ++n) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double diff = z[i] - alpha * centers[n * d + i];
            d2 += diff * diff;
        }
        logs[n] = -d2 / (2.0 * var);
        max_log = std::max(max_log, logs[n]);
    }
    double sum = 0.0;
    for (double l : logs) sum += std::exp(l - max_log);
    return max_log + std::log(sum);
}

struct Moments {
    std::vector<double> mean;
    Eigen::MatrixXd cov;
};

Moments sample_moments(const std::vector<std::vector<double>>& samples, std::size_t d) {
    Moments m;
    m.mean.assign(d, 0.0);
    for (const auto& s : samples)
        for (std::size_t i = 0; i < d; ++i) m.mean[i] += s[i];
    for (double& v : m.mean) v /= static_cast<double>(samples.size());
    m.cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& s : samples) {
        Eigen::VectorXd c(d);
        for (std::size_t i = 0; i < d; ++i) c[static_cast<Eigen::Index>(i)] = s[i] - m.mean[i];
        m.cov += c * c.transpose();
    }
    m.cov /= static_cast<double>(samples.size());
    return m;
}

}  // namespace

TEST_CASE("drift coefficients follow the schedule derivatives") {
    const DiffusionSchedule s{2000, 0.0};
    const auto mid = drift_coeffs(0.5, s);
    CHECK(mid.b == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(mid.q_sq == doctest::Approx(3.0).epsilon(1e-12));

    // the clipped lower endpoint approaches the analytic limits b=-1, q^2=1
    const auto low = drift_coeffs(s.clip(), s);
    CHECK(low.b == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(low.q_sq == doctest::Approx(1.0).epsilon(1e-3));

    CHECK_THROWS_AS(drift_coeffs(0.0, s), std::invalid_argument);
    CHECK_THROWS_AS(drift_coeffs(1.0, s), std::invalid_argument);

    // positivity across the clipped range
    for (double tau = s.clip(); tau <= 1.0 - s.clip(); tau += 0.01)
        CHECK(drift_coeffs(tau, s).q_sq > 0.0);
}

TEST_CASE("single-center score is the Gaussian score") {
    const DiffusionSchedule s{2000, 0.0};
    const std::vector<double> centers{0, 0, 0};
    const std::vector<double> z{1, 0, 0};
    const auto score = gmm_score(z, 0.5, centers, 3, 0.2, s);
    CHECK(score[0] == doctest::Approx(-1.0 / 0.51).epsilon(1e-12));
    CHECK(score[1] == 0.0);
    CHECK(score[2] == 0.0);
}

TEST_CASE("score vanishes at the mean of a symmetric two-center mixture") {
    const DiffusionSchedule s{2000, 0.0};
    const std::vector<double> centers{1.5, 0.5, -1.0, -1.5, -0.5, 1.0};
    const std::vector<double> z{0, 0, 0};
    const auto score = gmm_score(z, 0.3, centers, 3, 0.4, s);
    for (double v : score) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("score equals the finite-difference gradient of the log density") {
    const DiffusionSchedule s{2000, 0.0};
    GaussStream rng(61);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t k = 10;
        std::vector<double> centers(k * 3);
        for (double& v : centers) v = rng.gauss();
        const double c0 = 0.1 + 0.4 * rng.uniform();
        const double tau = 0.05 + 0.9 * rng.uniform();
        std::vector<double> z{rng.gauss(), rng.gauss(), rng.gauss()};

        const auto analytic = gmm_score(z, tau, centers, 3, c0, s);
        const auto numeric = test::central_diff(
            [&](const std::vector<double>& zz) {
                return log_mixture_density(zz, tau, centers, 3, c0, s);
            },
            z, 1e-5);
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(std::abs(analytic[i] - numeric[i]) < 1e-4);
    }
}

TEST_CASE("reverse flow of a unit Gaussian target reproduces N(0, I)") {
    const DiffusionSchedule s{2000, 0.0};
    const std::vector<double> centers{0, 0, 0};
    GaussStream rng(62);
    const std::size_t n = 10000;
    std::vector<std::vector<double>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> xi{rng.gauss(), rng.gauss(), rng.gauss()};
        out[i] = reverse_ode_solve(xi, centers, 3, 1.0, s);
    }
    const Moments m = sample_moments(out, 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(m.mean[i]) < 0.05);
        CHECK(std::abs(m.cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) - 1.0) <
              0.1);
    }
}

TEST_CASE("well-separated centers produce balanced bimodal mass") {
    const DiffusionSchedule s{2000, 0.0};
    const std::vector<double> centers{5, 0, 0, -5, 0, 0};
    GaussStream rng(63);
    const std::size_t n = 10000;
    std::size_t plus = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> xi{rng.gauss(), rng.gauss(), rng.gauss()};
        const auto y = reverse_ode_solve(xi, centers, 3, 0.1, s);
        CHECK(std::abs(std::abs(y[0]) - 5.0) < 1.0);  // lands near one of the modes
        if (y[0] > 0) ++plus;
    }
    const double frac = static_cast<double>(plus) / static_cast<double>(n);
    CHECK(std::abs(frac - 0.5) < 0.05);
}

TEST_CASE("odd symmetry of the flow keeps the origin on the symmetry plane") {
    const DiffusionSchedule s{500, 0.0};
    const std::vector<double> centers{2.0, 1.0, -0.5, -2.0, 1.0, -0.5};
    const std::vector<double> xi{0, 0.3, -0.2};
    const auto y = reverse_ode_solve(xi, centers, 3, 0.3, s);
    CHECK(std::abs(y[0]) < 1e-8);
}

TEST_CASE("halving the clip changes terminal moments by well under 2%") {
    const std::vector<double> centers{0.4, -0.2, 0.3};
    GaussStream rng(64);
    const std::size_t n = 2000;
    std::vector<std::vector<double>> xs(n);
    for (auto& xi : xs) xi = {rng.gauss(), rng.gauss(), rng.gauss()};

    const DiffusionSchedule coarse{2000, 0.0};           // delta = 1/(2K)
    const DiffusionSchedule fine{2000, 0.25 / 2000.0};   // delta halved
    std::vector<std::vector<double>> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = reverse_ode_solve(xs[i], centers, 3, 0.5, coarse);
        b[i] = reverse_ode_solve(xs[i], centers, 3, 0.5, fine);
    }
    const Moments ma = sample_moments(a, 3);
    const Moments mb = sample_moments(b, 3);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(std::abs(ma.mean[i] - mb.mean[i]) <
              0.02 * std::max(0.05, std::abs(mb.mean[i])));
    CHECK((ma.cov - mb.cov).norm() < 0.02 * mb.cov.norm());
}

TEST_CASE("distillation net learns the zero map and the identity map") {
    TfdmConfig cfg;
    cfg.train_iters = 800;
    GaussStream rng(65);
    const std::size_t n = 512;
    Eigen::MatrixXd xi(n, 3), zero(n, 3);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < 3; ++j) {
            xi(static_cast<Eigen::Index>(i), j) = rng.gauss();
            zero(static_cast<Eigen::Index>(i), j) = 0.0;
        }
    TrainTrace trace;
    const Mlp to_zero = train_tfdm_net(xi, zero, cfg, 1, &trace);
    CHECK(trace.final_loss < 1e-4);

    cfg.train_iters = 2000;
    const Mlp to_ident = train_tfdm_net(xi, xi, cfg, 2);
    double held_out = 0.0;
    std::size_t count = 0;
    for (int i = 0; i < 500; ++i) {
        Eigen::Vector3d x(rng.gauss(), rng.gauss(), rng.gauss());
        if (x.norm() > 1.0) continue;
        held_out += (to_ident.forward(x) - x).squaredNorm();
        ++count;
    }
    REQUIRE(count > 50);
    CHECK(held_out / static_cast<double>(count) < 1e-2);
}

TEST_CASE("end-to-end single-Gaussian pipeline matches the smoothed target") {
    // residuals drawn from N(R0, s^2 I); the trained sampler must reproduce
    // mean(centers) and cov(centers) + C0^2 diag within 10%
    GaussStream rng(66);
    ResidualSet residuals;
    residuals.d = 3;
    residuals.h = 0.01;
    const std::array<double, 3> R0{0.05, -0.03, 0.02};
    const double s = 0.1;
    for (int i = 0; i < 4096; ++i)
        for (int j = 0; j < 3; ++j) residuals.values.push_back(R0[j] + s * rng.gauss());

    TfdmConfig cfg;
    cfg.K = 500;
    cfg.pairs = 2048;
    cfg.center_count = 1024;
    cfg.train_iters = 2000;
    const TfdmSampler sampler = train_tfdm(residuals, cfg, 7);

    const std::size_t n = 10000;
    std::vector<std::vector<double>> out(n);
    GaussStream draw(67);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> xi{draw.gauss(), draw.gauss(), draw.gauss()};
        out[i] = sampler.sample(xi);
    }
    const Moments m = sample_moments(out, 3);

    // exact smoothed-target moments from the actual residual set
    const auto mu = residual_centroid(residuals);
    const auto sd = residual_componentwise_std(residuals);
    Eigen::MatrixXd target = Eigen::MatrixXd::Zero(3, 3);
    {
        for (std::size_t i = 0; i < residuals.count(); ++i) {
            Eigen::Vector3d c;
            for (int j = 0; j < 3; ++j) c[j] = residuals.row(i)[j] - mu[j];
            target += c * c.transpose();
        }
        target /= static_cast<double>(residuals.count());
        for (int j = 0; j < 3; ++j)
            target(j, j) += (cfg.c0_factor * sd[j]) * (cfg.c0_factor * sd[j]);
    }
    for (int j = 0; j < 3; ++j)
        CHECK(std::abs(m.mean[j] - mu[j]) < 0.1 * std::max(0.02, std::abs(mu[j])));
    CHECK((m.cov - target).norm() < 0.10 * target.norm());
}

TEST_CASE("tfdm training is deterministic and serializable") {
    GaussStream rng(68);
    ResidualSet residuals;
    residuals.d = 3;
    residuals.h = 0.01;
    for (int i = 0; i < 512; ++i)
        for (int j = 0; j < 3; ++j) residuals.values.push_back(0.1 * rng.gauss());

    TfdmConfig cfg;
    cfg.K = 100;
    cfg.pairs = 128;
    cfg.train_iters = 100;
    const TfdmSampler a = train_tfdm(residuals, cfg, 99);
    const TfdmSampler b = train_tfdm(residuals, cfg, 99);
    CHECK((a.net.get_params() - b.net.get_params()).norm() == 0.0);
    CHECK(a.scale == b.scale);

    const TfdmSampler loaded = tfdm_from_json(tfdm_to_json(a));
    const std::vector<double> xi{0.3, -0.5, 0.8};
    CHECK(loaded.sample(xi) == a.sample(xi));
}

TEST_CASE("time-dependent variant trains one net per step and clamps beyond") {
    RegimeSpec spec = regime_preset(2);
    const auto batch = simulate_batch(spec, default_initial_distribution(), 64, 5, 0.01, 70);
    std::vector<ExpressionTemplate> exprs;
    for (std::size_t comp = 0; comp < 3; ++comp)
        exprs.push_back(ground_truth_template(spec, comp));

    TfdmConfig cfg;
    cfg.K = 50;
    cfg.pairs_per_step = 64;
    cfg.step_train_iters = 60;
    cfg.center_count = 64;
    const TimeDependentTfdm model = train_tfdm_time_dependent(batch, exprs, cfg, 71);
    CHECK(model.nets.size() == batch.N);

    const std::vector<double> xi{0.2, -0.1, 0.4};
    const auto last = model.sample(batch.N - 1, xi);
    const auto beyond = model.sample(batch.N + 100, xi);
    CHECK(last == beyond);
    for (double v : model.sample(0, xi)) CHECK(std::isfinite(v));

    const TimeDependentTfdm loaded = tfdm_timedep_from_json(tfdm_timedep_to_json(model));
    CHECK(loaded.sample(2, xi) == model.sample(2, xi));
}
