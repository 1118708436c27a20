#include "tfex/tfdm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "tfex/parallel.hpp"
#include "tfex/rng.hpp"

namespace tfex {

DriftCoeffs drift_coeffs(double tau, const DiffusionSchedule& schedule) {
    const double d = schedule.clip();
    if (!(tau >= d - 1e-15 && tau <= 1.0 - d + 1e-15))
        throw std::invalid_argument("drift_coeffs: tau outside clipped range");
    // b = d/dtau log(1-tau), q^2 = d/dtau tau - 2 tau b
    const double b = -1.0 / (1.0 - tau);
    const double q_sq = (1.0 + tau) / (1.0 - tau);
    return {b, q_sq};
}

namespace {

// Score accumulation shared by gmm_score and the flow integrator; logw is a
// reusable k-sized workspace.
void score_into(std::span<const double> z, double tau, std::span<const double> centers,
                std::size_t d, double c0, std::vector<double>& logw, double* out,
                const DiffusionSchedule& schedule) {
    const std::size_t k = centers.size() / d;
    const double alpha = schedule.alpha(tau);
    const double var = alpha * alpha * c0 * c0 + schedule.beta_sq(tau);
    const double inv2v = 1.0 / (2.0 * var);

    logw.resize(k);
    double max_log = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < k; ++n) {
        const double* r = centers.data() + n * d;
        double d2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double diff = z[i] - alpha * r[i];
            d2 += diff * diff;
        }
        logw[n] = -d2 * inv2v;
        max_log = std::max(max_log, logw[n]);
    }
    double wsum = 0.0;
    for (std::size_t i = 0; i < d; ++i) out[i] = 0.0;
    for (std::size_t n = 0; n < k; ++n) {
        const double w = std::exp(logw[n] - max_log);
        wsum += w;
        const double* r = centers.data() + n * d;
        for (std::size_t i = 0; i < d; ++i) out[i] += w * (z[i] - alpha * r[i]);
    }
    const double c = -1.0 / (var * wsum);
    for (std::size_t i = 0; i < d; ++i) out[i] *= c;
}

}  // namespace

std::vector<double> gmm_score(std::span<const double> z, double tau,
                              std::span<const double> centers, std::size_t d, double c0,
                              const DiffusionSchedule& schedule) {
    if (d == 0 || centers.empty() || centers.size() % d != 0)
        throw std::invalid_argument("gmm_score: bad center set");
    if (z.size() != d) throw std::invalid_argument("gmm_score: z dimension mismatch");
    drift_coeffs(tau, schedule);  // validates the clipped range
    std::vector<double> logw;
    std::vector<double> out(d);
    score_into(z, tau, centers, d, c0, logw, out.data(), schedule);
    return out;
}

std::vector<double> reverse_ode_solve(std::span<const double> xi,
                                      std::span<const double> centers, std::size_t d, double c0,
                                      const DiffusionSchedule& schedule) {
    if (d == 0 || centers.empty() || centers.size() % d != 0)
        throw std::invalid_argument("reverse_ode_solve: bad center set");
    if (xi.size() != d) throw std::invalid_argument("reverse_ode_solve: xi dimension mismatch");

    const double delta = schedule.clip();
    const double step = (1.0 - 2.0 * delta) / static_cast<double>(schedule.K);

    std::vector<double> z(xi.begin(), xi.end());
    std::vector<double> score(d);
    std::vector<double> logw;
    for (std::size_t k = 0; k < schedule.K; ++k) {
        const double tau = 1.0 - delta - static_cast<double>(k) * step;
        const auto [b, q_sq] = drift_coeffs(tau, schedule);
        score_into(z, tau, centers, d, c0, logw, score.data(), schedule);
        for (std::size_t i = 0; i < d; ++i) {
            z[i] -= step * (b * z[i] - 0.5 * q_sq * score[i]);
            if (!std::isfinite(z[i]))
                throw std::runtime_error("reverse_ode_solve: non-finite state at step " +
                                         std::to_string(k));
        }
    }
    return z;
}

std::vector<double> TfdmSampler::sample(std::span<const double> xi) const {
    Eigen::VectorXd x(xi.size());
    for (std::size_t i = 0; i < xi.size(); ++i) x[static_cast<Eigen::Index>(i)] = xi[i];
    const Eigen::VectorXd y = net.forward(x);
    std::vector<double> out(scale.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = scale[i] * y[static_cast<Eigen::Index>(i)];
    return out;
}

Mlp train_tfdm_net(const Eigen::MatrixXd& xi, const Eigen::MatrixXd& y, const TfdmConfig& cfg,
                   std::uint64_t seed, TrainTrace* trace) {
    if (xi.rows() != y.rows() || xi.rows() < 1)
        throw std::invalid_argument("train_tfdm_net: need matching nonempty pairs");
    const auto d_in = static_cast<std::size_t>(xi.cols());
    const auto d_out = static_cast<std::size_t>(y.cols());

    Mlp net({d_in, cfg.hidden, d_out}, Activation::Tanh);
    net.init_glorot(stream_seed(seed, 0x7fd1));

    Eigen::VectorXd params = net.get_params();
    AdamState adam(static_cast<std::size_t>(params.size()), cfg.lr, cfg.weight_decay);
    GaussStream pick(stream_seed(seed, 0x7fd2));

    const std::size_t n = static_cast<std::size_t>(xi.rows());
    const std::size_t batch = std::min(cfg.minibatch, n);
    Eigen::MatrixXd bx(batch, xi.cols()), by(batch, y.cols());

    for (std::size_t it = 0; it < cfg.train_iters; ++it) {
        if (batch == n) {
            bx = xi;
            by = y;
        } else {
            for (std::size_t r = 0; r < batch; ++r) {
                const auto s = static_cast<Eigen::Index>(pick.below(n));
                bx.row(static_cast<Eigen::Index>(r)) = xi.row(s);
                by.row(static_cast<Eigen::Index>(r)) = y.row(s);
            }
        }
        net.set_params(params);
        const Eigen::MatrixXd out = net.forward_batch(bx);
        const Eigen::MatrixXd diff = out - by;
        const double loss = diff.squaredNorm() / static_cast<double>(batch);
        if (!std::isfinite(loss)) {
            std::string msg = "train_tfdm_net: loss diverged at iteration " + std::to_string(it);
            throw std::runtime_error(msg);
        }
        if (trace) trace->loss.push_back(loss);
        const Eigen::MatrixXd dY = 2.0 / static_cast<double>(batch) * diff;
        const Eigen::VectorXd grad = net.backward_batch(bx, dY);
        adam_step(params, grad, adam);
    }
    net.set_params(params);
    if (trace) {
        const Eigen::MatrixXd out = net.forward_batch(xi);
        trace->final_loss = (out - y).squaredNorm() / static_cast<double>(n);
    }
    return net;
}

namespace {

// Whitened copies of the selected centers plus the componentwise scale.
std::pair<std::vector<double>, std::vector<double>> whiten_centers(const ResidualSet& residuals,
                                                                   const ResidualSet& centers) {
    auto scale = residual_componentwise_std(residuals);
    for (double& s : scale)
        if (!(s > 0)) s = 1.0;  // degenerate components pass through unscaled
    std::vector<double> c = centers.values;
    const std::size_t d = centers.d;
    for (std::size_t i = 0; i < centers.count(); ++i)
        for (std::size_t j = 0; j < d; ++j) c[i * d + j] /= scale[j];
    return {std::move(c), std::move(scale)};
}

ResidualSet select_centers(const ResidualSet& residuals, const TfdmConfig& cfg,
                           std::uint64_t seed) {
    const std::size_t k = std::min(cfg.center_count, residuals.count());
    if (cfg.centers_knn_centroid) {
        ResidualSet centers;
        centers.d = residuals.d;
        centers.h = residuals.h;
        centers.values = knn_select(residuals, residual_centroid(residuals), k);
        return centers;
    }
    return residual_subsample(residuals, k, stream_seed(seed, 0xce17));
}

}  // namespace

TfdmSampler train_tfdm(const ResidualSet& residuals, const TfdmConfig& cfg, std::uint64_t seed,
                       TrainTrace* trace) {
    if (residuals.count() < 2) throw std::invalid_argument("train_tfdm: need >= 2 residuals");
    const ResidualSet centers = select_centers(residuals, cfg, seed);
    auto [white, scale] = whiten_centers(residuals, centers);

    const std::size_t d = residuals.d;
    DiffusionSchedule schedule{cfg.K, 0.0};
    const double c0 = cfg.c0_factor;  // whitened space: componentwise std is 1

    Eigen::MatrixXd xi(cfg.pairs, d), y(cfg.pairs, d);
    {
        // inputs drawn up front so the flow integration can run in parallel
        GaussStream rng(stream_seed(seed, 0x7fd0));
        for (std::size_t p = 0; p < cfg.pairs; ++p)
            for (std::size_t i = 0; i < d; ++i)
                xi(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) = rng.gauss();
    }
    parallel_for(cfg.pairs, [&](std::size_t p) {
        std::vector<double> in(d);
        for (std::size_t i = 0; i < d; ++i) in[i] = xi(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i));
        const auto out = reverse_ode_solve(in, white, d, c0, schedule);
        for (std::size_t i = 0; i < d; ++i)
            y(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) = out[i];
    });

    TfdmSampler sampler;
    sampler.net = train_tfdm_net(xi, y, cfg, seed, trace);
    sampler.scale = scale;
    return sampler;
}

std::vector<double> TimeDependentTfdm::sample(std::size_t step, std::span<const double> xi) const {
    if (nets.empty()) throw std::runtime_error("TimeDependentTfdm: no nets");
    const Mlp& net = nets[std::min(step, nets.size() - 1)];
    Eigen::VectorXd x(xi.size());
    for (std::size_t i = 0; i < xi.size(); ++i) x[static_cast<Eigen::Index>(i)] = xi[i];
    const Eigen::VectorXd out = net.forward(x);
    std::vector<double> r(scale.size());
    for (std::size_t i = 0; i < r.size(); ++i)
        r[i] = scale[i] * out[static_cast<Eigen::Index>(i)];
    return r;
}

TimeDependentTfdm train_tfdm_time_dependent(const TrajectoryBatch& batch,
                                            const std::vector<ExpressionTemplate>& exprs,
                                            const TfdmConfig& cfg, std::uint64_t seed) {
    // pooled componentwise scale keeps every per-step model in the same units
    const ResidualSet pooled = compute_residuals(batch, exprs);
    auto scale = residual_componentwise_std(pooled);
    for (double& s : scale)
        if (!(s > 0)) s = 1.0;

    const std::size_t d = batch.d;
    DiffusionSchedule schedule{cfg.K, 0.0};
    const double c0 = cfg.c0_factor;

    TimeDependentTfdm model;
    model.scale = scale;
    model.nets.resize(batch.N);

    TfdmConfig step_cfg = cfg;
    step_cfg.train_iters = cfg.step_train_iters;

    for (std::size_t n = 0; n < batch.N; ++n) {
        ResidualSet rs = residuals_at_step(batch, exprs, n);
        ResidualSet centers = select_centers(rs, cfg, stream_seed(seed, 0xdead, n));
        std::vector<double> white = centers.values;
        for (std::size_t i = 0; i < centers.count(); ++i)
            for (std::size_t j = 0; j < d; ++j) white[i * d + j] /= scale[j];

        Eigen::MatrixXd xi(cfg.pairs_per_step, d), y(cfg.pairs_per_step, d);
        {
            GaussStream rng(stream_seed(seed, 0x7fd3, n));
            for (std::size_t p = 0; p < cfg.pairs_per_step; ++p)
                for (std::size_t i = 0; i < d; ++i)
                    xi(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) = rng.gauss();
        }
        parallel_for(cfg.pairs_per_step, [&](std::size_t p) {
            std::vector<double> in(d);
            for (std::size_t i = 0; i < d; ++i)
                in[i] = xi(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i));
            const auto out = reverse_ode_solve(in, white, d, c0, schedule);
            for (std::size_t i = 0; i < d; ++i)
                y(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) = out[i];
        });
        model.nets[n] = train_tfdm_net(xi, y, step_cfg, stream_seed(seed, 0x7fd4, n));
    }
    return model;
}

std::string tfdm_to_json(const TfdmSampler& sampler) {
    nlohmann::json j;
    j["net"] = nlohmann::json::parse(mlp_to_json(sampler.net));
    j["scale"] = sampler.scale;
    return j.dump();
}

TfdmSampler tfdm_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    TfdmSampler s;
    s.net = mlp_from_json(j.at("net").dump());
    s.scale = j.at("scale").get<std::vector<double>>();
    return s;
}

std::string tfdm_timedep_to_json(const TimeDependentTfdm& sampler) {
    nlohmann::json j;
    j["scale"] = sampler.scale;
    j["nets"] = nlohmann::json::array();
    for (const auto& net : sampler.nets) j["nets"].push_back(nlohmann::json::parse(mlp_to_json(net)));
    return j.dump();
}

TimeDependentTfdm tfdm_timedep_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    TimeDependentTfdm s;
    s.scale = j.at("scale").get<std::vector<double>>();
    for (const auto& jn : j.at("nets")) s.nets.push_back(mlp_from_json(jn.dump()));
    return s;
}

}  // namespace tfex
