#include "tfex/nn.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "tfex/rng.hpp"

namespace tfex {

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation act) {
    if (act == Activation::ReLU) return z.cwiseMax(0.0);
    return z.array().tanh().matrix();
}

Eigen::MatrixXd activate_deriv(const Eigen::MatrixXd& a, Activation act) {
    // derivative expressed through the activation value
    if (act == Activation::ReLU)
        return (a.array() > 0.0).cast<double>().matrix();
    return (1.0 - a.array().square()).matrix();
}

}  // namespace

Mlp::Mlp(std::vector<std::size_t> layer_sizes, Activation act)
    : sizes(std::move(layer_sizes)), activation(act) {
    if (sizes.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        W.emplace_back(Eigen::MatrixXd::Zero(sizes[l + 1], sizes[l]));
        b.emplace_back(Eigen::VectorXd::Zero(sizes[l + 1]));
    }
}

std::size_t Mlp::param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < W.size(); ++l) n += W[l].size() + b[l].size();
    return n;
}

void Mlp::init_glorot(std::uint64_t seed) {
    GaussStream rng(seed);
    for (std::size_t l = 0; l < W.size(); ++l) {
        const double r = std::sqrt(6.0 / static_cast<double>(sizes[l] + sizes[l + 1]));
        for (Eigen::Index i = 0; i < W[l].rows(); ++i)
            for (Eigen::Index j = 0; j < W[l].cols(); ++j)
                W[l](i, j) = (2.0 * rng.uniform() - 1.0) * r;
        b[l].setZero();
    }
}

Eigen::VectorXd Mlp::get_params() const {
    Eigen::VectorXd p(param_count());
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < W.size(); ++l) {
        for (Eigen::Index j = 0; j < W[l].cols(); ++j)
            for (Eigen::Index i = 0; i < W[l].rows(); ++i) p[k++] = W[l](i, j);
        for (Eigen::Index i = 0; i < b[l].size(); ++i) p[k++] = b[l][i];
    }
    return p;
}

void Mlp::set_params(const Eigen::VectorXd& p) {
    if (static_cast<std::size_t>(p.size()) != param_count())
        throw std::invalid_argument("Mlp::set_params: wrong size");
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < W.size(); ++l) {
        for (Eigen::Index j = 0; j < W[l].cols(); ++j)
            for (Eigen::Index i = 0; i < W[l].rows(); ++i) W[l](i, j) = p[k++];
        for (Eigen::Index i = 0; i < b[l].size(); ++i) b[l][i] = p[k++];
    }
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
    if (static_cast<std::size_t>(x.size()) != in_dim())
        throw std::invalid_argument("Mlp::forward: input size mismatch");
    Eigen::VectorXd a = x;
    for (std::size_t l = 0; l < W.size(); ++l) {
        Eigen::VectorXd z = W[l] * a + b[l];
        a = (l + 1 < W.size()) ? Eigen::VectorXd(activate(z, activation)) : z;
    }
    return a;
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& X) const {
    if (static_cast<std::size_t>(X.cols()) != in_dim())
        throw std::invalid_argument("Mlp::forward_batch: input size mismatch");
    Eigen::MatrixXd a = X;
    for (std::size_t l = 0; l < W.size(); ++l) {
        Eigen::MatrixXd z = (a * W[l].transpose()).rowwise() + b[l].transpose();
        a = (l + 1 < W.size()) ? activate(z, activation) : z;
    }
    return a;
}

Eigen::VectorXd Mlp::backward_batch(const Eigen::MatrixXd& X, const Eigen::MatrixXd& dY,
                                    Eigen::MatrixXd* dX) const {
    const std::size_t L = W.size();
    std::vector<Eigen::MatrixXd> acts(L + 1);
    acts[0] = X;
    for (std::size_t l = 0; l < L; ++l) {
        Eigen::MatrixXd z = (acts[l] * W[l].transpose()).rowwise() + b[l].transpose();
        acts[l + 1] = (l + 1 < L) ? activate(z, activation) : z;
    }

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(param_count());
    std::vector<Eigen::Index> offsets(L);
    {
        Eigen::Index k = 0;
        for (std::size_t l = 0; l < L; ++l) {
            offsets[l] = k;
            k += W[l].size() + b[l].size();
        }
    }

    Eigen::MatrixXd delta = dY;
    for (std::size_t l = L; l-- > 0;) {
        const Eigen::MatrixXd gW = delta.transpose() * acts[l];
        const Eigen::VectorXd gb = delta.colwise().sum();
        Eigen::Index k = offsets[l];
        for (Eigen::Index j = 0; j < gW.cols(); ++j)
            for (Eigen::Index i = 0; i < gW.rows(); ++i) grad[k++] = gW(i, j);
        for (Eigen::Index i = 0; i < gb.size(); ++i) grad[k++] = gb[i];

        if (l > 0) {
            delta = (delta * W[l]).cwiseProduct(activate_deriv(acts[l], activation));
        } else if (dX) {
            *dX = delta * W[0];
        }
    }
    return grad;
}

std::string mlp_to_json(const Mlp& net) {
    nlohmann::json j;
    j["sizes"] = net.sizes;
    j["activation"] = net.activation == Activation::ReLU ? "relu" : "tanh";
    const Eigen::VectorXd p = net.get_params();
    j["params"] = std::vector<double>(p.data(), p.data() + p.size());
    return j.dump();
}

Mlp mlp_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    const auto sizes = j.at("sizes").get<std::vector<std::size_t>>();
    const auto act = j.at("activation").get<std::string>() == "relu" ? Activation::ReLU
                                                                     : Activation::Tanh;
    Mlp net(sizes, act);
    const auto params = j.at("params").get<std::vector<double>>();
    net.set_params(Eigen::Map<const Eigen::VectorXd>(params.data(), params.size()));
    return net;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state) {
    adam_step(params, grad, state, state.lr);
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state,
               double lr_override) {
    if (params.size() != grad.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    state.step += 1;
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const Eigen::VectorXd mhat = state.m / bc1;
    const Eigen::VectorXd vhat = state.v / bc2;
    params -= lr_override * (mhat.array() / (vhat.array().sqrt() + state.eps)).matrix();
    if (state.weight_decay != 0.0) params -= lr_override * state.weight_decay * params;
}

double cosine_lr(std::size_t step, std::size_t total, double lr0) {
    if (step > total) throw std::invalid_argument("cosine_lr: step > total");
    const double pi = std::acos(-1.0);
    return lr0 * (1.0 + std::cos(pi * static_cast<double>(step) / static_cast<double>(total))) / 2.0;
}

Eigen::VectorXd quasi_newton_refine(const ObjectiveFn& fn, Eigen::VectorXd params,
                                    std::size_t iters) {
    constexpr std::size_t kMemory = 10;
    constexpr double kArmijo = 1e-4;

    Eigen::VectorXd g(params.size());
    double f = fn(params, &g);
    if (!std::isfinite(f)) return params;

    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;

    for (std::size_t it = 0; it < iters; ++it) {
        if (g.norm() < 1e-12) break;

        // two-loop recursion
        Eigen::VectorXd q = g;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t i = s_hist.size(); i-- > 0;) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        double gamma = 1.0;
        if (!s_hist.empty()) {
            const double yy = y_hist.back().squaredNorm();
            if (yy > 0) gamma = s_hist.back().dot(y_hist.back()) / yy;
        }
        q *= gamma;
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha[i] - beta) * s_hist[i];
        }
        Eigen::VectorXd dir = -q;
        double dg = dir.dot(g);
        if (dg >= 0) {  // not a descent direction; fall back to steepest descent
            dir = -g;
            dg = -g.squaredNorm();
        }

        // weak-Wolfe line search by bisection (Armijo + curvature)
        constexpr double kCurvature = 0.9;
        double lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double step = 1.0;
        bool accepted = false;
        Eigen::VectorXd trial, trial_g(params.size());
        double trial_f = f;
        for (int ls = 0; ls < 50; ++ls) {
            trial = params + step * dir;
            trial_f = fn(trial, &trial_g);
            if (!std::isfinite(trial_f) || trial_f > f + kArmijo * step * dg) {
                hi = step;
                step = 0.5 * (lo + hi);
            } else if (trial_g.dot(dir) < kCurvature * dg) {
                lo = step;
                step = std::isinf(hi) ? 2.0 * lo : 0.5 * (lo + hi);
            } else {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (it == 0) return params;  // signals ill-conditioning, not fatal
            break;
        }

        Eigen::VectorXd s = trial - params;
        Eigen::VectorXd y = trial_g - g;
        const double sy = s.dot(y);
        if (sy > 1e-12) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (s_hist.size() > kMemory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        params = std::move(trial);
        f = trial_f;
        g = trial_g;
    }
    return params;
}

}  // namespace tfex
