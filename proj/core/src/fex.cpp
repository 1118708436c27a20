#include "tfex/fex.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include <Eigen/QR>
#include <json.hpp>

#include "tfex/parallel.hpp"

namespace tfex {

namespace {

constexpr std::size_t kLogitsPerBlock = kBinaryCount + 3 * kUnaryCount;  // 27

// slot layout inside a block's logit group: a(8), b(8), combine(3), root(8)
constexpr std::size_t kOffA = 0;
constexpr std::size_t kOffB = kUnaryCount;
constexpr std::size_t kOffCombine = 2 * kUnaryCount;
constexpr std::size_t kOffRoot = 2 * kUnaryCount + kBinaryCount;

std::size_t categorical(const double* logits, std::size_t n, GaussStream& rng) {
    double max_l = logits[0];
    for (std::size_t i = 1; i < n; ++i) max_l = std::max(max_l, logits[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += std::exp(logits[i] - max_l);
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < n; ++i) {
        u -= std::exp(logits[i] - max_l);
        if (u <= 0) return i;
    }
    return n - 1;
}

// adds grad += coeff * d(-log softmax(chosen))/d logits = coeff * (softmax - onehot)
void add_logprob_grad(const double* logits, std::size_t n, std::size_t chosen, double coeff,
                      double* grad) {
    double max_l = logits[0];
    for (std::size_t i = 1; i < n; ++i) max_l = std::max(max_l, logits[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += std::exp(logits[i] - max_l);
    for (std::size_t i = 0; i < n; ++i)
        grad[i] += coeff * std::exp(logits[i] - max_l) / total;
    grad[chosen] -= coeff;
}

double reward_of(double loss) { return 1.0 / (1.0 + std::sqrt(loss)); }

}  // namespace

void SearchConfig::validate() const {
    if (!(quantile_fraction > 0.0 && quantile_fraction < 1.0))
        throw std::invalid_argument("SearchConfig: quantile_fraction must be in (0,1)");
    if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0))
        throw std::invalid_argument("SearchConfig: epsilon must lie in [0,1]");
    if (batch_size < 1 || pool_capacity < 1)
        throw std::invalid_argument("SearchConfig: batch_size and pool_capacity must be >= 1");
}

Controller Controller::create(std::size_t dim, const SearchConfig& cfg, std::uint64_t seed) {
    Controller ctrl;
    ctrl.dim = dim;
    ctrl.embedding.resize(static_cast<Eigen::Index>(cfg.controller_embedding));
    GaussStream rng(stream_seed(seed, 0xc011));
    for (Eigen::Index i = 0; i < ctrl.embedding.size(); ++i)
        ctrl.embedding[i] = 0.1 * rng.gauss();
    ctrl.net = Mlp({cfg.controller_embedding, cfg.controller_hidden,
                    (dim + 1) * kLogitsPerBlock},
                   Activation::ReLU);
    ctrl.net.init_glorot(stream_seed(seed, 0xc012));
    // zero output layer: the initial policy is uniform over every slot
    ctrl.net.W.back().setZero();
    ctrl.net.b.back().setZero();
    return ctrl;
}

Eigen::VectorXd Controller::logits() const { return net.forward(embedding); }

Eigen::VectorXd Controller::get_params() const {
    Eigen::VectorXd p(param_count());
    p << embedding, net.get_params();
    return p;
}

void Controller::set_params(const Eigen::VectorXd& p) {
    embedding = p.head(embedding.size());
    net.set_params(p.tail(p.size() - embedding.size()));
}

std::size_t Controller::param_count() const {
    return static_cast<std::size_t>(embedding.size()) + net.param_count();
}

OperatorSequence sample_sequence(const Eigen::VectorXd& logits, std::size_t dim, double epsilon,
                                 GaussStream& rng) {
    OperatorSequence seq;
    seq.blocks.resize(dim + 1);
    for (std::size_t blk = 0; blk < dim + 1; ++blk) {
        const double* base = logits.data() + blk * kLogitsPerBlock;
        const auto draw = [&](std::size_t off, std::size_t n) -> std::size_t {
            if (rng.uniform() < epsilon) return static_cast<std::size_t>(rng.below(n));
            return categorical(base + off, n, rng);
        };
        seq.blocks[blk].a = static_cast<UnaryOp>(draw(kOffA, kUnaryCount));
        seq.blocks[blk].b = static_cast<UnaryOp>(draw(kOffB, kUnaryCount));
        seq.blocks[blk].combine = static_cast<BinaryOp>(draw(kOffCombine, kBinaryCount));
        seq.blocks[blk].root = static_cast<UnaryOp>(draw(kOffRoot, kUnaryCount));
    }
    return seq;
}

std::vector<OperatorSequence> sample_sequences(const Controller& ctrl, std::size_t n,
                                               double epsilon, GaussStream& rng) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
        throw std::invalid_argument("sample_sequences: epsilon must lie in [0,1]");
    const Eigen::VectorXd logits = ctrl.logits();
    std::vector<OperatorSequence> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(sample_sequence(logits, ctrl.dim, epsilon, rng));
    return out;
}

namespace {

// inner continuous optimization for one candidate from the given start
double optimize_params(ExpressionTemplate& expr, const ComponentData& data,
                       std::span<const std::uint32_t> minibatch, const SearchConfig& cfg) {
    const std::size_t np = expr.param_count();
    Eigen::VectorXd params =
        Eigen::Map<const Eigen::VectorXd>(expr.get_params().data(), static_cast<Eigen::Index>(np));
    std::vector<double> grad(np);

    AdamState adam(np, cfg.inner_adam_lr);
    for (std::size_t it = 0; it < cfg.inner_adam_iters; ++it) {
        expr.set_params({params.data(), np});
        const double loss =
            expression_loss_grad(expr, data, minibatch, {grad.data(), np});
        if (!std::isfinite(loss)) return loss;
        adam_step(params, Eigen::Map<const Eigen::VectorXd>(grad.data(), static_cast<Eigen::Index>(np)),
                  adam);
    }

    const ObjectiveFn objective = [&](const Eigen::VectorXd& p, Eigen::VectorXd* g) {
        expr.set_params({p.data(), np});
        if (!g) return expression_loss(expr, data, minibatch);
        g->resize(static_cast<Eigen::Index>(np));
        std::vector<double> gtmp(np);
        const double loss = expression_loss_grad(expr, data, minibatch, {gtmp.data(), np});
        for (std::size_t i = 0; i < np; ++i) (*g)[static_cast<Eigen::Index>(i)] = gtmp[i];
        return loss;
    };
    params = quasi_newton_refine(objective, params, cfg.quasi_newton_iters);
    expr.set_params({params.data(), np});
    return expression_loss(expr, data, minibatch);
}

}  // namespace

Candidate compute_reward(const OperatorSequence& seq, const ComponentData& data,
                         std::span<const std::uint32_t> minibatch, const SearchConfig& cfg) {
    if (data.size() == 0) throw std::invalid_argument("compute_reward: empty data");
    Candidate cand;
    cand.seq = seq;

    ExpressionTemplate expr = make_expression(data.dim, seq);
    double loss = optimize_params(expr, data, minibatch, cfg);

    // the deterministic init parks the product term on a saddle whenever some
    // block starts at 0; retry once from a seeded normal draw
    const bool stalled = std::abs(expr.nonlinear_scale) < 1e-12;
    if (!std::isfinite(loss) || stalled) {
        ExpressionTemplate retry = make_expression(data.dim, seq);
        GaussStream rng(stream_seed(seq.key(), 0x5eed));
        std::vector<double> p(retry.param_count());
        for (double& v : p) v = rng.gauss();
        retry.set_params(p);
        const double retry_loss = optimize_params(retry, data, minibatch, cfg);
        if (std::isfinite(retry_loss) && (!std::isfinite(loss) || retry_loss < loss)) {
            expr = retry;
            loss = retry_loss;
        }
    }

    if (!std::isfinite(loss) || !expr.params_finite()) {
        cand.valid = false;
        cand.loss = std::numeric_limits<double>::infinity();
        cand.reward = 0.0;
        return cand;
    }
    cand.params = expr.get_params();
    cand.loss = loss;
    cand.reward = reward_of(loss);
    cand.valid = true;
    return cand;
}

std::vector<std::size_t> update_controller(Controller& ctrl, AdamState& adam,
                                           const std::vector<Candidate>& batch,
                                           double quantile_fraction, double lr) {
    const std::size_t B = batch.size();
    if (B < 1) throw std::invalid_argument("update_controller: empty batch");
    if (static_cast<double>(B) * quantile_fraction < 1.0)
        throw std::invalid_argument("update_controller: batch too small for quantile fraction");

    std::vector<std::size_t> order(B);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return batch[a].reward > batch[b].reward;
    });
    const std::size_t top = static_cast<std::size_t>(
        std::ceil(quantile_fraction * static_cast<double>(B)));
    const double baseline = batch[order[top - 1]].reward;

    const Eigen::VectorXd logits = ctrl.logits();
    Eigen::VectorXd dlogits = Eigen::VectorXd::Zero(logits.size());
    std::vector<std::size_t> used;
    bool any = false;
    for (std::size_t r = 0; r < top; ++r) {
        const Candidate& cand = batch[order[r]];
        const double adv = cand.reward - baseline;
        used.push_back(order[r]);
        if (adv <= 0.0) continue;  // ties with the baseline carry no signal
        any = true;
        const double coeff = adv / static_cast<double>(top);
        for (std::size_t blk = 0; blk < cand.seq.blocks.size(); ++blk) {
            double* g = dlogits.data() + blk * kLogitsPerBlock;
            const double* l = logits.data() + blk * kLogitsPerBlock;
            const auto& ops = cand.seq.blocks[blk];
            add_logprob_grad(l + kOffA, kUnaryCount, static_cast<std::size_t>(ops.a), coeff,
                             g + kOffA);
            add_logprob_grad(l + kOffB, kUnaryCount, static_cast<std::size_t>(ops.b), coeff,
                             g + kOffB);
            add_logprob_grad(l + kOffCombine, kBinaryCount,
                             static_cast<std::size_t>(ops.combine), coeff, g + kOffCombine);
            add_logprob_grad(l + kOffRoot, kUnaryCount, static_cast<std::size_t>(ops.root), coeff,
                             g + kOffRoot);
        }
    }
    if (!any) return used;  // degenerate batch: parameters unchanged

    // backprop the logit gradient through the net and the embedding
    Eigen::MatrixXd dY(1, dlogits.size());
    dY.row(0) = dlogits;
    Eigen::MatrixXd X(1, ctrl.embedding.size());
    X.row(0) = ctrl.embedding;
    Eigen::MatrixXd dX;
    const Eigen::VectorXd net_grad = ctrl.net.backward_batch(X, dY, &dX);

    Eigen::VectorXd grad(ctrl.param_count());
    grad << dX.row(0).transpose(), net_grad;
    Eigen::VectorXd params = ctrl.get_params();
    adam_step(params, grad, adam, lr);
    ctrl.set_params(params);
    return used;
}

SearchResult search_component(const ComponentData& data, const SearchConfig& cfg,
                              std::uint64_t seed) {
    cfg.validate();
    if (data.size() == 0) throw std::invalid_argument("search_component: empty data");

    // fixed reward minibatch, drawn once per run
    std::vector<std::uint32_t> minibatch;
    {
        const std::size_t S = data.size();
        const std::size_t want = std::min(cfg.reward_minibatch, S);
        std::vector<std::uint32_t> idx(S);
        std::iota(idx.begin(), idx.end(), 0u);
        GaussStream rng(stream_seed(seed, 0xba7c));
        for (std::size_t i = 0; i < want; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(S - i));
            std::swap(idx[i], idx[j]);
        }
        minibatch.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(want));
    }

    Controller ctrl = Controller::create(data.dim, cfg, seed);
    AdamState adam(ctrl.param_count(), cfg.controller_lr);
    GaussStream sample_rng(stream_seed(seed, 0x5a3e));

    std::unordered_map<std::uint64_t, Candidate> cache;
    std::unordered_map<std::uint64_t, Candidate> pool;
    double pool_min = 0.0;

    const auto pool_insert = [&](const Candidate& cand) {
        if (!cand.valid) return;
        auto it = pool.find(cand.seq.key());
        if (it != pool.end()) {
            if (cand.reward > it->second.reward) it->second = cand;
            return;
        }
        if (pool.size() < cfg.pool_capacity) {
            pool.emplace(cand.seq.key(), cand);
        } else if (cand.reward > pool_min) {
            auto worst = pool.begin();
            for (auto p = pool.begin(); p != pool.end(); ++p)
                if (p->second.reward < worst->second.reward) worst = p;
            pool.erase(worst);
            pool.emplace(cand.seq.key(), cand);
        }
        if (pool.size() >= cfg.pool_capacity) {
            pool_min = std::numeric_limits<double>::infinity();
            for (const auto& [k, c] : pool) pool_min = std::min(pool_min, c.reward);
        }
    };

    SearchResult result;
    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        const double frac = cfg.iterations > 1
                                ? static_cast<double>(iter) / static_cast<double>(cfg.iterations - 1)
                                : 0.0;
        const double epsilon = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac;

        const auto seqs = sample_sequences(ctrl, cfg.batch_size, epsilon, sample_rng);

        // score unique new sequences in parallel, then read everything from
        // the cache (rewards are pure functions of the slot tuple given the
        // fixed minibatch)
        std::vector<const OperatorSequence*> fresh;
        for (const auto& s : seqs) {
            const auto key = s.key();
            if (cache.contains(key)) continue;
            bool queued = false;
            for (const auto* q : fresh)
                if (q->key() == key) {
                    queued = true;
                    break;
                }
            if (!queued) fresh.push_back(&s);
        }
        std::vector<Candidate> fresh_out(fresh.size());
        parallel_for(fresh.size(), [&](std::size_t i) {
            fresh_out[i] = compute_reward(*fresh[i], data, minibatch, cfg);
        });
        for (std::size_t i = 0; i < fresh.size(); ++i)
            cache.emplace(fresh[i]->key(), std::move(fresh_out[i]));

        std::vector<Candidate> batch;
        batch.reserve(seqs.size());
        for (const auto& s : seqs) batch.push_back(cache.at(s.key()));

        for (const auto& c : batch) pool_insert(c);

        update_controller(ctrl, adam, batch, cfg.quantile_fraction, cfg.controller_lr);

        double best = 0.0, mean = 0.0;
        for (const auto& c : batch) {
            best = std::max(best, c.reward);
            mean += c.reward;
        }
        mean /= static_cast<double>(batch.size());
        result.log.push_back({iter, best, mean, epsilon});
    }

    // refine every pooled candidate on its own parameters
    std::vector<Candidate> refined;
    refined.reserve(pool.size());
    for (auto& [key, cand] : pool) refined.push_back(std::move(cand));
    parallel_for(refined.size(), [&](std::size_t i) {
        Candidate& cand = refined[i];
        ExpressionTemplate expr = make_expression(data.dim, cand.seq);
        expr.set_params(cand.params);
        const std::size_t np = expr.param_count();
        Eigen::VectorXd params = Eigen::Map<const Eigen::VectorXd>(
            cand.params.data(), static_cast<Eigen::Index>(np));
        AdamState refine_adam(np, cfg.pool_refine_lr);
        std::vector<double> grad(np);
        for (std::size_t it = 0; it < cfg.pool_refine_iters; ++it) {
            expr.set_params({params.data(), np});
            const double loss = expression_loss_grad(expr, data, minibatch, {grad.data(), np});
            if (!std::isfinite(loss)) return;  // keep the pre-refinement candidate
            adam_step(params,
                      Eigen::Map<const Eigen::VectorXd>(grad.data(), static_cast<Eigen::Index>(np)),
                      refine_adam);
        }
        expr.set_params({params.data(), np});
        const double loss = expression_loss(expr, data, minibatch);
        if (std::isfinite(loss) && loss < cand.loss) {
            cand.loss = loss;
            cand.reward = reward_of(loss);
            cand.params = expr.get_params();
        }
    });

    std::stable_sort(refined.begin(), refined.end(),
                     [](const Candidate& a, const Candidate& b) { return a.reward > b.reward; });
    result.pool = std::move(refined);
    return result;
}

FinetuneResult finetune_joint(const std::vector<ExpressionTemplate>& exprs,
                              const TrajectoryBatch& batch, const SearchConfig& cfg,
                              std::uint64_t seed) {
    if (exprs.size() != batch.d)
        throw std::invalid_argument("finetune_joint: need one expression per component");

    const std::size_t d = exprs.size();
    std::vector<ComponentData> data;
    data.reserve(d);
    for (std::size_t i = 0; i < d; ++i) data.push_back(build_component_data(batch, i));
    const std::size_t S = data[0].size();

    FinetuneResult result;
    result.exprs = exprs;

    const auto full_loss = [&](const std::vector<ExpressionTemplate>& es) {
        double total = 0.0;
        for (std::size_t i = 0; i < d; ++i) total += expression_loss(es[i], data[i]);
        return total;
    };
    result.initial_loss = full_loss(exprs);

    const std::size_t np = exprs[0].param_count();
    std::vector<Eigen::VectorXd> params(d);
    std::vector<AdamState> adam;
    for (std::size_t i = 0; i < d; ++i) {
        params[i] = Eigen::Map<const Eigen::VectorXd>(result.exprs[i].get_params().data(),
                                                      static_cast<Eigen::Index>(np));
        adam.emplace_back(np, cfg.finetune_lr);
    }

    GaussStream pick(stream_seed(seed, 0xf17e));
    const std::size_t mb = std::min(cfg.finetune_minibatch, S);
    std::vector<std::uint32_t> idx(mb);
    std::vector<std::vector<double>> grads(d, std::vector<double>(np));

    for (std::size_t it = 0; it < cfg.finetune_iters; ++it) {
        if (mb == S) {
            std::iota(idx.begin(), idx.end(), 0u);
        } else {
            for (auto& v : idx) v = static_cast<std::uint32_t>(pick.below(S));
        }
        const double lr = cosine_lr(it, cfg.finetune_iters, cfg.finetune_lr);
        parallel_for(d, [&](std::size_t i) {
            result.exprs[i].set_params({params[i].data(), np});
            expression_loss_grad(result.exprs[i], data[i], idx, {grads[i].data(), np});
            adam_step(params[i],
                      Eigen::Map<const Eigen::VectorXd>(grads[i].data(),
                                                        static_cast<Eigen::Index>(np)),
                      adam[i], lr);
        });
    }
    for (std::size_t i = 0; i < d; ++i) result.exprs[i].set_params({params[i].data(), np});

    result.final_loss = full_loss(result.exprs);
    if (!std::isfinite(result.final_loss) || result.final_loss > 10.0 * result.initial_loss) {
        result.exprs = exprs;
        result.reverted = true;
    }
    return result;
}

Eigen::VectorXd fit_coefficients_linear(const Eigen::MatrixXd& design,
                                        const Eigen::VectorXd& targets) {
    if (design.rows() != targets.size())
        throw std::invalid_argument("fit_coefficients_linear: row count mismatch");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < design.cols()) {
        const auto perm = qr.colsPermutation().indices();
        std::string cols;
        for (Eigen::Index i = qr.rank(); i < design.cols(); ++i) {
            if (!cols.empty()) cols += ", ";
            cols += std::to_string(perm[i]);
        }
        throw std::runtime_error("fit_coefficients_linear: singular Gram matrix; dependent columns: " +
                                 cols);
    }
    return qr.solve(targets);
}

void write_search_log_csv(const std::vector<SearchLogRow>& log, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write " + path);
    std::fprintf(f, "iter,best_reward,mean_reward,epsilon\n");
    for (const auto& row : log)
        std::fprintf(f, "%zu,%.17g,%.17g,%.17g\n", row.iteration, row.best_reward,
                     row.mean_reward, row.epsilon);
    std::fclose(f);
}

std::string pool_to_json(const std::vector<Candidate>& pool, std::size_t dim) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& cand : pool) {
        ExpressionTemplate expr = make_expression(dim, cand.seq);
        expr.set_params(cand.params);
        nlohmann::json entry;
        entry["expression"] = render(expr);
        entry["loss"] = cand.loss;
        entry["reward"] = cand.reward;
        j.push_back(entry);
    }
    return j.dump(2);
}

}  // namespace tfex
