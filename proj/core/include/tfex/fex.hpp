#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tfex/expression.hpp"
#include "tfex/nn.hpp"
#include "tfex/rng.hpp"

namespace tfex {

struct SearchConfig {
    std::size_t batch_size = 200;
    double controller_lr = 2e-3;
    std::size_t iterations = 100;
    double epsilon_start = 0.5;
    double epsilon_end = 0.05;
    double quantile_fraction = 0.05;  // v: top fraction kept for the update
    std::size_t inner_adam_iters = 20;
    double inner_adam_lr = 8e-3;
    std::size_t quasi_newton_iters = 10;
    std::size_t pool_capacity = 100;
    std::size_t reward_minibatch = 4096;
    std::size_t pool_refine_iters = 200;
    double pool_refine_lr = 1e-3;
    std::size_t finetune_iters = 50000;
    double finetune_lr = 8e-3;
    std::size_t finetune_minibatch = 4096;
    std::size_t controller_hidden = 64;
    std::size_t controller_embedding = 16;

    void validate() const;
};

/// State-free policy over operator slots: a learned constant embedding feeds a
/// one-hidden-layer ReLU net emitting |B| + 3|U| logits per tree block.
struct Controller {
    std::size_t dim = 0;  // sequences carry dim+1 blocks
    Eigen::VectorXd embedding;
    Mlp net;

    static Controller create(std::size_t dim, const SearchConfig& cfg, std::uint64_t seed);

    std::size_t logit_count() const { return (dim + 1) * (kBinaryCount + 3 * kUnaryCount); }
    Eigen::VectorXd logits() const;

    Eigen::VectorXd get_params() const;
    void set_params(const Eigen::VectorXd& p);
    std::size_t param_count() const;
};

/// Per-slot epsilon-greedy draw: uniform with probability epsilon, otherwise
/// the controller's softmax PMF.
OperatorSequence sample_sequence(const Eigen::VectorXd& logits, std::size_t dim, double epsilon,
                                 GaussStream& rng);
std::vector<OperatorSequence> sample_sequences(const Controller& ctrl, std::size_t n,
                                               double epsilon, GaussStream& rng);

struct Candidate {
    OperatorSequence seq;
    std::vector<double> params;
    double loss = 0.0;
    double reward = 0.0;
    bool valid = false;
};

/// Deterministic parameter init (unit scales, zero biases/coefficients), 20
/// Adam steps then 10 quasi-Newton iterations on the fixed minibatch, one
/// retry from a seeded normal init when the nonlinear branch stays dead.
/// Reward = (1 + sqrt(loss))^{-1}; non-finite loss yields an invalid
/// candidate with reward 0.
Candidate compute_reward(const OperatorSequence& seq, const ComponentData& data,
                         std::span<const std::uint32_t> minibatch, const SearchConfig& cfg);

/// Risk-seeking REINFORCE step: only candidates inside the top quantile_fraction
/// of the batch contribute, with the quantile as baseline. Returns the indices
/// that were used (instrumentation for the top-v invariant).
std::vector<std::size_t> update_controller(Controller& ctrl, AdamState& adam,
                                           const std::vector<Candidate>& batch,
                                           double quantile_fraction, double lr);

struct SearchLogRow {
    std::size_t iteration;
    double best_reward;
    double mean_reward;
    double epsilon;
};

struct SearchResult {
    std::vector<Candidate> pool;  // reward-descending after refinement
    std::vector<SearchLogRow> log;
};

SearchResult search_component(const ComponentData& data, const SearchConfig& cfg,
                              std::uint64_t seed);

struct FinetuneResult {
    std::vector<ExpressionTemplate> exprs;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    bool reverted = false;
};

/// Joint continuous-parameter refinement of one expression per component
/// against the summed component losses; discrete slots stay frozen. Cosine
/// learning-rate decay over cfg.finetune_iters; reverts when the full-data
/// loss ends above 10x its initial value.
FinetuneResult finetune_joint(const std::vector<ExpressionTemplate>& exprs,
                              const TrajectoryBatch& batch, const SearchConfig& cfg,
                              std::uint64_t seed);

/// Exact least squares over an explicit basis; the independent oracle for the
/// coefficient tests. Throws naming the dependent columns when the design is
/// rank deficient.
Eigen::VectorXd fit_coefficients_linear(const Eigen::MatrixXd& design,
                                        const Eigen::VectorXd& targets);

void write_search_log_csv(const std::vector<SearchLogRow>& log, const std::string& path);
std::string pool_to_json(const std::vector<Candidate>& pool, std::size_t dim);

}  // namespace tfex
