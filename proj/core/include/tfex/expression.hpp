#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfex/trajectory.hpp"

namespace tfex {

enum class UnaryOp : std::uint8_t { Sin, Cos, Exp, Zero, Id, Square, Cube, Quartic };
enum class BinaryOp : std::uint8_t { Add, Sub, Mul };

inline constexpr std::size_t kUnaryCount = 8;
inline constexpr std::size_t kBinaryCount = 3;
inline constexpr double kExpClamp = 30.0;  // exp argument clamped to [-30, 30]

double apply_unary(UnaryOp op, double x);
double unary_deriv(UnaryOp op, double x);
double apply_binary(BinaryOp op, double a, double b);

std::string unary_name(UnaryOp op);
std::string binary_name(BinaryOp op);
UnaryOp unary_from_name(const std::string& name);
BinaryOp binary_from_name(const std::string& name);

/// Operator choices for one depth-3 tree block: two unary leaves, a binary
/// combiner, and a unary root.
struct BlockOps {
    UnaryOp a = UnaryOp::Zero;
    UnaryOp b = UnaryOp::Zero;
    BinaryOp combine = BinaryOp::Add;
    UnaryOp root = UnaryOp::Zero;

    bool operator==(const BlockOps&) const = default;
};

/// One tree block: y = ar*root(combine(aa*a(x)+ba, ab*b(x)+bb)) + br.
/// Param order: aa, ba, ab, bb, ar, br.
struct TreeBlock {
    BlockOps ops;
    std::array<double, 6> params{1, 0, 1, 0, 1, 0};
};

double eval_block(const TreeBlock& block, double x);

/// Fixed-shape symbolic drift for one state component:
///   value(u, t) = sum_j linear[j]*u_j
///               + nonlinear_scale * prod_j blocks[j](u_j)
///               + time_block(t) + constant.
struct ExpressionTemplate {
    std::size_t dim = 3;
    std::vector<double> linear;
    double nonlinear_scale = 0.0;
    std::vector<TreeBlock> blocks;
    TreeBlock time_block;
    double constant = 0.0;

    explicit ExpressionTemplate(std::size_t d = 3);

    std::size_t param_count() const { return dim + 1 + 6 * (dim + 1) + 1; }
    std::vector<double> get_params() const;
    void set_params(std::span<const double> p);
    bool params_finite() const;
};

double eval_expression(const ExpressionTemplate& expr, std::span<const double> state, double t);

/// The discrete slots of a template: dim nonlinear blocks plus the time block.
struct OperatorSequence {
    std::vector<BlockOps> blocks;  // size dim+1, time block last

    bool operator==(const OperatorSequence&) const = default;
    std::uint64_t key() const;  // 4 bits per slot, unique for dim <= 15
};

OperatorSequence sequence_of(const ExpressionTemplate& expr);
ExpressionTemplate make_expression(std::size_t dim, const OperatorSequence& seq);

/// Training samples for one component: S rows of (state, t, du/h target).
struct ComponentData {
    std::size_t dim = 0;
    std::vector<double> states;  // S x dim
    std::vector<double> times;
    std::vector<double> targets;

    std::size_t size() const { return times.size(); }
    std::span<const double> state(std::size_t s) const { return {states.data() + s * dim, dim}; }
};

/// Empirical increments (u_i(t_{n+1}) - u_i(t_n))/h against (u(t_n), t_n).
ComponentData build_component_data(const TrajectoryBatch& batch, std::size_t component);

/// Gradient of the batch-summed value w.r.t. all continuous parameters
/// (reverse mode through the fixed template).
std::vector<double> eval_gradient(const ExpressionTemplate& expr,
                                  const std::vector<std::pair<std::vector<double>, double>>& batch);

/// Mean squared-residual loss 1/(2S) sum (target - value)^2 over the given
/// sample indices (all samples when indices is empty).
double expression_loss(const ExpressionTemplate& expr, const ComponentData& data,
                       std::span<const std::uint32_t> indices = {});
double expression_loss_grad(const ExpressionTemplate& expr, const ComponentData& data,
                            std::span<const std::uint32_t> indices, std::span<double> grad);

// --- canonical printing and polynomial expansion ------------------------------

/// Exponents per state dimension; the key of one monomial u1^e1 u2^e2 ...
using MonomialKey = std::vector<std::uint8_t>;

/// Expand the state part (linear + nonlinear product + constant) into
/// monomials when every block reduces to a polynomial; nullopt otherwise.
/// Time-block content is excluded (a constant time block folds into the
/// constant monomial).
std::optional<std::map<MonomialKey, double>> monomial_expansion(const ExpressionTemplate& expr);

/// Coefficient of one monomial in the expansion (0 when absent; throws when
/// the expression is not polynomial in the state).
double monomial_coefficient(const ExpressionTemplate& expr, const MonomialKey& key);

/// Canonical infix rendering: coefficients to 3 decimals, terms below 0.005
/// dropped, product expanded to monomial form when possible.
std::string render(const ExpressionTemplate& expr);

/// Exact template reproducing the deterministic drift of a triad component
/// (the constructive closure witness; also the fixed sequence used by the
/// coefficient sweeps).
struct RegimeSpec;
ExpressionTemplate ground_truth_template(const RegimeSpec& spec, std::size_t component);

// JSON (de)serialization of templates.
std::string expressions_to_json(const std::vector<ExpressionTemplate>& exprs);
std::vector<ExpressionTemplate> expressions_from_json(const std::string& text);

}  // namespace tfex
