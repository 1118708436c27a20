#include "tfex/expression.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "tfex/sde.hpp"

namespace tfex {

double apply_unary(UnaryOp op, double x) {
    switch (op) {
        case UnaryOp::Sin: return std::sin(x);
        case UnaryOp::Cos: return std::cos(x);
        case UnaryOp::Exp: return std::exp(std::clamp(x, -kExpClamp, kExpClamp));
        case UnaryOp::Zero: return 0.0;
        case UnaryOp::Id: return x;
        case UnaryOp::Square: return x * x;
        case UnaryOp::Cube: return x * x * x;
        case UnaryOp::Quartic: {
            const double x2 = x * x;
            return x2 * x2;
        }
    }
    return 0.0;
}

double unary_deriv(UnaryOp op, double x) {
    switch (op) {
        case UnaryOp::Sin: return std::cos(x);
        case UnaryOp::Cos: return -std::sin(x);
        case UnaryOp::Exp:
            if (x < -kExpClamp || x > kExpClamp) return 0.0;
            return std::exp(x);
        case UnaryOp::Zero: return 0.0;
        case UnaryOp::Id: return 1.0;
        case UnaryOp::Square: return 2.0 * x;
        case UnaryOp::Cube: return 3.0 * x * x;
        case UnaryOp::Quartic: return 4.0 * x * x * x;
    }
    return 0.0;
}

double apply_binary(BinaryOp op, double a, double b) {
    switch (op) {
        case BinaryOp::Add: return a + b;
        case BinaryOp::Sub: return a - b;
        case BinaryOp::Mul: return a * b;
    }
    return 0.0;
}

std::string unary_name(UnaryOp op) {
    switch (op) {
        case UnaryOp::Sin: return "sin";
        case UnaryOp::Cos: return "cos";
        case UnaryOp::Exp: return "exp";
        case UnaryOp::Zero: return "0";
        case UnaryOp::Id: return "id";
        case UnaryOp::Square: return "sq";
        case UnaryOp::Cube: return "cube";
        case UnaryOp::Quartic: return "quartic";
    }
    return "?";
}

std::string binary_name(BinaryOp op) {
    switch (op) {
        case BinaryOp::Add: return "+";
        case BinaryOp::Sub: return "-";
        case BinaryOp::Mul: return "*";
    }
    return "?";
}

UnaryOp unary_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kUnaryCount; ++i) {
        const auto op = static_cast<UnaryOp>(i);
        if (unary_name(op) == name) return op;
    }
    throw std::invalid_argument("unknown unary operator: " + name);
}

BinaryOp binary_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kBinaryCount; ++i) {
        const auto op = static_cast<BinaryOp>(i);
        if (binary_name(op) == name) return op;
    }
    throw std::invalid_argument("unknown binary operator: " + name);
}

namespace {

struct BlockTrace {
    double fa, va, fb, vb, w, fr, y;
};

inline double forward_block(const TreeBlock& blk, double x, BlockTrace& tr) {
    const auto& p = blk.params;
    tr.fa = apply_unary(blk.ops.a, x);
    tr.va = p[0] * tr.fa + p[1];
    tr.fb = apply_unary(blk.ops.b, x);
    tr.vb = p[2] * tr.fb + p[3];
    tr.w = apply_binary(blk.ops.combine, tr.va, tr.vb);
    tr.fr = apply_unary(blk.ops.root, tr.w);
    tr.y = p[4] * tr.fr + p[5];
    return tr.y;
}

// Accumulates wgt * dy/dparam into g[0..6).
inline void backward_block(const TreeBlock& blk, const BlockTrace& tr, double wgt, double* g) {
    const auto& p = blk.params;
    g[4] += wgt * tr.fr;
    g[5] += wgt;
    const double dw = wgt * p[4] * unary_deriv(blk.ops.root, tr.w);
    double dva, dvb;
    switch (blk.ops.combine) {
        case BinaryOp::Add: dva = dw; dvb = dw; break;
        case BinaryOp::Sub: dva = dw; dvb = -dw; break;
        default: dva = dw * tr.vb; dvb = dw * tr.va; break;
    }
    g[0] += dva * tr.fa;
    g[1] += dva;
    g[2] += dvb * tr.fb;
    g[3] += dvb;
}

struct EvalWorkspace {
    std::vector<BlockTrace> blocks;
    std::vector<double> block_vals;
    std::vector<double> prefix;
    std::vector<double> suffix;
    BlockTrace time;

    explicit EvalWorkspace(std::size_t d)
        : blocks(d), block_vals(d), prefix(d + 1), suffix(d + 1) {}
};

inline double forward_expr(const ExpressionTemplate& e, const double* u, double t,
                           EvalWorkspace& ws) {
    const std::size_t d = e.dim;
    double lin = 0.0;
    for (std::size_t j = 0; j < d; ++j) lin += e.linear[j] * u[j];
    double prod = 1.0;
    for (std::size_t j = 0; j < d; ++j) {
        ws.block_vals[j] = forward_block(e.blocks[j], u[j], ws.blocks[j]);
        prod *= ws.block_vals[j];
    }
    const double tval = forward_block(e.time_block, t, ws.time);
    return lin + e.nonlinear_scale * prod + tval + e.constant;
}

// Gradient layout mirrors ExpressionTemplate::get_params:
// [linear(d), scale, blocks d*6, time 6, constant].
inline void backward_expr(const ExpressionTemplate& e, const double* u, double wgt,
                          EvalWorkspace& ws, double* g) {
    const std::size_t d = e.dim;
    for (std::size_t j = 0; j < d; ++j) g[j] += wgt * u[j];

    // prefix/suffix products so each block sees the product of the others
    std::vector<double>& pre = ws.prefix;
    std::vector<double>& suf = ws.suffix;
    pre[0] = 1.0;
    for (std::size_t j = 0; j < d; ++j) pre[j + 1] = pre[j] * ws.block_vals[j];
    suf[d] = 1.0;
    for (std::size_t j = d; j-- > 0;) suf[j] = suf[j + 1] * ws.block_vals[j];

    g[d] += wgt * pre[d];  // nonlinear scale sees the full product
    const double c = e.nonlinear_scale;
    for (std::size_t j = 0; j < d; ++j) {
        const double outer = wgt * c * pre[j] * suf[j + 1];
        backward_block(e.blocks[j], ws.blocks[j], outer, g + d + 1 + 6 * j);
    }
    backward_block(e.time_block, ws.time, wgt, g + d + 1 + 6 * d);
    g[d + 1 + 6 * d + 6] += wgt;  // constant
}

}  // namespace

double eval_block(const TreeBlock& block, double x) {
    BlockTrace tr;
    return forward_block(block, x, tr);
}

ExpressionTemplate::ExpressionTemplate(std::size_t d)
    : dim(d), linear(d, 0.0), blocks(d) {}

std::vector<double> ExpressionTemplate::get_params() const {
    std::vector<double> p;
    p.reserve(param_count());
    p.insert(p.end(), linear.begin(), linear.end());
    p.push_back(nonlinear_scale);
    for (const auto& b : blocks) p.insert(p.end(), b.params.begin(), b.params.end());
    p.insert(p.end(), time_block.params.begin(), time_block.params.end());
    p.push_back(constant);
    return p;
}

void ExpressionTemplate::set_params(std::span<const double> p) {
    if (p.size() != param_count())
        throw std::invalid_argument("ExpressionTemplate::set_params: wrong size");
    std::size_t k = 0;
    for (std::size_t j = 0; j < dim; ++j) linear[j] = p[k++];
    nonlinear_scale = p[k++];
    for (auto& b : blocks)
        for (double& v : b.params) v = p[k++];
    for (double& v : time_block.params) v = p[k++];
    constant = p[k++];
}

bool ExpressionTemplate::params_finite() const {
    for (double v : get_params())
        if (!std::isfinite(v)) return false;
    return true;
}

double eval_expression(const ExpressionTemplate& expr, std::span<const double> state, double t) {
    if (state.size() != expr.dim)
        throw std::invalid_argument("eval_expression: state dimension mismatch");
    EvalWorkspace ws(expr.dim);
    return forward_expr(expr, state.data(), t, ws);
}

std::uint64_t OperatorSequence::key() const {
    std::uint64_t k = 0;
    for (const auto& b : blocks) {
        k = (k << 4) | static_cast<std::uint64_t>(b.a);
        k = (k << 4) | static_cast<std::uint64_t>(b.b);
        k = (k << 4) | static_cast<std::uint64_t>(b.combine);
        k = (k << 4) | static_cast<std::uint64_t>(b.root);
    }
    return k;
}

OperatorSequence sequence_of(const ExpressionTemplate& expr) {
    OperatorSequence seq;
    seq.blocks.reserve(expr.dim + 1);
    for (const auto& b : expr.blocks) seq.blocks.push_back(b.ops);
    seq.blocks.push_back(expr.time_block.ops);
    return seq;
}

ExpressionTemplate make_expression(std::size_t dim, const OperatorSequence& seq) {
    if (seq.blocks.size() != dim + 1)
        throw std::invalid_argument("make_expression: sequence needs dim+1 blocks");
    ExpressionTemplate e(dim);
    for (std::size_t j = 0; j < dim; ++j) e.blocks[j].ops = seq.blocks[j];
    e.time_block.ops = seq.blocks[dim];
    return e;
}

ComponentData build_component_data(const TrajectoryBatch& batch, std::size_t component) {
    if (component >= batch.d)
        throw std::invalid_argument("build_component_data: component out of range");
    if (batch.N < 1) throw std::invalid_argument("build_component_data: need >= 2 time points");
    ComponentData data;
    data.dim = batch.d;
    const std::size_t S = batch.M * batch.N;
    data.states.reserve(S * batch.d);
    data.times.reserve(S);
    data.targets.reserve(S);
    for (std::size_t m = 0; m < batch.M; ++m) {
        for (std::size_t n = 0; n < batch.N; ++n) {
            const double* u = batch.state(m, n);
            const double* next = batch.state(m, n + 1);
            data.states.insert(data.states.end(), u, u + batch.d);
            data.times.push_back(batch.time(n));
            data.targets.push_back((next[component] - u[component]) / batch.h);
        }
    }
    return data;
}

std::vector<double> eval_gradient(
    const ExpressionTemplate& expr,
    const std::vector<std::pair<std::vector<double>, double>>& batch) {
    if (batch.empty()) throw std::invalid_argument("eval_gradient: empty batch");
    EvalWorkspace ws(expr.dim);
    std::vector<double> grad(expr.param_count(), 0.0);
    for (const auto& [state, t] : batch) {
        if (state.size() != expr.dim)
            throw std::invalid_argument("eval_gradient: state dimension mismatch");
        forward_expr(expr, state.data(), t, ws);
        backward_expr(expr, state.data(), 1.0, ws, grad.data());
    }
    return grad;
}

double expression_loss(const ExpressionTemplate& expr, const ComponentData& data,
                       std::span<const std::uint32_t> indices) {
    EvalWorkspace ws(expr.dim);
    const std::size_t S = indices.empty() ? data.size() : indices.size();
    if (S == 0) throw std::invalid_argument("expression_loss: no samples");
    double acc = 0.0;
    for (std::size_t k = 0; k < S; ++k) {
        const std::size_t s = indices.empty() ? k : indices[k];
        const double v = forward_expr(expr, data.states.data() + s * data.dim, data.times[s], ws);
        const double r = data.targets[s] - v;
        acc += r * r;
    }
    return acc / (2.0 * static_cast<double>(S));
}

double expression_loss_grad(const ExpressionTemplate& expr, const ComponentData& data,
                            std::span<const std::uint32_t> indices, std::span<double> grad) {
    if (grad.size() != expr.param_count())
        throw std::invalid_argument("expression_loss_grad: gradient size mismatch");
    EvalWorkspace ws(expr.dim);
    const std::size_t S = indices.empty() ? data.size() : indices.size();
    if (S == 0) throw std::invalid_argument("expression_loss_grad: no samples");
    std::fill(grad.begin(), grad.end(), 0.0);
    const double inv = 1.0 / static_cast<double>(S);
    double acc = 0.0;
    for (std::size_t k = 0; k < S; ++k) {
        const std::size_t s = indices.empty() ? k : indices[k];
        const double* u = data.states.data() + s * data.dim;
        const double v = forward_expr(expr, u, data.times[s], ws);
        const double r = data.targets[s] - v;
        acc += r * r;
        backward_expr(expr, u, -r * inv, ws, grad.data());
    }
    return acc / (2.0 * static_cast<double>(S));
}

ExpressionTemplate ground_truth_template(const RegimeSpec& spec, std::size_t component) {
    if (component >= kTriadDim)
        throw std::invalid_argument("ground_truth_template: component out of range");

    const auto one_block = [] {
        TreeBlock b;
        b.ops = {UnaryOp::Zero, UnaryOp::Zero, BinaryOp::Add, UnaryOp::Zero};
        b.params = {0, 0, 0, 0, 0, 1};  // constant one via the root bias
        return b;
    };
    const auto id_block = [] {
        TreeBlock b;
        b.ops = {UnaryOp::Id, UnaryOp::Zero, BinaryOp::Add, UnaryOp::Id};
        b.params = {1, 0, 0, 0, 1, 0};
        return b;
    };
    const auto zero_block = [] {
        TreeBlock b;
        b.ops = {UnaryOp::Zero, UnaryOp::Zero, BinaryOp::Add, UnaryOp::Zero};
        b.params = {0, 0, 0, 0, 0, 0};
        return b;
    };

    const auto& L = spec.skew;
    const auto& d = spec.damping;

    ExpressionTemplate e(kTriadDim);
    e.time_block = zero_block();
    switch (component) {
        case 0: e.linear = {-d[0], -L[2], L[1]}; break;
        case 1: e.linear = {L[2], -d[1], -L[0]}; break;
        default: e.linear = {-L[1], L[0], -d[2]}; break;
    }
    e.nonlinear_scale = spec.coupling[component];
    for (std::size_t j = 0; j < kTriadDim; ++j)
        e.blocks[j] = (j == component) ? one_block() : id_block();

    if (const auto* c = std::get_if<ConstantForcing>(&spec.forcing)) {
        e.constant = c->value[component];
    } else if (const auto* p = std::get_if<PeriodicForcing>(&spec.forcing)) {
        TreeBlock tb;
        tb.ops = {UnaryOp::Id, UnaryOp::Zero, BinaryOp::Add, UnaryOp::Sin};
        tb.params = {p->angular_frequency, 0, 0, 0, p->amplitude, 0};
        e.time_block = tb;
    }
    // OU forcing has zero deterministic mean from m(0) = 0; nothing to encode.
    return e;
}

namespace {

nlohmann::json block_to_json(const TreeBlock& b) {
    nlohmann::json j;
    j["ops"] = {unary_name(b.ops.a), unary_name(b.ops.b), binary_name(b.ops.combine),
                unary_name(b.ops.root)};
    j["params"] = b.params;
    return j;
}

TreeBlock block_from_json(const nlohmann::json& j) {
    TreeBlock b;
    const auto& ops = j.at("ops");
    b.ops.a = unary_from_name(ops.at(0).get<std::string>());
    b.ops.b = unary_from_name(ops.at(1).get<std::string>());
    b.ops.combine = binary_from_name(ops.at(2).get<std::string>());
    b.ops.root = unary_from_name(ops.at(3).get<std::string>());
    const auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != 6) throw std::runtime_error("tree block needs 6 parameters");
    std::copy(params.begin(), params.end(), b.params.begin());
    return b;
}

}  // namespace

std::string expressions_to_json(const std::vector<ExpressionTemplate>& exprs) {
    nlohmann::json j;
    j["components"] = nlohmann::json::array();
    for (const auto& e : exprs) {
        nlohmann::json je;
        je["dim"] = e.dim;
        je["linear"] = e.linear;
        je["nonlinear_scale"] = e.nonlinear_scale;
        je["blocks"] = nlohmann::json::array();
        for (const auto& b : e.blocks) je["blocks"].push_back(block_to_json(b));
        je["time_block"] = block_to_json(e.time_block);
        je["constant"] = e.constant;
        je["rendered"] = render(e);
        j["components"].push_back(je);
    }
    return j.dump(2);
}

std::vector<ExpressionTemplate> expressions_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    std::vector<ExpressionTemplate> out;
    for (const auto& je : j.at("components")) {
        ExpressionTemplate e(je.at("dim").get<std::size_t>());
        e.linear = je.at("linear").get<std::vector<double>>();
        if (e.linear.size() != e.dim) throw std::runtime_error("bad linear coefficient count");
        e.nonlinear_scale = je.at("nonlinear_scale").get<double>();
        const auto& blocks = je.at("blocks");
        if (blocks.size() != e.dim) throw std::runtime_error("bad block count");
        for (std::size_t i = 0; i < e.dim; ++i) e.blocks[i] = block_from_json(blocks.at(i));
        e.time_block = block_from_json(je.at("time_block"));
        e.constant = je.at("constant").get<double>();
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace tfex
