#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>

#include "tfex/expression.hpp"

// Canonical printing. Fitted expressions keep small live branches (a sine leaf
// with amplitude 1e-3 fitted onto polynomial truth), so reduction is tolerant:
// any bounded subexpression whose amplitude stays below the 0.005 print
// threshold collapses to its bias, mirroring the term-drop rule.

namespace tfex {

namespace {

constexpr double kDropTol = 0.005;       // |coefficient| below this is omitted
constexpr double kExactTol = 1e-9;       // structural zero for unbounded ops
constexpr std::size_t kMaxDegree = 16;   // beyond this we print functionally

using Poly1 = std::vector<double>;  // coeffs[k] * x^k

void trim(Poly1& p) {
    while (p.size() > 1 && p.back() == 0.0) p.pop_back();
}

Poly1 add(const Poly1& a, const Poly1& b, double sb = 1.0) {
    Poly1 r(std::max(a.size(), b.size()), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) r[i] += a[i];
    for (std::size_t i = 0; i < b.size(); ++i) r[i] += sb * b[i];
    trim(r);
    return r;
}

std::optional<Poly1> mul(const Poly1& a, const Poly1& b) {
    if (a.size() + b.size() > kMaxDegree + 2) return std::nullopt;
    Poly1 r(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
    trim(r);
    return r;
}

bool is_const(const Poly1& p) { return p.size() == 1; }

// alpha*f(x) + beta as a polynomial in x, when that reduction is sound.
std::optional<Poly1> unary_poly(UnaryOp op, double alpha, double beta) {
    switch (op) {
        case UnaryOp::Zero: return Poly1{beta};
        case UnaryOp::Id: return Poly1{beta, alpha};
        case UnaryOp::Square: return Poly1{beta, 0, alpha};
        case UnaryOp::Cube: return Poly1{beta, 0, 0, alpha};
        case UnaryOp::Quartic: return Poly1{beta, 0, 0, 0, alpha};
        case UnaryOp::Sin:
        case UnaryOp::Cos:
            if (std::abs(alpha) < kDropTol) return Poly1{beta};  // |alpha*sin| < drop threshold
            return std::nullopt;
        case UnaryOp::Exp:
            if (std::abs(alpha) < kExactTol) return Poly1{beta};
            return std::nullopt;
    }
    return std::nullopt;
}

// alpha*f(w(x)) + beta for polynomial inner w.
std::optional<Poly1> unary_of_poly(UnaryOp op, double alpha, double beta, const Poly1& w) {
    if (is_const(w)) return Poly1{alpha * apply_unary(op, w[0]) + beta};
    switch (op) {
        case UnaryOp::Zero: return Poly1{beta};
        case UnaryOp::Id: {
            Poly1 r = w;
            for (double& v : r) v *= alpha;
            r[0] += beta;
            trim(r);
            return r;
        }
        case UnaryOp::Square:
        case UnaryOp::Cube:
        case UnaryOp::Quartic: {
            const int n = op == UnaryOp::Square ? 2 : op == UnaryOp::Cube ? 3 : 4;
            Poly1 r{1.0};
            for (int i = 0; i < n; ++i) {
                auto next = mul(r, w);
                if (!next) return std::nullopt;
                r = *next;
            }
            for (double& v : r) v *= alpha;
            r[0] += beta;
            trim(r);
            return r;
        }
        case UnaryOp::Sin:
        case UnaryOp::Cos:
            if (std::abs(alpha) < kDropTol) return Poly1{beta};
            return std::nullopt;
        case UnaryOp::Exp:
            if (std::abs(alpha) < kExactTol) return Poly1{beta};
            return std::nullopt;
    }
    return std::nullopt;
}

std::optional<Poly1> block_poly(const TreeBlock& blk) {
    const auto& p = blk.params;
    const auto va = unary_poly(blk.ops.a, p[0], p[1]);
    const auto vb = unary_poly(blk.ops.b, p[2], p[3]);
    if (!va || !vb) return std::nullopt;
    std::optional<Poly1> w;
    switch (blk.ops.combine) {
        case BinaryOp::Add: w = add(*va, *vb); break;
        case BinaryOp::Sub: w = add(*va, *vb, -1.0); break;
        case BinaryOp::Mul: w = mul(*va, *vb); break;
    }
    if (!w) return std::nullopt;
    return unary_of_poly(blk.ops.root, p[4], p[5], *w);
}

std::string fmt3(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    std::string s = buf;
    if (s == "-0.000") s = "0.000";
    return s;
}

std::string monomial_name(const MonomialKey& key) {
    std::string s;
    for (std::size_t j = 0; j < key.size(); ++j) {
        if (key[j] == 0) continue;
        s += "u" + std::to_string(j + 1);
        if (key[j] > 1) s += "^" + std::to_string(static_cast<int>(key[j]));
    }
    return s;
}

void append_term(std::string& out, double coeff, const std::string& body) {
    const std::string mag = fmt3(std::abs(coeff));
    if (out.empty())
        out += (coeff < 0 ? "-" : "");
    else
        out += (coeff < 0 ? "-" : "+");
    if (body.empty()) {
        out += mag;
    } else {
        out += mag + body;
    }
}

// amplitude*f(a*t+b) rendered as e.g. "sin(0.785t-0.091)"; amplitude 1 omitted.
void append_functional_term(std::string& out, double amplitude, const std::string& fname,
                            double a, double b) {
    if (std::abs(amplitude) < kDropTol) return;
    std::string inner = fmt3(a) + "t";
    if (std::abs(b) >= 5e-4) inner += (b < 0 ? "-" : "+") + fmt3(std::abs(b));
    const std::string body = fname + "(" + inner + ")";
    if (std::abs(std::abs(amplitude) - 1.0) < 5e-4) {
        if (out.empty())
            out += (amplitude < 0 ? "-" : "");
        else
            out += (amplitude < 0 ? "-" : "+");
        out += body;
    } else {
        append_term(out, amplitude, body);
    }
}

std::string render_unary_text(UnaryOp op, double alpha, double beta, const std::string& inner);

std::string render_block_text(const TreeBlock& blk, const std::string& var) {
    const auto whole = block_poly(blk);
    const auto& p = blk.params;
    std::string va = render_unary_text(blk.ops.a, p[0], p[1], var);
    std::string vb = render_unary_text(blk.ops.b, p[2], p[3], var);
    std::string w;
    switch (blk.ops.combine) {
        case BinaryOp::Add: w = va + "+" + vb; break;
        case BinaryOp::Sub: w = va + "-(" + vb + ")"; break;
        case BinaryOp::Mul: w = "(" + va + ")*(" + vb + ")"; break;
    }
    (void)whole;
    return render_unary_text(blk.ops.root, p[4], p[5], "(" + w + ")");
}

std::string render_unary_text(UnaryOp op, double alpha, double beta, const std::string& inner) {
    std::string core;
    switch (op) {
        case UnaryOp::Zero: core.clear(); break;
        case UnaryOp::Id: core = inner; break;
        case UnaryOp::Square: core = inner + "^2"; break;
        case UnaryOp::Cube: core = inner + "^3"; break;
        case UnaryOp::Quartic: core = inner + "^4"; break;
        case UnaryOp::Sin: core = "sin" + inner; break;
        case UnaryOp::Cos: core = "cos" + inner; break;
        case UnaryOp::Exp: core = "exp" + inner; break;
    }
    std::string s;
    if (!core.empty() && std::abs(alpha) >= kExactTol) {
        if (std::abs(alpha - 1.0) < kExactTol)
            s = core;
        else
            s = fmt3(alpha) + "*" + core;
    }
    if (std::abs(beta) >= kExactTol || s.empty()) {
        if (s.empty())
            s = fmt3(beta);
        else
            s += (beta < 0 ? "-" : "+") + fmt3(std::abs(beta));
    }
    return s;
}

// Affine reduction of a block's combiner input, when both leaves reduce.
std::optional<std::pair<double, double>> affine_argument(const TreeBlock& blk) {
    const auto& p = blk.params;
    const auto va = unary_poly(blk.ops.a, p[0], p[1]);
    const auto vb = unary_poly(blk.ops.b, p[2], p[3]);
    if (!va || !vb) return std::nullopt;
    std::optional<Poly1> w;
    switch (blk.ops.combine) {
        case BinaryOp::Add: w = add(*va, *vb); break;
        case BinaryOp::Sub: w = add(*va, *vb, -1.0); break;
        case BinaryOp::Mul: w = mul(*va, *vb); break;
    }
    if (!w || w->size() > 2) return std::nullopt;
    return std::make_pair(w->size() == 2 ? (*w)[1] : 0.0, (*w)[0]);
}

}  // namespace

std::optional<std::map<MonomialKey, double>> monomial_expansion(const ExpressionTemplate& expr) {
    const std::size_t d = expr.dim;
    std::vector<Poly1> per_dim(d);
    for (std::size_t j = 0; j < d; ++j) {
        auto p = block_poly(expr.blocks[j]);
        if (!p) return std::nullopt;
        per_dim[j] = std::move(*p);
    }

    std::map<MonomialKey, double> out;
    const MonomialKey zero(d, 0);

    // c * prod_j P_j(u_j), expanded one dimension at a time
    std::map<MonomialKey, double> prod;
    prod[zero] = expr.nonlinear_scale;
    for (std::size_t j = 0; j < d; ++j) {
        std::map<MonomialKey, double> next;
        for (const auto& [key, coeff] : prod) {
            for (std::size_t k = 0; k < per_dim[j].size(); ++k) {
                if (per_dim[j][k] == 0.0) continue;
                MonomialKey nk = key;
                nk[j] = static_cast<std::uint8_t>(k);
                next[nk] += coeff * per_dim[j][k];
                if (next.size() > 20000) return std::nullopt;
            }
        }
        prod = std::move(next);
    }
    out = std::move(prod);

    for (std::size_t j = 0; j < d; ++j) {
        MonomialKey k = zero;
        k[j] = 1;
        out[k] += expr.linear[j];
    }
    out[zero] += expr.constant;

    // a constant time block folds into the constant monomial
    const auto tb = block_poly(expr.time_block);
    if (tb && is_const(*tb)) out[zero] += (*tb)[0];

    // prune exact zeros so coefficient lookups are meaningful
    for (auto it = out.begin(); it != out.end();) {
        if (it->second == 0.0 && !(it->first == zero))
            it = out.erase(it);
        else
            ++it;
    }
    return out;
}

double monomial_coefficient(const ExpressionTemplate& expr, const MonomialKey& key) {
    const auto exp = monomial_expansion(expr);
    if (!exp) throw std::runtime_error("monomial_coefficient: expression is not polynomial");
    const auto it = exp->find(key);
    return it == exp->end() ? 0.0 : it->second;
}

std::string render(const ExpressionTemplate& expr) {
    std::string out;

    const auto expansion = monomial_expansion(expr);
    if (expansion) {
        // state monomials: total degree descending, then lexicographic
        std::vector<std::pair<MonomialKey, double>> terms(expansion->begin(), expansion->end());
        std::stable_sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) {
            int da = 0, db = 0;
            for (auto v : a.first) da += v;
            for (auto v : b.first) db += v;
            if (da != db) return da > db;
            return a.first > b.first;  // u1 before u2 before u3 within a degree
        });
        double constant = 0.0;
        for (const auto& [key, coeff] : terms) {
            const bool is_zero_key = std::all_of(key.begin(), key.end(), [](auto v) { return v == 0; });
            if (is_zero_key) {
                constant = coeff;
                continue;
            }
            if (std::abs(coeff) < kDropTol) continue;
            append_term(out, coeff, monomial_name(key));
        }
        // non-constant time block appended functionally
        const auto tb_poly = block_poly(expr.time_block);
        if (tb_poly && !is_const(*tb_poly)) {
            for (std::size_t k = 1; k < tb_poly->size(); ++k) {
                if (std::abs((*tb_poly)[k]) < kDropTol) continue;
                append_term(out, (*tb_poly)[k], k == 1 ? "t" : "t^" + std::to_string(k));
            }
            constant += (*tb_poly)[0];
        } else if (!tb_poly) {
            const auto arg = affine_argument(expr.time_block);
            const auto root = expr.time_block.ops.root;
            const double ar = expr.time_block.params[4];
            const double br = expr.time_block.params[5];
            if (arg && (root == UnaryOp::Sin || root == UnaryOp::Cos || root == UnaryOp::Exp)) {
                append_functional_term(out, ar, unary_name(root), arg->first, arg->second);
                constant += br;
            } else {
                const std::string body = render_block_text(expr.time_block, "t");
                if (!out.empty()) out += "+";
                out += "[" + body + "]";
            }
        }
        if (std::abs(constant) >= kDropTol) append_term(out, constant, "");
    } else {
        // non-polynomial state part: print the product functionally
        for (std::size_t j = 0; j < expr.dim; ++j) {
            if (std::abs(expr.linear[j]) < kDropTol) continue;
            append_term(out, expr.linear[j], "u" + std::to_string(j + 1));
        }
        if (std::abs(expr.nonlinear_scale) >= kDropTol) {
            std::string prod;
            for (std::size_t j = 0; j < expr.dim; ++j) {
                if (!prod.empty()) prod += "*";
                prod += "[" + render_block_text(expr.blocks[j], "u" + std::to_string(j + 1)) + "]";
            }
            append_term(out, expr.nonlinear_scale, prod);
        }
        double constant = expr.constant;
        const auto arg = affine_argument(expr.time_block);
        const auto root = expr.time_block.ops.root;
        const auto tb_poly = block_poly(expr.time_block);
        if (tb_poly && is_const(*tb_poly)) {
            constant += (*tb_poly)[0];
        } else if (arg && (root == UnaryOp::Sin || root == UnaryOp::Cos || root == UnaryOp::Exp)) {
            append_functional_term(out, expr.time_block.params[4], unary_name(root), arg->first,
                                   arg->second);
            constant += expr.time_block.params[5];
        } else {
            if (!out.empty()) out += "+";
            out += "[" + render_block_text(expr.time_block, "t") + "]";
        }
        if (std::abs(constant) >= kDropTol) append_term(out, constant, "");
    }

    return out.empty() ? "0" : out;
}

}  // namespace tfex
