#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tfex::test {

// Central finite differences of a scalar function of a parameter vector.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double step = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double fp = f(x);
        x[i] = orig - step;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

inline bool grad_close(const std::vector<double>& analytic, const std::vector<double>& numeric,
                       double rel_tol, double abs_floor = 1e-7) {
    if (analytic.size() != numeric.size()) return false;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), abs_floor});
        if (std::abs(analytic[i] - numeric[i]) / denom > rel_tol) return false;
    }
    return true;
}

// Unique scratch directory under the build tree; removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = (std::filesystem::temp_directory_path() /
                 ("tfex_" + tag + "_" + std::to_string(::getpid())))
                    .string();
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

// Evaluates the canonical rendered form (monomials, t powers, sin/cos/exp of
// an affine argument, constants) so render output can be checked against the
// template it came from.
double eval_rendered(const std::string& text, const std::vector<double>& u, double t);

}  // namespace tfex::test

#include <unistd.h>

namespace tfex::test {

namespace detail {

struct Parser {
    const std::string& s;
    std::size_t pos = 0;

    bool done() const { return pos >= s.size(); }
    char peek() const { return s[pos]; }

    double parse_number() {
        std::size_t end = pos;
        while (end < s.size() && (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.'))
            ++end;
        if (end == pos) throw std::runtime_error("expected number at " + s.substr(pos));
        const double v = std::stod(s.substr(pos, end - pos));
        pos = end;
        return v;
    }
};

}  // namespace detail

inline double eval_rendered(const std::string& text, const std::vector<double>& u, double t) {
    if (text == "0") return 0.0;
    detail::Parser p{text};
    double total = 0.0;
    while (!p.done()) {
        double sign = 1.0;
        if (p.peek() == '+') {
            ++p.pos;
        } else if (p.peek() == '-') {
            sign = -1.0;
            ++p.pos;
        }
        double coeff = 1.0;
        if (!p.done() && (std::isdigit(static_cast<unsigned char>(p.peek())) || p.peek() == '.'))
            coeff = p.parse_number();
        double body = 1.0;
        bool saw_body = false;
        while (!p.done() && p.peek() != '+' && p.peek() != '-') {
            saw_body = true;
            if (p.peek() == 'u') {
                ++p.pos;
                const auto idx = static_cast<std::size_t>(p.parse_number()) - 1;
                double power = 1.0;
                if (!p.done() && p.peek() == '^') {
                    ++p.pos;
                    power = p.parse_number();
                }
                body *= std::pow(u.at(idx), power);
            } else if (p.peek() == 't') {
                ++p.pos;
                double power = 1.0;
                if (!p.done() && p.peek() == '^') {
                    ++p.pos;
                    power = p.parse_number();
                }
                body *= std::pow(t, power);
            } else if (text.compare(p.pos, 4, "sin(") == 0 || text.compare(p.pos, 4, "cos(") == 0 ||
                       text.compare(p.pos, 4, "exp(") == 0) {
                const std::string fn = text.substr(p.pos, 3);
                p.pos += 4;
                // affine argument a t [+|- b]
                double a = p.parse_number();
                if (p.done() || p.peek() != 't') throw std::runtime_error("expected t in " + text);
                ++p.pos;
                double b = 0.0;
                if (!p.done() && (p.peek() == '+' || p.peek() == '-')) {
                    const double bsign = p.peek() == '-' ? -1.0 : 1.0;
                    ++p.pos;
                    b = bsign * p.parse_number();
                }
                if (p.done() || p.peek() != ')') throw std::runtime_error("expected ) in " + text);
                ++p.pos;
                const double arg = a * t + b;
                body *= fn == "sin" ? std::sin(arg) : fn == "cos" ? std::cos(arg) : std::exp(arg);
            } else {
                throw std::runtime_error("unexpected character in rendered text: " +
                                         text.substr(p.pos));
            }
        }
        (void)saw_body;
        total += sign * coeff * body;
    }
    return total;
}

}  // namespace tfex::test
