#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "tfex/expression.hpp"
#include "tfex/rng.hpp"
#include "tfex/sde.hpp"

using namespace tfex;

namespace {

TreeBlock block(UnaryOp a, UnaryOp b, BinaryOp combine, UnaryOp root,
                std::array<double, 6> params) {
    TreeBlock blk;
    blk.ops = {a, b, combine, root};
    blk.params = params;
    return blk;
}

ExpressionTemplate random_monomial_template(GaussStream& rng) {
    // exact monomial-class template with all coefficients comfortably above
    // the render drop threshold
    ExpressionTemplate e(3);
    const auto coeff = [&] {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        return sign * (0.05 + 1.95 * rng.uniform());
    };
    for (auto& v : e.linear) v = coeff();
    e.nonlinear_scale = coeff();
    for (std::size_t j = 0; j < 3; ++j) {
        if (rng.uniform() < 0.3) {
            e.blocks[j] = block(UnaryOp::Zero, UnaryOp::Zero, BinaryOp::Add, UnaryOp::Zero,
                                {0, 0, 0, 0, 0, 1});
        } else {
            e.blocks[j] = block(UnaryOp::Id, UnaryOp::Zero, BinaryOp::Add, UnaryOp::Id,
                                {1, 0, 0, 0, 1, 0});
        }
    }
    e.time_block = block(UnaryOp::Zero, UnaryOp::Zero, BinaryOp::Add, UnaryOp::Zero,
                         {0, 0, 0, 0, 0, 0});
    e.constant = coeff();
    return e;
}

ExpressionTemplate random_general_template(GaussStream& rng) {
    OperatorSequence seq;
    seq.blocks.resize(4);
    for (auto& b : seq.blocks) {
        b.a = static_cast<UnaryOp>(rng.below(kUnaryCount));
        b.b = static_cast<UnaryOp>(rng.below(kUnaryCount));
        b.combine = static_cast<BinaryOp>(rng.below(kBinaryCount));
        b.root = static_cast<UnaryOp>(rng.below(kUnaryCount));
    }
    ExpressionTemplate e = make_expression(3, seq);
    std::vector<double> p(e.param_count());
    for (auto& v : p) v = 0.5 * rng.gauss();
    e.set_params(p);
    return e;
}

}  // namespace

TEST_CASE("constant-one block returns exactly 1 for any input") {
    const TreeBlock one =
        block(UnaryOp::Zero, UnaryOp::Zero, BinaryOp::Add, UnaryOp::Zero, {0, 0, 0, 0, 0, 1});
    for (double x : {-100.0, -1.0, 0.0, 0.3, 7.0, 1e6}) CHECK(eval_block(one, x) == 1.0);
}

TEST_CASE("block composition follows the leaf-combine-root contract") {
    const TreeBlock scaled =
        block(UnaryOp::Id, UnaryOp::Zero, BinaryOp::Add, UnaryOp::Id, {2, 0, 0, 0, 1, 0});
    CHECK(eval_block(scaled, 3.0) == doctest::Approx(6.0).epsilon(1e-15));

    const TreeBlock cube_like =
        block(UnaryOp::Square, UnaryOp::Id, BinaryOp::Mul, UnaryOp::Id, {1, 0, 1, 0, 1, 0});
    CHECK(eval_block(cube_like, 2.0) == doctest::Approx(8.0).epsilon(1e-15));
}

TEST_CASE("exp argument is clamped") {
    const TreeBlock big =
        block(UnaryOp::Id, UnaryOp::Zero, BinaryOp::Add, UnaryOp::Exp, {1, 0, 0, 0, 1, 0});
    CHECK(std::isfinite(eval_block(big, 1000.0)));
    CHECK(eval_block(big, 1000.0) == doctest::Approx(std::exp(30.0)).epsilon(1e-12));
}

TEST_CASE("zero template evaluates to zero and renders as 0") {
    ExpressionTemplate e(3);
    e.blocks[0].params = {0, 0, 0, 0, 0, 0};
    e.blocks[1].params = {0, 0, 0, 0, 0, 0};
    e.blocks[2].params = {0, 0, 0, 0, 0, 0};
    e.time_block.params = {0, 0, 0, 0, 0, 0};
    std::vector<double> zeros(e.param_count(), 0.0);
    e.set_params(zeros);
    const std::vector<double> u{0.3, -0.7, 1.1};
    CHECK(eval_expression(e, u, 0.5) == 0.0);
    CHECK(render(e) == "0");
}

TEST_CASE("template encoding the equipartition first component") {
    const ExpressionTemplate e = ground_truth_template(regime_preset(1), 0);
    const std::vector<double> u{1, 1, 1};
    CHECK(eval_expression(e, u, 0.0) == doctest::Approx(-0.2).epsilon(1e-12));
}

TEST_CASE("pure time block with sin inner scale") {
    ExpressionTemplate e(3);
    std::vector<double> zeros(e.param_count(), 0.0);
    e.set_params(zeros);
    e.time_block = block(UnaryOp::Id, UnaryOp::Zero, BinaryOp::Add, UnaryOp::Sin,
                         {0.785, 0, 0, 0, 1, 0});
    const std::vector<double> u{0, 0, 0};
    CHECK(eval_expression(e, u, 2.0) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("closure: exact templates reproduce every regime drift") {
    GaussStream rng(2024);
    for (int regime = 1; regime <= 5; ++regime) {
        const RegimeSpec spec = regime_preset(regime);
        std::vector<ExpressionTemplate> exprs;
        for (std::size_t comp = 0; comp < 3; ++comp)
            exprs.push_back(ground_truth_template(spec, comp));
        for (int trial = 0; trial < 1000; ++trial) {
            const Vec3 u{4.0 * rng.gauss(), 4.0 * rng.gauss(), 4.0 * rng.gauss()};
            const double t = 5.0 * rng.uniform();
            const Vec3 want = drift_triad(u, t, spec, 0.0);
            const std::vector<double> uv{u[0], u[1], u[2]};
            for (std::size_t comp = 0; comp < 3; ++comp) {
                const double got = eval_expression(exprs[comp], uv, t);
                CHECK(std::abs(got - want[comp]) < 1e-12 * std::max(1.0, std::abs(want[comp])));
            }
        }
    }
}

TEST_CASE("eval_gradient on a pure linear template equals the input") {
    ExpressionTemplate e(3);
    std::vector<double> zeros(e.param_count(), 0.0);
    e.set_params(zeros);
    e.linear = {0.5, -1.0, 2.0};
    const std::vector<std::pair<std::vector<double>, double>> batch{{{1.5, -2.0, 0.25}, 0.0}};
    const auto grad = eval_gradient(e, batch);
    CHECK(grad[0] == doctest::Approx(1.5));
    CHECK(grad[1] == doctest::Approx(-2.0));
    CHECK(grad[2] == doctest::Approx(0.25));
}

TEST_CASE("eval_gradient of the nonlinear scale equals the block product") {
    ExpressionTemplate e = ground_truth_template(regime_preset(2), 0);  // c * u2*u3 term
    const std::vector<std::pair<std::vector<double>, double>> batch{{{2.0, 3.0, -4.0}, 0.0}};
    const auto grad = eval_gradient(e, batch);
    CHECK(grad[3] == doctest::Approx(3.0 * -4.0).epsilon(1e-12));  // index d is the scale slot
}

TEST_CASE("analytic gradients match central finite differences") {
    GaussStream rng(77);
    int checked = 0;
    for (int trial = 0; trial < 40; ++trial) {
        ExpressionTemplate e = random_general_template(rng);
        std::vector<std::pair<std::vector<double>, double>> batch;
        for (int s = 0; s < 10; ++s)
            batch.push_back({{rng.gauss(), rng.gauss(), rng.gauss()}, rng.uniform()});

        // keep clear of the exp clamp so the derivative is smooth
        bool safe = true;
        for (const auto& [u, t] : batch) {
            const double v = eval_expression(e, u, t);
            if (!std::isfinite(v) || std::abs(v) > 1e6) safe = false;
        }
        if (!safe) continue;
        ++checked;

        const auto analytic = eval_gradient(e, batch);
        const auto params = e.get_params();
        const auto numeric = test::central_diff(
            [&](const std::vector<double>& p) {
                ExpressionTemplate probe = e;
                probe.set_params(p);
                double total = 0.0;
                for (const auto& [u, t] : batch) total += eval_expression(probe, u, t);
                return total;
            },
            params, 1e-6);
        CHECK(test::grad_close(analytic, numeric, 1e-4, 1e-5));
    }
    CHECK(checked >= 20);
}

TEST_CASE("loss gradient matches finite differences") {
    GaussStream rng(88);
    const TrajectoryBatch batch =
        simulate_batch(regime_preset(2), default_initial_distribution(), 4, 25, 0.01, 3);
    const ComponentData data = build_component_data(batch, 0);

    ExpressionTemplate e = ground_truth_template(regime_preset(2), 0);
    std::vector<double> params = e.get_params();
    for (auto& v : params) v += 0.1 * rng.gauss();
    e.set_params(params);

    std::vector<double> grad(e.param_count());
    const double loss = expression_loss_grad(e, data, {}, grad);
    CHECK(loss == doctest::Approx(expression_loss(e, data)).epsilon(1e-12));

    const auto numeric = test::central_diff(
        [&](const std::vector<double>& p) {
            ExpressionTemplate probe = e;
            probe.set_params(p);
            return expression_loss(probe, data);
        },
        params, 1e-6);
    CHECK(test::grad_close(grad, numeric, 1e-4, 1e-7));
}

TEST_CASE("component data carries empirical increments") {
    const TrajectoryBatch batch =
        simulate_batch(regime_preset(2), default_initial_distribution(), 2, 10, 0.01, 9);
    const ComponentData data = build_component_data(batch, 1);
    CHECK(data.size() == 2 * 10);
    const double expect =
        (batch.state(0, 1)[1] - batch.state(0, 0)[1]) / batch.h;
    CHECK(data.targets[0] == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("render matches the published equipartition form") {
    ExpressionTemplate e = ground_truth_template(regime_preset(1), 0);
    e.linear = {-0.205, 0.997, -2.001};
    e.nonlinear_scale = 1.0001;
    CHECK(render(e) == "1.000u2u3-0.205u1+0.997u2-2.001u3");
}

TEST_CASE("render keeps sin time terms in functional form") {
    ExpressionTemplate e = ground_truth_template(regime_preset(4), 1);
    e.linear = {0.0, -1.998, 0.0};
    e.nonlinear_scale = -0.999;
    e.time_block.params = {0.785, 0.003, 0, 0, 1.0, 0};
    CHECK(render(e) == "-0.999u1u3-1.998u2+sin(0.785t+0.003)");
}

TEST_CASE("render drops negligible terms") {
    ExpressionTemplate e = ground_truth_template(regime_preset(2), 2);
    e.linear = {0.004, 0.0, -1.994};
    e.nonlinear_scale = -0.999;
    e.constant = -0.0049;
    CHECK(render(e) == "-0.999u1u2-1.994u3");
}

TEST_CASE("rendered monomial form re-evaluates within the rounding bound") {
    GaussStream rng(31337);
    for (int trial = 0; trial < 50; ++trial) {
        const ExpressionTemplate e = random_monomial_template(rng);
        const std::string text = render(e);
        for (int s = 0; s < 5; ++s) {
            const std::vector<double> u{rng.gauss(), rng.gauss(), rng.gauss()};
            const double t = rng.uniform();
            const double direct = eval_expression(e, u, t);
            const double reparsed = test::eval_rendered(text, u, t);
            // bound: half-ulp of 3-decimal rounding per monomial value
            const auto expansion = monomial_expansion(e);
            REQUIRE(expansion.has_value());
            double budget = 0.0;
            for (const auto& [key, coeff] : *expansion) {
                double mono = 1.0;
                for (std::size_t j = 0; j < key.size(); ++j) mono *= std::pow(u[j], key[j]);
                budget += std::abs(mono);
            }
            CHECK(std::abs(direct - reparsed) <= 0.0005 * budget + 1e-12);
        }
    }
}

TEST_CASE("monomial coefficients expose the quadratic interaction") {
    const ExpressionTemplate e = ground_truth_template(regime_preset(1), 0);
    CHECK(monomial_coefficient(e, {0, 1, 1}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(monomial_coefficient(e, {1, 0, 0}) == doctest::Approx(-0.2).epsilon(1e-12));
    CHECK(monomial_coefficient(e, {0, 1, 0}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(monomial_coefficient(e, {0, 0, 1}) == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(monomial_coefficient(e, {1, 1, 1}) == 0.0);
}

TEST_CASE("operator sequences round-trip through keys and templates") {
    GaussStream rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const ExpressionTemplate e = random_general_template(rng);
        const OperatorSequence seq = sequence_of(e);
        const ExpressionTemplate rebuilt = make_expression(3, seq);
        CHECK(sequence_of(rebuilt).key() == seq.key());
    }
    OperatorSequence a, b;
    a.blocks.resize(4);
    b.blocks.resize(4);
    b.blocks[2].root = UnaryOp::Sin;
    CHECK(a.key() != b.key());
}

TEST_CASE("expression JSON round trip preserves evaluation exactly") {
    GaussStream rng(6);
    std::vector<ExpressionTemplate> exprs;
    for (int i = 0; i < 3; ++i) exprs.push_back(random_general_template(rng));
    const std::string text = expressions_to_json(exprs);
    const auto loaded = expressions_from_json(text);
    REQUIRE(loaded.size() == exprs.size());
    for (std::size_t i = 0; i < exprs.size(); ++i) {
        for (int s = 0; s < 10; ++s) {
            const std::vector<double> u{rng.gauss(), rng.gauss(), rng.gauss()};
            const double t = rng.uniform();
            CHECK(eval_expression(loaded[i], u, t) == eval_expression(exprs[i], u, t));
        }
    }
}
