#include <doctest.h>

#include <cmath>
#include <random>

#include "asyncflow/autodiff.hpp"
#include "asyncflow/finite_diff.hpp"
#include "asyncflow/optim.hpp"
#include "test_util.hpp"

using namespace asyncflow;
using asyncflow::testing::grad_check;
using asyncflow::testing::random_tensor;

TEST_CASE("grad of sum(x*x) is 2x") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::from({1, -2, 3}), true);
    auto g = tape.grad_wrt(sum(x * x), {x});
    CHECK(g[0].vec() == std::vector<double>{2, -4, 6});
}

TEST_CASE("grad of sum(x) is all ones") {
    std::mt19937_64 rng(3);
    Tape<float> tape;
    auto x = tape.leaf(random_tensor<float>({2, 3, 4}, rng), true);
    auto g = tape.grad_wrt(sum(x), {x});
    CHECK(g[0].shape() == Shape{2, 3, 4});
    for (auto v : g[0].vec()) CHECK(v == 1.0f);
}

TEST_CASE("sum(softmax(W v)) gradient matches finite differences at 32-bit") {
    std::mt19937_64 rng(11);
    auto W = random_tensor<float>({3, 3}, rng);
    auto v = random_tensor<float>({3, 1}, rng);
    std::function<Var<float>(Tape<float>&, const std::vector<Var<float>>&)> f =
        [&](Tape<float>& t, const std::vector<Var<float>>& in) {
            return sum(softmax(transpose(matmul(in[0], t.constant(v)))));
        };
    // Softmax rows sum to one, so this gradient is identically zero; compare
    // absolutely.
    Tape<float> tape;
    auto w = tape.leaf(W, true);
    auto ad = tape.grad_wrt(f(tape, {w}), {w})[0];
    std::function<float(std::span<const float>)> fs = [&](std::span<const float> p) {
        Tape<float> t2(false);
        auto leaf = t2.leaf(Tensor<float>({3, 3}, std::vector<float>(p.begin(), p.end())), false);
        return f(t2, {leaf}).value().item();
    };
    auto fd = finite_diff_grad<float>(fs, W.vec(), 1e-3f);
    for (std::size_t i = 0; i < fd.size(); ++i) CHECK(std::abs(ad[i] - fd[i]) < 1e-3);

    // Weighted variant with a non-trivial gradient.
    auto c = random_tensor<float>({1, 3}, rng);
    std::function<Var<float>(Tape<float>&, const std::vector<Var<float>>&)> g =
        [&](Tape<float>& t, const std::vector<Var<float>>& in) {
            auto s = softmax(transpose(matmul(in[0], t.constant(v))));
            return sum(s * t.constant(c));
        };
    CHECK(grad_check<float>(g, {W}, 1e-3f) < 1e-3);
}

TEST_CASE("finite_diff_grad examples") {
    std::function<double(std::span<const double>)> sq = [](std::span<const double> x) {
        return x[0] * x[0];
    };
    std::vector<double> x{3.0};
    CHECK(std::abs(finite_diff_grad<double>(sq, x, 1e-4)[0] - 6.0) < 1e-6);

    std::function<double(std::span<const double>)> cube = [](std::span<const double> x) {
        return x[0] * x[0] * x[0] + x[1] * x[1] * x[1];
    };
    std::vector<double> y{1.0, 2.0};
    auto g = finite_diff_grad<double>(cube, y, 1e-3);
    CHECK(std::abs(g[0] - 3.0) < 1e-4);
    CHECK(std::abs(g[1] - 12.0) < 1e-4);

    std::function<double(std::span<const double>)> konst = [](std::span<const double>) {
        return 4.0;
    };
    for (auto v : finite_diff_grad<double>(konst, y, 1e-3)) CHECK(v == 0.0);

    std::function<double(std::span<const double>)> bad = [](std::span<const double>) {
        return std::nan("");
    };
    CHECK_THROWS_AS(finite_diff_grad<double>(bad, y, 1e-3), NumericError);
    CHECK_THROWS_AS(finite_diff_grad<double>(sq, x, 0.0), ContractViolation);
}

namespace {

using Build32 = std::function<Var<float>(Tape<float>&, const std::vector<Var<float>>&)>;
using Build64 = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Wraps a tensor-valued op into a scalar loss sum(c * op(x)) with fixed
// random weights c so every output coordinate contributes.
template <class T>
std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)> weighted(
    std::function<Var<T>(const std::vector<Var<T>>&)> op, std::uint64_t seed) {
    return [op, seed](Tape<T>& t, const std::vector<Var<T>>& in) {
        auto y = op(in);
        std::mt19937_64 rng(seed);
        return sum(y * t.constant(random_tensor<T>(y.shape(), rng)));
    };
}

template <class T>
struct PrimitiveCase {
    const char* name;
    std::vector<Shape> shapes;
    std::function<Var<T>(const std::vector<Var<T>>&)> op;
    double lo = -1.0, hi = 1.0;
};

template <class T>
std::vector<PrimitiveCase<T>> primitive_cases() {
    using V = std::vector<Var<T>>;
    return {
        {"add", {{3, 4}, {3, 4}}, [](const V& v) { return v[0] + v[1]; }},
        {"sub", {{3, 4}, {3, 4}}, [](const V& v) { return v[0] - v[1]; }},
        {"mul", {{3, 4}, {3, 4}}, [](const V& v) { return v[0] * v[1]; }},
        {"scale", {{5}}, [](const V& v) { return scale(v[0], T(-2.5)); }},
        {"matmul", {{2, 3, 4}, {4, 5}}, [](const V& v) { return matmul(v[0], v[1]); }},
        {"bmm", {{2, 3, 4}, {2, 4, 2}}, [](const V& v) { return matmul(v[0], v[1]); }},
        {"transpose", {{2, 3, 4}}, [](const V& v) { return transpose(v[0]); }},
        {"reshape", {{2, 6}}, [](const V& v) { return reshape(v[0], Shape{3, 4}); }},
        {"concat", {{2, 3}, {2, 2}}, [](const V& v) { return concat<T>({v[0], v[1]}, -1); }},
        {"concat0", {{1, 3}, {2, 3}}, [](const V& v) { return concat<T>({v[0], v[1]}, 0); }},
        {"slice", {{3, 6}}, [](const V& v) { return slice(v[0], 1, 2, 5); }},
        {"sum", {{3, 2}}, [](const V& v) { return sum(v[0]); }},
        {"sum_last", {{3, 2}}, [](const V& v) { return sum_last(v[0]); }},
        {"mean", {{3, 2}}, [](const V& v) { return mean(v[0]); }},
        {"exp", {{4}}, [](const V& v) { return exp(v[0]); }},
        {"log", {{4}}, [](const V& v) { return log(v[0]); }, 0.5, 2.0},
        {"tanh", {{4}}, [](const V& v) { return tanh(v[0]); }},
        {"silu", {{4}}, [](const V& v) { return silu(v[0]); }},
        {"gelu", {{4}}, [](const V& v) { return gelu(v[0]); }},
        {"softmax", {{3, 5}}, [](const V& v) { return softmax(v[0]); }},
        {"log_softmax", {{3, 5}}, [](const V& v) { return log_softmax(v[0]); }},
        {"layer_norm", {{3, 6}}, [](const V& v) { return layer_norm(v[0]); }},
        {"masked_fill", {{2, 3}},
         [](const V& v) { return masked_fill(v[0], {1, 0, 0, 1, 0, 1}, T(-5)); }},
        {"broadcast", {{3}}, [](const V& v) { return broadcast_to(v[0], Shape{2, 4, 3}); }},
        {"broadcast_mid", {{2, 1, 3}}, [](const V& v) { return broadcast_to(v[0], Shape{2, 4, 3}); }},
        {"clamp", {{6}}, [](const V& v) { return clamp(v[0], T(-0.5), T(0.5)); }},
    };
}

}  // namespace

TEST_CASE("every primitive matches finite differences at 32 and 64 bit") {
    std::mt19937_64 rng(2024);
    for (const auto& c : primitive_cases<double>()) {
        std::vector<Tensor<double>> in;
        for (const auto& s : c.shapes) in.push_back(random_tensor<double>(s, rng, c.lo, c.hi));
        // Keep clamp inputs off its kinks.
        if (std::string(c.name) == "clamp")
            in[0] = Tensor<double>::from({-0.9, -0.2, 0.1, 0.3, 0.8, 0.45});
        const double err = grad_check<double>(weighted<double>(c.op, 99), in, 1e-6);
        INFO(c.name << " f64 rel err " << err);
        CHECK(err < 1e-6);
    }
    const auto cases32 = primitive_cases<float>();
    for (const auto& c : cases32) {
        std::vector<Tensor<float>> in;
        for (const auto& s : c.shapes) in.push_back(random_tensor<float>(s, rng, c.lo, c.hi));
        if (std::string(c.name) == "clamp")
            in[0] = Tensor<float>::from({-0.9f, -0.2f, 0.1f, 0.3f, 0.8f, 0.45f});
        const double err = grad_check<float>(weighted<float>(c.op, 99), in, 1e-2f);
        INFO(c.name << " f32 rel err " << err);
        CHECK(err < 1e-3);
    }
}

TEST_CASE("gradient accumulation is linear over recorded losses") {
    std::mt19937_64 rng(5);
    ParamSet<double> ps;
    ps.add("w", random_tensor<double>({4, 3}, rng));
    auto x = random_tensor<double>({2, 4}, rng);

    auto loss_a = [&](Tape<double>& t) { return sum(tanh(matmul(t.constant(x), t.param(ps, 0)))); };
    auto loss_b = [&](Tape<double>& t) {
        auto w = t.param(ps, 0);
        return sum(w * w);
    };
    Tape<double> ta, tb, tab;
    auto ga = ta.grad(loss_a(ta), 1);
    auto gb = tb.grad(loss_b(tb), 1);
    auto gab = tab.grad(add(loss_a(tab), loss_b(tab)), 1);
    for (std::size_t i = 0; i < gab[0].size(); ++i)
        CHECK(gab[0][i] == doctest::Approx(ga[0][i] + gb[0][i]).epsilon(1e-12));
}

TEST_CASE("grad rejects non-scalar losses and unsupported ops") {
    Tape<float> tape;
    auto x = tape.leaf(Tensor<float>::from({1, 2}), true);
    CHECK_THROWS_AS(tape.grad_wrt(x * x, {x}), ContractViolation);

    Tape<float> t2;
    auto y = t2.leaf(Tensor<float>::from({1.4f, 2.6f}), true);
    Tensor<float> rounded = y.value();
    for (auto& v : rounded.vec()) v = std::round(v);
    auto r = t2.record(rounded, {y.id}, "round", {});
    CHECK_THROWS_AS(t2.grad_wrt(sum(r), {y}), UnsupportedOp);
}

TEST_CASE("parameters used twice accumulate both contributions") {
    ParamSet<double> ps;
    ps.add("a", Tensor<double>::from({3.0}));
    Tape<double> tape;
    auto a1 = tape.param(ps, 0);
    auto a2 = tape.param(ps, 0);
    auto g = tape.grad(sum(a1 * a2), 1);
    CHECK(g[0][0] == doctest::Approx(6.0));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamSet<float> ps;
    ps.add("w", Tensor<float>::from({1.0f, -2.0f}));
    auto st = OptimState<float>::zeros_like(ps);
    Gradients<float> g{Tensor<float>(Shape{2}, 0.0f)};
    for (int i = 0; i < 10; ++i) adam_step(ps, g, st);
    CHECK(ps[0].value.vec() == std::vector<float>{1.0f, -2.0f});
    CHECK(st.step_count == 10);
}

TEST_CASE("adam: first step moves each coordinate by about lr against the gradient sign") {
    ParamSet<double> ps;
    ps.add("w", Tensor<double>::from({0.0, 0.0, 0.0}));
    auto st = OptimState<double>::zeros_like(ps);
    Gradients<double> g{Tensor<double>::from({0.3, -7.0, 0.0})};
    adam_step(ps, g, st, {.lr = 0.01});
    CHECK(ps[0].value[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(ps[0].value[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(ps[0].value[2] == 0.0);
}

TEST_CASE("adam: 100 steps on x^2 from 5 with lr 0.1") {
    // Scalar recurrence run directly as the oracle.
    double x = 5, m = 0, v = 0;
    for (int t = 1; t <= 100; ++t) {
        const double g = 2 * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    REQUIRE(std::abs(x) < 0.5);

    ParamSet<double> ps;
    ps.add("x", Tensor<double>::scalar(5.0));
    auto st = OptimState<double>::zeros_like(ps);
    for (int t = 0; t < 100; ++t) {
        Tape<double> tape;
        auto p = tape.param(ps, 0);
        adam_step(ps, tape.grad(p * p, 1), st, {.lr = 0.1});
    }
    CHECK(std::abs(ps[0].value.item()) < 0.5);
    CHECK(ps[0].value.item() == doctest::Approx(x).epsilon(1e-9));
}

TEST_CASE("adam rejects mismatched shapes") {
    ParamSet<float> ps;
    ps.add("w", Tensor<float>::from({1.0f, 2.0f}));
    auto st = OptimState<float>::zeros_like(ps);
    Gradients<float> g{Tensor<float>(Shape{3}, 1.0f)};
    CHECK_THROWS_AS(adam_step(ps, g, st), ContractViolation);
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ContractViolation);
    CHECK_THROWS_AS(Tensor<float>(Shape{2, 0}), ContractViolation);
    Tensor<float> t(Shape{2}, std::vector<float>{1.0f, INFINITY});
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(check_finite(t, "t"), NumericError);
}

TEST_CASE("forward passes are bit-deterministic") {
    auto run = [] {
        std::mt19937_64 rng(77);
        auto a = random_tensor<float>({4, 8}, rng);
        auto b = random_tensor<float>({8, 8}, rng);
        Tape<float> t;
        return softmax(layer_norm(matmul(t.constant(a), t.constant(b)))).value();
    };
    CHECK(run() == run());
}
