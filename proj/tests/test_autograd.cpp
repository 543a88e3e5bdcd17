#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>

#include "dite/autograd.hpp"
#include "dite/gradcheck.hpp"
#include "dite/init.hpp"

using namespace dite;

namespace {

TensorD random_tensor(const Shape& s, SeededRng& rng) {
    TensorD t(s);
    for (auto& v : t.data) v = rng.next_normal();
    return t;
}

// worst finite-difference error for a graph built on top of one input tensor
double check_input_grad(TensorD x, const std::function<int(TapeD&, int)>& graph,
                        double step = 1e-5) {
    auto fwd = [&](TapeD& tp) { return graph(tp, tp.param("x", x)); };
    const FiniteDiffReport rep =
        finite_diff_check<double>(fwd, {ParamRef<double>{"x", &x}}, step, 1.0);
    REQUIRE(rep.all_finite);
    return rep.worst_rel;
}

}  // namespace

TEST_CASE("grad of sum is all ones") {
    SeededRng rng(1);
    TapeD tp;
    int x = tp.leaf(random_tensor({2, 3, 2, 2}, rng));
    tp.backward(tp.sum_all(x));
    for (double v : tp.grad(x).data) CHECK(v == 1.0);
}

TEST_CASE("grad of sum(sigmoid(x)) at zero is 0.25") {
    TapeD tp;
    int x = tp.leaf(TensorD(1, 2, 3, 3));
    tp.backward(tp.sum_all(tp.sigmoid(x)));
    for (double v : tp.grad(x).data) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar output") {
    TapeD tp;
    int x = tp.leaf(TensorD(1, 1, 2, 2));
    CHECK_THROWS_AS(tp.backward(tp.relu(x)), TensorError);
}

TEST_CASE("leaves off every path have no gradient") {
    TapeD tp;
    int x = tp.leaf(TensorD::full(Shape{1, 1, 1, 1}, 2.0));
    int unused = tp.leaf(TensorD(1, 1, 1, 1));
    tp.backward(tp.sum_all(tp.scale_const(x, 3.0)));
    CHECK(tp.has_grad(x));
    CHECK(!tp.has_grad(unused));
    CHECK(tp.grad_or_zero(unused).data[0] == 0.0);
}

TEST_CASE("conv2d gradients match central differences") {
    SeededRng rng(2);
    TensorD x = random_tensor({1, 2, 5, 5}, rng);
    TensorD w = random_tensor({3, 2, 3, 3}, rng);
    const ConvSpec spec{2, 3, 3, 3, 2, 1, 1};
    auto fwd = [&](TapeD& tp) {
        return tp.conv2d(tp.param("x", x), tp.param("w", w), spec);
    };
    const FiniteDiffReport rep = finite_diff_check<double>(
        fwd, {ParamRef<double>{"x", &x}, ParamRef<double>{"w", &w}}, 1e-5, 1e-6);
    CHECK(rep.pass());
    CHECK(rep.worst_rel < 1e-6);
}

TEST_CASE("grouped and depthwise conv backward") {
    SeededRng rng(3);
    TensorD x = random_tensor({2, 4, 4, 4}, rng);
    TensorD w = random_tensor({4, 1, 3, 3}, rng);
    const ConvSpec spec = ConvSpec::depthwise(4, 3);
    auto fwd = [&](TapeD& tp) {
        return tp.conv2d(tp.param("x", x), tp.param("w", w), spec);
    };
    const FiniteDiffReport rep = finite_diff_check<double>(
        fwd, {ParamRef<double>{"x", &x}, ParamRef<double>{"w", &w}}, 1e-5, 1e-6);
    CHECK(rep.pass());
}

TEST_CASE("finite_diff_check on a linear function is exact to round-off") {
    TensorD x = TensorD::full(Shape{1, 1, 2, 2}, 0.7);
    auto fwd = [&](TapeD& tp) { return tp.scale_const(tp.param("x", x), 3.0); };
    const FiniteDiffReport rep =
        finite_diff_check<double>(fwd, {ParamRef<double>{"x", &x}}, 1e-5, 1e-9);
    CHECK(rep.pass());
    CHECK(rep.worst_rel < 1e-9);
    CHECK_THROWS_AS(
        finite_diff_check<double>(fwd, {ParamRef<double>{"x", &x}}, 0.0, 1e-9), TensorError);
}

TEST_CASE("element-wise backward rules") {
    SeededRng rng(4);
    const TensorD base = random_tensor({1, 3, 4, 4}, rng);
    CHECK(check_input_grad(base, [](TapeD& tp, int x) { return tp.relu(x); }) < 1e-6);
    CHECK(check_input_grad(base, [](TapeD& tp, int x) { return tp.sigmoid(x); }) < 1e-6);
    CHECK(check_input_grad(base, [](TapeD& tp, int x) { return tp.scale_const(x, -2.5); }) < 1e-8);
    CHECK(check_input_grad(base, [](TapeD& tp, int x) { return tp.add(x, tp.sigmoid(x)); }) < 1e-6);
    for (int axis = 0; axis < 4; ++axis) {
        CHECK(check_input_grad(base, [axis](TapeD& tp, int x) { return tp.softmax(x, axis); }) <
              1e-6);
    }
}

TEST_CASE("structural op backward rules") {
    SeededRng rng(5);
    const TensorD base = random_tensor({2, 4, 4, 6}, rng);
    CHECK(check_input_grad(base, [](TapeD& tp, int x) {
              auto parts = tp.channel_split(x, 2);
              return tp.channel_concat({tp.sigmoid(parts[1]), parts[0]});
          }) < 1e-6);
    CHECK(check_input_grad(base, [](TapeD& tp, int x) { return tp.channel_shuffle(x, 2); }) < 1e-8);
    CHECK(check_input_grad(base, [](TapeD& tp, int x) {
              return tp.reshape(tp.permute_0213(x), Shape{2, 4, 6, 4});
          }) < 1e-8);
    CHECK(check_input_grad(base, [](TapeD& tp, int x) {
              return tp.batch_concat({tp.batch_slice(x, 1, 2), tp.batch_slice(x, 0, 1)});
          }) < 1e-8);
    CHECK(check_input_grad(base, [](TapeD& tp, int x) { return tp.adaptive_avg_pool(x, 2, 3); }) <
          1e-6);
    CHECK(check_input_grad(base, [](TapeD& tp, int x) { return tp.bilinear_upsample(x, 7, 9); }) <
          1e-6);
}

TEST_CASE("matmul, bias, scale-by-node and pick backward rules") {
    SeededRng rng(6);
    TensorD a = random_tensor({2, 2, 3, 4}, rng);
    TensorD b = random_tensor({1, 1, 4, 2}, rng);
    {
        auto fwd = [&](TapeD& tp) { return tp.matmul(tp.param("a", a), tp.param("b", b)); };
        const FiniteDiffReport rep = finite_diff_check<double>(
            fwd, {ParamRef<double>{"a", &a}, ParamRef<double>{"b", &b}}, 1e-5, 1e-6);
        CHECK(rep.pass());
    }
    TensorD x = random_tensor({2, 3, 2, 2}, rng);
    TensorD bias = random_tensor({1, 3, 1, 1}, rng);
    {
        auto fwd = [&](TapeD& tp) {
            return tp.add_channel_bias(tp.param("x", x), tp.param("bias", bias));
        };
        const FiniteDiffReport rep = finite_diff_check<double>(
            fwd, {ParamRef<double>{"x", &x}, ParamRef<double>{"bias", &bias}}, 1e-5, 1e-8);
        CHECK(rep.pass());
    }
    TensorD s = random_tensor({1, 1, 1, 1}, rng);
    {
        auto fwd = [&](TapeD& tp) {
            int xx = tp.param("x", x);
            int ss = tp.param("s", s);
            return tp.scale_by_node(tp.sigmoid(xx), tp.pick(ss, 0));
        };
        const FiniteDiffReport rep = finite_diff_check<double>(
            fwd, {ParamRef<double>{"x", &x}, ParamRef<double>{"s", &s}}, 1e-5, 1e-6);
        CHECK(rep.pass());
    }
    TensorD g = random_tensor({1, 3, 1, 1}, rng);
    {
        auto fwd = [&](TapeD& tp) { return tp.mul(tp.param("x", x), tp.param("g", g)); };
        const FiniteDiffReport rep = finite_diff_check<double>(
            fwd, {ParamRef<double>{"x", &x}, ParamRef<double>{"g", &g}}, 1e-5, 1e-6);
        CHECK(rep.pass());
    }
}

TEST_CASE("normalization backward rules") {
    SeededRng rng(7);
    TensorD x = random_tensor({2, 4, 3, 3}, rng);
    TensorD scale = random_tensor({1, 4, 1, 1}, rng);
    TensorD shift = random_tensor({1, 4, 1, 1}, rng);
    TensorD mean = random_tensor({1, 4, 1, 1}, rng);
    TensorD var = TensorD::full(Shape{1, 4, 1, 1}, 0.8);
    {
        auto fwd = [&](TapeD& tp) {
            return tp.batchnorm(tp.param("x", x), tp.param("scale", scale), tp.param("shift", shift),
                                tp.buffer("mean", mean), tp.buffer("var", var), 1e-5);
        };
        const FiniteDiffReport rep = finite_diff_check<double>(
            fwd,
            {ParamRef<double>{"x", &x}, ParamRef<double>{"scale", &scale},
             ParamRef<double>{"shift", &shift}},
            1e-5, 1e-6);
        CHECK(rep.pass());
    }
    TensorD gamma = random_tensor({1, 4, 1, 1}, rng);
    TensorD beta = random_tensor({1, 4, 1, 1}, rng);
    {
        auto fwd = [&](TapeD& tp) {
            return tp.layernorm(tp.param("x", x), tp.param("gamma", gamma), tp.param("beta", beta),
                                1e-5);
        };
        const FiniteDiffReport rep = finite_diff_check<double>(
            fwd,
            {ParamRef<double>{"x", &x}, ParamRef<double>{"gamma", &gamma},
             ParamRef<double>{"beta", &beta}},
            1e-5, 1e-5);
        CHECK(rep.pass());
    }
}

TEST_CASE("linearity of gradients") {
    SeededRng rng(8);
    TensorD x0 = random_tensor({1, 2, 3, 3}, rng);
    const double a = 2.0, b = -3.0;
    const auto grad_of = [&](const std::function<int(TapeD&, int)>& fn) {
        TapeD tp;
        int x = tp.leaf(x0);
        tp.backward(tp.sum_all(fn(tp, x)));
        return tp.grad(x);
    };
    TensorD gf = grad_of([](TapeD& tp, int x) { return tp.sigmoid(x); });
    TensorD gg = grad_of([](TapeD& tp, int x) { return tp.softmax(x, 1); });
    TensorD gsum = grad_of([&](TapeD& tp, int x) {
        return tp.add(tp.scale_const(tp.sigmoid(x), a), tp.scale_const(tp.softmax(x, 1), b));
    });
    for (std::size_t i = 0; i < gsum.data.size(); ++i) {
        CHECK(gsum.data[i] == doctest::Approx(a * gf.data[i] + b * gg.data[i]).epsilon(1e-10));
    }
}

TEST_CASE("identity composition leaves gradients unchanged") {
    SeededRng rng(9);
    TensorD x0 = random_tensor({1, 8, 2, 2}, rng);
    TapeD tp1;
    int x1 = tp1.leaf(x0);
    tp1.backward(tp1.sum_all(tp1.sigmoid(x1)));
    TapeD tp2;
    int x2 = tp2.leaf(x0);
    // shuffle then inverse shuffle is the identity
    int composed = tp2.channel_shuffle(tp2.channel_shuffle(x2, 2), 4);
    tp2.backward(tp2.sum_all(tp2.sigmoid(composed)));
    const TensorD& g1 = tp1.grad(x1);
    const TensorD& g2 = tp2.grad(x2);
    for (std::size_t i = 0; i < g1.data.size(); ++i) {
        CHECK(g1.data[i] == doctest::Approx(g2.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("parameter registration dedupes by name") {
    TensorD w = TensorD::full(Shape{1, 1, 1, 1}, 2.0);
    TapeD tp;
    int a = tp.param("w", w);
    int b = tp.param("w", w);
    CHECK(a == b);
    CHECK(tp.params().size() == 1);
    // y = w * w uses the same node twice; dy/dw = 2w
    tp.backward(tp.sum_all(tp.mul(a, b)));
    CHECK(tp.grad(a).data[0] == doctest::Approx(4.0));
}

TEST_CASE("scope paths label nodes") {
    TapeD tp;
    {
        TapeD::ScopeGuard g1(tp, "outer");
        TapeD::ScopeGuard g2(tp, "inner");
        tp.param("w", TensorD(1, 1, 1, 1));
    }
    CHECK(tp.param_node("outer.inner.w") >= 0);
    CHECK(tp.param_node("w") < 0);
    CHECK(tp.count_nodes("param", "outer") == 1);
}
