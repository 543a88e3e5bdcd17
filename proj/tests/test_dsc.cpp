#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dite/dsc.hpp"
#include "dite/gradcheck.hpp"

using namespace dite;

namespace {

TensorD random_tensor(const Shape& s, SeededRng& rng) {
    TensorD t(s);
    for (auto& v : t.data) v = rng.next_normal();
    return t;
}

bool approx_equal(const TensorD& a, const TensorD& b, double tol = 1e-12) {
    if (a.shape != b.shape) return false;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (std::fabs(a.data[i] - b.data[i]) > tol) return false;
    }
    return true;
}

// depthwise delta kernel: identity convolution
TensorD delta_kernel(std::int64_t channels, std::int64_t k, double gain = 1.0) {
    TensorD w(channels, 1, k, k);
    for (std::int64_t c = 0; c < channels; ++c) w.at(c, 0, k / 2, k / 2) = gain;
    return w;
}

}  // namespace

TEST_CASE("scs kernel sizes follow 2i+1") {
    ScsSpec s4{8, 4};
    CHECK(s4.kernel_sizes() == std::vector<std::int64_t>{3, 5, 7, 9});
    ScsSpec s1{8, 1};
    CHECK(s1.kernel_sizes() == std::vector<std::int64_t>{3});
    CHECK_THROWS_AS((ScsSpec{5, 2}.validate()), TensorError);
}

TEST_CASE("scs with one group is a single depthwise conv") {
    SeededRng rng(1);
    TensorD x = random_tensor({1, 4, 6, 6}, rng);
    TensorD w = random_tensor({4, 1, 3, 3}, rng);
    TensorD got = scs_forward(x, ScsSpec{4, 1}, {w});
    TensorD want = conv2d(x, w, ConvSpec::depthwise(4, 3));  // shuffle(1) is the identity
    CHECK(approx_equal(got, want, 0.0));
}

TEST_CASE("scs with delta kernels reduces to a channel shuffle") {
    SeededRng rng(2);
    TensorD x = random_tensor({2, 4, 5, 5}, rng);
    const ScsSpec spec{4, 2};
    TensorD got = scs_forward(x, spec, {delta_kernel(2, 3), delta_kernel(2, 5)});
    CHECK(approx_equal(got, channel_shuffle(x, 2), 0.0));
}

TEST_CASE("scs preserves the input shape for every valid group count") {
    SeededRng rng(3);
    for (std::int64_t g : {1, 2, 4}) {
        const std::int64_t c = 8;
        TensorD x = random_tensor({1, c, 9, 7}, rng);
        ScsSpec spec{c, g};
        std::vector<TensorD> ws;
        for (std::int64_t i = 0; i < g; ++i) {
            ws.push_back(random_tensor(spec.group_conv(i).weight_shape(), rng));
        }
        CHECK(scs_forward(x, spec, ws).shape == x.shape);
    }
}

TEST_CASE("dka attention with zero weights gates at one half") {
    SeededRng rng(4);
    TensorD x = random_tensor({2, 4, 3, 3}, rng);
    TensorD fc1(1, 4, 1, 1), fc2(3, 1, 1, 1);
    TensorD a = dka_attention(x, fc1, fc2);
    CHECK(a.shape == Shape{2, 3, 1, 1});
    for (double v : a.data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("dka attention stays in (0,1) and depends on the input") {
    SeededRng rng(5);
    TensorD fc1 = random_tensor({2, 4, 1, 1}, rng);
    TensorD fc2 = random_tensor({1, 2, 1, 1}, rng);
    TensorD x1 = TensorD::full(Shape{1, 4, 3, 3}, 0.3);
    TensorD x2 = TensorD::full(Shape{1, 4, 3, 3}, -1.7);
    TensorD a1 = dka_attention(x1, fc1, fc2);
    TensorD a2 = dka_attention(x2, fc1, fc2);
    CHECK(a1.numel() == 1);
    CHECK(a1.data[0] > 0.0);
    CHECK(a1.data[0] < 1.0);
    CHECK(a1.data[0] != a2.data[0]);
}

TEST_CASE("dka aggregation") {
    SeededRng rng(6);
    TensorD w1 = random_tensor({2, 1, 3, 3}, rng);
    TensorD half = dka_aggregate<double>({w1}, {0.5});
    for (std::size_t i = 0; i < w1.data.size(); ++i) CHECK(half.data[i] == 0.5 * w1.data[i]);

    // identical bank entries scale by the weight sum
    TensorD same = dka_aggregate<double>({w1, w1, w1}, {0.2, 0.3, 0.4});
    for (std::size_t i = 0; i < w1.data.size(); ++i) {
        CHECK(same.data[i] == doctest::Approx(0.9 * w1.data[i]).epsilon(1e-12));
    }

    // elementwise loop oracle
    std::vector<TensorD> bank{random_tensor({2, 1, 3, 3}, rng), random_tensor({2, 1, 3, 3}, rng)};
    std::vector<double> a{0.7, -0.2};
    TensorD got = dka_aggregate(bank, a);
    for (std::size_t i = 0; i < got.data.size(); ++i) {
        CHECK(got.data[i] == a[0] * bank[0].data[i] + a[1] * bank[1].data[i]);
    }

    // linearity in the attention weights
    std::vector<double> b{0.1, 0.5};
    TensorD lhs = dka_aggregate(bank, std::vector<double>{a[0] + b[0], a[1] + b[1]});
    TensorD rhs = add(dka_aggregate(bank, a), dka_aggregate(bank, b));
    CHECK(approx_equal(lhs, rhs, 1e-15));

    CHECK_THROWS_AS(dka_aggregate(bank, std::vector<double>{1.0}), TensorError);
    bank.push_back(random_tensor({2, 1, 5, 5}, rng));
    CHECK_THROWS_AS(dka_aggregate(bank, std::vector<double>{1, 1, 1}), TensorError);
}

TEST_CASE("dsc with one group, one kernel and zero attention is a half-scaled conv") {
    SeededRng rng(7);
    DscLayer<double> layer = DscLayer<double>::make(ScsSpec{4, 1}, 1, rng);
    fill_constant(layer.attn_fc1, 0.0);
    fill_constant(layer.attn_fc2, 0.0);
    TensorD x = random_tensor({1, 4, 6, 6}, rng);
    TensorD got = layer.forward(x);
    TensorD want = conv2d(x, scale(layer.banks[0][0], 0.5), ConvSpec::depthwise(4, 3));
    CHECK(approx_equal(got, want, 1e-12));
}

TEST_CASE("dsc preserves shape across hyper-parameter combinations") {
    SeededRng rng(8);
    for (std::int64_t g : {1, 2, 4}) {
        for (std::int64_t n : {1, 2, 4}) {
            DscLayer<double> layer = DscLayer<double>::make(ScsSpec{8, g}, n, rng);
            TensorD x = random_tensor({2, 8, 10, 9}, rng);
            CHECK(layer.forward(x).shape == x.shape);
        }
    }
}

TEST_CASE("dsc batch forward equals per-sample forwards") {
    SeededRng rng(9);
    DscLayer<double> layer = DscLayer<double>::make(ScsSpec{4, 2}, 2, rng);
    TensorD x = random_tensor({2, 4, 5, 5}, rng);
    TensorD both = layer.forward(x);
    TensorD first = layer.forward(batch_slice(x, 0, 1));
    TensorD second = layer.forward(batch_slice(x, 1, 2));
    CHECK(approx_equal(batch_slice(both, 0, 1), first, 1e-12));
    CHECK(approx_equal(batch_slice(both, 1, 2), second, 1e-12));
}

TEST_CASE("scs parameter count formula") {
    SeededRng rng(10);
    DscLayer<double> layer = DscLayer<double>::make(ScsSpec{8, 2}, 3, rng);
    // sum_i (C/G) * K_i^2 = 4*9 + 4*25
    CHECK(layer.scs_param_count() == 4 * 9 + 4 * 25);
    std::int64_t bank_elems = 0;
    for (const auto& bank : layer.banks) {
        for (const auto& w : bank) bank_elems += w.numel();
    }
    CHECK(bank_elems == layer.num_kernels * layer.scs_param_count());
}

TEST_CASE("dsc gradients pass finite differences") {
    SeededRng rng(11);
    DscLayer<double> layer = DscLayer<double>::make(ScsSpec{4, 2}, 2, rng);
    TensorD x = random_tensor({1, 4, 6, 6}, rng);
    auto fwd = [&](TapeD& tp) { return layer.forward(tp, tp.leaf(x)); };
    const FiniteDiffReport rep =
        finite_diff_check<double>(fwd, collect_param_refs<double>(layer, ""), 1e-5, 1e-4);
    CHECK(rep.pass());
    CHECK(rep.worst_rel < 1e-4);
}

TEST_CASE("dsc attention reads the full input, not the group slice") {
    SeededRng rng(12);
    DscLayer<double> layer = DscLayer<double>::make(ScsSpec{4, 2}, 2, rng);
    // two inputs identical in group 0 but different in group 1 must produce
    // different group-0 outputs through the shared attention
    TensorD x1 = random_tensor({1, 4, 5, 5}, rng);
    TensorD x2 = x1;
    for (std::int64_t h = 0; h < 5; ++h)
        for (std::int64_t w = 0; w < 5; ++w) x2.at(0, 3, h, w) += 2.0;
    TensorD y1 = layer.forward(x1);
    TensorD y2 = layer.forward(x2);
    bool group0_differs = false;
    // after shuffle(2), output channel 0 comes from group 0
    for (std::int64_t h = 0; h < 5 && !group0_differs; ++h) {
        for (std::int64_t w = 0; w < 5; ++w) {
            if (y1.at(0, 0, h, w) != y2.at(0, 0, h, w)) {
                group0_differs = true;
                break;
            }
        }
    }
    CHECK(group0_differs);
}

TEST_CASE("dka overhead formula") {
    CHECK(dka_overhead_flops(64, 16, 16, 4) == 17472);
    CHECK(dka_overhead_flops(4, 1, 1, 0) == 8);
    // overhead is under 1% of the wrapped standard convolution's own cost
    // (H*W*C^2*K^2 for a 3x3 conv at C=40, 64x48)
    const double overhead = static_cast<double>(dka_overhead_flops(40, 64, 48, 4));
    const double conv = 64.0 * 48 * 40 * 40 * 3 * 3;
    CHECK(overhead / conv < 0.01);
}
