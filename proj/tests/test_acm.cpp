#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dite/acm.hpp"
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

// Independent oracle: per output cell, softmax the mask over that cell's
// contiguous run of flattened pixels and take the weighted sum per channel.
TensorD pool_oracle(const TensorD& x, std::int64_t oh, std::int64_t ow, const TensorD& mask_w) {
    const std::int64_t cells = oh * ow;
    const std::int64_t hw = x.shape.h * x.shape.w;
    const std::int64_t len = hw / cells;
    TensorD y(x.shape.n, x.shape.c, oh, ow);
    for (std::int64_t n = 0; n < x.shape.n; ++n) {
        // mask = 1x1 conv of x with mask_w
        std::vector<double> mask(static_cast<std::size_t>(hw), 0.0);
        for (std::int64_t p = 0; p < hw; ++p) {
            double acc = 0;
            for (std::int64_t c = 0; c < x.shape.c; ++c) {
                acc += mask_w.at(0, c, 0, 0) * x.at(n, c, p / x.shape.w, p % x.shape.w);
            }
            mask[static_cast<std::size_t>(p)] = acc;
        }
        for (std::int64_t b = 0; b < cells; ++b) {
            double mx = mask[static_cast<std::size_t>(b * len)];
            for (std::int64_t l = 1; l < len; ++l) {
                mx = std::max(mx, mask[static_cast<std::size_t>(b * len + l)]);
            }
            double denom = 0;
            std::vector<double> w(static_cast<std::size_t>(len));
            for (std::int64_t l = 0; l < len; ++l) {
                w[static_cast<std::size_t>(l)] = std::exp(mask[static_cast<std::size_t>(b * len + l)] - mx);
                denom += w[static_cast<std::size_t>(l)];
            }
            for (std::int64_t c = 0; c < x.shape.c; ++c) {
                double acc = 0;
                for (std::int64_t l = 0; l < len; ++l) {
                    const std::int64_t p = b * len + l;
                    acc += (w[static_cast<std::size_t>(l)] / denom) *
                           x.at(n, c, p / x.shape.w, p % x.shape.w);
                }
                y.at(n, c, b / ow, b % ow) = acc;
            }
        }
    }
    return y;
}

}  // namespace

TEST_CASE("context pooling with a zero mask at (1,1) is global average pooling") {
    SeededRng rng(1);
    TensorD x = random_tensor({2, 3, 4, 4}, rng);
    TensorD mask_w(1, 3, 1, 1);
    TensorD got = adaptive_context_pool(x, 1, 1, mask_w);
    TensorD want = global_avg_pool(x);
    CHECK(approx_equal(got, want, 1e-12));
}

TEST_CASE("context pooling of a constant field is that constant") {
    SeededRng rng(2);
    TensorD x = TensorD::full(Shape{1, 3, 4, 4}, 0.75);
    TensorD mask_w = random_tensor({1, 3, 1, 1}, rng);
    TensorD got = adaptive_context_pool(x, 2, 2, mask_w);
    for (double v : got.data) CHECK(v == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("context pooling matches the softmax-matmul loop oracle") {
    SeededRng rng(3);
    TensorD x = random_tensor({1, 3, 4, 4}, rng);
    TensorD mask_w = random_tensor({1, 3, 1, 1}, rng);
    CHECK(approx_equal(adaptive_context_pool(x, 2, 2, mask_w), pool_oracle(x, 2, 2, mask_w), 1e-12));
    CHECK(approx_equal(adaptive_context_pool(x, 1, 1, mask_w), pool_oracle(x, 1, 1, mask_w), 1e-12));
    TensorD x2 = random_tensor({2, 4, 6, 4}, rng);
    TensorD mw2 = random_tensor({1, 4, 1, 1}, rng);
    CHECK(approx_equal(adaptive_context_pool(x2, 3, 2, mw2), pool_oracle(x2, 3, 2, mw2), 1e-12));
}

TEST_CASE("context pooling output is a per-channel convex combination") {
    SeededRng rng(4);
    TensorD x = random_tensor({1, 3, 4, 4}, rng);
    TensorD mask_w = random_tensor({1, 3, 1, 1}, rng);
    TensorD y = adaptive_context_pool(x, 2, 2, mask_w);
    for (std::int64_t c = 0; c < 3; ++c) {
        double lo = x.at(0, c, 0, 0), hi = lo;
        for (std::int64_t h = 0; h < 4; ++h)
            for (std::int64_t w = 0; w < 4; ++w) {
                lo = std::min(lo, x.at(0, c, h, w));
                hi = std::max(hi, x.at(0, c, h, w));
            }
        for (std::int64_t h = 0; h < 2; ++h)
            for (std::int64_t w = 0; w < 2; ++w) {
                CHECK(y.at(0, c, h, w) >= lo - 1e-12);
                CHECK(y.at(0, c, h, w) <= hi + 1e-12);
            }
    }
}

TEST_CASE("context mask cells are simplex vectors") {
    SeededRng rng(5);
    TensorD x = random_tensor({1, 3, 4, 4}, rng);
    TensorD mask_w = random_tensor({1, 3, 1, 1}, rng);
    // reproduce the mask exactly as the pipeline computes it
    TensorD mask = conv2d(x, mask_w, ConvSpec::pointwise(3, 1));
    for (std::int64_t cells : {1LL * 1, 2LL * 2, 4LL * 2}) {
        TensorD soft = softmax(mask.reshaped(Shape{1, 1, cells, 16 / cells}), 3);
        for (std::int64_t b = 0; b < cells; ++b) {
            double sum = 0;
            for (std::int64_t l = 0; l < 16 / cells; ++l) {
                const double v = soft.at(0, 0, b, l);
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("context pooling rejects bad targets") {
    TensorD x(1, 2, 4, 4);
    TensorD mask_w(1, 2, 1, 1);
    CHECK_THROWS_AS(adaptive_context_pool(x, 5, 1, mask_w), TensorError);
    CHECK_THROWS_AS(adaptive_context_pool(x, 3, 1, mask_w), TensorError);  // 16 % 3 != 0
}

TEST_CASE("context shift with zero conv weights is zero") {
    SeededRng rng(6);
    TensorD ctx = random_tensor({1, 4, 2, 2}, rng);
    TensorD conv1(1, 4, 1, 1), conv2(4, 1, 1, 1), bias(1, 4, 1, 1);
    TensorD gamma = TensorD::full(Shape{1, 1, 1, 1}, 1.0);
    TensorD beta(1, 1, 1, 1);
    TensorD y = context_shift(ctx, conv1, gamma, beta, conv2, bias);
    for (double v : y.data) CHECK(v == 0.0);
}

TEST_CASE("context shift at (1,1) is a squeeze-excite style bottleneck on a vector") {
    SeededRng rng(7);
    TensorD ctx = random_tensor({2, 8, 1, 1}, rng);
    TensorD conv1 = random_tensor({2, 8, 1, 1}, rng);
    TensorD conv2 = random_tensor({8, 2, 1, 1}, rng);
    TensorD bias = random_tensor({1, 8, 1, 1}, rng);
    TensorD gamma = TensorD::full(Shape{1, 2, 1, 1}, 1.0);
    TensorD beta(1, 2, 1, 1);
    TensorD y = context_shift(ctx, conv1, gamma, beta, conv2, bias);
    CHECK(y.shape == ctx.shape);
}

TEST_CASE("context shift treats pooled positions independently") {
    SeededRng rng(8);
    TensorD ctx = random_tensor({1, 4, 2, 2}, rng);
    TensorD conv1 = random_tensor({1, 4, 1, 1}, rng);
    TensorD conv2 = random_tensor({4, 1, 1, 1}, rng);
    TensorD bias = random_tensor({1, 4, 1, 1}, rng);
    TensorD gamma = TensorD::full(Shape{1, 1, 1, 1}, 1.0);
    TensorD beta(1, 1, 1, 1);
    // rotate the four positions of the input
    const std::array<std::pair<std::int64_t, std::int64_t>, 4> pos{{{0, 0}, {0, 1}, {1, 0}, {1, 1}}};
    TensorD rotated(1, 4, 2, 2);
    for (std::int64_t c = 0; c < 4; ++c) {
        for (std::size_t p = 0; p < 4; ++p) {
            const auto& from = pos[p];
            const auto& to = pos[(p + 1) % 4];
            rotated.at(0, c, to.first, to.second) = ctx.at(0, c, from.first, from.second);
        }
    }
    TensorD y = context_shift(ctx, conv1, gamma, beta, conv2, bias);
    TensorD yr = context_shift(rotated, conv1, gamma, beta, conv2, bias);
    for (std::int64_t c = 0; c < 4; ++c) {
        for (std::size_t p = 0; p < 4; ++p) {
            const auto& from = pos[p];
            const auto& to = pos[(p + 1) % 4];
            CHECK(yr.at(0, c, to.first, to.second) ==
                  doctest::Approx(y.at(0, c, from.first, from.second)).epsilon(1e-12));
        }
    }
}

TEST_CASE("context weighting") {
    SeededRng rng(9);
    TensorD x = random_tensor({1, 3, 4, 4}, rng);
    TensorD zero_ctx(1, 3, 4, 4);
    TensorD y = context_weight(x, zero_ctx);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        CHECK(y.data[i] == doctest::Approx(0.5 * x.data[i]).epsilon(1e-12));
    }
    // saturation: gates approach 0 / 1 within 1e-4 at +-10
    TensorD hi = TensorD::full(Shape{1, 3, 4, 4}, 10.0);
    TensorD lo = TensorD::full(Shape{1, 3, 4, 4}, -10.0);
    TensorD ones = TensorD::full(Shape{1, 3, 4, 4}, 1.0);
    for (double v : context_weight(ones, hi).data) CHECK(std::fabs(v - 1.0) < 1e-4);
    for (double v : context_weight(ones, lo).data) CHECK(std::fabs(v) < 1e-4);

    // C x 1 x 1 context broadcasts one gate per channel over all positions
    TensorD gate = random_tensor({1, 3, 1, 1}, rng);
    TensorD yb = context_weight(x, gate);
    for (std::int64_t c = 0; c < 3; ++c) {
        const double g = 1.0 / (1.0 + std::exp(-gate.at(0, c, 0, 0)));
        for (std::int64_t h = 0; h < 4; ++h)
            for (std::int64_t w = 0; w < 4; ++w)
                CHECK(yb.at(0, c, h, w) == doctest::Approx(x.at(0, c, h, w) * g).epsilon(1e-12));
    }
    TensorD bad(1, 2, 2, 2);
    CHECK_THROWS_AS(context_weight(x, bad), TensorError);
}

TEST_CASE("gcm with zeroed mask and shift halves the input") {
    SeededRng rng(10);
    Gcm<double> gcm = Gcm<double>::make(4, 4, rng);
    fill_constant(gcm.mask_w, 0.0);
    fill_constant(gcm.shift.conv1_w, 0.0);
    fill_constant(gcm.shift.conv2_w, 0.0);
    fill_constant(gcm.shift.conv2_b, 0.0);
    TensorD x = random_tensor({1, 4, 4, 4}, rng);
    TensorD y = gcm.forward(x);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        CHECK(y.data[i] == doctest::Approx(0.5 * x.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("gcm equals the generic pipeline specialized to (1,1)") {
    SeededRng rng(11);
    Gcm<double> gcm = Gcm<double>::make(6, 4, rng);
    TensorD x = random_tensor({2, 6, 4, 6}, rng);
    TensorD want = acm_forward(x, 1, 1, gcm.mask_w, gcm.shift.conv1_w, gcm.shift.ln_gamma,
                               gcm.shift.ln_beta, gcm.shift.conv2_w, gcm.shift.conv2_b);
    CHECK(approx_equal(gcm.forward(x), want, 0.0));
}

TEST_CASE("gcm gradients pass finite differences") {
    SeededRng rng(12);
    Gcm<double> gcm = Gcm<double>::make(4, 4, rng);
    TensorD x = random_tensor({1, 4, 6, 6}, rng);
    auto fwd = [&](TapeD& tp) { return gcm.forward(tp, tp.leaf(x)); };
    const FiniteDiffReport rep =
        finite_diff_check<double>(fwd, collect_param_refs<double>(gcm, ""), 1e-5, 1e-4);
    CHECK(rep.pass());
}

TEST_CASE("dcm with a single branch degenerates to shift plus weight") {
    SeededRng rng(13);
    DcmStageSpec spec;
    spec.channels = {4};
    spec.heights = {4};
    spec.widths = {4};
    Dcm<double> dcm = Dcm<double>::make(spec, 4, rng);
    TensorD x = random_tensor({1, 4, 4, 4}, rng);
    TensorD want = context_weight(
        x, context_shift(x, dcm.shift.conv1_w, dcm.shift.ln_gamma, dcm.shift.ln_beta,
                         dcm.shift.conv2_w, dcm.shift.conv2_b));
    CHECK(approx_equal(dcm.forward(std::vector<TensorD>{x})[0], want, 0.0));
}

TEST_CASE("dcm with zeroed shift halves constant branches") {
    SeededRng rng(14);
    DcmStageSpec spec;
    spec.channels = {2, 4};
    spec.heights = {4, 2};
    spec.widths = {4, 2};
    Dcm<double> dcm = Dcm<double>::make(spec, 4, rng);
    fill_constant(dcm.shift.conv1_w, 0.0);
    fill_constant(dcm.shift.conv2_w, 0.0);
    fill_constant(dcm.shift.conv2_b, 0.0);
    TensorD x0 = TensorD::full(Shape{1, 2, 4, 4}, 1.5);
    TensorD x1 = TensorD::full(Shape{1, 4, 2, 2}, -2.0);
    auto outs = dcm.forward(std::vector<TensorD>{x0, x1});
    for (double v : outs[0].data) CHECK(v == doctest::Approx(0.75).epsilon(1e-12));
    for (double v : outs[1].data) CHECK(v == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("dcm preserves branch shapes and concatenates the expected channels") {
    SeededRng rng(15);
    DcmStageSpec spec;
    spec.channels = {2, 4, 8};
    spec.heights = {8, 4, 2};
    spec.widths = {8, 4, 2};
    Dcm<double> dcm = Dcm<double>::make(spec, 4, rng);
    TensorD x0 = random_tensor({1, 2, 8, 8}, rng);
    TensorD x1 = random_tensor({1, 4, 4, 4}, rng);
    TensorD x2 = random_tensor({1, 8, 2, 2}, rng);

    TapeD tp;
    auto outs = dcm.forward(tp, {tp.leaf(x0), tp.leaf(x1), tp.leaf(x2)});
    CHECK(tp.value(outs[0]).shape == x0.shape);
    CHECK(tp.value(outs[1]).shape == x1.shape);
    CHECK(tp.value(outs[2]).shape == x2.shape);
    // the joint shift sees all branches: one concat node carrying sum(C_k)
    bool found_concat = false;
    for (const auto& n : tp.nodes()) {
        if (n.kind == "concat" && tp.scope_name(n.scope).find("dcm") != std::string::npos) {
            CHECK(n.value.shape.c == 2 + 4 + 8);
            CHECK(n.value.shape.h == 2);
            CHECK(n.value.shape.w == 2);
            found_concat = true;
        }
    }
    CHECK(found_concat);
    // gates shrink magnitudes: |y| <= |x| elementwise
    for (std::size_t i = 0; i < x0.data.size(); ++i) {
        CHECK(std::fabs(tp.value(outs[0]).data[i]) <= std::fabs(x0.data[i]) + 1e-15);
    }
}

TEST_CASE("dcm gradients pass finite differences") {
    SeededRng rng(16);
    DcmStageSpec spec;
    spec.channels = {2, 4};
    spec.heights = {6, 3};
    spec.widths = {6, 3};
    Dcm<double> dcm = Dcm<double>::make(spec, 4, rng);
    TensorD x0 = random_tensor({1, 2, 6, 6}, rng);
    TensorD x1 = random_tensor({1, 4, 3, 3}, rng);
    auto fwd = [&](TapeD& tp) {
        auto outs = dcm.forward(tp, {tp.leaf(x0), tp.leaf(x1)});
        return tp.add(tp.sum_all(outs[0]), tp.sum_all(outs[1]));
    };
    const FiniteDiffReport rep =
        finite_diff_check<double>(fwd, collect_param_refs<double>(dcm, ""), 1e-5, 1e-4);
    CHECK(rep.pass());
}

TEST_CASE("dcm rejects mismatched branch shapes") {
    SeededRng rng(17);
    DcmStageSpec spec;
    spec.channels = {2, 4};
    spec.heights = {4, 2};
    spec.widths = {4, 2};
    Dcm<double> dcm = Dcm<double>::make(spec, 4, rng);
    TensorD good0 = random_tensor({1, 2, 4, 4}, rng);
    TensorD bad1 = random_tensor({1, 4, 4, 4}, rng);  // wrong resolution
    CHECK_THROWS_AS(dcm.forward(std::vector<TensorD>{good0, bad1}), TensorError);

    DcmStageSpec broken;
    broken.channels = {2, 4};
    broken.heights = {4, 3};  // not a halving
    broken.widths = {4, 2};
    CHECK_THROWS_AS(broken.validate(), TensorError);
}
