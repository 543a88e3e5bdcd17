#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dite/autograd.hpp"
#include "dite/layers.hpp"
#include "dite/tensor.hpp"

namespace dite {

// Adaptive context modeling: pool -> shift -> weight. Two instantiations are
// built on it, global context modeling (target 1x1, one per branch) and dense
// context modeling (all branches of a stage pooled to the lowest resolution
// and shifted jointly).

struct AcmSpec {
    std::int64_t channels = 0;
    std::int64_t out_h = 1, out_w = 1;
    std::int64_t ratio = 4;  // shift bottleneck

    std::int64_t hidden() const { return std::max<std::int64_t>(1, channels / ratio); }

    void validate() const {
        if (channels < 1 || out_h < 1 || out_w < 1 || ratio < 1) {
            throw TensorError("AcmSpec: non-positive field");
        }
    }
};

namespace detail {
inline void check_pool_target(const Shape& in, std::int64_t oh, std::int64_t ow) {
    if (oh < 1 || ow < 1 || oh > in.h || ow > in.w) {
        throw TensorError("adaptive_context_pool: target (" + std::to_string(oh) + "," +
                          std::to_string(ow) + ") invalid for input " + in.str());
    }
    if ((in.h * in.w) % (oh * ow) != 0) {
        throw TensorError("adaptive_context_pool: input area " + std::to_string(in.h * in.w) +
                          " not divisible into " + std::to_string(oh * ow) + " cells");
    }
}
}  // namespace detail

// Attention-weighted pooling to (oh, ow). A 1x1 channel pooling convolution
// produces a single spatial mask; the flattened H*W positions are divided
// into oh*ow equal contiguous cells, the mask is softmax-normalized inside
// each cell, and every output element is the mask-weighted sum of its cell
// (a convex combination of input pixels, per channel). With target (1, 1)
// the cell is the whole plane and this is exactly global context pooling.
template <class T>
Tensor<T> adaptive_context_pool(const Tensor<T>& x, std::int64_t oh, std::int64_t ow,
                                const Tensor<T>& mask_w) {
    detail::check_pool_target(x.shape, oh, ow);
    const std::int64_t cells = oh * ow;
    const std::int64_t len = (x.shape.h * x.shape.w) / cells;
    Tensor<T> mask = conv2d(x, mask_w, ConvSpec::pointwise(x.shape.c, 1));
    Tensor<T> msoft = softmax(mask.reshaped(Shape{x.shape.n, 1, cells, len}), 3);
    Tensor<T> xp = permute_0213(x.reshaped(Shape{x.shape.n, x.shape.c, cells, len}));
    Tensor<T> mp = permute_0213(msoft).reshaped(Shape{x.shape.n, cells, len, 1});
    Tensor<T> ctx = matmul(xp, mp);  // (n, cells, C, 1)
    return permute_0213(ctx).reshaped(Shape{x.shape.n, x.shape.c, oh, ow});
}

// Bottleneck transform applied independently at each pooled position:
// 1x1 conv C -> C/r, channel layer norm + ReLU, 1x1 conv C/r -> C (+ bias).
template <class T>
Tensor<T> context_shift(const Tensor<T>& ctx, const Tensor<T>& conv1_w, const Tensor<T>& ln_gamma,
                        const Tensor<T>& ln_beta, const Tensor<T>& conv2_w, const Tensor<T>& conv2_b,
                        T eps = T(1e-5)) {
    const std::int64_t c = ctx.shape.c;
    const std::int64_t hidden = conv1_w.shape.n;
    Tensor<T> h = conv2d(ctx, conv1_w, ConvSpec::pointwise(c, hidden));
    h = relu(layernorm_channels(h, ln_gamma, ln_beta, eps));
    Tensor<T> y = conv2d(h, conv2_w, ConvSpec::pointwise(hidden, c));
    for (std::int64_t n = 0; n < y.shape.n; ++n)
        for (std::int64_t ch = 0; ch < y.shape.c; ++ch)
            for (std::int64_t yy = 0; yy < y.shape.h; ++yy)
                for (std::int64_t xx = 0; xx < y.shape.w; ++xx)
                    y.at(n, ch, yy, xx) += conv2_b.at(0, ch, 0, 0);
    return y;
}

// y = x * sigmoid(ctx); ctx broadcasts over spatial dims when it is C x 1 x 1.
template <class T>
Tensor<T> context_weight(const Tensor<T>& x, const Tensor<T>& ctx) {
    return mul_broadcast(x, sigmoid(ctx));
}

// Shared shift-transform parameters.
template <class T>
struct ShiftBlock {
    std::int64_t channels = 0, hidden = 0;
    Tensor<T> conv1_w, ln_gamma, ln_beta, conv2_w, conv2_b;
    double eps = 1e-5;

    static ShiftBlock make(std::int64_t channels, std::int64_t ratio, SeededRng& rng) {
        ShiftBlock s;
        s.channels = channels;
        s.hidden = std::max<std::int64_t>(1, channels / ratio);
        s.conv1_w = Tensor<T>(s.hidden, channels, 1, 1);
        fill_he_normal(s.conv1_w, channels, rng);
        s.ln_gamma = Tensor<T>::full(Shape{1, s.hidden, 1, 1}, T(1));
        s.ln_beta = Tensor<T>(1, s.hidden, 1, 1);
        s.conv2_w = Tensor<T>(channels, s.hidden, 1, 1);
        fill_he_normal(s.conv2_w, s.hidden, rng);
        s.conv2_b = Tensor<T>(1, channels, 1, 1);
        return s;
    }

    int forward(Tape<T>& tp, int ctx) const {
        typename Tape<T>::ScopeGuard sg(tp, "shift");
        int h = tp.conv2d(ctx, tp.param("conv1_w", conv1_w), ConvSpec::pointwise(channels, hidden));
        h = tp.relu(tp.layernorm(h, tp.param("ln_gamma", ln_gamma), tp.param("ln_beta", ln_beta), eps));
        int y = tp.conv2d(h, tp.param("conv2_w", conv2_w), ConvSpec::pointwise(hidden, channels));
        return tp.add_channel_bias(y, tp.param("conv2_b", conv2_b));
    }

    void visit(const std::string& prefix, const TensorVisitor<T>& v) {
        v(join_scope(prefix, "shift.conv1_w"), conv1_w, true);
        v(join_scope(prefix, "shift.ln_gamma"), ln_gamma, true);
        v(join_scope(prefix, "shift.ln_beta"), ln_beta, true);
        v(join_scope(prefix, "shift.conv2_w"), conv2_w, true);
        v(join_scope(prefix, "shift.conv2_b"), conv2_b, true);
    }
};

namespace detail {
template <class T>
int context_pool_graph(Tape<T>& tp, int x, std::int64_t oh, std::int64_t ow, int mask_w_node,
                       std::int64_t channels) {
    const Shape in = tp.value(x).shape;
    check_pool_target(in, oh, ow);
    const std::int64_t cells = oh * ow;
    const std::int64_t len = (in.h * in.w) / cells;
    int mask = tp.conv2d(x, mask_w_node, ConvSpec::pointwise(channels, 1));
    int msoft = tp.softmax(tp.reshape(mask, Shape{in.n, 1, cells, len}), 3);
    int xp = tp.permute_0213(tp.reshape(x, Shape{in.n, in.c, cells, len}));
    int mp = tp.reshape(tp.permute_0213(msoft), Shape{in.n, cells, len, 1});
    int ctx = tp.matmul(xp, mp);
    return tp.reshape(tp.permute_0213(ctx), Shape{in.n, in.c, oh, ow});
}
}  // namespace detail

// Per-branch global context modeling: ACM specialized to target 1x1.
template <class T>
struct Gcm {
    std::int64_t channels = 0;
    Tensor<T> mask_w;  // (1, C, 1, 1)
    ShiftBlock<T> shift;

    static Gcm make(std::int64_t channels, std::int64_t ratio, SeededRng& rng) {
        Gcm g;
        g.channels = channels;
        g.mask_w = Tensor<T>(1, channels, 1, 1);
        fill_he_normal(g.mask_w, channels, rng);
        g.shift = ShiftBlock<T>::make(channels, ratio, rng);
        return g;
    }

    int forward(Tape<T>& tp, int x) const {
        typename Tape<T>::ScopeGuard sg(tp, "gcm");
        int ctx = detail::context_pool_graph(tp, x, 1, 1, tp.param("mask_w", mask_w), channels);
        ctx = shift.forward(tp, ctx);
        return tp.mul(x, tp.sigmoid(ctx));
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tape<T> tp;
        return tp.value(forward(tp, tp.leaf(x)));
    }

    void visit(const std::string& prefix, const TensorVisitor<T>& v) {
        v(join_scope(prefix, "gcm.mask_w"), mask_w, true);
        shift.visit(join_scope(prefix, "gcm"), v);
    }
};

// Stage geometry for dense context modeling: branch k at (h_k, w_k) with c_k
// channels; resolutions strictly halve branch to branch, the last entry is
// the pooling target.
struct DcmStageSpec {
    std::vector<std::int64_t> channels;
    std::vector<std::int64_t> heights, widths;

    std::int64_t branches() const { return static_cast<std::int64_t>(channels.size()); }
    std::int64_t total_channels() const {
        std::int64_t s = 0;
        for (auto c : channels) s += c;
        return s;
    }

    void validate() const {
        if (channels.empty() || channels.size() != heights.size() || channels.size() != widths.size()) {
            throw TensorError("DcmStageSpec: inconsistent branch lists");
        }
        for (std::size_t k = 1; k < channels.size(); ++k) {
            if (heights[k] * 2 != heights[k - 1] || widths[k] * 2 != widths[k - 1]) {
                throw TensorError("DcmStageSpec: branch " + std::to_string(k) +
                                  " resolution does not halve the previous branch");
            }
        }
    }
};

// Dense context modeling across the parallel branches of one stage.
template <class T>
struct Dcm {
    DcmStageSpec spec;
    std::vector<Tensor<T>> mask_w;  // branches 1..n-1 (the lowest passes unpooled)
    ShiftBlock<T> shift;            // over the concatenated channels

    static Dcm make(const DcmStageSpec& spec, std::int64_t ratio, SeededRng& rng) {
        spec.validate();
        Dcm d;
        d.spec = spec;
        for (std::int64_t k = 0; k + 1 < spec.branches(); ++k) {
            Tensor<T> w(1, spec.channels[static_cast<std::size_t>(k)], 1, 1);
            fill_he_normal(w, spec.channels[static_cast<std::size_t>(k)], rng);
            d.mask_w.push_back(std::move(w));
        }
        d.shift = ShiftBlock<T>::make(spec.total_channels(), ratio, rng);
        return d;
    }

    std::vector<int> forward(Tape<T>& tp, const std::vector<int>& xs) const {
        typename Tape<T>::ScopeGuard sg(tp, "dcm");
        const std::int64_t n = spec.branches();
        if (static_cast<std::int64_t>(xs.size()) != n) {
            throw TensorError("Dcm: got " + std::to_string(xs.size()) + " branches, spec has " +
                              std::to_string(n));
        }
        for (std::int64_t k = 0; k < n; ++k) {
            const Shape& s = tp.value(xs[static_cast<std::size_t>(k)]).shape;
            if (s.c != spec.channels[static_cast<std::size_t>(k)] ||
                s.h != spec.heights[static_cast<std::size_t>(k)] ||
                s.w != spec.widths[static_cast<std::size_t>(k)]) {
                throw TensorError("Dcm: branch " + std::to_string(k) + " shape " + s.str() +
                                  " does not match stage spec");
            }
        }
        const std::int64_t th = spec.heights.back(), tw = spec.widths.back();
        std::vector<int> pooled;
        for (std::int64_t k = 0; k + 1 < n; ++k) {
            typename Tape<T>::ScopeGuard sk(tp, "pool" + std::to_string(k));
            pooled.push_back(detail::context_pool_graph(
                tp, xs[static_cast<std::size_t>(k)], th, tw,
                tp.param("mask_w", mask_w[static_cast<std::size_t>(k)]),
                spec.channels[static_cast<std::size_t>(k)]));
        }
        pooled.push_back(xs.back());  // lowest branch joins unpooled
        int ctx = n == 1 ? pooled[0] : tp.channel_concat(pooled);
        ctx = shift.forward(tp, ctx);

        std::vector<int> outs;
        std::int64_t c0 = 0;
        for (std::int64_t k = 0; k < n; ++k) {
            const std::int64_t ck = spec.channels[static_cast<std::size_t>(k)];
            int ctx_k = n == 1 ? ctx : tp.channel_slice(ctx, c0, c0 + ck);
            c0 += ck;
            if (k + 1 < n) {
                ctx_k = tp.bilinear_upsample(ctx_k, spec.heights[static_cast<std::size_t>(k)],
                                             spec.widths[static_cast<std::size_t>(k)]);
            }
            outs.push_back(tp.mul(xs[static_cast<std::size_t>(k)], tp.sigmoid(ctx_k)));
        }
        return outs;
    }

    std::vector<Tensor<T>> forward(const std::vector<Tensor<T>>& xs) const {
        Tape<T> tp;
        std::vector<int> ids;
        ids.reserve(xs.size());
        for (const auto& x : xs) ids.push_back(tp.leaf(x));
        std::vector<Tensor<T>> out;
        for (int id : forward(tp, ids)) out.push_back(tp.value(id));
        return out;
    }

    void visit(const std::string& prefix, const TensorVisitor<T>& v) {
        for (std::size_t k = 0; k < mask_w.size(); ++k) {
            v(join_scope(prefix, "dcm.pool" + std::to_string(k) + ".mask_w"), mask_w[k], true);
        }
        shift.visit(join_scope(prefix, "dcm"), v);
    }
};

// Reference composition used by tests: the generic ACM pipeline with explicit
// parameters.
template <class T>
Tensor<T> acm_forward(const Tensor<T>& x, std::int64_t oh, std::int64_t ow, const Tensor<T>& mask_w,
                      const Tensor<T>& conv1_w, const Tensor<T>& ln_gamma, const Tensor<T>& ln_beta,
                      const Tensor<T>& conv2_w, const Tensor<T>& conv2_b) {
    Tensor<T> ctx = adaptive_context_pool(x, oh, ow, mask_w);
    ctx = context_shift(ctx, conv1_w, ln_gamma, ln_beta, conv2_w, conv2_b);
    if (oh != x.shape.h || ow != x.shape.w) {
        if (oh != 1 || ow != 1) ctx = bilinear_upsample(ctx, x.shape.h, x.shape.w);
    }
    return context_weight(x, ctx);
}

}  // namespace dite
