#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dite/autograd.hpp"
#include "dite/layers.hpp"
#include "dite/tensor.hpp"

namespace dite {

// Dynamic Split Convolution: split-concat-shuffle multi-kernel depthwise
// convolution whose per-group kernels are produced by dynamic kernel
// aggregation.

// Split-concat-shuffle geometry: C channels in G equal groups, the i-th
// group (1-based) convolved depthwise with kernel size K_i = 2i + 1.
struct ScsSpec {
    std::int64_t channels = 0;
    std::int64_t groups = 1;

    std::int64_t group_channels() const { return channels / groups; }
    std::int64_t kernel_size(std::int64_t group_index) const { return 2 * (group_index + 1) + 1; }

    std::vector<std::int64_t> kernel_sizes() const {
        std::vector<std::int64_t> ks;
        for (std::int64_t i = 0; i < groups; ++i) ks.push_back(kernel_size(i));
        return ks;
    }

    ConvSpec group_conv(std::int64_t group_index) const {
        return ConvSpec::depthwise(group_channels(), kernel_size(group_index));
    }

    void validate() const {
        if (channels < 1 || groups < 1) throw TensorError("ScsSpec: non-positive field");
        if (channels % groups != 0) {
            throw TensorError("ScsSpec: channels " + std::to_string(channels) +
                              " not divisible by groups " + std::to_string(groups));
        }
    }
};

// Kernel-attention hyper-parameters: a bank of num_kernels weight matrices
// mixed by a GAP -> FC(C -> C/4) -> ReLU -> FC(C/4 -> N) -> Sigmoid head.
struct DkaSpec {
    std::int64_t channels = 0;     // attention input width
    std::int64_t num_kernels = 1;  // N

    std::int64_t hidden() const { return std::max<std::int64_t>(1, channels / 4); }

    void validate() const {
        if (channels < 1 || num_kernels < 1) throw TensorError("DkaSpec: non-positive field");
    }
};

// Extra multiply-adds a DKA head of N kernels costs on a C x H x W input,
// on top of the wrapped convolution itself: HWC + C^2/4 + CN/4
// (integer arithmetic, floor on the divisions).
inline std::int64_t dka_overhead_flops(std::int64_t c, std::int64_t h, std::int64_t w,
                                       std::int64_t n) {
    return h * w * c + (c * c) / 4 + (c * n) / 4;
}

// Plain (non-recorded) forms, used directly by tests and small callers.

template <class T>
Tensor<T> scs_forward(const Tensor<T>& x, const ScsSpec& spec,
                      const std::vector<Tensor<T>>& group_weights) {
    spec.validate();
    if (x.shape.c != spec.channels) {
        throw TensorError("scs_forward: input channels " + std::to_string(x.shape.c) +
                          " != spec channels " + std::to_string(spec.channels));
    }
    if (static_cast<std::int64_t>(group_weights.size()) != spec.groups) {
        throw TensorError("scs_forward: expected " + std::to_string(spec.groups) + " kernels, got " +
                          std::to_string(group_weights.size()));
    }
    auto groups = channel_split(x, spec.groups);
    std::vector<Tensor<T>> outs;
    outs.reserve(groups.size());
    for (std::int64_t g = 0; g < spec.groups; ++g) {
        outs.push_back(conv2d(groups[static_cast<std::size_t>(g)],
                              group_weights[static_cast<std::size_t>(g)], spec.group_conv(g)));
    }
    return channel_shuffle(channel_concat(outs), spec.groups);
}

// a = Sigmoid(FC(ReLU(FC(GAP(x))))), one weight row per bank kernel.
// Components are independent gates in (0,1); they are not normalized to
// sum to one.
template <class T>
Tensor<T> dka_attention(const Tensor<T>& x, const Tensor<T>& fc1, const Tensor<T>& fc2) {
    Tensor<T> g = global_avg_pool(x);
    Tensor<T> h = relu(fully_connected(g.reshaped(Shape{g.shape.n, g.shape.c, 1, 1}), fc1));
    return sigmoid(fully_connected(h, fc2));
}

// W = sum_i a_i * w_i, elementwise over the bank.
template <class T>
Tensor<T> dka_aggregate(const std::vector<Tensor<T>>& bank, const std::vector<T>& a) {
    if (bank.empty()) throw TensorError("dka_aggregate: empty bank");
    if (bank.size() != a.size()) {
        throw TensorError("dka_aggregate: " + std::to_string(a.size()) + " weights for " +
                          std::to_string(bank.size()) + " kernels");
    }
    Tensor<T> w = Tensor<T>::zeros(bank[0].shape);
    for (std::size_t i = 0; i < bank.size(); ++i) {
        if (bank[i].shape != bank[0].shape) {
            throw TensorError("dka_aggregate: bank entry " + std::to_string(i) +
                              " shape mismatch " + bank[i].shape.str());
        }
        for (std::size_t k = 0; k < w.data.size(); ++k) w.data[k] += a[i] * bank[i].data[k];
    }
    return w;
}

// The combined layer. One attention head per layer reads the full undivided
// input; every group mixes its own bank with the shared weights. Kernels are
// bias-free (normalization follows the layer).
template <class T>
struct DscLayer {
    ScsSpec scs;
    std::int64_t num_kernels = 1;
    Tensor<T> attn_fc1, attn_fc2;
    std::vector<std::vector<Tensor<T>>> banks;  // [group][kernel]

    DkaSpec dka_spec() const { return DkaSpec{scs.channels, num_kernels}; }

    static DscLayer make(const ScsSpec& scs, std::int64_t num_kernels, SeededRng& rng) {
        scs.validate();
        DscLayer l;
        l.scs = scs;
        l.num_kernels = num_kernels;
        const DkaSpec dka = l.dka_spec();
        dka.validate();
        l.attn_fc1 = Tensor<T>(dka.hidden(), scs.channels, 1, 1);
        fill_he_normal(l.attn_fc1, scs.channels, rng);
        l.attn_fc2 = Tensor<T>(num_kernels, dka.hidden(), 1, 1);
        fill_he_normal(l.attn_fc2, dka.hidden(), rng);
        for (std::int64_t g = 0; g < scs.groups; ++g) {
            const ConvSpec cs = scs.group_conv(g);
            std::vector<Tensor<T>> bank;
            for (std::int64_t i = 0; i < num_kernels; ++i) {
                Tensor<T> w(cs.weight_shape());
                fill_he_normal(w, cs.kh * cs.kw, rng);
                bank.push_back(std::move(w));
            }
            l.banks.push_back(std::move(bank));
        }
        return l;
    }

    std::int64_t scs_param_count() const {
        std::int64_t p = 0;
        for (std::int64_t g = 0; g < scs.groups; ++g) {
            p += scs.group_conv(g).weight_shape().numel();
        }
        return p;
    }

    int attention(Tape<T>& tp, int x_sample) const {
        typename Tape<T>::ScopeGuard sg(tp, "dka");
        const DkaSpec dka = dka_spec();
        int g = tp.global_avg_pool(x_sample);
        int h = tp.relu(tp.conv2d(g, tp.param("attn_fc1", attn_fc1),
                                  ConvSpec::pointwise(scs.channels, dka.hidden())));
        int a = tp.conv2d(h, tp.param("attn_fc2", attn_fc2),
                          ConvSpec::pointwise(dka.hidden(), num_kernels));
        return tp.sigmoid(a);
    }

    int forward(Tape<T>& tp, int x) const {
        if (tp.value(x).shape.c != scs.channels) {
            throw TensorError("DscLayer: input channels " + std::to_string(tp.value(x).shape.c) +
                              " != " + std::to_string(scs.channels));
        }
        const std::int64_t batch = tp.value(x).shape.n;
        std::vector<int> sample_outs;
        for (std::int64_t n = 0; n < batch; ++n) {
            int xs = batch == 1 ? x : tp.batch_slice(x, n, n + 1);
            int attn = attention(tp, xs);
            auto groups = tp.channel_split(xs, scs.groups);
            std::vector<int> outs;
            for (std::int64_t g = 0; g < scs.groups; ++g) {
                typename Tape<T>::ScopeGuard sg(tp, "dka");
                int acc = -1;
                for (std::int64_t i = 0; i < num_kernels; ++i) {
                    int wi = tp.param("g" + std::to_string(g) + "_bank" + std::to_string(i),
                                      banks[static_cast<std::size_t>(g)][static_cast<std::size_t>(i)]);
                    int term = tp.scale_by_node(wi, tp.pick(attn, i));
                    acc = acc < 0 ? term : tp.add(acc, term);
                }
                outs.push_back(tp.conv2d(groups[static_cast<std::size_t>(g)], acc, scs.group_conv(g)));
            }
            sample_outs.push_back(tp.channel_concat(outs));
        }
        int y = batch == 1 ? sample_outs[0] : tp.batch_concat(sample_outs);
        return tp.channel_shuffle(y, scs.groups);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tape<T> tp;
        return tp.value(forward(tp, tp.leaf(x)));
    }

    void visit(const std::string& prefix, const TensorVisitor<T>& v) {
        v(join_scope(prefix, "dka.attn_fc1"), attn_fc1, true);
        v(join_scope(prefix, "dka.attn_fc2"), attn_fc2, true);
        for (std::size_t g = 0; g < banks.size(); ++g) {
            for (std::size_t i = 0; i < banks[g].size(); ++i) {
                v(join_scope(prefix, "dka.g" + std::to_string(g) + "_bank" + std::to_string(i)),
                  banks[g][i], true);
            }
        }
    }
};

}  // namespace dite
