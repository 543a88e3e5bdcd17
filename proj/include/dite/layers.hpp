#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dite/autograd.hpp"
#include "dite/init.hpp"
#include "dite/tensor.hpp"

namespace dite {

// Visitor over a module's named tensors. `is_param` distinguishes learnable
// parameters from fixed buffers (normalization running statistics).
template <class T>
using TensorVisitor = std::function<void(const std::string& name, Tensor<T>& t, bool is_param)>;

inline std::string join_scope(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
}

// Plain convolution layer, optionally with a channel bias.
template <class T>
struct ConvLayer {
    ConvSpec spec;
    Tensor<T> weight;
    Tensor<T> bias;  // (1, out, 1, 1) when has_bias
    bool has_bias = false;

    static ConvLayer make(const ConvSpec& spec, SeededRng& rng, bool with_bias = false) {
        ConvLayer l;
        l.spec = spec;
        l.weight = Tensor<T>(spec.weight_shape());
        fill_he_normal(l.weight, (spec.in_channels / spec.groups) * spec.kh * spec.kw, rng);
        l.has_bias = with_bias;
        if (with_bias) l.bias = Tensor<T>(1, spec.out_channels, 1, 1);
        return l;
    }

    int forward(Tape<T>& tp, int x) const {
        int w = tp.param("w", weight);
        int y = tp.conv2d(x, w, spec);
        if (has_bias) y = tp.add_channel_bias(y, tp.param("b", bias));
        return y;
    }

    void visit(const std::string& prefix, const TensorVisitor<T>& v) {
        v(join_scope(prefix, "w"), weight, true);
        if (has_bias) v(join_scope(prefix, "b"), bias, true);
    }
};

// Inference batch normalization; statistics are buffers, affine terms are
// parameters.
template <class T>
struct BnLayer {
    Tensor<T> scale, shift, mean, var;
    double eps = 1e-5;

    static BnLayer make(std::int64_t channels) {
        BnLayer l;
        l.scale = Tensor<T>::full(Shape{1, channels, 1, 1}, T(1));
        l.shift = Tensor<T>(1, channels, 1, 1);
        l.mean = Tensor<T>(1, channels, 1, 1);
        l.var = Tensor<T>::full(Shape{1, channels, 1, 1}, T(1));
        return l;
    }

    int forward(Tape<T>& tp, int x) const {
        return tp.batchnorm(x, tp.param("bn_scale", scale), tp.param("bn_shift", shift),
                            tp.buffer("bn_mean", mean), tp.buffer("bn_var", var), eps);
    }

    void visit(const std::string& prefix, const TensorVisitor<T>& v) {
        v(join_scope(prefix, "bn_scale"), scale, true);
        v(join_scope(prefix, "bn_shift"), shift, true);
        v(join_scope(prefix, "bn_mean"), mean, false);
        v(join_scope(prefix, "bn_var"), var, false);
    }
};

// Convolution whose kernel is generated per input by dynamic kernel
// aggregation: a bank of num_kernels weight matrices is mixed by
// sigmoid(FC(ReLU(FC(GAP(x))))) attention, then a single convolution runs
// with the aggregated kernel. Attention is per sample, so batched inputs are
// processed sample by sample. With dynamic=false this degrades to a plain
// static convolution (ablation path).
template <class T>
struct DkaConv {
    ConvSpec spec;
    std::int64_t num_kernels = 1;
    bool dynamic = true;
    std::vector<Tensor<T>> bank;
    Tensor<T> attn_fc1, attn_fc2;  // (hidden, C, 1, 1), (N, hidden, 1, 1); no biases

    std::int64_t attn_hidden() const { return std::max<std::int64_t>(1, spec.in_channels / 4); }

    static DkaConv make(const ConvSpec& spec, std::int64_t num_kernels, bool dynamic,
                        SeededRng& rng) {
        DkaConv l;
        l.spec = spec;
        l.dynamic = dynamic;
        l.num_kernels = dynamic ? num_kernels : 1;
        const std::int64_t fan_in = (spec.in_channels / spec.groups) * spec.kh * spec.kw;
        for (std::int64_t i = 0; i < l.num_kernels; ++i) {
            Tensor<T> w(spec.weight_shape());
            fill_he_normal(w, fan_in, rng);
            l.bank.push_back(std::move(w));
        }
        if (dynamic) {
            l.attn_fc1 = Tensor<T>(l.attn_hidden(), spec.in_channels, 1, 1);
            fill_he_normal(l.attn_fc1, spec.in_channels, rng);
            l.attn_fc2 = Tensor<T>(l.num_kernels, l.attn_hidden(), 1, 1);
            fill_he_normal(l.attn_fc2, l.attn_hidden(), rng);
        }
        return l;
    }

    // Attention weights for one sample slice: (1, N, 1, 1), each in (0, 1).
    int attention(Tape<T>& tp, int x_sample) const {
        typename Tape<T>::ScopeGuard sg(tp, "dka");
        int g = tp.global_avg_pool(x_sample);
        int h = tp.conv2d(g, tp.param("attn_fc1", attn_fc1),
                          ConvSpec::pointwise(spec.in_channels, attn_hidden()));
        h = tp.relu(h);
        int a = tp.conv2d(h, tp.param("attn_fc2", attn_fc2),
                          ConvSpec::pointwise(attn_hidden(), num_kernels));
        return tp.sigmoid(a);
    }

    int aggregate(Tape<T>& tp, int attn) const {
        typename Tape<T>::ScopeGuard sg(tp, "dka");
        int acc = -1;
        for (std::int64_t i = 0; i < num_kernels; ++i) {
            int wi = tp.param("bank" + std::to_string(i), bank[static_cast<std::size_t>(i)]);
            int term = tp.scale_by_node(wi, tp.pick(attn, i));
            acc = (acc < 0) ? term : tp.add(acc, term);
        }
        return acc;
    }

    int forward(Tape<T>& tp, int x) const {
        if (!dynamic) {
            return tp.conv2d(x, tp.param("w", bank[0]), spec);
        }
        const std::int64_t batch = tp.value(x).shape.n;
        if (batch == 1) {
            return tp.conv2d(x, aggregate(tp, attention(tp, x)), spec);
        }
        std::vector<int> outs;
        for (std::int64_t n = 0; n < batch; ++n) {
            int xs = tp.batch_slice(x, n, n + 1);
            outs.push_back(tp.conv2d(xs, aggregate(tp, attention(tp, xs)), spec));
        }
        return tp.batch_concat(outs);
    }

    void visit(const std::string& prefix, const TensorVisitor<T>& v) {
        if (!dynamic) {
            v(join_scope(prefix, "w"), bank[0], true);
            return;
        }
        for (std::size_t i = 0; i < bank.size(); ++i) {
            v(join_scope(prefix, "dka.bank" + std::to_string(i)), bank[i], true);
        }
        v(join_scope(prefix, "dka.attn_fc1"), attn_fc1, true);
        v(join_scope(prefix, "dka.attn_fc2"), attn_fc2, true);
    }
};

}  // namespace dite
