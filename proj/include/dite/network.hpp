#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dite/blocks.hpp"
#include "dite/config.hpp"

namespace dite {

// Full network: stem (strided 3x3 conv + DGC block, x4 downsampling in
// total), cross-resolution stages with transitions in between, and a 1x1
// keypoint head on the highest-resolution branch.

template <class T>
struct CrossModule {
    DmcBlock<T> block0, block1;
    FusionLayer<T> fuse;
};

template <class T>
struct Model {
    ModelConfig cfg;
    ConvLayer<T> stem_conv;
    BnLayer<T> stem_bn;
    DgcBlock<T> stem_dgc;
    std::vector<TransitionLayer<T>> transitions;            // one per stage after the first
    std::vector<std::vector<CrossModule<T>>> stage_modules;  // per stage after the first
    ConvLayer<T> head;

    static Model build(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        SeededRng rng(seed);
        m.stem_conv = ConvLayer<T>::make(ConvSpec{3, cfg.stem_width, 3, 3, 2, 1, 1}, rng);
        m.stem_bn = BnLayer<T>::make(cfg.stem_width);
        m.stem_dgc = DgcBlock<T>::make(cfg.stem_width, cfg.stem_width, cfg.kernels[0],
                                       cfg.gcm_ratio, cfg.use_acm, cfg.use_dsc, rng);

        std::vector<std::int64_t> cur_widths{cfg.stem_width};
        // input/4 at the stem output
        std::int64_t h = cfg.input_h / 4, w = cfg.input_w / 4;
        std::vector<std::int64_t> cur_h{h}, cur_w{w};
        for (std::size_t s = 1; s < cfg.stages.size(); ++s) {
            const StageSpec& st = cfg.stages[s];
            std::vector<std::int64_t> next_widths;
            for (int b = 0; b < st.branches; ++b) next_widths.push_back(cfg.widths[static_cast<std::size_t>(b)]);
            m.transitions.push_back(TransitionLayer<T>::make(cur_widths, next_widths, rng));
            cur_widths = next_widths;
            cur_h.push_back(cur_h.back() / 2);
            cur_w.push_back(cur_w.back() / 2);

            std::vector<std::int64_t> g(cur_widths.size()), n(cur_widths.size());
            for (std::size_t b = 0; b < cur_widths.size(); ++b) {
                g[b] = cfg.groups[b];
                n[b] = cfg.kernels[b];
            }
            std::vector<CrossModule<T>> mods;
            for (int mi = 0; mi < st.modules; ++mi) {
                CrossModule<T> cm;
                cm.block0 = DmcBlock<T>::make(cur_widths, cur_h, cur_w, g, n, cfg.dcm_ratio,
                                              cfg.gcm_ratio, cfg.use_acm, cfg.use_dsc, rng);
                cm.block1 = DmcBlock<T>::make(cur_widths, cur_h, cur_w, g, n, cfg.dcm_ratio,
                                              cfg.gcm_ratio, cfg.use_acm, cfg.use_dsc, rng);
                cm.fuse = FusionLayer<T>::make(cur_widths, rng);
                mods.push_back(std::move(cm));
            }
            m.stage_modules.push_back(std::move(mods));
        }
        m.head = ConvLayer<T>::make(ConvSpec::pointwise(cfg.widths[0], cfg.num_keypoints), rng,
                                    /*with_bias=*/true);
        return m;
    }

    struct ForwardNodes {
        int features = -1;
        int heatmaps = -1;
    };

    ForwardNodes forward_graph(Tape<T>& tp, int x) const {
        const Shape& in = tp.value(x).shape;
        if (in.c != 3) {
            throw TensorError("forward: input must have 3 channels, got " + in.str());
        }
        if (in.h % 32 != 0 || in.w % 32 != 0) {
            throw TensorError("forward: input " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                              " not divisible by 32");
        }
        int y = x;
        {
            typename Tape<T>::ScopeGuard sg(tp, "stem");
            {
                typename Tape<T>::ScopeGuard sc(tp, "conv1");
                y = tp.relu(stem_bn.forward(tp, stem_conv.forward(tp, y)));
            }
            {
                typename Tape<T>::ScopeGuard sd(tp, "dgc");
                y = stem_dgc.forward(tp, y);
            }
        }
        std::vector<int> branches{y};
        for (std::size_t s = 0; s < stage_modules.size(); ++s) {
            {
                typename Tape<T>::ScopeGuard sg(tp, "transition" + std::to_string(s + 1));
                branches = transitions[s].forward(tp, branches);
            }
            typename Tape<T>::ScopeGuard sg(tp, "stage" + std::to_string(s + 2));
            for (std::size_t mi = 0; mi < stage_modules[s].size(); ++mi) {
                typename Tape<T>::ScopeGuard sm(tp, "m" + std::to_string(mi));
                const CrossModule<T>& cm = stage_modules[s][mi];
                {
                    typename Tape<T>::ScopeGuard sb(tp, "b0");
                    branches = cm.block0.forward(tp, branches);
                }
                {
                    typename Tape<T>::ScopeGuard sb(tp, "b1");
                    branches = cm.block1.forward(tp, branches);
                }
                {
                    typename Tape<T>::ScopeGuard sf(tp, "fuse");
                    branches = cm.fuse.forward(tp, branches);
                }
            }
        }
        ForwardNodes out;
        out.features = branches[0];
        {
            typename Tape<T>::ScopeGuard sg(tp, "head");
            out.heatmaps = head.forward(tp, branches[0]);
        }
        return out;
    }

    Tensor<T> forward_features(const Tensor<T>& x) const {
        Tape<T> tp;
        return tp.value(forward_graph(tp, tp.leaf(x)).features);
    }

    Tensor<T> forward_heatmaps(const Tensor<T>& x) const {
        Tape<T> tp;
        return tp.value(forward_graph(tp, tp.leaf(x)).heatmaps);
    }

    void visit(const TensorVisitor<T>& v) {
        stem_conv.visit("stem.conv1", v);
        stem_bn.visit("stem.conv1", v);
        stem_dgc.visit("stem.dgc", v);
        for (std::size_t s = 0; s < stage_modules.size(); ++s) {
            transitions[s].visit("transition" + std::to_string(s + 1), v);
            const std::string sp = "stage" + std::to_string(s + 2);
            for (std::size_t mi = 0; mi < stage_modules[s].size(); ++mi) {
                const std::string mp = join_scope(sp, "m" + std::to_string(mi));
                stage_modules[s][mi].block0.visit(join_scope(mp, "b0"), v);
                stage_modules[s][mi].block1.visit(join_scope(mp, "b1"), v);
                stage_modules[s][mi].fuse.visit(join_scope(mp, "fuse"), v);
            }
        }
        head.visit("head", v);
    }

    // Exact count of allocated learnable parameter elements.
    std::int64_t param_count() {
        std::int64_t total = 0;
        visit([&](const std::string&, Tensor<T>& t, bool is_param) {
            if (is_param) total += t.numel();
        });
        return total;
    }
};

using ModelF = Model<float>;
using ModelD = Model<double>;

// ---------------------------------------------------------------------------
// heatmap decoding
// ---------------------------------------------------------------------------

struct Keypoint {
    double x = 0, y = 0;
    double score = 0;
    bool flat_channel = false;  // all-constant heatmap, center returned
};

// Argmax per channel with ties broken toward the smallest flat index, then a
// quarter-pixel shift toward the larger of the two axis neighbors
// (independently per axis, no shift on exact ties or at borders), scaled to
// input pixel coordinates.
template <class T>
std::vector<Keypoint> decode_heatmaps(const Tensor<T>& hm, std::int64_t sample,
                                      std::int64_t input_h, std::int64_t input_w) {
    if (sample < 0 || sample >= hm.shape.n) {
        throw TensorError("decode_heatmaps: sample " + std::to_string(sample) + " out of range");
    }
    std::vector<Keypoint> out;
    const double sx = static_cast<double>(input_w) / static_cast<double>(hm.shape.w);
    const double sy = static_cast<double>(input_h) / static_cast<double>(hm.shape.h);
    for (std::int64_t c = 0; c < hm.shape.c; ++c) {
        std::int64_t best = 0;
        T best_v = hm.at(sample, c, 0, 0);
        T min_v = best_v;
        for (std::int64_t i = 1; i < hm.shape.h * hm.shape.w; ++i) {
            const T v = hm.data[static_cast<std::size_t>(((sample * hm.shape.c + c) * hm.shape.h) *
                                                         hm.shape.w + i)];
            if (v > best_v) {
                best_v = v;
                best = i;
            }
            if (v < min_v) min_v = v;
        }
        Keypoint kp;
        kp.score = static_cast<double>(best_v);
        if (min_v == best_v) {
            kp.flat_channel = true;
            kp.x = (static_cast<double>(hm.shape.w) - 1.0) / 2.0 * sx;
            kp.y = (static_cast<double>(hm.shape.h) - 1.0) / 2.0 * sy;
            out.push_back(kp);
            continue;
        }
        const std::int64_t py = best / hm.shape.w;
        const std::int64_t px = best % hm.shape.w;
        double fx = static_cast<double>(px), fy = static_cast<double>(py);
        if (px > 0 && px + 1 < hm.shape.w) {
            const T right = hm.at(sample, c, py, px + 1);
            const T left = hm.at(sample, c, py, px - 1);
            if (right > left) fx += 0.25;
            else if (left > right) fx -= 0.25;
        }
        if (py > 0 && py + 1 < hm.shape.h) {
            const T down = hm.at(sample, c, py + 1, px);
            const T up = hm.at(sample, c, py - 1, px);
            if (down > up) fy += 0.25;
            else if (up > down) fy -= 0.25;
        }
        kp.x = fx * sx;
        kp.y = fy * sy;
        out.push_back(kp);
    }
    return out;
}

}  // namespace dite
