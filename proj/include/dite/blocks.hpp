#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dite/acm.hpp"
#include "dite/autograd.hpp"
#include "dite/dsc.hpp"
#include "dite/layers.hpp"

namespace dite {

// The two dynamic lightweight blocks plus multi-scale fusion and branch
// transitions. Normalization convention: batch norm after every convolution,
// ReLU after 1x1 convolutions only, nothing after depthwise convolutions.

// Stage-level dynamic multi-scale context operator. Each branch splits its
// channels in half; the active halves of all branches jointly pass dense
// context modeling, then per-branch DSC and per-branch GCM; passive and
// processed halves are concatenated and shuffled.
template <class T>
struct DmcBlock {
    std::vector<std::int64_t> branch_channels;  // full widths per branch
    bool use_acm = true;
    bool use_dsc = true;
    Dcm<T> dcm;
    std::vector<DscLayer<T>> dsc;            // when use_dsc
    std::vector<ConvLayer<T>> static_conv;   // 3x3 depthwise fallback otherwise
    std::vector<BnLayer<T>> conv_bn;
    std::vector<Gcm<T>> gcm;

    static DmcBlock make(const std::vector<std::int64_t>& channels,
                         const std::vector<std::int64_t>& heights,
                         const std::vector<std::int64_t>& widths,
                         const std::vector<std::int64_t>& groups,
                         const std::vector<std::int64_t>& kernels, std::int64_t dcm_ratio,
                         std::int64_t gcm_ratio, bool use_acm, bool use_dsc, SeededRng& rng) {
        DmcBlock b;
        b.branch_channels = channels;
        b.use_acm = use_acm;
        b.use_dsc = use_dsc;
        DcmStageSpec dspec;
        for (std::size_t k = 0; k < channels.size(); ++k) {
            if (channels[k] % 2 != 0) {
                throw TensorError("DmcBlock: branch " + std::to_string(k) + " width " +
                                  std::to_string(channels[k]) + " is not even");
            }
            dspec.channels.push_back(channels[k] / 2);
            dspec.heights.push_back(heights[k]);
            dspec.widths.push_back(widths[k]);
        }
        if (use_acm) b.dcm = Dcm<T>::make(dspec, dcm_ratio, rng);
        for (std::size_t k = 0; k < channels.size(); ++k) {
            const std::int64_t active = channels[k] / 2;
            if (use_dsc) {
                b.dsc.push_back(DscLayer<T>::make(ScsSpec{active, groups[k]}, kernels[k], rng));
            } else {
                b.static_conv.push_back(
                    ConvLayer<T>::make(ConvSpec::depthwise(active, 3), rng));
            }
            b.conv_bn.push_back(BnLayer<T>::make(active));
            if (use_acm) b.gcm.push_back(Gcm<T>::make(active, gcm_ratio, rng));
        }
        return b;
    }

    std::vector<int> forward(Tape<T>& tp, const std::vector<int>& xs) const {
        if (xs.size() != branch_channels.size()) {
            throw TensorError("DmcBlock: got " + std::to_string(xs.size()) + " branches, expected " +
                              std::to_string(branch_channels.size()));
        }
        std::vector<int> passive, active;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            if (tp.value(xs[k]).shape.c != branch_channels[k]) {
                throw TensorError("DmcBlock: branch " + std::to_string(k) + " has " +
                                  std::to_string(tp.value(xs[k]).shape.c) + " channels, expected " +
                                  std::to_string(branch_channels[k]));
            }
            auto halves = tp.channel_split(xs[k], 2);
            passive.push_back(halves[0]);
            active.push_back(halves[1]);
        }
        if (use_acm) active = dcm.forward(tp, active);
        for (std::size_t k = 0; k < active.size(); ++k) {
            typename Tape<T>::ScopeGuard sk(tp, "branch" + std::to_string(k));
            if (use_dsc) {
                typename Tape<T>::ScopeGuard sd(tp, "dsc");
                active[k] = dsc[k].forward(tp, active[k]);
            } else {
                typename Tape<T>::ScopeGuard sd(tp, "dw");
                active[k] = static_conv[k].forward(tp, active[k]);
            }
            {
                typename Tape<T>::ScopeGuard sb(tp, use_dsc ? "dsc" : "dw");
                active[k] = conv_bn[k].forward(tp, active[k]);
            }
            if (use_acm) active[k] = gcm[k].forward(tp, active[k]);
        }
        std::vector<int> outs;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            outs.push_back(tp.channel_shuffle(tp.channel_concat({passive[k], active[k]}), 2));
        }
        return outs;
    }

    void visit(const std::string& prefix, const TensorVisitor<T>& v) {
        if (use_acm) dcm.visit(prefix, v);
        for (std::size_t k = 0; k < conv_bn.size(); ++k) {
            const std::string bp = join_scope(prefix, "branch" + std::to_string(k));
            if (use_dsc) {
                dsc[k].visit(join_scope(bp, "dsc"), v);
                conv_bn[k].visit(join_scope(bp, "dsc"), v);
            } else {
                static_conv[k].visit(join_scope(bp, "dw"), v);
                conv_bn[k].visit(join_scope(bp, "dw"), v);
            }
            if (use_acm) gcm[k].visit(bp, v);
        }
    }
};

// Stem block at stride 2. Channels split into two groups: group A runs
// strided 3x3 depthwise -> GCM -> 1x1; group B runs 3x3 depthwise -> GCM ->
// 1x1 -> strided 3x3 depthwise. Every convolution draws its kernel from
// dynamic kernel aggregation; outputs concatenate to half width each and
// shuffle.
template <class T>
struct DgcBlock {
    std::int64_t in_channels = 0, out_channels = 0;
    bool use_acm = true;
    DkaConv<T> a_dw, a_pw;
    BnLayer<T> a_dw_bn, a_pw_bn;
    Gcm<T> a_gcm;
    DkaConv<T> b_dw, b_pw, b_dw2;
    BnLayer<T> b_dw_bn, b_pw_bn, b_dw2_bn;
    Gcm<T> b_gcm;

    static DgcBlock make(std::int64_t in_channels, std::int64_t out_channels,
                         std::int64_t num_kernels, std::int64_t gcm_ratio, bool use_acm,
                         bool use_dsc, SeededRng& rng) {
        if (in_channels % 2 != 0 || out_channels % 2 != 0) {
            throw TensorError("DgcBlock: channel counts must be even, got " +
                              std::to_string(in_channels) + " -> " + std::to_string(out_channels));
        }
        DgcBlock b;
        b.in_channels = in_channels;
        b.out_channels = out_channels;
        b.use_acm = use_acm;
        const std::int64_t gc = in_channels / 2;   // per-group input width
        const std::int64_t oc = out_channels / 2;  // per-group output width
        b.a_dw = DkaConv<T>::make(ConvSpec::depthwise(gc, 3, 2), num_kernels, use_dsc, rng);
        b.a_dw_bn = BnLayer<T>::make(gc);
        if (use_acm) b.a_gcm = Gcm<T>::make(gc, gcm_ratio, rng);
        b.a_pw = DkaConv<T>::make(ConvSpec::pointwise(gc, oc), num_kernels, use_dsc, rng);
        b.a_pw_bn = BnLayer<T>::make(oc);
        b.b_dw = DkaConv<T>::make(ConvSpec::depthwise(gc, 3), num_kernels, use_dsc, rng);
        b.b_dw_bn = BnLayer<T>::make(gc);
        if (use_acm) b.b_gcm = Gcm<T>::make(gc, gcm_ratio, rng);
        b.b_pw = DkaConv<T>::make(ConvSpec::pointwise(gc, oc), num_kernels, use_dsc, rng);
        b.b_pw_bn = BnLayer<T>::make(oc);
        b.b_dw2 = DkaConv<T>::make(ConvSpec::depthwise(oc, 3, 2), num_kernels, use_dsc, rng);
        b.b_dw2_bn = BnLayer<T>::make(oc);
        return b;
    }

    int forward(Tape<T>& tp, int x) const {
        if (tp.value(x).shape.c != in_channels) {
            throw TensorError("DgcBlock: input channels " + std::to_string(tp.value(x).shape.c) +
                              " != " + std::to_string(in_channels));
        }
        auto groups = tp.channel_split(x, 2);
        int a, b;
        {
            typename Tape<T>::ScopeGuard sg(tp, "path_a");
            a = groups[0];
            {
                typename Tape<T>::ScopeGuard s(tp, "dw");
                a = a_dw_bn.forward(tp, a_dw.forward(tp, a));
            }
            if (use_acm) a = a_gcm.forward(tp, a);
            {
                typename Tape<T>::ScopeGuard s(tp, "pw");
                a = tp.relu(a_pw_bn.forward(tp, a_pw.forward(tp, a)));
            }
        }
        {
            typename Tape<T>::ScopeGuard sg(tp, "path_b");
            b = groups[1];
            {
                typename Tape<T>::ScopeGuard s(tp, "dw");
                b = b_dw_bn.forward(tp, b_dw.forward(tp, b));
            }
            if (use_acm) b = b_gcm.forward(tp, b);
            {
                typename Tape<T>::ScopeGuard s(tp, "pw");
                b = tp.relu(b_pw_bn.forward(tp, b_pw.forward(tp, b)));
            }
            {
                typename Tape<T>::ScopeGuard s(tp, "dw2");
                b = b_dw2_bn.forward(tp, b_dw2.forward(tp, b));
            }
        }
        return tp.channel_shuffle(tp.channel_concat({a, b}), 2);
    }

    void visit(const std::string& prefix, const TensorVisitor<T>& v) {
        const std::string pa = join_scope(prefix, "path_a");
        a_dw.visit(join_scope(pa, "dw"), v);
        a_dw_bn.visit(join_scope(pa, "dw"), v);
        if (use_acm) a_gcm.visit(pa, v);
        a_pw.visit(join_scope(pa, "pw"), v);
        a_pw_bn.visit(join_scope(pa, "pw"), v);
        const std::string pb = join_scope(prefix, "path_b");
        b_dw.visit(join_scope(pb, "dw"), v);
        b_dw_bn.visit(join_scope(pb, "dw"), v);
        if (use_acm) b_gcm.visit(pb, v);
        b_pw.visit(join_scope(pb, "pw"), v);
        b_pw_bn.visit(join_scope(pb, "pw"), v);
        b_dw2.visit(join_scope(pb, "dw2"), v);
        b_dw2_bn.visit(join_scope(pb, "dw2"), v);
    }
};

// Stage-end fusion: every output branch k sums one resampled contribution
// from every input branch j. Lower-to-higher goes through a 1x1 conv at the
// source resolution then bilinear upsampling; higher-to-lower through one
// strided-depthwise + 1x1 step per halving; j == k is the identity. No
// activation follows the sum, so zeroed cross paths reduce to per-branch
// identity.
template <class T>
struct FusionLayer {
    struct DownStep {
        ConvLayer<T> dw;
        BnLayer<T> dw_bn;
        ConvLayer<T> pw;
        BnLayer<T> pw_bn;
    };
    struct Path {
        // exactly one of the two is used: down steps (j < k) or up conv (j > k)
        std::vector<DownStep> down;
        ConvLayer<T> up_pw;
        BnLayer<T> up_bn;
        bool is_up = false;
        bool is_identity = false;
    };

    std::vector<std::int64_t> channels;
    std::vector<std::vector<Path>> paths;  // [k][j]

    static FusionLayer make(const std::vector<std::int64_t>& channels, SeededRng& rng) {
        FusionLayer f;
        f.channels = channels;
        const std::int64_t n = static_cast<std::int64_t>(channels.size());
        f.paths.resize(static_cast<std::size_t>(n));
        for (std::int64_t k = 0; k < n; ++k) {
            for (std::int64_t j = 0; j < n; ++j) {
                Path p;
                if (j == k) {
                    p.is_identity = true;
                } else if (j > k) {
                    p.is_up = true;
                    p.up_pw = ConvLayer<T>::make(
                        ConvSpec::pointwise(channels[static_cast<std::size_t>(j)],
                                            channels[static_cast<std::size_t>(k)]),
                        rng);
                    p.up_bn = BnLayer<T>::make(channels[static_cast<std::size_t>(k)]);
                } else {
                    const std::int64_t cj = channels[static_cast<std::size_t>(j)];
                    for (std::int64_t step = 0; step < k - j; ++step) {
                        const bool last = step == k - j - 1;
                        const std::int64_t out_c = last ? channels[static_cast<std::size_t>(k)] : cj;
                        DownStep ds;
                        ds.dw = ConvLayer<T>::make(ConvSpec::depthwise(cj, 3, 2), rng);
                        ds.dw_bn = BnLayer<T>::make(cj);
                        ds.pw = ConvLayer<T>::make(ConvSpec::pointwise(cj, out_c), rng);
                        ds.pw_bn = BnLayer<T>::make(out_c);
                        p.down.push_back(std::move(ds));
                    }
                }
                f.paths[static_cast<std::size_t>(k)].push_back(std::move(p));
            }
        }
        return f;
    }

    std::vector<int> forward(Tape<T>& tp, const std::vector<int>& xs) const {
        const std::size_t n = channels.size();
        if (xs.size() != n) {
            throw TensorError("FusionLayer: got " + std::to_string(xs.size()) +
                              " branches, expected " + std::to_string(n));
        }
        std::vector<int> outs(n, -1);
        for (std::size_t k = 0; k < n; ++k) {
            int acc = -1;
            for (std::size_t j = 0; j < n; ++j) {
                const Path& p = paths[k][j];
                int contrib;
                if (p.is_identity) {
                    contrib = xs[j];
                } else if (p.is_up) {
                    typename Tape<T>::ScopeGuard sg(tp, "to" + std::to_string(k) + "_from" +
                                                            std::to_string(j));
                    contrib = p.up_bn.forward(tp, p.up_pw.forward(tp, xs[j]));
                    const Shape& target = tp.value(xs[k]).shape;
                    contrib = tp.bilinear_upsample(contrib, target.h, target.w);
                } else {
                    typename Tape<T>::ScopeGuard sg(tp, "to" + std::to_string(k) + "_from" +
                                                            std::to_string(j));
                    contrib = xs[j];
                    for (std::size_t s = 0; s < p.down.size(); ++s) {
                        typename Tape<T>::ScopeGuard ss(tp, "step" + std::to_string(s));
                        {
                            typename Tape<T>::ScopeGuard sd(tp, "dw");
                            contrib = p.down[s].dw_bn.forward(tp, p.down[s].dw.forward(tp, contrib));
                        }
                        {
                            typename Tape<T>::ScopeGuard sp2(tp, "pw");
                            contrib = p.down[s].pw_bn.forward(tp, p.down[s].pw.forward(tp, contrib));
                        }
                    }
                }
                acc = acc < 0 ? contrib : tp.add(acc, contrib);
            }
            outs[k] = acc;
        }
        return outs;
    }

    void visit(const std::string& prefix, const TensorVisitor<T>& v) {
        for (std::size_t k = 0; k < paths.size(); ++k) {
            for (std::size_t j = 0; j < paths[k].size(); ++j) {
                Path& p = paths[k][j];
                if (p.is_identity) continue;
                const std::string pp =
                    join_scope(prefix, "to" + std::to_string(k) + "_from" + std::to_string(j));
                if (p.is_up) {
                    p.up_pw.visit(pp, v);
                    p.up_bn.visit(pp, v);
                } else {
                    for (std::size_t s = 0; s < p.down.size(); ++s) {
                        const std::string sp = join_scope(pp, "step" + std::to_string(s));
                        p.down[s].dw.visit(join_scope(sp, "dw"), v);
                        p.down[s].dw_bn.visit(join_scope(sp, "dw"), v);
                        p.down[s].pw.visit(join_scope(sp, "pw"), v);
                        p.down[s].pw_bn.visit(join_scope(sp, "pw"), v);
                    }
                }
            }
        }
    }
};

// Stage boundary: every kept branch is channel-adjusted when its width
// changes (depthwise 3x3 + 1x1), and one new branch is appended from the
// lowest-resolution branch via strided depthwise + 1x1 to the new width.
template <class T>
struct TransitionLayer {
    struct Adjust {
        bool active = false;
        ConvLayer<T> dw;
        BnLayer<T> dw_bn;
        ConvLayer<T> pw;
        BnLayer<T> pw_bn;
    };
    std::vector<Adjust> adjust;
    ConvLayer<T> new_dw;
    BnLayer<T> new_dw_bn;
    ConvLayer<T> new_pw;
    BnLayer<T> new_pw_bn;
    std::int64_t new_width = 0;

    static TransitionLayer make(const std::vector<std::int64_t>& in_channels,
                                const std::vector<std::int64_t>& out_channels, SeededRng& rng) {
        if (out_channels.size() != in_channels.size() + 1) {
            throw TensorError("TransitionLayer: must add exactly one branch");
        }
        TransitionLayer t;
        for (std::size_t k = 0; k < in_channels.size(); ++k) {
            Adjust a;
            if (in_channels[k] != out_channels[k]) {
                a.active = true;
                a.dw = ConvLayer<T>::make(ConvSpec::depthwise(in_channels[k], 3), rng);
                a.dw_bn = BnLayer<T>::make(in_channels[k]);
                a.pw = ConvLayer<T>::make(ConvSpec::pointwise(in_channels[k], out_channels[k]), rng);
                a.pw_bn = BnLayer<T>::make(out_channels[k]);
            }
            t.adjust.push_back(std::move(a));
        }
        const std::int64_t src = in_channels.back();
        t.new_width = out_channels.back();
        t.new_dw = ConvLayer<T>::make(ConvSpec::depthwise(src, 3, 2), rng);
        t.new_dw_bn = BnLayer<T>::make(src);
        t.new_pw = ConvLayer<T>::make(ConvSpec::pointwise(src, t.new_width), rng);
        t.new_pw_bn = BnLayer<T>::make(t.new_width);
        return t;
    }

    std::vector<int> forward(Tape<T>& tp, const std::vector<int>& xs) const {
        if (xs.size() != adjust.size()) {
            throw TensorError("TransitionLayer: branch count mismatch");
        }
        std::vector<int> outs;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            if (!adjust[k].active) {
                outs.push_back(xs[k]);
                continue;
            }
            typename Tape<T>::ScopeGuard sg(tp, "adjust" + std::to_string(k));
            int y;
            {
                typename Tape<T>::ScopeGuard sd(tp, "dw");
                y = adjust[k].dw_bn.forward(tp, adjust[k].dw.forward(tp, xs[k]));
            }
            {
                typename Tape<T>::ScopeGuard sp(tp, "pw");
                y = tp.relu(adjust[k].pw_bn.forward(tp, adjust[k].pw.forward(tp, y)));
            }
            outs.push_back(y);
        }
        {
            typename Tape<T>::ScopeGuard sg(tp, "new_branch");
            int y;
            {
                typename Tape<T>::ScopeGuard sd(tp, "dw");
                y = new_dw_bn.forward(tp, new_dw.forward(tp, xs.back()));
            }
            {
                typename Tape<T>::ScopeGuard sp(tp, "pw");
                y = tp.relu(new_pw_bn.forward(tp, new_pw.forward(tp, y)));
            }
            outs.push_back(y);
        }
        return outs;
    }

    void visit(const std::string& prefix, const TensorVisitor<T>& v) {
        for (std::size_t k = 0; k < adjust.size(); ++k) {
            if (!adjust[k].active) continue;
            const std::string ap = join_scope(prefix, "adjust" + std::to_string(k));
            adjust[k].dw.visit(join_scope(ap, "dw"), v);
            adjust[k].dw_bn.visit(join_scope(ap, "dw"), v);
            adjust[k].pw.visit(join_scope(ap, "pw"), v);
            adjust[k].pw_bn.visit(join_scope(ap, "pw"), v);
        }
        const std::string np = join_scope(prefix, "new_branch");
        new_dw.visit(join_scope(np, "dw"), v);
        new_dw_bn.visit(join_scope(np, "dw"), v);
        new_pw.visit(join_scope(np, "pw"), v);
        new_pw_bn.visit(join_scope(np, "pw"), v);
    }
};

}  // namespace dite
