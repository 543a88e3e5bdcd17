#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dite/tensor.hpp"

namespace dite {

// Reverse-mode differentiation over the tensor op set. A Tape owns the graph
// of one forward pass: nodes are appended in evaluation order, so insertion
// order is a topological order and backward is a single reverse sweep.
//
// A tape is single-writer while recording; backward is invoked from one
// thread at a time per tape. Distinct tapes are fully independent.
//
// Every op also records its cost (multiply-adds vs auxiliary per-element
// work) and the scope path active when it ran; the complexity analyzer reads
// these off the tape after a forward pass.
template <class T>
class Tape {
public:
    struct OpCost {
        double macs = 0;  // conv / matmul / pooling multiply-adds
        double aux = 0;   // norm, activation, elementwise: one op per element
    };

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool has_grad = false;
        std::string kind;
        int scope = -1;
        OpCost cost;
        std::function<void(Tape&, int)> backward;
    };

    struct ParamRec {
        std::string name;
        int node = -1;
        std::int64_t numel = 0;
        bool is_param = true;  // false for fixed buffers (running stats)
    };

    // ---- scopes -----------------------------------------------------------

    void push_scope(const std::string& name) {
        scope_path_ = scope_path_.empty() ? name : scope_path_ + "." + name;
        scope_stack_.push_back(current_scope_);
        current_scope_ = intern_scope(scope_path_);
    }
    void pop_scope() {
        current_scope_ = scope_stack_.back();
        scope_stack_.pop_back();
        scope_path_ = current_scope_ >= 0 ? scope_names_[static_cast<std::size_t>(current_scope_)] : "";
    }

    class ScopeGuard {
    public:
        ScopeGuard(Tape& t, const std::string& name) : tape_(t) { tape_.push_scope(name); }
        ~ScopeGuard() { tape_.pop_scope(); }
        ScopeGuard(const ScopeGuard&) = delete;
        ScopeGuard& operator=(const ScopeGuard&) = delete;

    private:
        Tape& tape_;
    };

    const std::string& scope_name(int scope_id) const {
        static const std::string empty;
        return scope_id < 0 ? empty : scope_names_[static_cast<std::size_t>(scope_id)];
    }

    // ---- leaves -----------------------------------------------------------

    int leaf(Tensor<T> v, bool /*requires_grad*/ = true) {
        return push(std::move(v), "leaf", {}, nullptr);
    }

    // Registers a named parameter leaf. Repeated registration under the same
    // full name returns the existing node, so a parameter used twice in one
    // forward pass is recorded (and counted) once.
    int param(const std::string& name, const Tensor<T>& v) { return named_leaf(name, v, true); }

    // Fixed per-model state (e.g. normalization running statistics); present
    // in the graph but not counted as learnable parameters.
    int buffer(const std::string& name, const Tensor<T>& v) { return named_leaf(name, v, false); }

    // ---- basic access -----------------------------------------------------

    const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<ParamRec>& params() const { return params_; }

    const Tensor<T>& grad(int id) const {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.has_grad) {
            throw TensorError("grad: node " + std::to_string(id) + " has no gradient (not on any path)");
        }
        return n.grad;
    }
    bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].has_grad; }

    Tensor<T> grad_or_zero(int id) const {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        return n.has_grad ? n.grad : Tensor<T>::zeros(n.value.shape);
    }

    int param_node(const std::string& name) const {
        auto it = param_index_.find(name);
        return it == param_index_.end() ? -1 : params_[it->second].node;
    }

    std::int64_t count_nodes(const std::string& kind, const std::string& scope_contains = "") const {
        std::int64_t c = 0;
        for (const Node& n : nodes_) {
            if (n.kind != kind) continue;
            if (!scope_contains.empty() &&
                scope_name(n.scope).find(scope_contains) == std::string::npos) {
                continue;
            }
            ++c;
        }
        return c;
    }

    // ---- backward ---------------------------------------------------------

    // Output must be scalar (shape (1,1,1,1)); gradients flow to every leaf
    // on a path to it. Leaves off every path simply end up without gradient.
    void backward(int out) {
        Node& o = nodes_[static_cast<std::size_t>(out)];
        if (o.value.numel() != 1) {
            throw TensorError("backward: output must be scalar, got " + o.value.shape.str());
        }
        seed(out);
        for (int i = out; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.has_grad && n.backward) n.backward(*this, i);
        }
    }

    // ---- ops ---------------------------------------------------------------

    int conv2d(int x, int w, const ConvSpec& spec) {
        Tensor<T> y = dite::conv2d(value(x), value(w), spec);
        const double out_elems = static_cast<double>(y.numel());
        OpCost cost{out_elems * static_cast<double>((spec.in_channels / spec.groups) * spec.kh * spec.kw), 0};
        return push(std::move(y), "conv2d", cost, [x, w, spec](Tape& t, int self) {
            const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
            const Tensor<T>& xv = t.value(x);
            const Tensor<T>& wv = t.value(w);
            Tensor<T>& gx = t.grad_buf(x, xv.shape);
            Tensor<T>& gw = t.grad_buf(w, wv.shape);
            const std::int64_t icpg = spec.in_channels / spec.groups;
            const std::int64_t ocpg = spec.out_channels / spec.groups;
            for (std::int64_t n = 0; n < xv.shape.n; ++n) {
                for (std::int64_t oc = 0; oc < spec.out_channels; ++oc) {
                    const std::int64_t g = oc / ocpg;
                    for (std::int64_t oy = 0; oy < gy.shape.h; ++oy) {
                        for (std::int64_t ox = 0; ox < gy.shape.w; ++ox) {
                            const T go = gy.at(n, oc, oy, ox);
                            if (go == T(0)) continue;
                            for (std::int64_t ic = 0; ic < icpg; ++ic) {
                                for (std::int64_t ky = 0; ky < spec.kh; ++ky) {
                                    const std::int64_t iy = oy * spec.stride - spec.pad + ky;
                                    if (iy < 0 || iy >= xv.shape.h) continue;
                                    for (std::int64_t kx = 0; kx < spec.kw; ++kx) {
                                        const std::int64_t ix = ox * spec.stride - spec.pad + kx;
                                        if (ix < 0 || ix >= xv.shape.w) continue;
                                        gx.at(n, g * icpg + ic, iy, ix) += go * wv.at(oc, ic, ky, kx);
                                        gw.at(oc, ic, ky, kx) += go * xv.at(n, g * icpg + ic, iy, ix);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }

    int add_channel_bias(int x, int b) {
        const Tensor<T>& xv = value(x);
        const Tensor<T>& bv = value(b);
        if (bv.shape.c != xv.shape.c || bv.shape.n != 1 || bv.shape.h != 1 || bv.shape.w != 1) {
            throw TensorError("add_channel_bias: bias shape " + bv.shape.str() + " for input " +
                              xv.shape.str());
        }
        Tensor<T> y(xv.shape);
        for (std::int64_t n = 0; n < xv.shape.n; ++n)
            for (std::int64_t c = 0; c < xv.shape.c; ++c)
                for (std::int64_t h = 0; h < xv.shape.h; ++h)
                    for (std::int64_t w = 0; w < xv.shape.w; ++w)
                        y.at(n, c, h, w) = xv.at(n, c, h, w) + bv.at(0, c, 0, 0);
        return push(std::move(y), "bias", {0, static_cast<double>(xv.numel())},
                    [x, b](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        Tensor<T>& gx = t.grad_buf(x, t.value(x).shape);
                        Tensor<T>& gb = t.grad_buf(b, t.value(b).shape);
                        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
                        for (std::int64_t n = 0; n < gy.shape.n; ++n)
                            for (std::int64_t c = 0; c < gy.shape.c; ++c)
                                for (std::int64_t h = 0; h < gy.shape.h; ++h)
                                    for (std::int64_t w = 0; w < gy.shape.w; ++w)
                                        gb.at(0, c, 0, 0) += gy.at(n, c, h, w);
                    });
    }

    int relu(int x) {
        return push(dite::relu(value(x)), "relu", {0, static_cast<double>(value(x).numel())},
                    [x](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        const Tensor<T>& xv = t.value(x);
                        Tensor<T>& gx = t.grad_buf(x, xv.shape);
                        for (std::size_t i = 0; i < gy.data.size(); ++i) {
                            if (xv.data[i] > T(0)) gx.data[i] += gy.data[i];
                        }
                    });
    }

    int sigmoid(int x) {
        return push(dite::sigmoid(value(x)), "sigmoid", {0, static_cast<double>(value(x).numel())},
                    [x](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        const Tensor<T>& yv = t.value(self);
                        Tensor<T>& gx = t.grad_buf(x, t.value(x).shape);
                        for (std::size_t i = 0; i < gy.data.size(); ++i) {
                            gx.data[i] += gy.data[i] * yv.data[i] * (T(1) - yv.data[i]);
                        }
                    });
    }

    int softmax(int x, int axis) {
        return push(dite::softmax(value(x), axis), "softmax",
                    {0, static_cast<double>(value(x).numel())}, [x, axis](Tape& t, int self) {
                        // gx = s * (gy - sum(gy * s) along axis)
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        const Tensor<T>& s = t.value(self);
                        Tensor<T>& gx = t.grad_buf(x, t.value(x).shape);
                        const std::array<std::int64_t, 4> dims{s.shape.n, s.shape.c, s.shape.h, s.shape.w};
                        const std::array<std::int64_t, 4> strides{s.shape.c * s.shape.h * s.shape.w,
                                                                  s.shape.h * s.shape.w, s.shape.w, 1};
                        const std::int64_t len = dims[static_cast<std::size_t>(axis)];
                        const std::int64_t stride = strides[static_cast<std::size_t>(axis)];
                        const std::int64_t lines = s.numel() / len;
                        for (std::int64_t line = 0; line < lines; ++line) {
                            std::int64_t rem = line, base = 0;
                            for (int d = 3; d >= 0; --d) {
                                if (d == axis) continue;
                                base += (rem % dims[static_cast<std::size_t>(d)]) * strides[static_cast<std::size_t>(d)];
                                rem /= dims[static_cast<std::size_t>(d)];
                            }
                            T dot = T(0);
                            for (std::int64_t k = 0; k < len; ++k) {
                                const auto idx = static_cast<std::size_t>(base + k * stride);
                                dot += gy.data[idx] * s.data[idx];
                            }
                            for (std::int64_t k = 0; k < len; ++k) {
                                const auto idx = static_cast<std::size_t>(base + k * stride);
                                gx.data[idx] += s.data[idx] * (gy.data[idx] - dot);
                            }
                        }
                    });
    }

    int add(int a, int b) {
        return push(dite::add(value(a), value(b)), "add", {0, static_cast<double>(value(a).numel())},
                    [a, b](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        Tensor<T>& ga = t.grad_buf(a, t.value(a).shape);
                        Tensor<T>& gb = t.grad_buf(b, t.value(b).shape);
                        for (std::size_t i = 0; i < gy.data.size(); ++i) {
                            ga.data[i] += gy.data[i];
                            gb.data[i] += gy.data[i];
                        }
                    });
    }

    int mul(int x, int g) {
        return push(dite::mul_broadcast(value(x), value(g)), "mul",
                    {0, static_cast<double>(value(x).numel())}, [x, g](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        const Tensor<T>& xv = t.value(x);
                        const Tensor<T>& gv = t.value(g);
                        Tensor<T>& gx = t.grad_buf(x, xv.shape);
                        Tensor<T>& gg = t.grad_buf(g, gv.shape);
                        for (std::int64_t n = 0; n < xv.shape.n; ++n) {
                            for (std::int64_t c = 0; c < xv.shape.c; ++c) {
                                for (std::int64_t h = 0; h < xv.shape.h; ++h) {
                                    for (std::int64_t w = 0; w < xv.shape.w; ++w) {
                                        const std::int64_t bn = gv.shape.n == 1 ? 0 : n;
                                        const std::int64_t bc = gv.shape.c == 1 ? 0 : c;
                                        const std::int64_t bh = gv.shape.h == 1 ? 0 : h;
                                        const std::int64_t bw = gv.shape.w == 1 ? 0 : w;
                                        const T go = gy.at(n, c, h, w);
                                        gx.at(n, c, h, w) += go * gv.at(bn, bc, bh, bw);
                                        gg.at(bn, bc, bh, bw) += go * xv.at(n, c, h, w);
                                    }
                                }
                            }
                        }
                    });
    }

    int scale_const(int x, double s) {
        return push(dite::scale(value(x), static_cast<T>(s)), "scale",
                    {0, static_cast<double>(value(x).numel())}, [x, s](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        Tensor<T>& gx = t.grad_buf(x, t.value(x).shape);
                        for (std::size_t i = 0; i < gy.data.size(); ++i) {
                            gx.data[i] += gy.data[i] * static_cast<T>(s);
                        }
                    });
    }

    // y = x * s where s is a scalar node (shape (1,1,1,1)).
    int scale_by_node(int x, int s) {
        const Tensor<T>& sv = value(s);
        if (sv.numel() != 1) throw TensorError("scale_by_node: scale must be scalar");
        Tensor<T> y = dite::scale(value(x), sv.data[0]);
        return push(std::move(y), "scale", {0, static_cast<double>(value(x).numel())},
                    [x, s](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        const Tensor<T>& xv = t.value(x);
                        const T sval = t.value(s).data[0];
                        Tensor<T>& gx = t.grad_buf(x, xv.shape);
                        Tensor<T>& gs = t.grad_buf(s, t.value(s).shape);
                        T acc = T(0);
                        for (std::size_t i = 0; i < gy.data.size(); ++i) {
                            gx.data[i] += gy.data[i] * sval;
                            acc += gy.data[i] * xv.data[i];
                        }
                        gs.data[0] += acc;
                    });
    }

    // Extracts one element as a (1,1,1,1) scalar node.
    int pick(int x, std::int64_t flat_index) {
        const Tensor<T>& xv = value(x);
        if (flat_index < 0 || flat_index >= xv.numel()) {
            throw TensorError("pick: index " + std::to_string(flat_index) + " out of range");
        }
        Tensor<T> y(1, 1, 1, 1);
        y.data[0] = xv.data[static_cast<std::size_t>(flat_index)];
        return push(std::move(y), "pick", {}, [x, flat_index](Tape& t, int self) {
            const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
            Tensor<T>& gx = t.grad_buf(x, t.value(x).shape);
            gx.data[static_cast<std::size_t>(flat_index)] += gy.data[0];
        });
    }

    int sum_all(int x) {
        Tensor<T> y(1, 1, 1, 1);
        y.data[0] = dite::sum_all(value(x));
        return push(std::move(y), "sum", {0, static_cast<double>(value(x).numel())},
                    [x](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        Tensor<T>& gx = t.grad_buf(x, t.value(x).shape);
                        for (auto& v : gx.data) v += gy.data[0];
                    });
    }

    int reshape(int x, const Shape& s) {
        return push(value(x).reshaped(s), "reshape", {}, [x](Tape& t, int self) {
            const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
            Tensor<T>& gx = t.grad_buf(x, t.value(x).shape);
            for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
        });
    }

    int permute_0213(int x) {
        return push(dite::permute_0213(value(x)), "permute", {}, [x](Tape& t, int self) {
            const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
            Tensor<T> gp = dite::permute_0213(gy);  // the permutation is its own inverse
            Tensor<T>& gx = t.grad_buf(x, t.value(x).shape);
            for (std::size_t i = 0; i < gp.data.size(); ++i) gx.data[i] += gp.data[i];
        });
    }

    int channel_slice(int x, std::int64_t c0, std::int64_t c1) {
        return push(dite::channel_slice(value(x), c0, c1), "slice", {}, [x, c0](Tape& t, int self) {
            const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
            Tensor<T>& gx = t.grad_buf(x, t.value(x).shape);
            for (std::int64_t n = 0; n < gy.shape.n; ++n)
                for (std::int64_t c = 0; c < gy.shape.c; ++c)
                    for (std::int64_t h = 0; h < gy.shape.h; ++h)
                        for (std::int64_t w = 0; w < gy.shape.w; ++w)
                            gx.at(n, c0 + c, h, w) += gy.at(n, c, h, w);
        });
    }

    std::vector<int> channel_split(int x, std::int64_t parts) {
        const std::int64_t c = value(x).shape.c;
        if (parts < 1 || c % parts != 0) {
            throw TensorError("channel_split: channels " + std::to_string(c) +
                              " not divisible by parts " + std::to_string(parts));
        }
        std::vector<int> out;
        const std::int64_t step = c / parts;
        for (std::int64_t p = 0; p < parts; ++p) {
            out.push_back(channel_slice(x, p * step, (p + 1) * step));
        }
        return out;
    }

    int channel_concat(const std::vector<int>& xs) {
        std::vector<Tensor<T>> vals;
        vals.reserve(xs.size());
        for (int id : xs) vals.push_back(value(id));
        std::vector<std::int64_t> offs;
        std::int64_t off = 0;
        for (const auto& v : vals) {
            offs.push_back(off);
            off += v.shape.c;
        }
        return push(dite::channel_concat(vals), "concat", {}, [xs, offs](Tape& t, int self) {
            const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                const Tensor<T>& xi = t.value(xs[i]);
                Tensor<T>& gx = t.grad_buf(xs[i], xi.shape);
                for (std::int64_t n = 0; n < xi.shape.n; ++n)
                    for (std::int64_t c = 0; c < xi.shape.c; ++c)
                        for (std::int64_t h = 0; h < xi.shape.h; ++h)
                            for (std::int64_t w = 0; w < xi.shape.w; ++w)
                                gx.at(n, c, h, w) += gy.at(n, offs[i] + c, h, w);
            }
        });
    }

    int channel_shuffle(int x, std::int64_t groups) {
        const std::int64_t c = value(x).shape.c;
        return push(dite::channel_shuffle(value(x), groups), "shuffle", {},
                    [x, groups, c](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        Tensor<T> gp = dite::channel_shuffle(gy, c / groups);  // inverse permutation
                        Tensor<T>& gx = t.grad_buf(x, t.value(x).shape);
                        for (std::size_t i = 0; i < gp.data.size(); ++i) gx.data[i] += gp.data[i];
                    });
    }

    int batch_slice(int x, std::int64_t n0, std::int64_t n1) {
        return push(dite::batch_slice(value(x), n0, n1), "batch_slice", {},
                    [x, n0](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        Tensor<T>& gx = t.grad_buf(x, t.value(x).shape);
                        const std::int64_t per = gy.shape.c * gy.shape.h * gy.shape.w;
                        for (std::int64_t i = 0; i < gy.numel(); ++i) {
                            gx.data[static_cast<std::size_t>(n0 * per + i)] += gy.data[static_cast<std::size_t>(i)];
                        }
                    });
    }

    int batch_concat(const std::vector<int>& xs) {
        std::vector<Tensor<T>> vals;
        vals.reserve(xs.size());
        for (int id : xs) vals.push_back(value(id));
        return push(dite::batch_concat(vals), "batch_concat", {}, [xs](Tape& t, int self) {
            const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
            std::int64_t off = 0;
            for (int xi : xs) {
                const Tensor<T>& v = t.value(xi);
                Tensor<T>& gx = t.grad_buf(xi, v.shape);
                for (std::int64_t i = 0; i < v.numel(); ++i) {
                    gx.data[static_cast<std::size_t>(i)] += gy.data[static_cast<std::size_t>(off + i)];
                }
                off += v.numel();
            }
        });
    }

    int adaptive_avg_pool(int x, std::int64_t oh, std::int64_t ow) {
        const Tensor<T>& xv = value(x);
        Tensor<T> y = dite::adaptive_avg_pool(xv, oh, ow);
        return push(std::move(y), "avg_pool", {static_cast<double>(xv.numel()), 0},
                    [x, oh, ow](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        const Tensor<T>& xv2 = t.value(x);
                        Tensor<T>& gx = t.grad_buf(x, xv2.shape);
                        for (std::int64_t n = 0; n < xv2.shape.n; ++n) {
                            for (std::int64_t c = 0; c < xv2.shape.c; ++c) {
                                for (std::int64_t i = 0; i < oh; ++i) {
                                    const std::int64_t y0 = (i * xv2.shape.h) / oh;
                                    const std::int64_t y1 = ((i + 1) * xv2.shape.h + oh - 1) / oh;
                                    for (std::int64_t j = 0; j < ow; ++j) {
                                        const std::int64_t x0 = (j * xv2.shape.w) / ow;
                                        const std::int64_t x1 = ((j + 1) * xv2.shape.w + ow - 1) / ow;
                                        const T g = gy.at(n, c, i, j) /
                                                    static_cast<T>((y1 - y0) * (x1 - x0));
                                        for (std::int64_t yy = y0; yy < y1; ++yy)
                                            for (std::int64_t xx = x0; xx < x1; ++xx)
                                                gx.at(n, c, yy, xx) += g;
                                    }
                                }
                            }
                        }
                    });
    }

    int global_avg_pool(int x) { return adaptive_avg_pool(x, 1, 1); }

    int bilinear_upsample(int x, std::int64_t oh, std::int64_t ow) {
        const Tensor<T>& xv = value(x);
        Tensor<T> y = dite::bilinear_upsample(xv, oh, ow);
        const double out_elems = static_cast<double>(y.numel());
        return push(std::move(y), "upsample", {0, out_elems}, [x, oh, ow](Tape& t, int self) {
            const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
            const Tensor<T>& xv2 = t.value(x);
            Tensor<T>& gx = t.grad_buf(x, xv2.shape);
            const double sy = static_cast<double>(xv2.shape.h) / static_cast<double>(oh);
            const double sx = static_cast<double>(xv2.shape.w) / static_cast<double>(ow);
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                const double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
                const std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
                const T wy1 = static_cast<T>(fy - static_cast<double>(y0));
                const std::int64_t y0c = std::clamp<std::int64_t>(y0, 0, xv2.shape.h - 1);
                const std::int64_t y1c = std::clamp<std::int64_t>(y0 + 1, 0, xv2.shape.h - 1);
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    const double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
                    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
                    const T wx1 = static_cast<T>(fx - static_cast<double>(x0));
                    const std::int64_t x0c = std::clamp<std::int64_t>(x0, 0, xv2.shape.w - 1);
                    const std::int64_t x1c = std::clamp<std::int64_t>(x0 + 1, 0, xv2.shape.w - 1);
                    for (std::int64_t n = 0; n < xv2.shape.n; ++n) {
                        for (std::int64_t c = 0; c < xv2.shape.c; ++c) {
                            const T g = gy.at(n, c, oy, ox);
                            gx.at(n, c, y0c, x0c) += g * (T(1) - wy1) * (T(1) - wx1);
                            gx.at(n, c, y0c, x1c) += g * (T(1) - wy1) * wx1;
                            gx.at(n, c, y1c, x0c) += g * wy1 * (T(1) - wx1);
                            gx.at(n, c, y1c, x1c) += g * wy1 * wx1;
                        }
                    }
                }
            }
        });
    }

    int matmul(int a, int b) {
        Tensor<T> y = dite::matmul(value(a), value(b));
        const double macs = static_cast<double>(y.numel()) * static_cast<double>(value(a).shape.w);
        return push(std::move(y), "matmul", {macs, 0}, [a, b](Tape& t, int self) {
            const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
            const Tensor<T>& av = t.value(a);
            const Tensor<T>& bv = t.value(b);
            Tensor<T>& ga = t.grad_buf(a, av.shape);
            Tensor<T>& gb = t.grad_buf(b, bv.shape);
            for (std::int64_t n = 0; n < av.shape.n; ++n) {
                for (std::int64_t c = 0; c < av.shape.c; ++c) {
                    const std::int64_t bn = bv.shape.n == 1 ? 0 : n;
                    const std::int64_t bc = bv.shape.c == 1 ? 0 : c;
                    for (std::int64_t i = 0; i < av.shape.h; ++i) {
                        for (std::int64_t j = 0; j < bv.shape.w; ++j) {
                            const T g = gy.at(n, c, i, j);
                            if (g == T(0)) continue;
                            for (std::int64_t k = 0; k < av.shape.w; ++k) {
                                ga.at(n, c, i, k) += g * bv.at(bn, bc, k, j);
                                gb.at(bn, bc, k, j) += g * av.at(n, c, i, k);
                            }
                        }
                    }
                }
            }
        });
    }

    int batchnorm(int x, int scale_p, int shift_p, int mean_b, int var_b, double eps) {
        Tensor<T> y = dite::batchnorm_inference(value(x), value(scale_p), value(shift_p),
                                                value(mean_b), value(var_b), static_cast<T>(eps));
        return push(std::move(y), "batchnorm", {0, static_cast<double>(value(x).numel())},
                    [x, scale_p, shift_p, mean_b, var_b, eps](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        const Tensor<T>& xv = t.value(x);
                        const Tensor<T>& sc = t.value(scale_p);
                        const Tensor<T>& mn = t.value(mean_b);
                        const Tensor<T>& vr = t.value(var_b);
                        Tensor<T>& gx = t.grad_buf(x, xv.shape);
                        Tensor<T>& gs = t.grad_buf(scale_p, sc.shape);
                        Tensor<T>& gh = t.grad_buf(shift_p, sc.shape);
                        for (std::int64_t c = 0; c < xv.shape.c; ++c) {
                            const T inv = T(1) / std::sqrt(vr.at(0, c, 0, 0) + static_cast<T>(eps));
                            const T s = sc.at(0, c, 0, 0) * inv;
                            T acc_s = T(0), acc_h = T(0);
                            for (std::int64_t n = 0; n < xv.shape.n; ++n) {
                                for (std::int64_t h = 0; h < xv.shape.h; ++h) {
                                    for (std::int64_t w = 0; w < xv.shape.w; ++w) {
                                        const T g = gy.at(n, c, h, w);
                                        gx.at(n, c, h, w) += g * s;
                                        acc_s += g * (xv.at(n, c, h, w) - mn.at(0, c, 0, 0)) * inv;
                                        acc_h += g;
                                    }
                                }
                            }
                            gs.at(0, c, 0, 0) += acc_s;
                            gh.at(0, c, 0, 0) += acc_h;
                        }
                    });
    }

    int layernorm(int x, int gamma, int beta, double eps) {
        Tensor<T> y = dite::layernorm_channels(value(x), value(gamma), value(beta),
                                               static_cast<T>(eps));
        return push(std::move(y), "layernorm", {0, static_cast<double>(value(x).numel())},
                    [x, gamma, beta, eps](Tape& t, int self) {
                        const Tensor<T>& gy = t.nodes_[static_cast<std::size_t>(self)].grad;
                        const Tensor<T>& xv = t.value(x);
                        const Tensor<T>& gm = t.value(gamma);
                        Tensor<T>& gx = t.grad_buf(x, xv.shape);
                        Tensor<T>& gg = t.grad_buf(gamma, gm.shape);
                        Tensor<T>& gb = t.grad_buf(beta, gm.shape);
                        const std::int64_t C = xv.shape.c;
                        for (std::int64_t n = 0; n < xv.shape.n; ++n) {
                            for (std::int64_t h = 0; h < xv.shape.h; ++h) {
                                for (std::int64_t w = 0; w < xv.shape.w; ++w) {
                                    T mean = T(0);
                                    for (std::int64_t c = 0; c < C; ++c) mean += xv.at(n, c, h, w);
                                    mean /= static_cast<T>(C);
                                    T var = T(0);
                                    for (std::int64_t c = 0; c < C; ++c) {
                                        const T d = xv.at(n, c, h, w) - mean;
                                        var += d * d;
                                    }
                                    var /= static_cast<T>(C);
                                    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
                                    T m1 = T(0), m2 = T(0);  // mean(dxhat), mean(dxhat * xhat)
                                    for (std::int64_t c = 0; c < C; ++c) {
                                        const T xhat = (xv.at(n, c, h, w) - mean) * inv;
                                        const T dxhat = gy.at(n, c, h, w) * gm.at(0, c, 0, 0);
                                        m1 += dxhat;
                                        m2 += dxhat * xhat;
                                        gg.at(0, c, 0, 0) += gy.at(n, c, h, w) * xhat;
                                        gb.at(0, c, 0, 0) += gy.at(n, c, h, w);
                                    }
                                    m1 /= static_cast<T>(C);
                                    m2 /= static_cast<T>(C);
                                    for (std::int64_t c = 0; c < C; ++c) {
                                        const T xhat = (xv.at(n, c, h, w) - mean) * inv;
                                        const T dxhat = gy.at(n, c, h, w) * gm.at(0, c, 0, 0);
                                        gx.at(n, c, h, w) += (dxhat - m1 - xhat * m2) * inv;
                                    }
                                }
                            }
                        }
                    });
    }

private:
    int named_leaf(const std::string& name, const Tensor<T>& v, bool is_param) {
        const std::string full = scope_path_.empty() ? name : scope_path_ + "." + name;
        auto it = param_index_.find(full);
        if (it != param_index_.end()) {
            const ParamRec& rec = params_[it->second];
            if (value(rec.node).shape != v.shape) {
                throw TensorError("param: re-registration of " + full + " with different shape");
            }
            return rec.node;
        }
        const int id = push(v, is_param ? "param" : "buffer", {}, nullptr);
        param_index_[full] = params_.size();
        params_.push_back(ParamRec{full, id, v.numel(), is_param});
        return id;
    }

    Tensor<T>& grad_buf(int id, const Shape& s) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.has_grad) {
            n.grad = Tensor<T>::zeros(s);
            n.has_grad = true;
        }
        return n.grad;
    }

    void seed(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        n.grad = Tensor<T>::full(n.value.shape, T(1));
        n.has_grad = true;
    }

    int push(Tensor<T> v, std::string kind, OpCost cost, std::function<void(Tape&, int)> bw) {
        Node n;
        n.value = std::move(v);
        n.kind = std::move(kind);
        n.scope = current_scope_;
        n.cost = cost;
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int intern_scope(const std::string& full) {
        auto it = scope_ids_.find(full);
        if (it != scope_ids_.end()) return it->second;
        const int id = static_cast<int>(scope_names_.size());
        scope_names_.push_back(full);
        scope_ids_[full] = id;
        return id;
    }

    std::vector<Node> nodes_;
    std::vector<ParamRec> params_;
    std::unordered_map<std::string, std::size_t> param_index_;
    std::vector<std::string> scope_names_;
    std::unordered_map<std::string, int> scope_ids_;
    std::vector<int> scope_stack_;
    std::string scope_path_;
    int current_scope_ = -1;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace dite
