#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dite {

// All tensors are dense 4-D arrays in batch-channel-height-width order,
// row-major with width fastest. Double precision is used for gradient
// checks, single precision everywhere else.

struct TensorError : std::runtime_error {
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Shape {
    std::int64_t n = 0, c = 0, h = 0, w = 0;

    std::int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

template <class T>
struct Tensor {
    Shape shape{0, 0, 0, 0};
    std::vector<T> data;

    Tensor() = default;
    Tensor(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w)
        : shape{n, c, h, w} {
        if (n < 1 || c < 1 || h < 1 || w < 1) {
            throw TensorError("Tensor: all dims must be >= 1, got " + shape.str());
        }
        data.assign(static_cast<std::size_t>(shape.numel()), T(0));
    }
    explicit Tensor(const Shape& s) : Tensor(s.n, s.c, s.h, s.w) {}

    static Tensor full(const Shape& s, T v) {
        Tensor t(s);
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor zeros(const Shape& s) { return Tensor(s); }

    std::int64_t numel() const { return shape.numel(); }

    T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
        return data[static_cast<std::size_t>(((n * shape.c + c) * shape.h + y) * shape.w + x)];
    }
    T at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
        return data[static_cast<std::size_t>(((n * shape.c + c) * shape.h + y) * shape.w + x)];
    }

    // Reinterprets the same buffer under a new shape. Row-major layout makes
    // this a free operation.
    Tensor reshaped(const Shape& s) const {
        if (s.numel() != numel()) {
            throw TensorError("reshape: numel mismatch " + shape.str() + " -> " + s.str());
        }
        Tensor t;
        t.shape = s;
        t.data = data;
        return t;
    }

    bool all_finite() const {
        for (T v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Grouped 2-D convolution geometry. Depthwise means groups == in == out.
struct ConvSpec {
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    std::int64_t kh = 1, kw = 1;
    std::int64_t stride = 1;
    std::int64_t pad = 0;
    std::int64_t groups = 1;

    static ConvSpec pointwise(std::int64_t in, std::int64_t out) {
        return ConvSpec{in, out, 1, 1, 1, 0, 1};
    }
    static ConvSpec depthwise(std::int64_t channels, std::int64_t k, std::int64_t stride = 1) {
        return ConvSpec{channels, channels, k, k, stride, k / 2, channels};
    }

    std::int64_t out_h(std::int64_t h) const { return (h + 2 * pad - kh) / stride + 1; }
    std::int64_t out_w(std::int64_t w) const { return (w + 2 * pad - kw) / stride + 1; }

    // Weight layout: (out_channels, in_channels / groups, kh, kw).
    Shape weight_shape() const { return Shape{out_channels, in_channels / groups, kh, kw}; }

    void validate() const {
        if (in_channels < 1 || out_channels < 1 || kh < 1 || kw < 1 || stride < 1 || pad < 0 || groups < 1) {
            throw TensorError("ConvSpec: non-positive field");
        }
        if (in_channels % groups != 0) {
            throw TensorError("ConvSpec: in_channels " + std::to_string(in_channels) +
                              " not divisible by groups " + std::to_string(groups));
        }
        if (out_channels % groups != 0) {
            throw TensorError("ConvSpec: out_channels " + std::to_string(out_channels) +
                              " not divisible by groups " + std::to_string(groups));
        }
    }
};

namespace detail {

#ifndef NDEBUG
template <class T>
inline void debug_check_finite(const Tensor<T>& t, const char* op) {
    if (!t.all_finite()) {
        throw TensorError(std::string(op) + ": non-finite value produced");
    }
}
#else
template <class T>
inline void debug_check_finite(const Tensor<T>&, const char*) {}
#endif

template <class T>
inline void check_conv_args(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec,
                            const char* op) {
    spec.validate();
    if (x.shape.c != spec.in_channels) {
        throw TensorError(std::string(op) + ": input channels " + std::to_string(x.shape.c) +
                          " != spec.in_channels " + std::to_string(spec.in_channels));
    }
    if (w.shape != spec.weight_shape()) {
        throw TensorError(std::string(op) + ": weight shape " + w.shape.str() +
                          " != expected " + spec.weight_shape().str());
    }
    if (spec.out_h(x.shape.h) < 1 || spec.out_w(x.shape.w) < 1) {
        throw TensorError(std::string(op) + ": kernel " + std::to_string(spec.kh) + "x" +
                          std::to_string(spec.kw) + " too large for input " + x.shape.str());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

// Literal definition of grouped convolution: six nested loops over output and
// kernel indices, explicit bounds checks, no layout tricks. This is the
// reference the production path is compared against.
template <class T>
Tensor<T> naive_conv_oracle(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec) {
    detail::check_conv_args(x, w, spec, "naive_conv_oracle");
    const std::int64_t oh = spec.out_h(x.shape.h), ow = spec.out_w(x.shape.w);
    const std::int64_t icpg = spec.in_channels / spec.groups;
    const std::int64_t ocpg = spec.out_channels / spec.groups;
    Tensor<T> y(x.shape.n, spec.out_channels, oh, ow);
    for (std::int64_t n = 0; n < x.shape.n; ++n) {
        for (std::int64_t oc = 0; oc < spec.out_channels; ++oc) {
            const std::int64_t g = oc / ocpg;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    T acc = T(0);
                    for (std::int64_t ic = 0; ic < icpg; ++ic) {
                        for (std::int64_t ky = 0; ky < spec.kh; ++ky) {
                            for (std::int64_t kx = 0; kx < spec.kw; ++kx) {
                                const std::int64_t iy = oy * spec.stride - spec.pad + ky;
                                const std::int64_t ix = ox * spec.stride - spec.pad + kx;
                                if (iy < 0 || iy >= x.shape.h || ix < 0 || ix >= x.shape.w) continue;
                                acc += x.at(n, g * icpg + ic, iy, ix) * w.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    y.at(n, oc, oy, ox) = acc;
                }
            }
        }
    }
    return y;
}

// Production convolution. Kernel bounds are hoisted out of the inner loops;
// the per-output accumulation order (ic, ky, kx) matches the oracle so the
// two routes agree bit for bit.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec) {
    detail::check_conv_args(x, w, spec, "conv2d");
    const std::int64_t oh = spec.out_h(x.shape.h), ow = spec.out_w(x.shape.w);
    const std::int64_t icpg = spec.in_channels / spec.groups;
    const std::int64_t ocpg = spec.out_channels / spec.groups;
    Tensor<T> y(x.shape.n, spec.out_channels, oh, ow);
    const T* xd = x.data.data();
    const T* wd = w.data.data();
    T* yd = y.data.data();
    const std::int64_t xs_c = x.shape.h * x.shape.w;
    const std::int64_t ys_c = oh * ow;
    for (std::int64_t n = 0; n < x.shape.n; ++n) {
        for (std::int64_t g = 0; g < spec.groups; ++g) {
            for (std::int64_t ocg = 0; ocg < ocpg; ++ocg) {
                const std::int64_t oc = g * ocpg + ocg;
                T* yrow = yd + (n * spec.out_channels + oc) * ys_c;
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const std::int64_t iy0 = oy * spec.stride - spec.pad;
                    const std::int64_t ky_lo = std::max<std::int64_t>(0, -iy0);
                    const std::int64_t ky_hi = std::min(spec.kh, x.shape.h - iy0);
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const std::int64_t ix0 = ox * spec.stride - spec.pad;
                        const std::int64_t kx_lo = std::max<std::int64_t>(0, -ix0);
                        const std::int64_t kx_hi = std::min(spec.kw, x.shape.w - ix0);
                        T acc = T(0);
                        for (std::int64_t ic = 0; ic < icpg; ++ic) {
                            const T* xc = xd + (n * spec.in_channels + g * icpg + ic) * xs_c;
                            const T* wc = wd + (oc * icpg + ic) * spec.kh * spec.kw;
                            for (std::int64_t ky = ky_lo; ky < ky_hi; ++ky) {
                                const T* xr = xc + (iy0 + ky) * x.shape.w + ix0;
                                const T* wr = wc + ky * spec.kw;
                                for (std::int64_t kx = kx_lo; kx < kx_hi; ++kx) {
                                    acc += xr[kx] * wr[kx];
                                }
                            }
                        }
                        yrow[oy * ow + ox] = acc;
                    }
                }
            }
        }
    }
    detail::debug_check_finite(y, "conv2d");
    return y;
}

// ---------------------------------------------------------------------------
// channel split / concat / shuffle
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> channel_slice(const Tensor<T>& x, std::int64_t c0, std::int64_t c1) {
    if (c0 < 0 || c1 <= c0 || c1 > x.shape.c) {
        throw TensorError("channel_slice: bad range [" + std::to_string(c0) + "," +
                          std::to_string(c1) + ") for " + std::to_string(x.shape.c) + " channels");
    }
    Tensor<T> y(x.shape.n, c1 - c0, x.shape.h, x.shape.w);
    const std::int64_t plane = x.shape.h * x.shape.w;
    for (std::int64_t n = 0; n < x.shape.n; ++n) {
        std::copy_n(x.data.data() + (n * x.shape.c + c0) * plane, (c1 - c0) * plane,
                    y.data.data() + n * (c1 - c0) * plane);
    }
    return y;
}

template <class T>
std::vector<Tensor<T>> channel_split(const Tensor<T>& x, std::int64_t parts) {
    if (parts < 1 || x.shape.c % parts != 0) {
        throw TensorError("channel_split: channels " + std::to_string(x.shape.c) +
                          " not divisible by parts " + std::to_string(parts));
    }
    const std::int64_t step = x.shape.c / parts;
    std::vector<Tensor<T>> out;
    out.reserve(static_cast<std::size_t>(parts));
    for (std::int64_t p = 0; p < parts; ++p) {
        out.push_back(channel_slice(x, p * step, (p + 1) * step));
    }
    return out;
}

template <class T>
Tensor<T> channel_concat(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw TensorError("channel_concat: empty list");
    std::int64_t c_total = 0;
    for (const auto& t : xs) {
        if (t.shape.n != xs[0].shape.n || t.shape.h != xs[0].shape.h || t.shape.w != xs[0].shape.w) {
            throw TensorError("channel_concat: mismatched shapes " + t.shape.str() + " vs " +
                              xs[0].shape.str());
        }
        c_total += t.shape.c;
    }
    Tensor<T> y(xs[0].shape.n, c_total, xs[0].shape.h, xs[0].shape.w);
    const std::int64_t plane = y.shape.h * y.shape.w;
    for (std::int64_t n = 0; n < y.shape.n; ++n) {
        std::int64_t c_off = 0;
        for (const auto& t : xs) {
            std::copy_n(t.data.data() + n * t.shape.c * plane, t.shape.c * plane,
                        y.data.data() + (n * c_total + c_off) * plane);
            c_off += t.shape.c;
        }
    }
    return y;
}

// Permutation defined by reshape (groups, C/groups) -> transpose -> flatten.
// Shuffling again with the swapped factor count inverts it.
template <class T>
Tensor<T> channel_shuffle(const Tensor<T>& x, std::int64_t groups) {
    if (groups < 1 || x.shape.c % groups != 0) {
        throw TensorError("channel_shuffle: channels " + std::to_string(x.shape.c) +
                          " not divisible by groups " + std::to_string(groups));
    }
    const std::int64_t per = x.shape.c / groups;
    Tensor<T> y(x.shape);
    const std::int64_t plane = x.shape.h * x.shape.w;
    for (std::int64_t n = 0; n < x.shape.n; ++n) {
        for (std::int64_t g = 0; g < groups; ++g) {
            for (std::int64_t k = 0; k < per; ++k) {
                std::copy_n(x.data.data() + (n * x.shape.c + g * per + k) * plane, plane,
                            y.data.data() + (n * x.shape.c + k * groups + g) * plane);
            }
        }
    }
    return y;
}

template <class T>
Tensor<T> batch_slice(const Tensor<T>& x, std::int64_t n0, std::int64_t n1) {
    if (n0 < 0 || n1 <= n0 || n1 > x.shape.n) {
        throw TensorError("batch_slice: bad range for batch " + std::to_string(x.shape.n));
    }
    Tensor<T> y(n1 - n0, x.shape.c, x.shape.h, x.shape.w);
    const std::int64_t per = x.shape.c * x.shape.h * x.shape.w;
    std::copy_n(x.data.data() + n0 * per, (n1 - n0) * per, y.data.data());
    return y;
}

template <class T>
Tensor<T> batch_concat(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw TensorError("batch_concat: empty list");
    std::int64_t n_total = 0;
    for (const auto& t : xs) {
        if (t.shape.c != xs[0].shape.c || t.shape.h != xs[0].shape.h || t.shape.w != xs[0].shape.w) {
            throw TensorError("batch_concat: mismatched shapes");
        }
        n_total += t.shape.n;
    }
    Tensor<T> y(n_total, xs[0].shape.c, xs[0].shape.h, xs[0].shape.w);
    std::int64_t off = 0;
    for (const auto& t : xs) {
        std::copy_n(t.data.data(), t.numel(), y.data.data() + off);
        off += t.numel();
    }
    return y;
}

// ---------------------------------------------------------------------------
// pooling / resizing
// ---------------------------------------------------------------------------

// Contiguous-bin adaptive average pooling; bin i covers
// [floor(i*H/OH), ceil((i+1)*H/OH)). Exact for divisible sizes.
template <class T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, std::int64_t oh, std::int64_t ow) {
    if (oh < 1 || ow < 1 || oh > x.shape.h || ow > x.shape.w) {
        throw TensorError("adaptive_avg_pool: target (" + std::to_string(oh) + "," +
                          std::to_string(ow) + ") invalid for input " + x.shape.str());
    }
    Tensor<T> y(x.shape.n, x.shape.c, oh, ow);
    for (std::int64_t n = 0; n < x.shape.n; ++n) {
        for (std::int64_t c = 0; c < x.shape.c; ++c) {
            for (std::int64_t i = 0; i < oh; ++i) {
                const std::int64_t y0 = (i * x.shape.h) / oh;
                const std::int64_t y1 = ((i + 1) * x.shape.h + oh - 1) / oh;
                for (std::int64_t j = 0; j < ow; ++j) {
                    const std::int64_t x0 = (j * x.shape.w) / ow;
                    const std::int64_t x1 = ((j + 1) * x.shape.w + ow - 1) / ow;
                    T acc = T(0);
                    for (std::int64_t yy = y0; yy < y1; ++yy) {
                        for (std::int64_t xx = x0; xx < x1; ++xx) {
                            acc += x.at(n, c, yy, xx);
                        }
                    }
                    y.at(n, c, i, j) = acc / static_cast<T>((y1 - y0) * (x1 - x0));
                }
            }
        }
    }
    return y;
}

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    return adaptive_avg_pool(x, 1, 1);
}

// Bilinear upsampling with half-pixel centers (align-corners = false),
// edge-clamped. Constant fields are preserved exactly.
template <class T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::int64_t oh, std::int64_t ow) {
    if (oh < x.shape.h || ow < x.shape.w) {
        throw TensorError("bilinear_upsample: target (" + std::to_string(oh) + "," +
                          std::to_string(ow) + ") smaller than input " + x.shape.str());
    }
    Tensor<T> y(x.shape.n, x.shape.c, oh, ow);
    const double sy = static_cast<double>(x.shape.h) / static_cast<double>(oh);
    const double sx = static_cast<double>(x.shape.w) / static_cast<double>(ow);
    for (std::int64_t oy = 0; oy < oh; ++oy) {
        const double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
        const T wy1 = static_cast<T>(fy - static_cast<double>(y0));
        const std::int64_t y0c = std::clamp<std::int64_t>(y0, 0, x.shape.h - 1);
        const std::int64_t y1c = std::clamp<std::int64_t>(y0 + 1, 0, x.shape.h - 1);
        for (std::int64_t ox = 0; ox < ow; ++ox) {
            const double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            const std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
            const T wx1 = static_cast<T>(fx - static_cast<double>(x0));
            const std::int64_t x0c = std::clamp<std::int64_t>(x0, 0, x.shape.w - 1);
            const std::int64_t x1c = std::clamp<std::int64_t>(x0 + 1, 0, x.shape.w - 1);
            for (std::int64_t n = 0; n < x.shape.n; ++n) {
                for (std::int64_t c = 0; c < x.shape.c; ++c) {
                    const T v00 = x.at(n, c, y0c, x0c), v01 = x.at(n, c, y0c, x1c);
                    const T v10 = x.at(n, c, y1c, x0c), v11 = x.at(n, c, y1c, x1c);
                    const T top = v00 + (v01 - v00) * wx1;
                    const T bot = v10 + (v11 - v10) * wx1;
                    y.at(n, c, oy, ox) = top + (bot - top) * wy1;
                }
            }
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// elementwise / activations
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    return y;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        y.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
    }
    return y;
}

// Numerically stable softmax along one axis (0=batch .. 3=width).
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    if (axis < 0 || axis > 3) {
        throw TensorError("softmax: axis " + std::to_string(axis) + " out of range [0,3]");
    }
    const std::array<std::int64_t, 4> dims{x.shape.n, x.shape.c, x.shape.h, x.shape.w};
    const std::array<std::int64_t, 4> strides{x.shape.c * x.shape.h * x.shape.w,
                                              x.shape.h * x.shape.w, x.shape.w, 1};
    const std::int64_t len = dims[static_cast<std::size_t>(axis)];
    const std::int64_t stride = strides[static_cast<std::size_t>(axis)];
    Tensor<T> y(x.shape);
    std::array<std::int64_t, 4> idx{0, 0, 0, 0};
    // iterate over all lines orthogonal to `axis`
    const std::int64_t lines = x.numel() / len;
    for (std::int64_t line = 0; line < lines; ++line) {
        std::int64_t rem = line;
        std::int64_t base = 0;
        for (int d = 3; d >= 0; --d) {
            if (d == axis) continue;
            const std::int64_t v = rem % dims[static_cast<std::size_t>(d)];
            rem /= dims[static_cast<std::size_t>(d)];
            base += v * strides[static_cast<std::size_t>(d)];
        }
        (void)idx;
        T mx = x.data[static_cast<std::size_t>(base)];
        for (std::int64_t k = 1; k < len; ++k) {
            mx = std::max(mx, x.data[static_cast<std::size_t>(base + k * stride)]);
        }
        T denom = T(0);
        for (std::int64_t k = 0; k < len; ++k) {
            const T e = std::exp(x.data[static_cast<std::size_t>(base + k * stride)] - mx);
            y.data[static_cast<std::size_t>(base + k * stride)] = e;
            denom += e;
        }
        for (std::int64_t k = 0; k < len; ++k) {
            y.data[static_cast<std::size_t>(base + k * stride)] /= denom;
        }
    }
    return y;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape != b.shape) {
        throw TensorError("add: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
    }
    Tensor<T> y(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
    return y;
}

// Elementwise product where each dim of g is either equal to x's or 1
// (broadcast). Covers the C x 1 x 1 context-gate case.
template <class T>
Tensor<T> mul_broadcast(const Tensor<T>& x, const Tensor<T>& g) {
    const auto ok = [](std::int64_t a, std::int64_t b) { return b == a || b == 1; };
    if (!ok(x.shape.n, g.shape.n) || !ok(x.shape.c, g.shape.c) || !ok(x.shape.h, g.shape.h) ||
        !ok(x.shape.w, g.shape.w)) {
        throw TensorError("mul_broadcast: " + g.shape.str() + " not broadcastable to " +
                          x.shape.str());
    }
    Tensor<T> y(x.shape);
    for (std::int64_t n = 0; n < x.shape.n; ++n) {
        for (std::int64_t c = 0; c < x.shape.c; ++c) {
            for (std::int64_t h = 0; h < x.shape.h; ++h) {
                for (std::int64_t w = 0; w < x.shape.w; ++w) {
                    y.at(n, c, h, w) = x.at(n, c, h, w) *
                                       g.at(g.shape.n == 1 ? 0 : n, g.shape.c == 1 ? 0 : c,
                                            g.shape.h == 1 ? 0 : h, g.shape.w == 1 ? 0 : w);
                }
            }
        }
    }
    return y;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] * s;
    return y;
}

template <class T>
T sum_all(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data) acc += v;
    return acc;
}

// Batched matrix multiply over the (h, w) dims; the (n, c) dims of b must
// match a's or be 1 (shared operand).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape.w != b.shape.h) {
        throw TensorError("matmul: inner dims " + std::to_string(a.shape.w) + " vs " +
                          std::to_string(b.shape.h));
    }
    if ((b.shape.n != a.shape.n && b.shape.n != 1) || (b.shape.c != a.shape.c && b.shape.c != 1)) {
        throw TensorError("matmul: outer dims " + a.shape.str() + " vs " + b.shape.str());
    }
    Tensor<T> y(a.shape.n, a.shape.c, a.shape.h, b.shape.w);
    for (std::int64_t n = 0; n < a.shape.n; ++n) {
        for (std::int64_t c = 0; c < a.shape.c; ++c) {
            const std::int64_t bn = b.shape.n == 1 ? 0 : n;
            const std::int64_t bc = b.shape.c == 1 ? 0 : c;
            for (std::int64_t i = 0; i < a.shape.h; ++i) {
                for (std::int64_t j = 0; j < b.shape.w; ++j) {
                    T acc = T(0);
                    for (std::int64_t k = 0; k < a.shape.w; ++k) {
                        acc += a.at(n, c, i, k) * b.at(bn, bc, k, j);
                    }
                    y.at(n, c, i, j) = acc;
                }
            }
        }
    }
    return y;
}

// x: (N, C, 1, 1), w: (M, C, 1, 1), b: (1, M, 1, 1) or empty -> (N, M, 1, 1).
template <class T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = Tensor<T>()) {
    if (x.shape.h != 1 || x.shape.w != 1) {
        throw TensorError("fully_connected: input must be (N,C,1,1), got " + x.shape.str());
    }
    if (w.shape.c != x.shape.c || w.shape.h != 1 || w.shape.w != 1) {
        throw TensorError("fully_connected: weight " + w.shape.str() + " incompatible with input " +
                          x.shape.str());
    }
    const bool has_bias = b.numel() > 0;
    if (has_bias && b.shape.c != w.shape.n) {
        throw TensorError("fully_connected: bias length " + std::to_string(b.shape.c) +
                          " != outputs " + std::to_string(w.shape.n));
    }
    Tensor<T> y(x.shape.n, w.shape.n, 1, 1);
    for (std::int64_t n = 0; n < x.shape.n; ++n) {
        for (std::int64_t m = 0; m < w.shape.n; ++m) {
            T acc = has_bias ? b.at(0, m, 0, 0) : T(0);
            for (std::int64_t c = 0; c < x.shape.c; ++c) {
                acc += x.at(n, c, 0, 0) * w.at(m, c, 0, 0);
            }
            y.at(n, m, 0, 0) = acc;
        }
    }
    return y;
}

// Inference-mode batch normalization with fixed statistics:
// y = scale * (x - mean) / sqrt(var + eps) + shift. All per-channel
// parameters are (1, C, 1, 1) tensors.
template <class T>
Tensor<T> batchnorm_inference(const Tensor<T>& x, const Tensor<T>& scale_t, const Tensor<T>& shift,
                              const Tensor<T>& mean, const Tensor<T>& var, T eps) {
    const std::int64_t c = x.shape.c;
    for (const Tensor<T>* p : {&scale_t, &shift, &mean, &var}) {
        if (p->shape.c != c || p->shape.n != 1 || p->shape.h != 1 || p->shape.w != 1) {
            throw TensorError("batchnorm_inference: parameter shape " + p->shape.str() +
                              " != (1," + std::to_string(c) + ",1,1)");
        }
    }
    for (std::int64_t i = 0; i < c; ++i) {
        if (var.at(0, i, 0, 0) < T(0)) {
            throw TensorError("batchnorm_inference: negative variance at channel " +
                              std::to_string(i));
        }
    }
    Tensor<T> y(x.shape);
    for (std::int64_t n = 0; n < x.shape.n; ++n) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const T inv = T(1) / std::sqrt(var.at(0, ch, 0, 0) + eps);
            const T s = scale_t.at(0, ch, 0, 0) * inv;
            const T off = shift.at(0, ch, 0, 0) - mean.at(0, ch, 0, 0) * s;
            for (std::int64_t h = 0; h < x.shape.h; ++h) {
                for (std::int64_t w = 0; w < x.shape.w; ++w) {
                    y.at(n, ch, h, w) = x.at(n, ch, h, w) * s + off;
                }
            }
        }
    }
    return y;
}

// Layer normalization across channels, independently at each spatial
// position. gamma/beta are (1, C, 1, 1).
template <class T>
Tensor<T> layernorm_channels(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             T eps) {
    if (gamma.shape.c != x.shape.c || beta.shape.c != x.shape.c) {
        throw TensorError("layernorm_channels: affine parameter length mismatch");
    }
    Tensor<T> y(x.shape);
    const std::int64_t c = x.shape.c;
    for (std::int64_t n = 0; n < x.shape.n; ++n) {
        for (std::int64_t h = 0; h < x.shape.h; ++h) {
            for (std::int64_t w = 0; w < x.shape.w; ++w) {
                T mean = T(0);
                for (std::int64_t ch = 0; ch < c; ++ch) mean += x.at(n, ch, h, w);
                mean /= static_cast<T>(c);
                T var = T(0);
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const T d = x.at(n, ch, h, w) - mean;
                    var += d * d;
                }
                var /= static_cast<T>(c);
                const T inv = T(1) / std::sqrt(var + eps);
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    y.at(n, ch, h, w) =
                        gamma.at(0, ch, 0, 0) * (x.at(n, ch, h, w) - mean) * inv + beta.at(0, ch, 0, 0);
                }
            }
        }
    }
    return y;
}

// (n, c, h, w) -> (n, h, c, w); its own inverse.
template <class T>
Tensor<T> permute_0213(const Tensor<T>& x) {
    Tensor<T> y(x.shape.n, x.shape.h, x.shape.c, x.shape.w);
    for (std::int64_t n = 0; n < x.shape.n; ++n) {
        for (std::int64_t c = 0; c < x.shape.c; ++c) {
            for (std::int64_t h = 0; h < x.shape.h; ++h) {
                for (std::int64_t w = 0; w < x.shape.w; ++w) {
                    y.at(n, h, c, w) = x.at(n, c, h, w);
                }
            }
        }
    }
    return y;
}

}  // namespace dite
