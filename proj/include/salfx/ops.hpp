#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "salfx/tensor.hpp"

// Forward and backward kernels. Every function here is pure: inputs are never
// modified and outputs depend only on the arguments.
namespace salfx::ops {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* what)
{
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(t.shape()));
}

inline void require_dim(const char* what, const char* dim_name, std::size_t got, std::size_t want)
{
    if (got != want)
        throw ShapeError(std::string(what) + ": " + dim_name + " is " + std::to_string(got) +
                         ", expected " + std::to_string(want));
}

// Output extent of a strided window.
inline std::size_t window_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad)
{
    return (in + 2 * pad - k) / stride + 1;
}

// Range [lo, hi) of output positions o for which o*stride + k - pad lands inside [0, in).
inline void valid_range(std::size_t out, std::size_t in, std::size_t k, std::size_t stride,
                        std::size_t pad, std::size_t& lo, std::size_t& hi)
{
    const long long off = static_cast<long long>(k) - static_cast<long long>(pad);
    const long long s = static_cast<long long>(stride);
    long long l = off >= 0 ? 0 : (-off + s - 1) / s;
    long long h = (static_cast<long long>(in) - 1 - off) >= 0
                      ? (static_cast<long long>(in) - 1 - off) / s + 1
                      : 0;
    l = std::min<long long>(l, static_cast<long long>(out));
    h = std::clamp<long long>(h, l, static_cast<long long>(out));
    lo = static_cast<std::size_t>(l);
    hi = static_cast<std::size_t>(h);
}

// Signed flat offset of input row (oy*stride + ky - pad) shifted by (kx - pad).
inline std::ptrdiff_t row_offset(std::size_t oy, std::size_t ky, std::size_t kx,
                                 std::size_t stride, std::size_t pad, std::size_t w)
{
    const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
    return iy * static_cast<std::ptrdiff_t>(w) + static_cast<std::ptrdiff_t>(kx) -
           static_cast<std::ptrdiff_t>(pad);
}

} // namespace detail

struct Conv2dGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

/// Cross-correlation (no kernel flip). input [N,Cin,H,W], weight [Cout,Cin,kh,kw].
/// Per output element the products are accumulated over (cin, ky, kx) in that
/// order starting from zero, and the bias is added last.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     std::size_t stride, std::size_t pad)
{
    constexpr const char* op = "conv2d";
    detail::require_rank(input, 4, op);
    detail::require_rank(weight, 4, op);
    detail::require_rank(bias, 1, op);
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    detail::require_dim(op, "weight input channels", weight.dim(1), cin);
    detail::require_dim(op, "bias length", bias.dim(0), cout);
    if (kh > h + 2 * pad) throw ShapeError("conv2d: kernel height exceeds padded input height");
    if (kw > w + 2 * pad) throw ShapeError("conv2d: kernel width exceeds padded input width");

    const std::size_t oh = detail::window_out(h, kh, stride, pad);
    const std::size_t ow = detail::window_out(w, kw, stride, pad);
    Tensor out(Shape{n, cout, oh, ow});

    const double* x = input.data().data();
    const double* wt = weight.data().data();
    double* y = out.data().data();

    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            double* yplane = y + (b * cout + co) * oh * ow;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* xplane = x + (b * cin + ci) * h * w;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    std::size_t oy0, oy1;
                    detail::valid_range(oh, h, ky, stride, pad, oy0, oy1);
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        std::size_t ox0, ox1;
                        detail::valid_range(ow, w, kx, stride, pad, ox0, ox1);
                        const double wv = wt[((co * cin + ci) * kh + ky) * kw + kx];
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const auto base = detail::row_offset(oy, ky, kx, stride, pad, w);
                            double* yrow = yplane + oy * ow;
                            if (stride == 1) {
                                for (std::size_t ox = ox0; ox < ox1; ++ox)
                                    yrow[ox] += wv * xplane[base + static_cast<std::ptrdiff_t>(ox)];
                            } else {
                                for (std::size_t ox = ox0; ox < ox1; ++ox)
                                    yrow[ox] += wv * xplane[base + static_cast<std::ptrdiff_t>(ox * stride)];
                            }
                        }
                    }
                }
            }
            const double bv = bias[co];
            for (std::size_t i = 0; i < oh * ow; ++i) yplane[i] += bv;
        }
    }
    return out;
}

/// Gradients of conv2d. Skipped outputs are left empty.
inline Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight,
                                   const Tensor& grad_out, std::size_t stride, std::size_t pad,
                                   bool need_input, bool need_weight)
{
    const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);

    Conv2dGrads g;
    if (need_input) g.input = Tensor::zeros(input.shape());
    if (need_weight) {
        g.weight = Tensor::zeros(weight.shape());
        g.bias = Tensor::zeros(Shape{cout});
    }

    const double* x = input.data().data();
    const double* wt = weight.data().data();
    const double* gy = grad_out.data().data();

    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            const double* gplane = gy + (b * cout + co) * oh * ow;
            if (need_weight) {
                double acc = 0.0;
                for (std::size_t i = 0; i < oh * ow; ++i) acc += gplane[i];
                g.bias[co] += acc;
            }
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* xplane = x + (b * cin + ci) * h * w;
                double* dxplane = need_input ? g.input.data().data() + (b * cin + ci) * h * w : nullptr;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    std::size_t oy0, oy1;
                    detail::valid_range(oh, h, ky, stride, pad, oy0, oy1);
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        std::size_t ox0, ox1;
                        detail::valid_range(ow, w, kx, stride, pad, ox0, ox1);
                        const std::size_t widx = ((co * cin + ci) * kh + ky) * kw + kx;
                        const double wv = wt[widx];
                        double acc = 0.0;
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const auto base = detail::row_offset(oy, ky, kx, stride, pad, w);
                            const double* grow = gplane + oy * ow;
                            if (need_weight) {
                                for (std::size_t ox = ox0; ox < ox1; ++ox)
                                    acc += grow[ox] * xplane[base + static_cast<std::ptrdiff_t>(ox * stride)];
                            }
                            if (need_input) {
                                for (std::size_t ox = ox0; ox < ox1; ++ox)
                                    dxplane[base + static_cast<std::ptrdiff_t>(ox * stride)] += wv * grow[ox];
                            }
                        }
                        if (need_weight) g.weight[widx] += acc;
                    }
                }
            }
        }
    }
    return g;
}

inline Tensor relu(const Tensor& x)
{
    Tensor out = x;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& grad_out)
{
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.numel(); ++i)
        if (!(x[i] > 0.0)) g[i] = 0.0;
    return g;
}

struct MaxPoolResult {
    Tensor output;
    std::vector<std::size_t> argmax; // flat input index per output element
};

/// Windowed max over [N,C,H,W]. Ties resolve to the first element in row-major
/// window order, which is also where the gradient is routed.
inline MaxPoolResult maxpool2d_with_indices(const Tensor& x, std::size_t k, std::size_t stride)
{
    detail::require_rank(x, 4, "maxpool2d");
    if (k == 0 || stride == 0) throw ShapeError("maxpool2d: window and stride must be positive");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (k > h || k > w) throw ShapeError("maxpool2d: window exceeds spatial size");
    const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;

    MaxPoolResult r{Tensor(Shape{n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
                std::size_t best = base + oy * stride * w + ox * stride;
                double bv = x[best];
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::size_t idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if (x[idx] > bv) {
                            bv = x[idx];
                            best = idx;
                        }
                    }
                }
                r.output[o] = bv;
                r.argmax[o] = best;
            }
        }
    }
    return r;
}

inline Tensor maxpool2d(const Tensor& x, std::size_t k, std::size_t stride)
{
    return maxpool2d_with_indices(x, k, stride).output;
}

inline Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                 const Tensor& grad_out)
{
    Tensor g = Tensor::zeros(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
    return g;
}

/// x [N,D], weight [K,D], bias [K] -> x * weight^T + bias.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias)
{
    constexpr const char* op = "linear";
    detail::require_rank(x, 2, op);
    detail::require_rank(weight, 2, op);
    detail::require_rank(bias, 1, op);
    const std::size_t n = x.dim(0), d = x.dim(1), k = weight.dim(0);
    detail::require_dim(op, "weight input dimension", weight.dim(1), d);
    detail::require_dim(op, "bias length", bias.dim(0), k);
    Tensor out(Shape{n, k});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < d; ++t) acc += x[i * d + t] * weight[j * d + t];
            out[i * k + j] = acc + bias[j];
        }
    }
    return out;
}

struct LinearGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

inline LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out,
                                   bool need_input, bool need_weight)
{
    const std::size_t n = x.dim(0), d = x.dim(1), k = weight.dim(0);
    LinearGrads g;
    if (need_input) {
        g.input = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                const double gv = grad_out[i * k + j];
                for (std::size_t t = 0; t < d; ++t) g.input[i * d + t] += gv * weight[j * d + t];
            }
    }
    if (need_weight) {
        g.weight = Tensor::zeros(weight.shape());
        g.bias = Tensor::zeros(Shape{k});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                const double gv = grad_out[i * k + j];
                g.bias[j] += gv;
                for (std::size_t t = 0; t < d; ++t) g.weight[j * d + t] += gv * x[i * d + t];
            }
    }
    return g;
}

namespace detail {

struct Tap {
    std::size_t i0, i1;
    double w1; // weight of i1; weight of i0 is 1 - w1
};

// Half-pixel-center sampling positions with edge clamping.
inline std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out)
{
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(src));
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        taps[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

} // namespace detail

/// Bilinear resampling of [N,C,h,w] to [N,C,out_h,out_w], half-pixel centers,
/// clamped at the borders. Works for both up- and downsampling (no prefilter).
inline Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w)
{
    detail::require_rank(x, 4, "bilinear_resize");
    if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: empty output size");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto ty = detail::bilinear_taps(h, out_h);
    const auto tx = detail::bilinear_taps(w, out_w);
    Tensor out(Shape{n, c, out_h, out_w});
    double* y = out.data().data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const double* src = x.data().data() + plane * h * w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const auto& a = ty[oy];
            const double* r0 = src + a.i0 * w;
            const double* r1 = src + a.i1 * w;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const auto& b = tx[ox];
                const double top = (1.0 - b.w1) * r0[b.i0] + b.w1 * r0[b.i1];
                const double bot = (1.0 - b.w1) * r1[b.i0] + b.w1 * r1[b.i1];
                *y++ = (1.0 - a.w1) * top + a.w1 * bot;
            }
        }
    }
    return out;
}

inline Tensor bilinear_resize_backward(const Shape& input_shape, const Tensor& grad_out)
{
    const std::size_t n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
    const std::size_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);
    const auto ty = detail::bilinear_taps(h, out_h);
    const auto tx = detail::bilinear_taps(w, out_w);
    Tensor g = Tensor::zeros(input_shape);
    const double* gy = grad_out.data().data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        double* dst = g.data().data() + plane * h * w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const auto& a = ty[oy];
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const auto& b = tx[ox];
                const double v = *gy++;
                dst[a.i0 * w + b.i0] += (1.0 - a.w1) * (1.0 - b.w1) * v;
                dst[a.i0 * w + b.i1] += (1.0 - a.w1) * b.w1 * v;
                dst[a.i1 * w + b.i0] += a.w1 * (1.0 - b.w1) * v;
                dst[a.i1 * w + b.i1] += a.w1 * b.w1 * v;
            }
        }
    }
    return g;
}

/// Upsampling-only entry point used by the network.
inline Tensor bilinear_upsample(const Tensor& x, std::size_t out_h, std::size_t out_w)
{
    detail::require_rank(x, 4, "bilinear_upsample");
    if (out_h < x.dim(2) || out_w < x.dim(3))
        throw ShapeError("bilinear_upsample: output " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " is smaller than input " +
                         std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)));
    return bilinear_resize(x, out_h, out_w);
}

/// Modulation with skip connection: out = R*S + R, S broadcast over channels.
inline Tensor modulate(const Tensor& r, const Tensor& s)
{
    detail::require_rank(r, 4, "modulate");
    detail::require_rank(s, 4, "modulate");
    detail::require_dim("modulate", "saliency batch", s.dim(0), r.dim(0));
    detail::require_dim("modulate", "saliency channels", s.dim(1), 1);
    detail::require_dim("modulate", "saliency height", s.dim(2), r.dim(2));
    detail::require_dim("modulate", "saliency width", s.dim(3), r.dim(3));
    const std::size_t n = r.dim(0), c = r.dim(1), hw = r.dim(2) * r.dim(3);
    Tensor out(r.shape());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t ri = (b * c + ch) * hw + i;
                out[ri] = r[ri] * s[b * hw + i] + r[ri];
            }
    return out;
}

struct ModulateGrads {
    Tensor rgb;
    Tensor saliency;
};

/// d/dR = S + 1, d/dS = sum over channels of R * grad.
inline ModulateGrads modulate_backward(const Tensor& r, const Tensor& s, const Tensor& grad_out,
                                       bool need_rgb, bool need_saliency)
{
    const std::size_t n = r.dim(0), c = r.dim(1), hw = r.dim(2) * r.dim(3);
    ModulateGrads g;
    if (need_rgb) g.rgb = Tensor::zeros(r.shape());
    if (need_saliency) g.saliency = Tensor::zeros(s.shape());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t ri = (b * c + ch) * hw + i;
                if (need_rgb) g.rgb[ri] = grad_out[ri] * (s[b * hw + i] + 1.0);
                if (need_saliency) g.saliency[b * hw + i] += grad_out[ri] * r[ri];
            }
    return g;
}

/// [N,C,H,W] -> [N,C]
inline Tensor global_avg_pool(const Tensor& x)
{
    detail::require_rank(x, 4, "global_avg_pool");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out(Shape{n, c});
    for (std::size_t p = 0; p < n * c; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += x[p * hw + i];
        out[p] = acc / static_cast<double>(hw);
    }
    return out;
}

inline Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out)
{
    Tensor g(input_shape);
    const std::size_t hw = input_shape[2] * input_shape[3];
    for (std::size_t p = 0; p < grad_out.numel(); ++p) {
        const double v = grad_out[p] / static_cast<double>(hw);
        for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] = v;
    }
    return g;
}

/// Row-wise softmax of [N,K] with max subtraction.
inline Tensor softmax(const Tensor& logits)
{
    detail::require_rank(logits, 2, "softmax");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    Tensor p(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data().data() + i * k;
        const double m = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
        for (std::size_t j = 0; j < k; ++j) p[i * k + j] = std::exp(row[j] - m) / z;
    }
    return p;
}

struct CrossEntropy {
    double loss;
    Tensor probs;
};

/// Mean over the batch of -log softmax(logits)[label].
inline CrossEntropy softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels)
{
    detail::require_rank(logits, 2, "softmax_cross_entropy");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    detail::require_dim("softmax_cross_entropy", "label count", labels.size(), n);
    CrossEntropy ce{0.0, Tensor(logits.shape())};
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                                    " at row " + std::to_string(i) + " outside [0," +
                                    std::to_string(k) + ")");
        const double* row = logits.data().data() + i * k;
        const double m = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
        const double log_z = std::log(z) + m;
        for (std::size_t j = 0; j < k; ++j) ce.probs[i * k + j] = std::exp(row[j] - log_z);
        ce.loss += log_z - row[labels[i]];
    }
    ce.loss /= static_cast<double>(n);
    return ce;
}

inline Tensor softmax_cross_entropy_backward(const Tensor& probs, const std::vector<int>& labels,
                                             double grad_loss)
{
    const std::size_t n = probs.dim(0), k = probs.dim(1);
    Tensor g = probs;
    for (std::size_t i = 0; i < n; ++i) g[i * k + static_cast<std::size_t>(labels[i])] -= 1.0;
    const double scale = grad_loss / static_cast<double>(n);
    for (double& v : g.data()) v *= scale;
    return g;
}

} // namespace salfx::ops
