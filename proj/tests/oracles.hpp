#pragma once

// Reference implementations used only by the tests. They are written as plain
// loops over the mathematical definitions and share no code with the library
// kernels they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "salfx/maps.hpp"
#include "salfx/rng.hpp"
#include "salfx/tensor.hpp"

namespace oracle {

using salfx::Shape;
using salfx::Tensor;

inline Tensor random_tensor(Shape shape, salfx::Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Direct six-nested-loop cross-correlation: sum from zero over (ci, ky, kx),
/// bias added last.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad)
{
    const int n = static_cast<int>(x.dim(0)), cin = static_cast<int>(x.dim(1));
    const int h = static_cast<int>(x.dim(2)), wd = static_cast<int>(x.dim(3));
    const int cout = static_cast<int>(w.dim(0)), kh = static_cast<int>(w.dim(2)), kw = static_cast<int>(w.dim(3));
    const int oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
    Tensor out(Shape{x.dim(0), w.dim(0), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    for (int bi = 0; bi < n; ++bi)
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                                acc += w.at(co, ci, ky, kx) * x.at(bi, ci, iy, ix);
                            }
                    out.at(bi, co, oy, ox) = acc + b[co];
                }
    return out;
}

inline Tensor maxpool2d(const Tensor& x, int k, int stride)
{
    const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
    const int oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    Tensor out(Shape{x.dim(0), x.dim(1), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    for (std::size_t n = 0; n < x.dim(0); ++n)
        for (std::size_t c = 0; c < x.dim(1); ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double m = -INFINITY;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            m = std::max(m, x.at(n, c, oy * stride + ky, ox * stride + kx));
                    out.at(n, c, oy, ox) = m;
                }
    return out;
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b)
{
    const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(0);
    Tensor out(Shape{n, k});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < d; ++t) acc += x[i * d + t] * w[j * d + t];
            out[i * k + j] = acc + b[j];
        }
    return out;
}

/// Mean cross-entropy evaluated literally as -log(exp(z_c) / sum exp(z_j)) in
/// long double.
inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels)
{
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    long double total = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        long double z = 0.0L;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<long double>(logits[i * k + j]));
        total += -std::log(std::exp(static_cast<long double>(logits[i * k + labels[i]])) / z);
    }
    return static_cast<double>(total / n);
}

/// ROC curve swept over every distinct value in the map (descending), with
/// TPR/FPR counted by scanning all pixels for each threshold. Trapezoid rule
/// from (0,0).
inline double roc_auc_exhaustive(const salfx::SaliencyMap& sal, const salfx::FixationSet& fix)
{
    std::vector<bool> pos(sal.size(), false);
    for (const auto& p : fix.points) pos[static_cast<std::size_t>(p.y) * sal.width() + p.x] = true;
    const std::size_t n_pos = static_cast<std::size_t>(std::count(pos.begin(), pos.end(), true));
    const std::size_t n_neg = sal.size() - n_pos;
    std::set<double, std::greater<>> thresholds(sal.values().begin(), sal.values().end());
    double area = 0.0, tpr0 = 0.0, fpr0 = 0.0;
    for (double t : thresholds) {
        std::size_t tp = 0, fp = 0;
        for (std::size_t i = 0; i < sal.size(); ++i)
            if (sal[i] >= t) (pos[i] ? tp : fp) += 1;
        const double tpr = static_cast<double>(tp) / static_cast<double>(n_pos);
        const double fpr = static_cast<double>(fp) / static_cast<double>(n_neg);
        area += (fpr - fpr0) * (tpr + tpr0) / 2.0;
        tpr0 = tpr;
        fpr0 = fpr;
    }
    return area;
}

/// Pairwise Mann-Whitney statistic with half credit for ties.
inline double auc_pairwise(const std::vector<double>& pos, const std::vector<double>& neg)
{
    double s = 0.0;
    for (double p : pos)
        for (double q : neg) s += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
    return s / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

inline std::vector<double> fixated_values(const salfx::SaliencyMap& sal, const salfx::FixationSet& fix)
{
    std::set<std::size_t> idx;
    for (const auto& p : fix.points) idx.insert(static_cast<std::size_t>(p.y) * sal.width() + p.x);
    std::vector<double> v;
    for (std::size_t i : idx) v.push_back(sal[i]);
    return v;
}

inline double mean(std::span<const double> v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double pearson(std::span<const double> a, std::span<const double> b)
{
    const double ma = mean(a), mb = mean(b);
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    return num / std::sqrt(da * db);
}

inline std::vector<double> unit_mass(std::span<const double> v)
{
    double s = 0.0;
    for (double x : v) s += x;
    std::vector<double> out(v.begin(), v.end());
    for (double& x : out) x /= s;
    return out;
}

inline double kl(std::span<const double> gt, std::span<const double> sal)
{
    const auto g = unit_mass(gt), s = unit_mass(sal);
    double k = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (g[i] > 0.0) k += g[i] * std::log(1e-12 + g[i] / (s[i] + 1e-12));
    return k;
}

inline double sim(std::span<const double> a, std::span<const double> b)
{
    const auto p = unit_mass(a), q = unit_mass(b);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::min(p[i], q[i]);
    return s;
}

inline double nss(const salfx::SaliencyMap& sal, const salfx::FixationSet& fix)
{
    const double m = mean(sal.values());
    double var = 0.0;
    for (double v : sal.values()) var += (v - m) * (v - m);
    const double sd = std::sqrt(var / static_cast<double>(sal.size()));
    const auto vals = fixated_values(sal, fix);
    double z = 0.0;
    for (double v : vals) z += (v - m) / sd;
    return z / static_cast<double>(vals.size());
}

/// Second central moments (var_x, var_y) of a nonnegative map treated as an
/// unnormalized density.
inline std::pair<double, double> second_moments(const salfx::SaliencyMap& m)
{
    double total = 0.0, mx = 0.0, my = 0.0;
    for (std::size_t y = 0; y < m.height(); ++y)
        for (std::size_t x = 0; x < m.width(); ++x) {
            total += m(x, y);
            mx += m(x, y) * static_cast<double>(x);
            my += m(x, y) * static_cast<double>(y);
        }
    mx /= total;
    my /= total;
    double vx = 0.0, vy = 0.0;
    for (std::size_t y = 0; y < m.height(); ++y)
        for (std::size_t x = 0; x < m.width(); ++x) {
            vx += m(x, y) * (static_cast<double>(x) - mx) * (static_cast<double>(x) - mx);
            vy += m(x, y) * (static_cast<double>(y) - my) * (static_cast<double>(y) - my);
        }
    return {vx / total, vy / total};
}

inline salfx::SaliencyMap random_map(std::size_t w, std::size_t h, salfx::Rng& rng)
{
    salfx::SaliencyMap m(w, h);
    for (double& v : m.values()) v = rng.uniform();
    return m;
}

inline salfx::FixationSet random_fixations(std::size_t w, std::size_t h, std::size_t n, salfx::Rng& rng)
{
    salfx::FixationSet f{w, h, {}};
    for (std::size_t i = 0; i < n; ++i)
        f.points.push_back({static_cast<int>(rng.index(w)), static_cast<int>(rng.index(h))});
    return f;
}

/// max |a-b| / max(|a|,|b|) with a tiny absolute floor for exact zeros.
inline double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-10)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

/// Central differences, evaluated one coordinate at a time.
inline Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-6)
{
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        Tensor a = x, b = x;
        a[i] += h;
        b[i] -= h;
        g[i] = (f(a) - f(b)) / (2.0 * h);
    }
    return g;
}

/// Norm-wise relative error max|a-b| / max(max|a|, max|b|).
inline double grad_rel_error(const Tensor& a, const Tensor& b)
{
    double diff = 0.0, scale = 1e-300;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return diff / scale;
}

/// Bilinear resampling written from the half-pixel-center definition: output
/// pixel o samples input coordinate (o + 0.5) * in / out - 0.5, clamped.
inline Tensor bilinear(const Tensor& x, std::size_t oh, std::size_t ow)
{
    auto coord = [](std::size_t o, std::size_t in, std::size_t out) {
        const double c = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
        return std::clamp(c, 0.0, static_cast<double>(in - 1));
    };
    const std::size_t h = x.dim(2), w = x.dim(3);
    Tensor out(Shape{x.dim(0), x.dim(1), oh, ow});
    for (std::size_t n = 0; n < x.dim(0); ++n)
        for (std::size_t c = 0; c < x.dim(1); ++c)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double sy = coord(oy, h, oh), sx = coord(ox, w, ow);
                    const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
                    const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
                    const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
                    out.at(n, c, oy, ox) = (1 - fy) * ((1 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1)) +
                                           fy * ((1 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
                }
    return out;
}

} // namespace oracle
