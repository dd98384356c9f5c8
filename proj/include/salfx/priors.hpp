#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "salfx/maps.hpp"
#include "salfx/rng.hpp"

namespace salfx {

enum class CenterBiasShape { circular, ellipsoid };

inline std::string_view to_string(CenterBiasShape s)
{
    return s == CenterBiasShape::circular ? "circular" : "ellipsoid";
}

inline CenterBiasShape parse_center_bias_shape(std::string_view s)
{
    if (s == "circular") return CenterBiasShape::circular;
    if (s == "ellipsoid") return CenterBiasShape::ellipsoid;
    throw std::invalid_argument("unknown center-bias shape '" + std::string(s) + "'");
}

/// Unsupervised center-bias prior: a centered Gaussian whose vertical sigma
/// comes from a visual-angle extent, stretched horizontally for ellipsoids.
struct CenterBiasSpec {
    double dva_factor = 2.0;
    double pxva = 35.0;
    CenterBiasShape shape = CenterBiasShape::circular;
    double horizontal_stretch = 1.5; // used only for ellipsoids
    std::size_t width = 0;
    std::size_t height = 0;

    void validate() const
    {
        if (!(dva_factor > 0.0)) throw std::invalid_argument("CenterBiasSpec: dva_factor must be positive");
        if (!(pxva > 0.0)) throw std::invalid_argument("CenterBiasSpec: pxva must be positive");
        if (!(horizontal_stretch >= 1.0))
            throw std::invalid_argument("CenterBiasSpec: horizontal_stretch must be >= 1");
        if (width == 0 || height == 0) throw std::invalid_argument("CenterBiasSpec: empty map size");
    }
};

/// FWHM-to-sigma conversion of an extent of dva_factor * pxva pixels.
inline double dva_to_sigma(double dva_factor, double pxva)
{
    if (!(dva_factor > 0.0) || !(pxva > 0.0))
        throw std::invalid_argument("dva_to_sigma: arguments must be positive");
    return dva_factor * pxva / (2.0 * std::sqrt(2.0 * std::log(2.0)));
}

/// Peak-normalized Gaussian over the full grid, centered at ((W-1)/2, (H-1)/2).
inline SaliencyMap make_gaussian_cb(const CenterBiasSpec& spec)
{
    spec.validate();
    const double sy = dva_to_sigma(spec.dva_factor, spec.pxva);
    const double sx = spec.shape == CenterBiasShape::ellipsoid ? sy * spec.horizontal_stretch : sy;
    const double cx = (static_cast<double>(spec.width) - 1.0) / 2.0;
    const double cy = (static_cast<double>(spec.height) - 1.0) / 2.0;

    // exp(a + b) is evaluated as a product of per-axis factors so that mirrored
    // pixels get bit-identical values.
    std::vector<double> fx(spec.width), fy(spec.height);
    for (std::size_t x = 0; x < spec.width; ++x) {
        const double d = static_cast<double>(x) - cx;
        fx[x] = std::exp(-(d * d) / (2.0 * sx * sx));
    }
    for (std::size_t y = 0; y < spec.height; ++y) {
        const double d = static_cast<double>(y) - cy;
        fy[y] = std::exp(-(d * d) / (2.0 * sy * sy));
    }
    SaliencyMap m(spec.width, spec.height);
    for (std::size_t y = 0; y < spec.height; ++y)
        for (std::size_t x = 0; x < spec.width; ++x) m(x, y) = fy[y] * fx[x];
    const double peak = m.max();
    for (double& v : m.values()) v /= peak;
    return m;
}

/// Supervised center bias from a random half/half split of density maps.
struct SupervisedCenterBias {
    SaliencyMap cb_a;
    SaliencyMap cb_b;
    /// in_a[i]: image i belongs to split A (and is evaluated with cb_b).
    std::vector<bool> in_a;

    [[nodiscard]] const SaliencyMap& for_image(std::size_t i) const { return in_a.at(i) ? cb_b : cb_a; }
};

inline SupervisedCenterBias make_supervised_cb(const std::vector<DensityMap>& maps,
                                               std::uint64_t split_seed)
{
    if (maps.size() < 2) throw std::invalid_argument("make_supervised_cb: need at least 2 density maps");
    const std::size_t w = maps.front().width(), h = maps.front().height();
    for (std::size_t i = 1; i < maps.size(); ++i)
        if (maps[i].width() != w || maps[i].height() != h)
            throw std::invalid_argument("make_supervised_cb: map " + std::to_string(i) +
                                        " has a different size");

    std::vector<std::size_t> order(maps.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(split_seed);
    rng.shuffle(order);

    SupervisedCenterBias out{SaliencyMap(w, h), SaliencyMap(w, h), std::vector<bool>(maps.size(), false)};
    const std::size_t half = maps.size() / 2;
    for (std::size_t k = 0; k < half; ++k) out.in_a[order[k]] = true;

    std::size_t na = 0, nb = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        SaliencyMap& dst = out.in_a[i] ? out.cb_a : out.cb_b;
        (out.in_a[i] ? na : nb) += 1;
        const auto src = maps[i].map().values();
        for (std::size_t p = 0; p < src.size(); ++p) dst[p] += src[p];
    }
    auto finish = [](SaliencyMap& m, std::size_t count) {
        for (double& v : m.values()) v /= static_cast<double>(count);
        const double peak = m.max();
        if (peak > 0.0)
            for (double& v : m.values()) v /= peak;
    };
    finish(out.cb_a, na);
    finish(out.cb_b, nb);
    return out;
}

/// Min-max normalization to [0,1]; a constant map becomes all zeros.
inline SaliencyMap normalize_minmax(SaliencyMap m)
{
    if (m.empty()) return m;
    const double lo = m.min(), hi = m.max();
    if (!(hi > lo)) {
        for (double& v : m.values()) v = 0.0;
        return m;
    }
    const double range = hi - lo;
    for (double& v : m.values()) v = (v - lo) / range;
    return m;
}

enum class FusionMode { sum, mult };

inline std::string_view to_string(FusionMode m) { return m == FusionMode::sum ? "sum" : "mult"; }

inline FusionMode parse_fusion_mode(std::string_view s)
{
    if (s == "sum") return FusionMode::sum;
    if (s == "mult") return FusionMode::mult;
    throw std::invalid_argument("unknown fusion mode '" + std::string(s) + "'");
}

/// Min-max normalization is applied to both operands and to the result.
struct FusionSpec {
    FusionMode mode = FusionMode::sum;
};

inline SaliencyMap fuse(const SaliencyMap& sal, const SaliencyMap& cb, const FusionSpec& spec)
{
    if (!sal.same_grid(cb))
        throw std::invalid_argument("fuse: saliency map is " + std::to_string(sal.width()) + "x" +
                                    std::to_string(sal.height()) + " but prior is " +
                                    std::to_string(cb.width()) + "x" + std::to_string(cb.height()));
    // A constant prior carries no spatial information and is used unnormalized;
    // min-max would otherwise collapse it to zeros.
    const SaliencyMap s = normalize_minmax(sal);
    const SaliencyMap c = cb.min() == cb.max() ? cb : normalize_minmax(cb);
    SaliencyMap out(sal.width(), sal.height());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = spec.mode == FusionMode::sum ? (s[i] + c[i]) / 2.0 : s[i] * c[i];
    return normalize_minmax(std::move(out));
}

} // namespace salfx
