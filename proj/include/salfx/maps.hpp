#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "salfx/ops.hpp"
#include "salfx/tensor.hpp"

namespace salfx {

/// Single-channel map over an image's pixel grid, stored row-major.
class SaliencyMap {
public:
    SaliencyMap() = default;
    SaliencyMap(std::size_t width, std::size_t height, double fill = 0.0)
        : width_(width), height_(height), values_(width * height, fill)
    {
    }
    SaliencyMap(std::size_t width, std::size_t height, std::vector<double> values)
        : width_(width), height_(height), values_(std::move(values))
    {
        if (values_.size() != width_ * height_)
            throw std::invalid_argument("SaliencyMap: " + std::to_string(values_.size()) +
                                        " values for a " + std::to_string(width_) + "x" +
                                        std::to_string(height_) + " grid");
    }

    [[nodiscard]] std::size_t width() const noexcept { return width_; }
    [[nodiscard]] std::size_t height() const noexcept { return height_; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t x, std::size_t y) { return values_[y * width_ + x]; }
    double operator()(std::size_t x, std::size_t y) const { return values_[y * width_ + x]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] std::span<double> values() noexcept { return values_; }

    [[nodiscard]] double min() const { return *std::min_element(values_.begin(), values_.end()); }
    [[nodiscard]] double max() const { return *std::max_element(values_.begin(), values_.end()); }
    [[nodiscard]] double sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

    [[nodiscard]] bool same_grid(const SaliencyMap& o) const noexcept
    {
        return width_ == o.width_ && height_ == o.height_;
    }

    /// As a [1,1,H,W] tensor.
    [[nodiscard]] Tensor to_tensor() const { return Tensor(Shape{1, 1, height_, width_}, values_); }

    static SaliencyMap from_tensor(const Tensor& t)
    {
        if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 1)
            throw ShapeError("SaliencyMap::from_tensor expects [1,1,H,W], got " + to_string(t.shape()));
        return SaliencyMap(t.dim(3), t.dim(2), t.vec());
    }

    friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<double> values_;
};

enum class DensityForm { distribution, peak };

/// Ground-truth fixation density. In distribution form the values sum to 1.
class DensityMap {
public:
    DensityMap() = default;

    /// Normalizes `m` to unit mass. An all-zero map becomes uniform.
    static DensityMap distribution(SaliencyMap m)
    {
        const double s = m.sum();
        if (s > 0.0) {
            for (double& v : m.values()) v /= s;
        } else {
            const double u = 1.0 / static_cast<double>(m.size());
            for (double& v : m.values()) v = u;
        }
        return DensityMap(std::move(m), DensityForm::distribution);
    }

    /// Scales `m` so its maximum is 1.
    static DensityMap peak(SaliencyMap m)
    {
        const double mx = m.empty() ? 0.0 : m.max();
        if (mx > 0.0)
            for (double& v : m.values()) v /= mx;
        return DensityMap(std::move(m), DensityForm::peak);
    }

    [[nodiscard]] const SaliencyMap& map() const noexcept { return map_; }
    [[nodiscard]] DensityForm form() const noexcept { return form_; }
    [[nodiscard]] std::size_t width() const noexcept { return map_.width(); }
    [[nodiscard]] std::size_t height() const noexcept { return map_.height(); }

private:
    DensityMap(SaliencyMap m, DensityForm f) : map_(std::move(m)), form_(f) {}

    SaliencyMap map_;
    DensityForm form_ = DensityForm::distribution;
};

struct Point {
    int x = 0;
    int y = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Fixations recorded on one image.
struct FixationSet {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<Point> points;

    [[nodiscard]] bool empty() const noexcept { return points.empty(); }
    [[nodiscard]] std::size_t size() const noexcept { return points.size(); }

    [[nodiscard]] bool contains(Point p) const noexcept
    {
        return p.x >= 0 && p.y >= 0 && static_cast<std::size_t>(p.x) < width &&
               static_cast<std::size_t>(p.y) < height;
    }

    void validate() const
    {
        for (std::size_t i = 0; i < points.size(); ++i)
            if (!contains(points[i]))
                throw std::out_of_range("fixation " + std::to_string(i) + " at (" +
                                        std::to_string(points[i].x) + "," +
                                        std::to_string(points[i].y) + ") outside " +
                                        std::to_string(width) + "x" + std::to_string(height));
    }

    /// Binary fixation map as sorted unique flat pixel indices.
    [[nodiscard]] std::vector<std::size_t> unique_pixels() const
    {
        std::vector<std::size_t> idx;
        idx.reserve(points.size());
        for (const Point& p : points)
            idx.push_back(static_cast<std::size_t>(p.y) * width + static_cast<std::size_t>(p.x));
        std::sort(idx.begin(), idx.end());
        idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
        return idx;
    }
};

inline SaliencyMap resize_bilinear(const SaliencyMap& m, std::size_t width, std::size_t height)
{
    if (m.width() == width && m.height() == height) return m;
    return SaliencyMap::from_tensor(ops::bilinear_resize(m.to_tensor(), height, width));
}

/// Normalized 1-D Gaussian taps over [-radius, radius], radius = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma)
{
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
    const auto radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        total += v;
    }
    for (double& v : k) v /= total;
    return k;
}

/// Separable Gaussian blur truncated at 3 sigma, zero outside the grid.
/// sigma <= 0 returns the input unchanged.
inline SaliencyMap gaussian_blur(const SaliencyMap& m, double sigma)
{
    if (sigma <= 0.0) return m;
    const auto k = gaussian_kernel(sigma);
    const auto r = static_cast<long>(k.size() / 2);
    const auto w = static_cast<long>(m.width()), h = static_cast<long>(m.height());
    SaliencyMap tmp(m.width(), m.height());
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long i = std::max(-r, -x); i <= std::min(r, w - 1 - x); ++i)
                acc += k[static_cast<std::size_t>(i + r)] * m(static_cast<std::size_t>(x + i), static_cast<std::size_t>(y));
            tmp(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = acc;
        }
    SaliencyMap out(m.width(), m.height());
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long i = std::max(-r, -y); i <= std::min(r, h - 1 - y); ++i)
                acc += k[static_cast<std::size_t>(i + r)] * tmp(static_cast<std::size_t>(x), static_cast<std::size_t>(y + i));
            out(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = acc;
        }
    return out;
}

} // namespace salfx
