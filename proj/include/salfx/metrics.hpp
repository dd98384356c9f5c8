#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "salfx/maps.hpp"
#include "salfx/rng.hpp"

namespace salfx::metrics {

/// A metric value plus a flag raised when the inputs were degenerate (a
/// constant map) and the value is a convention rather than a measurement.
struct Score {
    double value = 0.0;
    bool degenerate = false;
};

inline constexpr std::array<std::string_view, 7> kNames = {"auc_judd", "auc_borji", "sauc", "nss",
                                                            "cc",       "kl",        "sim"};

enum Metric : std::size_t { kAucJudd, kAucBorji, kSauc, kNss, kCc, kKl, kSim };

inline constexpr double kKlEpsilon = 1e-12;

namespace detail {

inline void require_fixations(const SaliencyMap& sal, const FixationSet& fix, const char* what)
{
    if (fix.empty()) throw std::invalid_argument(std::string(what) + ": empty fixation set");
    if (sal.width() != fix.width || sal.height() != fix.height)
        throw std::invalid_argument(std::string(what) + ": saliency map is " +
                                    std::to_string(sal.width()) + "x" + std::to_string(sal.height()) +
                                    " but fixations refer to " + std::to_string(fix.width) + "x" +
                                    std::to_string(fix.height));
    fix.validate();
}

inline bool is_constant(std::span<const double> v)
{
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

// Normalize to unit mass; an all-zero map becomes uniform and is flagged.
inline std::vector<double> to_distribution(std::span<const double> v, bool& degenerate)
{
    double s = 0.0;
    for (double x : v) s += x;
    std::vector<double> out(v.begin(), v.end());
    if (s > 0.0) {
        for (double& x : out) x /= s;
    } else {
        degenerate = true;
        std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
    }
    return out;
}

inline SaliencyMap on_grid(const SaliencyMap& sal, const DensityMap& gt)
{
    return resize_bilinear(sal, gt.width(), gt.height());
}

} // namespace detail

/// Mann-Whitney AUC of positives vs negatives; ties count one half.
inline double auc_pairs(std::vector<double> pos, std::vector<double> neg)
{
    if (pos.empty() || neg.empty()) throw std::invalid_argument("auc_pairs: empty sample");
    std::sort(neg.begin(), neg.end());
    std::uint64_t twice = 0;
    for (double p : pos) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
        const auto hi = std::upper_bound(lo, neg.end(), p);
        twice += 2 * static_cast<std::uint64_t>(lo - neg.begin()) + static_cast<std::uint64_t>(hi - lo);
    }
    return static_cast<double>(twice) /
           (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

/// ROC area with every distinct saliency value as a threshold; positives are
/// fixated pixels, negatives are all other pixels. The curve starts at (0,0),
/// ends at (1,1) and is integrated with the trapezoid rule.
inline Score auc_judd(const SaliencyMap& sal, const FixationSet& fix)
{
    detail::require_fixations(sal, fix, "auc_judd");
    const auto fixated = fix.unique_pixels();
    const std::size_t n_pos = fixated.size();
    const std::size_t n_neg = sal.size() - n_pos;
    Score score{0.5, detail::is_constant(sal.values())};
    if (n_neg == 0) {
        score.degenerate = true;
        return score;
    }

    // (value, is_positive) sorted by descending value.
    std::vector<std::pair<double, bool>> items(sal.size());
    std::vector<bool> is_pos(sal.size(), false);
    for (std::size_t i : fixated) is_pos[i] = true;
    for (std::size_t i = 0; i < sal.size(); ++i) items[i] = {sal[i], is_pos[i]};
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    double area = 0.0, tpr_prev = 0.0, fpr_prev = 0.0;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < items.size();) {
        const double t = items[i].first;
        for (; i < items.size() && items[i].first == t; ++i) (items[i].second ? tp : fp) += 1;
        const double tpr = static_cast<double>(tp) / static_cast<double>(n_pos);
        const double fpr = static_cast<double>(fp) / static_cast<double>(n_neg);
        area += (fpr - fpr_prev) * (tpr + tpr_prev) / 2.0;
        tpr_prev = tpr;
        fpr_prev = fpr;
    }
    score.value = area;
    return score;
}

inline std::vector<double> values_at(const SaliencyMap& sal, const std::vector<std::size_t>& idx)
{
    std::vector<double> v;
    v.reserve(idx.size());
    for (std::size_t i : idx) v.push_back(sal[i]);
    return v;
}

/// AUC against uniformly sampled image pixels, averaged over n_splits draws
/// of |fixated pixels| negatives each.
inline Score auc_borji(const SaliencyMap& sal, const FixationSet& fix, std::size_t n_splits,
                       std::uint64_t seed)
{
    detail::require_fixations(sal, fix, "auc_borji");
    if (n_splits == 0) throw std::invalid_argument("auc_borji: n_splits must be positive");
    const auto fixated = fix.unique_pixels();
    const auto pos = values_at(sal, fixated);
    Rng rng(seed);
    double total = 0.0;
    std::vector<double> neg(pos.size());
    for (std::size_t s = 0; s < n_splits; ++s) {
        for (double& v : neg) v = sal[static_cast<std::size_t>(rng.index(sal.size()))];
        total += auc_pairs(pos, neg);
    }
    return {total / static_cast<double>(n_splits), detail::is_constant(sal.values())};
}

/// Shuffled AUC: negatives are drawn from fixation locations of other images,
/// which cancels a pure center-bias advantage.
inline Score sauc(const SaliencyMap& sal, const FixationSet& fix, const std::vector<Point>& other_fix,
                  std::size_t n_splits, std::uint64_t seed)
{
    detail::require_fixations(sal, fix, "sauc");
    if (n_splits == 0) throw std::invalid_argument("sauc: n_splits must be positive");
    std::vector<std::size_t> pool;
    pool.reserve(other_fix.size());
    for (const Point& p : other_fix)
        if (fix.contains(p))
            pool.push_back(static_cast<std::size_t>(p.y) * sal.width() + static_cast<std::size_t>(p.x));
    if (pool.empty()) throw std::invalid_argument("sauc: no other-image fixations inside the image");

    const auto pos = values_at(sal, fix.unique_pixels());
    Rng rng(seed);
    double total = 0.0;
    std::vector<double> neg(pos.size());
    for (std::size_t s = 0; s < n_splits; ++s) {
        for (double& v : neg) v = sal[pool[static_cast<std::size_t>(rng.index(pool.size()))]];
        total += auc_pairs(pos, neg);
    }
    return {total / static_cast<double>(n_splits), detail::is_constant(sal.values())};
}

/// Mean z-scored saliency (population standard deviation) at fixated pixels.
inline Score nss(const SaliencyMap& sal, const FixationSet& fix)
{
    detail::require_fixations(sal, fix, "nss");
    // Rounding can leave a tiny positive variance on a constant map.
    if (detail::is_constant(sal.values())) return {0.0, true};
    const double n = static_cast<double>(sal.size());
    double mean = 0.0;
    for (double v : sal.values()) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : sal.values()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    if (!(sd > 0.0)) return {0.0, true};
    const auto fixated = fix.unique_pixels();
    double acc = 0.0;
    for (std::size_t i : fixated) acc += (sal[i] - mean) / sd;
    return {acc / static_cast<double>(fixated.size()), false};
}

/// Pearson correlation of the flattened maps (saliency resized to the
/// ground-truth grid).
inline Score cc(const SaliencyMap& sal_in, const DensityMap& gt)
{
    const SaliencyMap sal = detail::on_grid(sal_in, gt);
    const auto a = sal.values();
    const auto b = gt.map().values();
    if (detail::is_constant(a) || detail::is_constant(b)) return {0.0, true};
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) return {0.0, true};
    return {sab / std::sqrt(saa * sbb), false};
}

/// KL(gt || sal) after normalizing both to unit mass:
/// sum gt * ln(eps + gt / (sal + eps)).
inline Score kl_div(const DensityMap& gt, const SaliencyMap& sal_in)
{
    const SaliencyMap sal = detail::on_grid(sal_in, gt);
    Score score;
    const auto g = detail::to_distribution(gt.map().values(), score.degenerate);
    const auto s = detail::to_distribution(sal.values(), score.degenerate);
    score.degenerate = score.degenerate || detail::is_constant(sal.values());
    double kl = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (g[i] > 0.0) kl += g[i] * std::log(kKlEpsilon + g[i] / (s[i] + kKlEpsilon));
    score.value = std::max(0.0, kl);
    return score;
}

/// Histogram intersection of the two unit-mass maps.
inline Score sim(const SaliencyMap& sal_in, const DensityMap& gt)
{
    const SaliencyMap sal = detail::on_grid(sal_in, gt);
    Score score;
    const auto s = detail::to_distribution(sal.values(), score.degenerate);
    const auto g = detail::to_distribution(gt.map().values(), score.degenerate);
    score.degenerate = score.degenerate || detail::is_constant(sal.values());
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) acc += std::min(s[i], g[i]);
    score.value = acc;
    return score;
}

struct EvalOptions {
    std::size_t n_splits = 100;
};

/// All seven metrics for one image.
struct MetricRow {
    std::string image_id;
    std::array<double, 7> values{};
    std::array<bool, 7> degenerate{};

    [[nodiscard]] double operator[](Metric m) const { return values[m]; }
    [[nodiscard]] bool flagged() const
    {
        return std::any_of(degenerate.begin(), degenerate.end(), [](bool b) { return b; });
    }
};

/// Evaluate a prediction against one image's fixations and density map.
/// The prediction is resized to the fixation grid; `pool` holds fixations of
/// the other images in the dataset (for sAUC). Randomized metrics draw from
/// named sub-seeds of `seed`.
inline MetricRow evaluate_all(const SaliencyMap& sal_in, const FixationSet& fix, const DensityMap& gt,
                              const std::vector<Point>& pool, std::uint64_t seed,
                              const EvalOptions& opts = {})
{
    const SaliencyMap sal = resize_bilinear(sal_in, fix.width, fix.height);
    MetricRow row;
    auto put = [&](Metric m, Score s) {
        row.values[m] = s.value;
        row.degenerate[m] = s.degenerate;
    };
    put(kAucJudd, auc_judd(sal, fix));
    put(kAucBorji, auc_borji(sal, fix, opts.n_splits, derive_seed(seed, "auc_borji")));
    if (pool.empty())
        put(kSauc, {std::nan(""), true});
    else
        put(kSauc, sauc(sal, fix, pool, opts.n_splits, derive_seed(seed, "sauc")));
    put(kNss, nss(sal, fix));
    put(kCc, cc(sal, gt));
    put(kKl, kl_div(gt, sal));
    put(kSim, sim(sal, gt));
    return row;
}

} // namespace salfx::metrics
