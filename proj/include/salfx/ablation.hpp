#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "salfx/maps.hpp"
#include "salfx/metrics.hpp"
#include "salfx/priors.hpp"

namespace salfx {

/// One row of the fusion ablation: an unsupervised Gaussian prior of a given
/// shape and extent, or the supervised prior, fused in one mode.
struct AblationRow {
    bool supervised = false;
    CenterBiasShape shape = CenterBiasShape::circular;
    double dva = 0.0;
    FusionMode fusion = FusionMode::sum;

    [[nodiscard]] std::string label() const
    {
        std::string s = supervised ? std::string("SCB")
                                   : "UCB_" + std::string(to_string(shape)) + "_dva" + format_dva();
        return s + "_" + std::string(to_string(fusion));
    }

private:
    [[nodiscard]] std::string format_dva() const
    {
        std::string d = std::to_string(dva);
        d.erase(d.find_last_not_of('0') + 1);
        if (!d.empty() && d.back() == '.') d.pop_back();
        return d;
    }
};

/// {circular, ellipsoid} x {2, 5, 14} dva x {sum, mult}, then supervised x {sum, mult}.
inline std::vector<AblationRow> ablation_grid()
{
    std::vector<AblationRow> rows;
    for (CenterBiasShape shape : {CenterBiasShape::circular, CenterBiasShape::ellipsoid})
        for (double dva : {2.0, 5.0, 14.0})
            for (FusionMode mode : {FusionMode::sum, FusionMode::mult})
                rows.push_back({false, shape, dva, mode});
    for (FusionMode mode : {FusionMode::sum, FusionMode::mult}) rows.push_back({true, {}, 0.0, mode});
    return rows;
}

/// Inputs of one dataset column: predictions, fixations and ground-truth
/// densities in the same order, plus the dataset geometry.
struct AblationInput {
    std::vector<SaliencyMap> predictions;
    std::vector<FixationSet> fixations;
    std::vector<DensityMap> densities;
    double pxva = 0.0;
};

struct AblationColumn {
    double baseline = 0.0;        // mean AUC-Judd of the raw predictions
    std::vector<double> scores;   // one per ablation_grid() row
};

namespace detail {

inline double mean_auc_judd(const std::vector<SaliencyMap>& maps, const std::vector<FixationSet>& fix)
{
    double total = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i)
        total += metrics::auc_judd(resize_bilinear(maps[i], fix[i].width, fix[i].height), fix[i]).value;
    return total / static_cast<double>(maps.size());
}

} // namespace detail

/// Mean AUC-Judd of every grid row. Unsupervised priors are built at each
/// prediction's size; the supervised prior uses the opposite half of a
/// seeded split of the ground-truth densities.
inline AblationColumn run_ablation(const AblationInput& in, std::uint64_t split_seed)
{
    const std::size_t n = in.predictions.size();
    if (n == 0) throw std::invalid_argument("run_ablation: no predictions");
    if (in.fixations.size() != n || in.densities.size() != n)
        throw std::invalid_argument("run_ablation: predictions, fixations and densities differ in count");

    AblationColumn col;
    col.baseline = detail::mean_auc_judd(in.predictions, in.fixations);
    std::optional<SupervisedCenterBias> scb;
    for (const AblationRow& row : ablation_grid()) {
        std::vector<SaliencyMap> fused;
        fused.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const SaliencyMap& p = in.predictions[i];
            SaliencyMap prior;
            if (row.supervised) {
                if (!scb) scb = make_supervised_cb(in.densities, split_seed);
                prior = resize_bilinear(scb->for_image(i), p.width(), p.height());
            } else {
                CenterBiasSpec spec;
                spec.dva_factor = row.dva;
                spec.pxva = in.pxva;
                spec.shape = row.shape;
                spec.width = p.width();
                spec.height = p.height();
                prior = make_gaussian_cb(spec);
            }
            fused.push_back(fuse(p, prior, FusionSpec{row.fusion}));
        }
        col.scores.push_back(detail::mean_auc_judd(fused, in.fixations));
    }
    return col;
}

} // namespace salfx
