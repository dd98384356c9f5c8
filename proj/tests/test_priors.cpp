#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "salfx/ablation.hpp"
#include "salfx/data.hpp"
#include "salfx/priors.hpp"

using namespace salfx;

TEST(DvaToSigma, FullWidthAtHalfMaximum)
{
    // FWHM = 2 sqrt(2 ln 2) sigma.
    EXPECT_NEAR(dva_to_sigma(1.0, 2.0 * std::sqrt(2.0 * std::log(2.0))), 1.0, 1e-15);
    EXPECT_NEAR(dva_to_sigma(14.0, 35.0) / dva_to_sigma(7.0, 35.0), 2.0, 1e-15);
    EXPECT_THROW((void)dva_to_sigma(0.0, 35.0), std::invalid_argument);
    EXPECT_THROW((void)dva_to_sigma(2.0, -1.0), std::invalid_argument);
}

TEST(GaussianCb, MomentsRecoverSigma)
{
    for (double dva : {2.0, 5.0}) {
        CenterBiasSpec spec;
        spec.dva_factor = dva;
        spec.pxva = 4.0;
        spec.width = spec.height = 201;
        const double sigma = dva_to_sigma(dva, spec.pxva);
        const auto [vx, vy] = oracle::second_moments(make_gaussian_cb(spec));
        EXPECT_NEAR(std::sqrt(vx) / sigma, 1.0, 0.01);
        EXPECT_NEAR(std::sqrt(vy) / sigma, 1.0, 0.01);

        spec.shape = CenterBiasShape::ellipsoid;
        const auto [ex, ey] = oracle::second_moments(make_gaussian_cb(spec));
        EXPECT_NEAR(std::sqrt(ex / ey), 1.5, 0.03);
    }
}

TEST(GaussianCb, PeakNormalizedAndMirrorSymmetric)
{
    CenterBiasSpec spec;
    spec.dva_factor = 5.0;
    spec.pxva = 2.0;
    spec.width = 17;
    spec.height = 12;
    const SaliencyMap m = make_gaussian_cb(spec);
    EXPECT_EQ(m.max(), 1.0);
    for (std::size_t y = 0; y < m.height(); ++y)
        for (std::size_t x = 0; x < m.width(); ++x) {
            EXPECT_EQ(m(x, y), m(m.width() - 1 - x, y));
            EXPECT_EQ(m(x, y), m(x, m.height() - 1 - y));
        }
    spec.width = 0;
    EXPECT_THROW((void)make_gaussian_cb(spec), std::invalid_argument);
}

TEST(SupervisedCb, AveragesOppositeHalf)
{
    std::vector<DensityMap> maps;
    for (int i = 0; i < 6; ++i) {
        SaliencyMap m(4, 4, 0.0);
        m(static_cast<std::size_t>(i % 4), static_cast<std::size_t>(i / 4)) = 1.0;
        maps.push_back(DensityMap::distribution(m));
    }
    const auto scb = make_supervised_cb(maps, 99);
    std::size_t in_a = 0;
    for (bool b : scb.in_a) in_a += b ? 1 : 0;
    EXPECT_EQ(in_a, 3u);
    for (std::size_t i = 0; i < maps.size(); ++i) {
        // Image i never contributes to the map it is evaluated with.
        const SaliencyMap& cb = scb.for_image(i);
        EXPECT_EQ(cb(static_cast<std::size_t>(i % 4), static_cast<std::size_t>(i / 4)), 0.0);
        EXPECT_EQ(cb.max(), 1.0);
    }
    EXPECT_THROW((void)make_supervised_cb({maps[0]}, 1), std::invalid_argument);
    EXPECT_THROW((void)make_supervised_cb({maps[0], DensityMap::distribution(SaliencyMap(3, 3, 1.0))}, 1),
                 std::invalid_argument);
}

TEST(Fuse, SumAndProductOfNormalizedMaps)
{
    const SaliencyMap s(3, 1, std::vector<double>{0.0, 5.0, 10.0});
    const SaliencyMap c(3, 1, std::vector<double>{2.0, 1.0, 0.0});
    // Normalized: s = {0, .5, 1}, c = {1, .5, 0}.
    const SaliencyMap sum = fuse(s, c, {FusionMode::sum});
    for (double v : sum.values()) EXPECT_EQ(v, 0.0); // constant (.5) after min-max
    const SaliencyMap prod = fuse(s, c, {FusionMode::mult});
    EXPECT_EQ(prod[0], 0.0);
    EXPECT_EQ(prod[1], 1.0);
    EXPECT_EQ(prod[2], 0.0);
    EXPECT_THROW((void)fuse(s, SaliencyMap(2, 2), {}), std::invalid_argument);
}

TEST(Fuse, ConstantPriorLeavesRankingUnchanged)
{
    Rng rng(3);
    const SaliencyMap s = oracle::random_map(6, 5, rng);
    for (FusionMode mode : {FusionMode::sum, FusionMode::mult}) {
        const SaliencyMap f = fuse(s, SaliencyMap(6, 5, 0.7), {mode});
        const SaliencyMap n = normalize_minmax(s);
        for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f[i], n[i], 1e-15);
    }
}

TEST(Fuse, OutputIsUnitRange)
{
    Rng rng(4);
    for (int k = 0; k < 20; ++k) {
        const SaliencyMap f = fuse(oracle::random_map(7, 7, rng), oracle::random_map(7, 7, rng),
                                   {k % 2 ? FusionMode::sum : FusionMode::mult});
        EXPECT_EQ(f.min(), 0.0);
        EXPECT_EQ(f.max(), 1.0);
    }
}

TEST(Parse, NamesRoundTrip)
{
    EXPECT_EQ(parse_center_bias_shape("ellipsoid"), CenterBiasShape::ellipsoid);
    EXPECT_EQ(parse_fusion_mode(to_string(FusionMode::mult)), FusionMode::mult);
    EXPECT_THROW((void)parse_fusion_mode("max"), std::invalid_argument);
    EXPECT_THROW((void)parse_center_bias_shape("square"), std::invalid_argument);
}

TEST(Ablation, GridHasFourteenLabelledRows)
{
    const auto grid = ablation_grid();
    ASSERT_EQ(grid.size(), 14u);
    EXPECT_EQ(grid.front().label(), "UCB_circular_dva2_sum");
    EXPECT_EQ(grid[11].label(), "UCB_ellipsoid_dva14_mult");
    EXPECT_EQ(grid.back().label(), "SCB_mult");
}

TEST(Ablation, CenteredFixationsFavourWidePriorsOnFlatPredictions)
{
    // Uninformative predictions and fixations spread wider than the
    // narrowest prior: wider sum-fused priors score higher.
    Rng rng(5);
    AblationInput in;
    in.pxva = 2.0;
    for (int i = 0; i < 10; ++i) {
        in.predictions.push_back(oracle::random_map(32, 32, rng));
        FixationSet f{32, 32, {}};
        for (int k = 0; k < 20; ++k)
            f.points.push_back({std::clamp(static_cast<int>(std::floor(rng.normal(16.0, 6.0))), 0, 31),
                                std::clamp(static_cast<int>(std::floor(rng.normal(16.0, 6.0))), 0, 31)});
        in.fixations.push_back(f);
        in.densities.push_back(data::fixations_to_density(f, in.pxva, 3.0));
    }
    const AblationColumn col = run_ablation(in, 7);
    ASSERT_EQ(col.scores.size(), 14u);
    EXPECT_NEAR(col.baseline, 0.5, 0.1);
    // Rows 0, 2, 4: circular sum at 2, 5, 14 dva.
    EXPECT_LT(col.scores[0], col.scores[2]);
    EXPECT_LT(col.scores[2], col.scores[4]);
    EXPECT_GT(col.scores[4], col.baseline + 0.1);
    EXPECT_GT(col.scores[12], col.baseline + 0.1); // supervised, sum
    EXPECT_THROW((void)run_ablation(AblationInput{}, 1), std::invalid_argument);
}
