#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "test_util.hpp"

using namespace frcnet;
using test::random_tensor;

TEST(ProjectRegions, LinearAtFullSizeIsFlatten) {
    auto z = random_tensor(Shape{2, 5, 5, 3}, 1);
    Var<double> r = project_regions(Var<double>(z), 5, RegionProjection::linear);
    ASSERT_EQ(r.shape(), (Shape{2, 25, 3}));
    EXPECT_EQ(r.value().storage(), z.storage());
}

TEST(ProjectRegions, ConstantMapStaysConstant) {
    Tensor<double> z(Shape{1, 6, 6, 2});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = i % 2 ? -1.25 : 3.5;
    for (RegionProjection p : {RegionProjection::linear, RegionProjection::avg_pool, RegionProjection::max_pool})
        for (std::size_t g : {1u, 4u}) {
            Var<double> r = project_regions(Var<double>(z), g, p);
            for (std::size_t row = 0; row < g * g; ++row) {
                EXPECT_NEAR(r.value()[row * 2], 3.5, 1e-12) << to_string(p);
                EXPECT_NEAR(r.value()[row * 2 + 1], -1.25, 1e-12) << to_string(p);
            }
        }
    // Linear also upsamples.
    Var<double> up = project_regions(Var<double>(z), 9, RegionProjection::linear);
    EXPECT_EQ(up.shape(), (Shape{1, 81, 2}));
}

TEST(ProjectRegions, AvgPoolRampExample) {
    Tensor<double> z(Shape{1, 4, 4, 1});
    for (std::size_t i = 0; i < 16; ++i) z[i] = static_cast<double>(i);
    Var<double> r = project_regions(Var<double>(z), 2, RegionProjection::avg_pool);
    const double expect[4] = {2.5, 4.5, 10.5, 12.5};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.value()[i], expect[i], 1e-15);
}

TEST(ProjectRegions, AvgPoolMatchesBruteForceWindows) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto z = random_tensor(Shape{1, 4, 4, 3}, 100 + seed);
        Var<double> r = project_regions(Var<double>(z), 2, RegionProjection::avg_pool);
        for (std::size_t gy = 0; gy < 2; ++gy)
            for (std::size_t gx = 0; gx < 2; ++gx)
                for (std::size_t c = 0; c < 3; ++c) {
                    double s = 0;
                    for (std::size_t y = 2 * gy; y < 2 * gy + 2; ++y)
                        for (std::size_t x = 2 * gx; x < 2 * gx + 2; ++x) s += z.at(0, y, x, c);
                    EXPECT_NEAR(r.value().at(0, gy * 2 + gx, c), s / 4, 1e-12);
                }
    }
}

TEST(ProjectRegions, ConvStartsAsAveragePooling) {
    RegionConfig rc{{2, 4}, RegionProjection::conv, false};
    ParameterSet<double> ps;
    RegionLayers layers = build_region(rc, 8, 3, ps);
    auto z = random_tensor(Shape{2, 8, 8, 3}, 5);
    for (std::size_t g : rc.granularities) {
        auto conv = project_regions(Var<double>(z), g, RegionProjection::conv, &layers, &ps).value();
        auto avg = project_regions(Var<double>(z), g, RegionProjection::avg_pool).value();
        EXPECT_LT(test::max_abs_diff(conv, avg), 1e-12);
    }
    EXPECT_THROW(project_regions(Var<double>(z), 2, RegionProjection::conv), ConfigError);
}

TEST(ProjectRegions, InvalidConfigurations) {
    auto z = Var<double>(random_tensor(Shape{1, 4, 4, 1}, 6));
    EXPECT_THROW(project_regions(z, 5, RegionProjection::avg_pool), ConfigError);
    EXPECT_THROW(project_regions(z, 5, RegionProjection::max_pool), ConfigError);
    EXPECT_THROW(project_regions(z, 0, RegionProjection::linear), ConfigError);
    EXPECT_NO_THROW((RegionConfig{{8}, RegionProjection::linear, false}).validate(4));
    EXPECT_THROW((RegionConfig{{8}, RegionProjection::avg_pool, false}).validate(4), ConfigError);
    EXPECT_THROW((RegionConfig{{3}, RegionProjection::conv, false}).validate(8), ConfigError);
    EXPECT_THROW(parse_region_projection("bicubic"), ConfigError);
    EXPECT_EQ(parse_region_projection("avgpool"), RegionProjection::avg_pool);
}

TEST(RegionSimilarity, SmallExamples) {
    Tensor<double> eye(Shape{1, 2, 2}, std::vector<double>{1, 0, 0, 1});
    EXPECT_EQ(region_similarity(Var<double>(eye)).value(), eye);

    Tensor<double> dup(Shape{1, 3, 2}, std::vector<double>{1, 2, 1, 2, -3, 0.5});
    auto a = region_similarity(Var<double>(dup)).value();
    for (std::size_t i : {0u, 1u})
        for (std::size_t j : {0u, 1u}) EXPECT_DOUBLE_EQ(a.at(0, i, j), 5.0);

    auto r = random_tensor(Shape{1, 3, 2}, 7);
    auto g = region_similarity(Var<double>(r)).value();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            EXPECT_NEAR(g.at(0, i, j), r.at(0, i, 0) * r.at(0, j, 0) + r.at(0, i, 1) * r.at(0, j, 1), 1e-12);
}

TEST(RegionSimilarity, SymmetricPsdAndScaleCovariant) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto r = random_tensor(Shape{1, 9, 4}, 1000 + seed, -2, 2);
        auto a = region_similarity(Var<double>(r)).value();
        Eigen::MatrixXd m(9, 9);
        for (std::size_t i = 0; i < 9; ++i)
            for (std::size_t j = 0; j < 9; ++j) {
                m(i, j) = a.at(0, i, j);
                ASSERT_EQ(a.at(0, i, j), a.at(0, j, i));
            }
        for (std::size_t i = 0; i < 9; ++i) EXPECT_GE(m(i, i), 0.0);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);

        Tensor<double> r2 = r;
        for (auto& v : r2.storage()) v *= 1.7;
        auto a2 = region_similarity(Var<double>(r2)).value();
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a2[i], 1.7 * 1.7 * a[i], 1e-12);
    }
}

TEST(MultiGranularity, SizesAndDegenerateCases) {
    auto z = Var<double>(random_tensor(Shape{1, 32, 32, 2}, 8));
    auto m = multi_granularity_similarities(z, RegionConfig{{16, 24, 32}, RegionProjection::linear, false});
    ASSERT_EQ(m.size(), 3u);
    EXPECT_EQ(m.at(16).shape(), (Shape{1, 256, 256}));
    EXPECT_EQ(m.at(24).shape(), (Shape{1, 576, 576}));
    EXPECT_EQ(m.at(32).shape(), (Shape{1, 1024, 1024}));

    auto one = multi_granularity_similarities(z, RegionConfig{{1}, RegionProjection::avg_pool, false});
    double m0 = 0, m1 = 0;
    for (std::size_t i = 0; i < 32 * 32; ++i) {
        m0 += z.value()[2 * i];
        m1 += z.value()[2 * i + 1];
    }
    m0 /= 1024;
    m1 /= 1024;
    EXPECT_NEAR(one.at(1).value()[0], m0 * m0 + m1 * m1, 1e-12);

    EXPECT_TRUE(multi_granularity_similarities(z, RegionConfig{{}, RegionProjection::linear, false}).empty());
}

TEST(MultiGranularity, NormalizedRowsGiveUnitDiagonal) {
    auto z = Var<double>(random_tensor(Shape{1, 8, 8, 4}, 9));
    auto m = multi_granularity_similarities(z, RegionConfig{{4}, RegionProjection::linear, true});
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(m.at(4).value().at(0, i, i), 1.0, 1e-12);
}
