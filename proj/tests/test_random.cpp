#include <cal/random.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <vector>

TEST(Random, DerivedSeedsDependOnEveryTag) {
    const auto a = cal::derive_seed(7, {1, 2});
    EXPECT_EQ(a, cal::derive_seed(7, {1, 2}));
    EXPECT_NE(a, cal::derive_seed(7, {2, 1}));
    EXPECT_NE(a, cal::derive_seed(8, {1, 2}));
    EXPECT_NE(a, cal::derive_seed(7, {1, 2, 0}));
}

TEST(Random, Uniform01StaysInHalfOpenUnitInterval) {
    cal::Rng rng(3);
    for (int i = 0; i < 100000; ++i) {
        double u = cal::uniform01(rng);
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Random, UniformIndexIsRoughlyFlat) {
    cal::Rng rng(11);
    std::vector<int> hist(7, 0);
    const int draws = 70000;
    for (int i = 0; i < draws; ++i) ++hist[cal::uniform_index(rng, 7)];
    for (int h : hist) EXPECT_NEAR(h, draws / 7, 400);
}

TEST(Random, ShuffleIsAPermutationAndSeeded) {
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    auto a = v, b = v;
    cal::Rng r1(5), r2(5);
    cal::shuffle(std::span<int>(a), r1);
    cal::shuffle(std::span<int>(b), r2);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, v);
    std::sort(a.begin(), a.end());
    EXPECT_EQ(a, v);
}

TEST(Random, StandardNormalMoments) {
    cal::Rng rng(19);
    const int n = 200000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        double z = cal::standard_normal(rng);
        sum += z;
        sq += z * z;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sq / n, 1.0, 0.02);
}
