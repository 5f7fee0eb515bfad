#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "diffbatt/rng.hpp"

using diffbatt::Rng;

TEST(Rng, EngineMatchesStandardSequence) {
    // 10000th output of a default-seeded mt19937_64, fixed by the standard.
    Rng rng(5489);
    std::uint64_t v = 0;
    for (int i = 0; i < 10000; ++i) v = rng.next_u64();
    EXPECT_EQ(v, 9981545732273789042ULL);
}

TEST(Rng, UniformRangeAndMoments) {
    Rng rng(1);
    double sum = 0, sq = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
        sq += u * u;
    }
    EXPECT_NEAR(sum / n, 0.5, 0.005);
    EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12, 0.002);
}

TEST(Rng, BelowIsUniform) {
    Rng rng(2);
    std::vector<int> hits(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) ++hits[rng.below(7)];
    double chi2 = 0;
    for (int h : hits) chi2 += (h - n / 7.0) * (h - n / 7.0) / (n / 7.0);
    EXPECT_LT(chi2, 22.5);  // 6 degrees of freedom, p about 0.001
    EXPECT_EQ(rng.below(1), 0u);
}

TEST(Rng, NormalMoments) {
    Rng rng(3);
    double s1 = 0, s2 = 0, s4 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        s1 += z;
        s2 += z * z;
        s4 += z * z * z * z;
    }
    EXPECT_NEAR(s1 / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.01);
    EXPECT_NEAR(s4 / n, 3.0, 0.06);
}

TEST(Rng, SplitIsPureAndDistinct) {
    Rng parent(9);
    const Rng a = parent.split("noise");
    const Rng b = parent.split("noise");
    EXPECT_EQ(a.seed(), b.seed());
    EXPECT_NE(parent.split("noise").seed(), parent.split("dropout").seed());
    EXPECT_NE(parent.split(0).seed(), parent.split(1).seed());
    EXPECT_NE(Rng(9).split("x").seed(), Rng(10).split("x").seed());
    Rng fresh(9);
    EXPECT_EQ(parent.next_u64(), fresh.next_u64());  // splitting did not advance the parent
}
