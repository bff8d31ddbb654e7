#include "safr/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

using namespace safr;

TEST(Rng, SplitmixReferenceValues) {
    std::uint64_t state = 1234567;
    EXPECT_EQ(splitmix64(state), 6457827717110365317ULL);
    EXPECT_EQ(splitmix64(state), 3203168211198807973ULL);
}

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a();
        EXPECT_EQ(x, b());
        differs = differs || x != c();
    }
    EXPECT_TRUE(differs);
}

TEST(Rng, DerivedStreamsAreDistinct) {
    std::set<std::uint64_t> seen;
    for (const char* name : {"init", "shuffle", "mask", "deletion", "layout"}) {
        for (std::uint64_t i = 0; i < 50; ++i) seen.insert(derive_seed(7, name, i));
    }
    EXPECT_EQ(seen.size(), 250u);
    EXPECT_EQ(derive_seed(7, "mask"), derive_seed(7, "mask", 0));
    EXPECT_NE(derive_seed(7, "mask"), derive_seed(8, "mask"));
}

TEST(Rng, UniformMomentsAndRange) {
    Rng rng(1);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        const double o = rng.uniform_open();
        ASSERT_GT(o, 0.0);
        ASSERT_LT(o, 1.0);
        sum += u;
        sq += u * u;
    }
    EXPECT_NEAR(sum / n, 0.5, 0.005);
    EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12.0, 0.002);
}

TEST(Rng, NormalMoments) {
    Rng rng(2);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, BelowIsUniformAndBounded) {
    Rng rng(3);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) ++counts[static_cast<std::size_t>(rng.below(7))];
    for (int c : counts) EXPECT_NEAR(c, 10000, 400);
    EXPECT_THROW((void)rng.below(0), InvalidInput);
    EXPECT_EQ(rng.below(1), 0u);
}

TEST(Rng, ShuffleIsAPermutation) {
    Rng rng(4);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
    auto w = v;
    shuffle(w.begin(), w.end(), rng);
    EXPECT_NE(v, w);
    std::sort(w.begin(), w.end());
    EXPECT_EQ(v, w);
}
