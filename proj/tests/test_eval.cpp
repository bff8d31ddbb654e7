#include "safr/eval.hpp"

#include "support/helpers.hpp"
#include "support/oracles.hpp"
#include "support/toy_corpus.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

using namespace safr;

namespace {

TokenizedExample sequence(std::size_t t, int label = 0) {
    TokenizedExample ex;
    ex.label = label;
    for (std::size_t i = 0; i < t; ++i) {
        ex.token_ids.push_back(static_cast<std::uint32_t>(2 + i));
        ex.tokens.push_back("w" + std::to_string(i));
    }
    return ex;
}

/// A model whose classifier ignores its input and always predicts `label`.
Model<float> constant_model(const Dataset& ds, int label) {
    const auto mc = safr::testing::toy_model_config(ds);
    auto params = init_parameters<float>(mc);
    params.cls_w.setZero();
    params.cls_b.setZero();
    params.cls_b(0, label) = 5.0F;
    return Model<float>(mc, params);
}

DatasetSplit balanced_split(std::size_t per_class) {
    DatasetSplit s;
    s.name = "test";
    for (std::size_t i = 0; i < per_class; ++i) {
        s.examples.push_back(sequence(3 + i % 4, 0));
        s.examples.push_back(sequence(3 + i % 4, 1));
    }
    return s;
}

} // namespace

TEST(Accuracy, ConstantPredictorOnBalancedSplit) {
    const auto ds = safr::testing::toy_dataset();
    EXPECT_DOUBLE_EQ(accuracy(constant_model(ds, 0), balanced_split(10)), 0.5);
    EXPECT_DOUBLE_EQ(accuracy(constant_model(ds, 1), balanced_split(7)), 0.5);
    EXPECT_THROW((void)accuracy(constant_model(ds, 0), DatasetSplit{}), InvalidInput);
}

TEST(Ranking, DescendingWithStableTies) {
    VectorD s(5);
    s << 0.2, 0.9, 0.2, 0.5, 0.9;
    EXPECT_EQ(rank_by_scores(s), (std::vector<std::size_t>{1, 4, 3, 0, 2}));
}

TEST(Ranking, MatchesBruteForceOverTraces) {
    const auto ds = safr::testing::toy_dataset();
    const auto model = Model<float>::initialized(safr::testing::toy_model_config(ds));
    for (std::size_t n = 0; n < 100; ++n) {
        const auto& ex = ds.test.examples[n % ds.test.size()];
        const auto tag = static_cast<LayerTag>(n % 5);
        const auto tr = model.forward(ex);
        const auto ranking = rank_tokens_by_capacity(tr, tag);
        const MatrixD h = tr.layer(tag).cast<double>().topRows(static_cast<Eigen::Index>(ex.length()));
        std::vector<std::vector<double>> rows(static_cast<std::size_t>(h.rows()));
        for (Eigen::Index i = 0; i < h.rows(); ++i) rows[static_cast<std::size_t>(i)].assign(h.row(i).begin(), h.row(i).end());
        const auto cap = safr::oracle::capacity(rows);
        ASSERT_EQ(ranking.size(), ex.length());
        std::vector<std::size_t> expect(ex.length());
        std::iota(expect.begin(), expect.end(), std::size_t{0});
        std::sort(expect.begin(), expect.end(), [&](std::size_t a, std::size_t b) { return cap[a] > cap[b] || (cap[a] == cap[b] && a < b); });
        for (std::size_t r = 0; r < ranking.size(); ++r) {
            // Oracle and library capacities agree to rounding; compare the ranked values.
            EXPECT_NEAR(cap[ranking[r]], cap[expect[r]], 1e-9);
        }
    }
}

TEST(Deletion, CountRule) {
    EXPECT_EQ(deletion_count(10, 0), 0u);
    EXPECT_EQ(deletion_count(10, 30), 3u);
    EXPECT_EQ(deletion_count(3, 10), 1u);
    EXPECT_EQ(deletion_count(1, 50), 0u);
    EXPECT_EQ(deletion_count(4, 100), 3u);
    EXPECT_EQ(deletion_count(7, 29), 2u);
    EXPECT_THROW((void)deletion_count(5, -1), InvalidInput);
    EXPECT_THROW((void)deletion_count(5, 101), InvalidInput);
    EXPECT_THROW((void)deletion_count(0, 10), InvalidInput);
}

TEST(Deletion, PreservesOrderAndNeverEmpties) {
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const auto t = 1 + static_cast<std::size_t>(rng.below(40));
        const double k = static_cast<double>(rng.below(101));
        const auto ex = sequence(t);
        std::vector<std::size_t> ranking(t);
        std::iota(ranking.begin(), ranking.end(), std::size_t{0});
        for (std::size_t i = t; i > 1; --i) std::swap(ranking[i - 1], ranking[static_cast<std::size_t>(rng.below(i))]);
        const auto m = deletion_count(t, k);
        for (const auto& out : {delete_topk(ex, ranking, k), delete_random(ex, k, trial)}) {
            ASSERT_EQ(out.length(), t - m);
            ASSERT_GE(out.length(), 1u);
            ASSERT_TRUE(std::is_sorted(out.token_ids.begin(), out.token_ids.end()));
            for (std::size_t i = 0; i < out.length(); ++i) EXPECT_EQ(out.tokens[i], "w" + std::to_string(out.token_ids[i] - 2));
        }
        const auto top = delete_topk(ex, ranking, k);
        const std::set<std::uint32_t> kept(top.token_ids.begin(), top.token_ids.end());
        for (std::size_t r = 0; r < m; ++r) EXPECT_FALSE(kept.count(static_cast<std::uint32_t>(2 + ranking[r])));
    }
}

TEST(Deletion, RandomIsSeeded) {
    const auto ex = sequence(20);
    EXPECT_EQ(delete_random(ex, 40, 3).token_ids, delete_random(ex, 40, 3).token_ids);
    bool differs = false;
    for (std::uint64_t s = 4; s < 10 && !differs; ++s) differs = delete_random(ex, 40, 3).token_ids != delete_random(ex, 40, s).token_ids;
    EXPECT_TRUE(differs);
}

TEST(Deletion, RejectsBadRanking) {
    const auto ex = sequence(4);
    EXPECT_THROW((void)delete_topk(ex, {0, 1, 2}, 50), InvalidInput);
    EXPECT_THROW((void)delete_topk(ex, {1, 1, 2, 3}, 50), InvalidInput);
}

TEST(Srs, IdentitiesHold) {
    const auto ds = safr::testing::toy_dataset();
    const auto model = Model<float>::initialized(safr::testing::toy_model_config(ds));
    const auto zero = srs(model, ds.test, 0);
    EXPECT_EQ(zero.srs, 0.0);
    EXPECT_EQ(zero.acc_capacity, zero.acc_original);
    EXPECT_EQ(zero.acc_random, zero.acc_original);
    for (double k : {10.0, 30.0, 70.0}) {
        const auto r = srs(model, ds.test, k);
        EXPECT_EQ(r.srs, r.acc_original - r.acc_capacity);
        EXPECT_DOUBLE_EQ(r.acc_original, 100.0 * accuracy(model, ds.test));
        EXPECT_EQ(r.acc_random_per_seed.size(), kDefaultRandomSeeds.size());
        const double mean = std::accumulate(r.acc_random_per_seed.begin(), r.acc_random_per_seed.end(), 0.0) / 5.0;
        EXPECT_NEAR(r.acc_random, mean, 1e-12);
        EXPECT_EQ(r.n, ds.test.size());
    }
    EXPECT_THROW((void)srs(model, DatasetSplit{}, 30), InvalidInput);
}

TEST(Srs, RandomRankerTracksRandomDeletion) {
    const auto ds = safr::testing::toy_dataset(7, 240, 60, 400);
    const auto model = Model<float>::initialized(safr::testing::toy_model_config(ds));
    const TokenRanker random_ranker = [](std::size_t i, const TokenizedExample& ex) {
        std::vector<std::size_t> r(ex.length());
        std::iota(r.begin(), r.end(), std::size_t{0});
        Rng rng(derive_seed(99, "rank", i));
        for (std::size_t j = r.size(); j > 1; --j) std::swap(r[j - 1], r[static_cast<std::size_t>(rng.below(j))]);
        return r;
    };
    const auto rep = SrsEvaluator<float>(model, ds.test, LayerTag::fc1, kDefaultRandomSeeds, random_ranker).evaluate(30);
    EXPECT_NEAR(rep.acc_capacity, rep.acc_random, 6.0);
}

TEST(Sensitivity, OrderAndEdgeCases) {
    const auto ds = safr::testing::toy_dataset();
    const auto model = Model<float>::initialized(safr::testing::toy_model_config(ds));
    EXPECT_THROW((void)sensitivity_curve(model, ds.test, {30, 10}), InvalidInput);
    EXPECT_THROW((void)sensitivity_curve(model, ds.test, {}), InvalidInput);
    const auto only_zero = sensitivity_curve(model, ds.test, {0});
    ASSERT_EQ(only_zero.size(), 1u);
    EXPECT_EQ(only_zero[0].srs, 0.0);
    const auto curve = sensitivity_curve(model, ds.test, {10, 30, 50});
    ASSERT_EQ(curve.size(), 3u);
    for (const auto& r : curve) {
        const auto single = srs(model, ds.test, r.k);
        EXPECT_EQ(r.acc_capacity, single.acc_capacity);
        EXPECT_EQ(r.acc_random, single.acc_random);
    }
}

TEST(CapacityReport, MeansAreConsistent) {
    const auto ds = safr::testing::toy_dataset();
    const auto model = Model<float>::initialized(safr::testing::toy_model_config(ds));
    for (bool per_type : {false, true}) {
        const auto rep = capacity_report(model, ds.test, 0.3, LayerTag::fc1, per_type);
        const double lo = std::min(rep.mean_important, rep.mean_rest);
        const double hi = std::max(rep.mean_important, rep.mean_rest);
        EXPECT_GE(rep.mean_all, lo - 1e-12);
        EXPECT_LE(rep.mean_all, hi + 1e-12);
        const double n = static_cast<double>(rep.n_important + rep.n_rest);
        EXPECT_NEAR(rep.mean_all * n, rep.mean_important * static_cast<double>(rep.n_important) + rep.mean_rest * static_cast<double>(rep.n_rest),
                    1e-9);
        EXPECT_EQ(rep.records.size(), rep.n_important + rep.n_rest);
        double min_imp = 1.0;
        double max_rest = 0.0;
        for (const auto& r : rep.records) {
            EXPECT_GE(r.capacity, 0.0);
            EXPECT_LE(r.capacity, 1.0 + 1e-12);
            if (r.important) min_imp = std::min(min_imp, r.importance);
            else max_rest = std::max(max_rest, r.importance);
        }
        EXPECT_GE(min_imp, max_rest);
    }
}

TEST(CapacityReport, RejectsBadInputs) {
    const auto ds = safr::testing::toy_dataset();
    auto mc = safr::testing::toy_model_config(ds);
    const auto model = Model<float>::initialized(mc);
    EXPECT_THROW((void)capacity_report(model, ds.test, 0.0), InvalidInput);
    EXPECT_THROW((void)capacity_report(model, ds.test, 1.0), InvalidInput);
    mc.use_vmask = false;
    EXPECT_THROW((void)capacity_report(Model<float>::initialized(mc), ds.test), InvalidInput);
}

TEST(CapacityReport, UniformMaskGivesIdenticalGroupsForIdenticalTokens) {
    // Every occurrence is the same token at one position, so every capacity is equal
    // and the split by mask probability cannot separate the groups.
    const auto ds = safr::testing::toy_dataset();
    const auto model = Model<float>::initialized(safr::testing::toy_model_config(ds));
    DatasetSplit s;
    TokenizedExample ex;
    ex.token_ids = {4};
    ex.tokens = {ds.vocab.token(4)};
    for (int i = 0; i < 10; ++i) s.examples.push_back(ex);
    const auto rep = capacity_report(model, s, 0.3);
    EXPECT_DOUBLE_EQ(rep.mean_important, rep.mean_rest);
    EXPECT_EQ(rep.n_important, 3u);
}
