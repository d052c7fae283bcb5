#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "skipgraph/metrics.hpp"
#include "skipgraph/random.hpp"
#include "skipgraph/train.hpp"

using namespace skipgraph;

namespace {

using Mask = std::vector<std::uint8_t>;

Mask block(std::size_t H, std::size_t W, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    Mask m(H * W, 0);
    for (std::size_t y = y0; y < y0 + h; ++y)
        for (std::size_t x = x0; x < x0 + w; ++x) m[y * W + x] = 1;
    return m;
}

Mask random_mask(std::size_t H, std::size_t W, Rng& rng, double p) {
    Mask m(H * W);
    for (auto& v : m) v = rng.bernoulli(p);
    return m;
}

std::vector<double> directed(const Mask& a, const Mask& b, std::size_t W) {
    std::vector<double> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i]) continue;
        double best = INFINITY;
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (!b[j]) continue;
            const double dy = double(i / W) - double(j / W), dx = double(i % W) - double(j % W);
            best = std::min(best, std::sqrt(dy * dy + dx * dx));
        }
        out.push_back(best);
    }
    return out;
}

double pct95(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const double rank = 0.95 * double(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (rank - double(lo)) * (v[hi] - v[lo]);
}

double hd95_oracle(const Mask& a, const Mask& b, std::size_t W) {
    return std::max(pct95(directed(a, b, W)), pct95(directed(b, a, W)));
}

double hausdorff_oracle(const Mask& a, const Mask& b, std::size_t W) {
    const auto ab = directed(a, b, W), ba = directed(b, a, W);
    return std::max(*std::max_element(ab.begin(), ab.end()), *std::max_element(ba.begin(), ba.end()));
}

bool any(const Mask& m) { return std::find(m.begin(), m.end(), 1) != m.end(); }

} // namespace

// DSC / mIoU / MAE ---------------------------------------------------------------------

TEST(Dsc, IdentityDisjointAndShiftedBlock) {
    const auto a = block(6, 6, 1, 1, 2, 2);
    EXPECT_EQ(dsc(a, a), 1.0);
    EXPECT_EQ(dsc(a, block(6, 6, 4, 4, 2, 2)), 0.0);
    EXPECT_EQ(dsc(a, block(6, 6, 1, 2, 2, 2)), 0.5);
    const Mask empty(36, 0);
    EXPECT_EQ(dsc(empty, empty), 1.0);
    EXPECT_EQ(dsc(a, empty), 0.0);
}

TEST(Miou, IdentityDisjointAndShiftedBlock) {
    const auto a = block(6, 6, 1, 1, 2, 2);
    EXPECT_EQ(miou(a, a), 1.0);
    EXPECT_EQ(miou(a, block(6, 6, 4, 4, 2, 2)), 0.0);
    EXPECT_EQ(miou(a, block(6, 6, 1, 2, 2, 2)), 2.0 / 6.0);
    const Mask empty(36, 0);
    EXPECT_EQ(miou(empty, empty), 1.0);
    EXPECT_EQ(miou(empty, a), 0.0);
}

TEST(Mae, SimpleCases) {
    const std::vector<double> a{0, 1, 1, 0}, b{1, 0, 0, 1}, q(4, 0.25), z(4, 0.0);
    EXPECT_EQ(mae(a, a), 0.0);
    EXPECT_EQ(mae(a, b), 1.0);
    EXPECT_EQ(mae(q, z), 0.25);
}

TEST(Metrics, ShapeMismatchIsDimensionError) {
    const Mask a(4, 0), b(5, 0);
    EXPECT_THROW(dsc(a, b), DimensionError);
    EXPECT_THROW(miou(a, b), DimensionError);
    EXPECT_THROW(mae(std::vector<double>(3), std::vector<double>(4)), DimensionError);
}

TEST(Metrics, CountingOraclesAreExact) {
    Rng rng(90);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t H = 1 + rng.below(16), W = 1 + rng.below(16);
        const auto a = random_mask(H, W, rng, rng.uniform()), b = random_mask(H, W, rng, rng.uniform());
        std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            tp += a[i] && b[i];
            fp += a[i] && !b[i];
            fn += !a[i] && b[i];
            tn += !a[i] && !b[i];
        }
        const auto c = confusion(a, b);
        ASSERT_EQ(c.tp, tp);
        ASSERT_EQ(c.fp, fp);
        ASSERT_EQ(c.fn, fn);
        ASSERT_EQ(c.tp + c.fp + c.fn + c.tn, H * W);
        const double d = tp + fp + fn == 0 ? 1.0 : 2.0 * tp / (2.0 * tp + fp + fn);
        const double j = tp + fp + fn == 0 ? 1.0 : double(tp) / double(tp + fp + fn);
        ASSERT_EQ(dsc(a, b), d);
        ASSERT_EQ(miou(a, b), j);
        ASSERT_GE(dsc(a, b), miou(a, b));

        std::vector<double> pa(a.size()), pb(a.size());
        double s = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            pa[i] = rng.uniform();
            pb[i] = rng.uniform();
            s += std::abs(pa[i] - pb[i]);
        }
        ASSERT_EQ(mae(pa, pb), s / double(a.size()));
    }
}

TEST(Metrics, TranslationInvariant) {
    const auto a = block(20, 20, 5, 5, 4, 6), b = block(20, 20, 7, 6, 5, 3);
    const auto a2 = block(20, 20, 8, 9, 4, 6), b2 = block(20, 20, 10, 10, 5, 3);
    EXPECT_EQ(dsc(a, b), dsc(a2, b2));
    EXPECT_EQ(miou(a, b), miou(a2, b2));
    EXPECT_EQ(hd95(a, b, 20, 20), hd95(a2, b2, 20, 20));
}

// HD95 -------------------------------------------------------------------------------

TEST(Hd95, IdenticalMasksGiveZero) {
    const auto a = block(10, 10, 2, 3, 4, 5);
    EXPECT_EQ(hd95(a, a, 10, 10), 0.0);
}

TEST(Hd95, TwoSinglePixels) {
    Mask a(25, 0), b(25, 0);
    a[0] = 1;
    b[3 * 5 + 4] = 1;
    EXPECT_DOUBLE_EQ(hd95(a, b, 5, 5), 5.0);
    EXPECT_DOUBLE_EQ(hd95(b, a, 5, 5), 5.0);
}

TEST(Hd95, EmptyMaskIsValidationError) {
    const Mask a = block(4, 4, 0, 0, 2, 2), e(16, 0);
    EXPECT_THROW(hd95(a, e, 4, 4), ValidationError);
    EXPECT_THROW(hd95(e, a, 4, 4), ValidationError);
}

TEST(Hd95, MatchesAllPairsOracleOnSmallMasks) {
    Rng rng(91);
    int checked = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t H = 1 + rng.below(12), W = 1 + rng.below(12);
        const auto a = random_mask(H, W, rng, rng.uniform(0.02, 0.6));
        const auto b = random_mask(H, W, rng, rng.uniform(0.02, 0.6));
        if (!any(a) || !any(b)) continue;
        const double h = hd95(a, b, H, W);
        ASSERT_NEAR(h, hd95_oracle(a, b, W), 1e-9) << "trial " << t;
        ASSERT_EQ(h, hd95(b, a, H, W));
        ASSERT_LE(h, hausdorff_oracle(a, b, W) + 1e-12);
        ++checked;
    }
    EXPECT_GT(checked, 800);
}

TEST(DistanceTransform, MatchesBruteForce) {
    Rng rng(92);
    for (int t = 0; t < 200; ++t) {
        const std::size_t H = 1 + rng.below(15), W = 1 + rng.below(15);
        const auto m = random_mask(H, W, rng, rng.uniform(0.0, 0.3));
        const auto d = squared_distance_transform(m, H, W);
        for (std::size_t i = 0; i < H * W; ++i) {
            double best = INFINITY;
            for (std::size_t j = 0; j < H * W; ++j)
                if (m[j]) {
                    const double dy = double(i / W) - double(j / W), dx = double(i % W) - double(j % W);
                    best = std::min(best, dy * dy + dx * dx);
                }
            ASSERT_EQ(d[i], best);
        }
    }
}

TEST(Percentile, LinearInterpolation) {
    EXPECT_EQ(percentile({3.0}, 0.95), 3.0);
    EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2, 0}, 0.95), 3.8);
    EXPECT_DOUBLE_EQ(percentile({0, 10}, 0.5), 5.0);
}

// per-image scoring and summaries -----------------------------------------------------------

TEST(ScorePrediction, BinarizesAtHalfAndKeepsMaeSoft) {
    const std::vector<double> prob{0.5, 0.49, 0.9, 0.1};
    const Mask truth{1, 0, 1, 1};
    const auto m = score_prediction(prob, truth, 2, 2);
    // Binarized {1, 0, 1, 0} against {1, 0, 1, 1}: TP 2, FN 1.
    EXPECT_EQ(m.dsc, 0.8);
    EXPECT_EQ(m.miou, 2.0 / 3.0);
    EXPECT_NEAR(m.mae, (0.5 + 0.49 + 0.1 + 0.9) / 4, 1e-15);
    ASSERT_TRUE(m.hd95.has_value());
    // truth->pred distances {0, 0, 1}: rank 0.95 * 2 = 1.9 gives 0.9; pred->truth is all 0.
    EXPECT_DOUBLE_EQ(*m.hd95, 0.9);
}

TEST(ScorePrediction, GroundTruthAsPredictionIsPerfect) {
    Rng rng(93);
    const auto truth = random_mask(12, 12, rng, 0.3);
    std::vector<double> prob(truth.begin(), truth.end());
    const auto m = score_prediction(prob, truth, 12, 12);
    EXPECT_EQ(m.dsc, 1.0);
    EXPECT_EQ(m.miou, 1.0);
    EXPECT_EQ(m.mae, 0.0);
    EXPECT_EQ(m.hd95.value(), 0.0);
}

TEST(ScorePrediction, EmptyMaskLeavesHd95Missing) {
    const std::vector<double> prob(9, 0.1);
    const Mask truth = block(3, 3, 1, 1, 1, 1);
    EXPECT_FALSE(score_prediction(prob, truth, 3, 3).hd95.has_value());
}

TEST(Summarize, MeansSkipMissingHd95) {
    std::vector<ImageMetrics> rows{{1.0, 1.0, 0.0, 2.0}, {0.5, 0.25, 0.5, std::nullopt}, {0.0, 0.0, 1.0, 4.0}};
    const auto s = summarize(rows);
    EXPECT_EQ(s.images, 3u);
    EXPECT_DOUBLE_EQ(s.dsc, 0.5);
    EXPECT_DOUBLE_EQ(s.miou, 1.25 / 3);
    EXPECT_DOUBLE_EQ(s.mae, 0.5);
    EXPECT_DOUBLE_EQ(s.hd95, 3.0);
    EXPECT_EQ(s.hd95_missing, 1u);
}

TEST(MeanStd, UsesSampleDeviation) {
    const std::vector<double> v{0.8, 0.9, 1.0};
    const auto m = mean_std(v);
    EXPECT_DOUBLE_EQ(m.mean, 0.9);
    EXPECT_NEAR(m.std, 0.1, 1e-15);
    EXPECT_EQ(mean_std(std::vector<double>{0.7}).std, 0.0);
}
