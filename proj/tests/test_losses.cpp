#include <gtest/gtest.h>

#include <cmath>

#include "smec/losses.hpp"

using namespace smec;

namespace {

Vector random_vec(Rng& rng, std::size_t n) {
    Vector v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

double naive_cos(const Vector& a, const Vector& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(RankLoss, TripleLoopOracle) {
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
        QueryGroup g;
        const double gains[3] = {2, 1, 0};
        for (std::size_t d = 0; d < 3; ++d) g.push_back({0, d, rng.normal(), gains[d]});
        double expect = 0;
        std::size_t terms = 0;
        for (std::size_t j = 0; j < 3; ++j) {
            for (std::size_t k = 0; k < 3; ++k) {
                if (g[j].gain > g[k].gain) {
                    expect += (g[j].gain - g[k].gain) * std::log(1 + std::exp(g[k].sim - g[j].sim));
                    ++terms;
                }
            }
        }
        const auto l = rank_loss({g});
        EXPECT_NEAR(l.value, expect, 1e-12);
        EXPECT_EQ(l.n_terms, terms);
    }
}

TEST(RankLoss, EqualGainsContributeNothing) {
    QueryGroup g{{0, 0, 0.3, 1}, {0, 1, 0.9, 1}};
    EXPECT_EQ(rank_loss({g}).n_terms, 0u);
}

TEST(RankLoss, SimilarityGradientMatchesDifference) {
    Rng rng(12);
    std::vector<QueryGroup> groups(2);
    for (auto& g : groups) {
        for (std::size_t d = 0; d < 4; ++d) g.push_back({0, d, rng.normal(), static_cast<double>(d % 3)});
    }
    std::vector<Vector> ds;
    rank_loss(groups, &ds);
    const double h = 1e-6;
    for (std::size_t g = 0; g < 2; ++g) {
        for (std::size_t d = 0; d < 4; ++d) {
            auto p = groups, m = groups;
            p[g][d].sim += h;
            m[g][d].sim -= h;
            EXPECT_NEAR(ds[g][d], (rank_loss(p).value - rank_loss(m).value) / (2 * h), 1e-7);
        }
    }
}

TEST(RankLoss, LargeMarginsStayFinite) {
    QueryGroup g{{0, 0, -800, 1}, {0, 1, 800, 0}};
    const auto l = rank_loss({g});
    EXPECT_TRUE(std::isfinite(l.value));
    EXPECT_NEAR(l.value, 1600.0, 1e-9);
}

TEST(PairLosses, DirectFormula) {
    Rng rng(13);
    int checked = 0;
    while (checked < 30) {
        auto a = random_vec(rng, 5), b = random_vec(rng, 5);
        const double c = naive_cos(a, b);
        if (c <= 0.01 || c >= 0.99) continue;
        const double y = rng.uniform();
        EXPECT_NEAR(mse_pair_loss(a, b, y).value, (y - c) * (y - c), 1e-12);
        EXPECT_NEAR(ce_pair_loss(a, b, y).value, -(y * std::log(c) + (1 - y) * std::log(1 - c)), 1e-12);
        ++checked;
    }
}

TEST(PairLosses, NegativeCosineIsClamped) {
    const Vector a{1, 0}, b{-1, 0.1};
    PairGrad g;
    EXPECT_NEAR(mse_pair_loss(a, b, 0.5, &g).value, 0.25, 1e-15);
    EXPECT_EQ(g.d1, Vector(2, 0.0));
    EXPECT_TRUE(std::isfinite(ce_pair_loss(a, b, 1.0, &g).value));
    EXPECT_EQ(g.d2, Vector(2, 0.0));
}

TEST(UnsupLoss, DoubleLoopOracle) {
    Rng rng(14);
    std::vector<Vector> high, low;
    for (int i = 0; i < 5; ++i) {
        high.push_back(random_vec(rng, 6));
        low.push_back(random_vec(rng, 3));
    }
    NeighborMap nb{{0, {1, 2}}, {1, {3, 4}}, {2, {0, 4}}, {3, {1, 2}}, {4, {0, 3}}};
    double expect = 0;
    for (const auto& [i, js] : nb) {
        for (auto j : js) expect += std::abs(naive_cos(high[i], high[j]) - naive_cos(low[i], low[j]));
    }
    const auto l = unsup_loss(high, low, nb);
    EXPECT_NEAR(l.value, expect, 1e-12);
    EXPECT_EQ(l.n_terms, 10u);
    EXPECT_THROW(unsup_loss(high, low, NeighborMap{{0, {9}}}), std::invalid_argument);
}

TEST(MrlJointLoss, WeightedSum) {
    const LossValue a{1.5, 2}, b{0.25, 3}, c{4.0, 1};
    const auto s = mrl_joint_loss({{1, a}, {1, b}, {1, c}});
    EXPECT_DOUBLE_EQ(s.value, 5.75);
    EXPECT_EQ(s.n_terms, 6u);
    EXPECT_THROW(mrl_joint_loss({{-1, a}}), std::invalid_argument);
}

TEST(TotalLoss, AlphaWeightsUnsup) {
    const auto t = total_loss({2.0, 1}, {3.0, 1}, 0.5);
    EXPECT_DOUBLE_EQ(t.value, 3.5);
    EXPECT_THROW(total_loss({}, {}, -1), std::invalid_argument);
}
