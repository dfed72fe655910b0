#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "smec/smec.hpp"

using namespace smec;

namespace {

/// Brute-force nDCG: DCG of the ranking over the best DCG of any ordering of
/// the judged docs, gain 2^rel − 1.
double brute_ndcg(const std::vector<std::string>& ranked, const std::map<std::string, double>& judged, std::size_t k) {
    auto dcg = [&](const std::vector<double>& rels) {
        double s = 0;
        for (std::size_t i = 0; i < std::min(k, rels.size()); ++i) s += (std::pow(2.0, rels[i]) - 1) / std::log2(i + 2.0);
        return s;
    };
    std::vector<double> got;
    for (const auto& d : ranked) got.push_back(judged.count(d) ? judged.at(d) : 0.0);
    std::vector<double> all;
    for (const auto& [d, g] : judged) all.push_back(g);
    std::sort(all.begin(), all.end());
    double best = 0;
    do {
        best = std::max(best, dcg(all));
    } while (std::next_permutation(all.begin(), all.end()));
    return best == 0 ? 0 : dcg(got) / best;
}

}  // namespace

TEST(Ndcg, HandCase) {
    const RelevanceJudgments qrels{{"q", {{"a", 0}, {"b", 2}}}};
    const auto r = ndcg_at_k({"q", {"a", "b"}, {}}, qrels, 10);
    EXPECT_NEAR(r.value, 1.0 / std::log2(3.0), 1e-12);
    EXPECT_NEAR(r.value, 0.6309, 1e-4);
}

TEST(Ndcg, AllPermutationsMatchBruteForce) {
    Rng rng(3);
    for (std::size_t n = 1; n <= 5; ++n) {
        std::map<std::string, double> judged;
        std::vector<std::string> docs;
        for (std::size_t i = 0; i < n; ++i) {
            docs.push_back("d" + std::to_string(i));
            judged[docs.back()] = static_cast<double>(rng.below(4));
        }
        judged[docs[0]] = 1 + static_cast<double>(rng.below(3));
        const RelevanceJudgments qrels{{"q", judged}};
        std::sort(docs.begin(), docs.end());
        do {
            for (std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{10}}) {
                const auto got = ndcg_at_k({"q", docs, {}}, qrels, k).value;
                EXPECT_DOUBLE_EQ(got, brute_ndcg(docs, judged, k));
                EXPECT_GE(got, 0.0);
                EXPECT_LE(got, 1.0 + 1e-15);
            }
        } while (std::next_permutation(docs.begin(), docs.end()));
    }
}

TEST(Ndcg, ZeroRelevantAndEmpty) {
    const RelevanceJudgments qrels{{"q", {{"a", 0}}}};
    const auto r = ndcg_at_k({"q", {"a"}, {}}, qrels);
    EXPECT_EQ(r.value, 0.0);
    EXPECT_TRUE(r.zero_relevant);
    EXPECT_TRUE(ndcg_at_k({"other", {}, {}}, qrels).zero_relevant);
    EXPECT_EQ(ndcg_at_k({"q2", {}, {}}, {{"q2", {{"x", 1}}}}).value, 0.0);
    EXPECT_THROW(ndcg_at_k({"q", {}, {}}, qrels, 0), std::invalid_argument);
}

TEST(Retrieval, HandRankedFixture) {
    // Three docs on the unit circle; the query sits closest to d1, then d2.
    Matrix dm(3, 2);
    dm(0, 0) = 1;
    dm(1, 0) = 0.6, dm(1, 1) = 0.8;
    dm(2, 1) = 1;
    Matrix qm(2, 2);
    qm(0, 0) = 0.6, qm(0, 1) = 0.75;
    qm(1, 0) = 1.0;
    const EmbeddingSet docs({"d0", "d1", "d2"}, dm), queries({"qa", "qb"}, qm);
    const RelevanceJudgments qrels{{"qa", {{"d2", 1}}}, {"qb", {{"d0", 1}, {"d2", 2}}}};
    const auto rep = evaluate_retrieval(queries, docs, qrels, 10);
    // qa ranks d1, d2, d0: relevant d2 at rank 2.
    EXPECT_NEAR(rep.per_query[0].ndcg, 1.0 / std::log2(3.0), 1e-12);
    // qb ranks d0, d1, d2: gains 1 at rank 1 and 3 at rank 3; ideal 3 then 1.
    const double dcg = 1.0 + 3.0 / 2.0, idcg = 3.0 + 1.0 / std::log2(3.0);
    EXPECT_NEAR(rep.per_query[1].ndcg, dcg / idcg, 1e-12);
    EXPECT_NEAR(rep.mean, (1.0 / std::log2(3.0) + dcg / idcg) / 2, 1e-12);
}

TEST(Retrieval, TiesGoToLowerRow) {
    Matrix dm(3, 2, 1.0);
    const EmbeddingSet docs({"x", "y", "z"}, dm);
    const auto r = retrieve("q", Vector{1, 1}, docs, 2);
    EXPECT_EQ(r.doc_ids, (std::vector<std::string>{"x", "y"}));
}

TEST(Ware, Identities) {
    Rng rng(5);
    Vector x(50), y(50);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    EXPECT_EQ(ware(x, x).value, 0.0);
    Vector sx = x, sy = y;
    for (auto& v : sx) v *= 3.5;
    for (auto& v : sy) v *= 3.5;
    EXPECT_NEAR(ware(x, y).value, ware(sx, sy).value, 1e-12);
    double loop = 0;
    for (int m = 0; m < 50; ++m) loop += std::abs(y[m] - x[m]) / std::abs(x[m]);
    EXPECT_NEAR(ware(x, y).value, loop / 50, 1e-12);
    const auto w = ware(Vector{0.0, 2.0}, Vector{1.0, 1.0});
    EXPECT_EQ(w.excluded, 1u);
    EXPECT_NEAR(w.value, 0.5, 1e-15);
}

TEST(Ware, PerDimensionMatchesZeroingOracle) {
    Rng rng(6);
    std::vector<Vector> l, r;
    for (int m = 0; m < 30; ++m) {
        Vector a(7), b(7);
        for (auto& v : a) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        l.push_back(a);
        r.push_back(b);
    }
    const auto rep = ware_per_dimension(l, r);
    for (std::size_t c = 0; c < 7; ++c) {
        Vector before, after;
        for (int m = 0; m < 30; ++m) {
            before.push_back(cosine(l[m], r[m]));
            auto a = l[m], b = r[m];
            a[c] = b[c] = 0;
            after.push_back(cosine(a, b));
        }
        EXPECT_NEAR(rep.values[c], ware(before, after).value, 1e-12);
    }
    // Single pair, single dim: dropping the only coordinate leaves zero cosine.
    const auto one = ware_per_dimension({Vector{2.0}}, {Vector{3.0}});
    EXPECT_NEAR(one.values[0], 1.0, 1e-15);
}

TEST(Ware, NoiseFreeSignalDimsOutrankNoise) {
    PlantedSpec spec;
    spec.signal_dims = random_subset(64, 16, 3);
    spec.noise_scale = 0.0;
    spec.n_queries = 10;
    spec.n_docs = 500;
    const auto data = synth_planted(spec);
    const auto rep = ware_per_dimension(data.docs, 2000, 42);
    std::vector<std::size_t> top(rep.ranking.begin(), rep.ranking.begin() + 16);
    std::sort(top.begin(), top.end());
    EXPECT_EQ(top, spec.signal_dims);
    double min_signal = 1e9, max_noise = 0;
    for (std::size_t c = 0; c < 64; ++c) {
        const bool sig = std::binary_search(spec.signal_dims.begin(), spec.signal_dims.end(), c);
        (sig ? min_signal : max_noise) = sig ? std::min(min_signal, rep.values[c]) : std::max(max_noise, rep.values[c]);
    }
    EXPECT_GT(min_signal, max_noise);
}

TEST(Achievement, MonotoneAndNearChanceForRandomSelections) {
    std::vector<std::size_t> ranking(64);
    std::iota(ranking.begin(), ranking.end(), 0);
    EXPECT_EQ(achievement_rate({0, 1, 2, 3}, ranking), 1.0);
    EXPECT_EQ(achievement_rate({60, 61}, ranking), 0.0);
    EXPECT_LE(achievement_rate({0, 40}, ranking, 16), achievement_rate({0, 40, 1}, ranking, 16));
    EXPECT_THROW(achievement_rate({}, ranking), std::invalid_argument);
    double mean = 0;
    for (std::uint64_t s = 0; s < 400; ++s) mean += achievement_rate(random_subset(64, 16, s), ranking);
    EXPECT_NEAR(mean / 400, 16.0 / 64.0, 0.02);
}

TEST(Pca, MatchesDenseEigensolver) {
    Rng rng(9);
    Matrix x(50, 8);
    for (std::size_t r = 0; r < 50; ++r) {
        for (std::size_t c = 0; c < 8; ++c) x(r, c) = rng.normal() * (1.0 + static_cast<double>(c));
    }
    const auto p = pca_fit(x, 3);
    Eigen::MatrixXd m(50, 8);
    for (std::size_t r = 0; r < 50; ++r)
        for (std::size_t c = 0; c < 8; ++c) m(r, c) = x(r, c);
    const Eigen::MatrixXd centered = m.rowwise() - m.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / 49.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    for (int k = 0; k < 3; ++k) {
        const double want = es.eigenvalues()(7 - k);
        EXPECT_NEAR(p.eigenvalues[k], want, 1e-6 * want);
        Eigen::VectorXd v(8);
        for (int c = 0; c < 8; ++c) v(c) = p.components(k, c);
        EXPECT_NEAR(std::abs(v.dot(es.eigenvectors().col(7 - k))), 1.0, 1e-6);
        // Projected variance equals the eigenvalue.
        double var = 0;
        for (std::size_t r = 0; r < 50; ++r) {
            const double y = pca_transform(p, x.row(r))[k];
            var += y * y;
        }
        EXPECT_NEAR(var / 49.0, want, 1e-6 * want);
    }
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) EXPECT_NEAR(dot(p.components.row(a), p.components.row(b)), a == b ? 1.0 : 0.0, 1e-8);
    }
}

TEST(Pca, RankDeficientInputNamesRank) {
    Matrix x(20, 4);
    Rng rng(1);
    for (std::size_t r = 0; r < 20; ++r) {
        x(r, 0) = rng.normal();
        x(r, 1) = 2 * x(r, 0);
    }
    try {
        pca_fit(x, 3);
        FAIL();
    } catch (const DegenerateInput& e) {
        EXPECT_NE(std::string(e.what()).find("rank 1"), std::string::npos);
    }
    EXPECT_THROW(pca_fit(x, 5), std::invalid_argument);
}

TEST(Harness, AblationGridShapeAndDeterminism) {
    PlantedSpec spec;
    spec.total_dim = 16;
    spec.signal_dims = random_subset(16, 4, 1);
    spec.n_queries = 60;
    spec.n_docs = 150;
    const auto d = synth_planted(spec);
    const auto data = TrainData::from(d.queries, d.docs, d.qrels);
    TrainConfig cfg;
    cfg.trajectory = {16, 8, 4};
    cfg.epoch_cap = 1;
    cfg.batch_size = 16;
    cfg.memory_capacity = 200;
    const auto rows = run_ablation(data, cfg);
    ASSERT_EQ(rows.size(), 5u);
    for (const auto& r : rows) {
        EXPECT_EQ(r.ndcg.size(), 2u);
        for (const auto& [dim, v] : r.ndcg) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
    EXPECT_EQ(ablation_table(rows).str(), ablation_table(run_ablation(data, cfg)).str());
}

TEST(Harness, MemorySweepOccupancyGrowsWithSize) {
    PlantedSpec spec;
    spec.total_dim = 16;
    spec.signal_dims = random_subset(16, 4, 1);
    spec.n_queries = 60;
    spec.n_docs = 150;
    const auto d = synth_planted(spec);
    const auto data = TrainData::from(d.queries, d.docs, d.qrels);
    TrainConfig cfg;
    cfg.trajectory = {16, 8};
    cfg.epoch_cap = 2;
    cfg.batch_size = 16;
    const auto rows = run_memory_sweep(data, cfg, {1, 50, 5000});
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].peak_occupancy, 1u);
    EXPECT_LE(rows[1].peak_occupancy, rows[2].peak_occupancy);
    EXPECT_THROW(run_memory_sweep(data, cfg, {0}), std::invalid_argument);
}
