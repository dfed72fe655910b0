#include <gtest/gtest.h>

#include <algorithm>
#include <deque>

#include "smec/memory.hpp"

using namespace smec;

namespace {

Vector random_vec(Rng& rng, std::size_t n) {
    Vector v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

struct Ref {
    std::string id;
    Vector vec;
};

/// Full scan with the documented tie rule: higher cosine first, then older.
std::vector<std::string> scan_topk(const std::deque<Ref>& ref, const Vector& q, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> s;
    for (std::size_t i = 0; i < ref.size(); ++i) s.push_back({-cosine(q, ref[i].vec), i});
    std::sort(s.begin(), s.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < std::min(k, s.size()); ++i) out.push_back(ref[s[i].second].id);
    return out;
}

}  // namespace

TEST(MemoryBank, FifoMatchesDequeModel) {
    Rng rng(42);
    MemoryBank bank(5000);
    std::deque<Ref> ref;
    std::size_t next = 0;
    for (int b = 0; b < 10; ++b) {
        std::vector<std::pair<std::string, Vector>> batch;
        const std::size_t n = 200 + rng.below(800);
        for (std::size_t i = 0; i < n; ++i) batch.push_back({"e" + std::to_string(next++), random_vec(rng, 4)});
        bank.enqueue(batch);
        for (auto& [id, v] : batch) {
            ref.push_back({id, v});
            if (ref.size() > 5000) ref.pop_front();
        }
        ASSERT_EQ(bank.size(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            ASSERT_EQ(bank.entries()[i].id, ref[i].id);
            ASSERT_EQ(bank.entries()[i].vec, ref[i].vec);
        }
    }
}

TEST(MemoryBank, RandomizedOperationsMatchModel) {
    Rng rng(7);
    MemoryBank bank(37);
    std::deque<Ref> ref;
    for (int op = 0; op < 10000; ++op) {
        if (rng.below(4) == 0) {
            const auto q = random_vec(rng, 3);
            const std::size_t k = 1 + rng.below(10);
            const auto got = bank.topk_similar(q, k);
            const auto want = scan_topk(ref, q, k);
            ASSERT_EQ(got.size(), want.size());
            for (std::size_t i = 0; i < got.size(); ++i) ASSERT_EQ(got[i].id, want[i]);
        } else {
            const auto id = "x" + std::to_string(op);
            const auto v = random_vec(rng, 3);
            bank.enqueue({{id, v}});
            ref.push_back({id, v});
            if (ref.size() > 37) ref.pop_front();
            ASSERT_EQ(bank.size(), ref.size());
            ASSERT_EQ(bank.entries().front().id, ref.front().id);
        }
    }
}

TEST(MemoryBank, TopkEqualsBruteForce) {
    Rng rng(9);
    MemoryBank bank(1000);
    std::deque<Ref> ref;
    std::vector<std::pair<std::string, Vector>> batch;
    for (int i = 0; i < 1000; ++i) {
        batch.push_back({"m" + std::to_string(i), random_vec(rng, 8)});
        ref.push_back({batch.back().first, batch.back().second});
    }
    bank.enqueue(batch);
    for (std::size_t k : {1, 5, 10, 50}) {
        for (int t = 0; t < 5; ++t) {
            const auto q = random_vec(rng, 8);
            const auto got = bank.topk_similar(q, k);
            const auto want = scan_topk(ref, q, k);
            ASSERT_EQ(got.size(), k);
            for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(got[i].id, want[i]);
        }
    }
}

TEST(MemoryBank, TiesGoToOlderEntry) {
    MemoryBank bank(10);
    bank.enqueue({{"old", {1, 0}}, {"new", {2, 0}}, {"other", {0, 1}}});
    const auto got = bank.topk_similar(Vector{1, 0}, 2);
    EXPECT_EQ(got[0].id, "old");
    EXPECT_EQ(got[1].id, "new");
}

TEST(MemoryBank, EdgeCases) {
    MemoryBank bank(1);
    EXPECT_TRUE(bank.topk_similar(Vector{1, 0}, 3).empty());
    bank.enqueue({{"a", {1, 0}}, {"b", {0, 1}}});
    EXPECT_EQ(bank.size(), 1u);
    EXPECT_EQ(bank.entries().front().id, "b");
    EXPECT_EQ(bank.topk_similar(Vector{1, 0}, 5).size(), 1u);
    EXPECT_TRUE(bank.topk_similar(Vector{1, 0}, 5, std::string("b")).empty());
    EXPECT_THROW(bank.enqueue({{"c", {1, 2, 3}}}), std::invalid_argument);
    EXPECT_THROW(MemoryBank(0), std::invalid_argument);
}

TEST(MineNeighbors, MatchesPerAnchorScanForAnyWorkerCount) {
    Rng rng(11);
    MemoryBank bank(300);
    std::vector<std::pair<std::string, Vector>> batch;
    for (int i = 0; i < 300; ++i) batch.push_back({"m" + std::to_string(i), random_vec(rng, 6)});
    bank.enqueue(batch);
    std::vector<Vector> anchors;
    std::vector<std::string> exclude;
    for (int i = 0; i < 17; ++i) {
        anchors.push_back(random_vec(rng, 6));
        exclude.push_back("m" + std::to_string(i));
    }
    const auto one = mine_neighbors(bank, anchors, 10, exclude, 1);
    const auto four = mine_neighbors(bank, anchors, 10, exclude, 4);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const auto want = bank.topk_similar(anchors[i], 10, exclude[i]);
        ASSERT_EQ(one[i].size(), want.size());
        for (std::size_t j = 0; j < want.size(); ++j) {
            EXPECT_EQ(one[i][j].id, want[j].id);
            EXPECT_EQ(four[i][j].id, want[j].id);
            EXPECT_NE(one[i][j].id, exclude[i]);
        }
    }
}
