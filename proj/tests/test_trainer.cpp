#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "smec/smec.hpp"

using namespace smec;

namespace {

Vector random_vec(Rng& rng, std::size_t n) {
    Vector v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

TrainData planted(std::size_t dim, std::size_t signal, double noise, std::size_t nq, std::size_t nd,
                  std::uint64_t seed = 42) {
    PlantedSpec spec;
    spec.total_dim = dim;
    spec.signal_dims = random_subset(dim, signal, seed);
    spec.noise_scale = noise;
    spec.n_queries = nq;
    spec.n_docs = nd;
    spec.seed = seed;
    auto d = synth_planted(spec);
    return TrainData::from(d.queries, d.docs, d.qrels, 0.1);
}

TrainConfig small_config(std::vector<std::size_t> traj) {
    TrainConfig c;
    c.trajectory = std::move(traj);
    c.epoch_cap = 4;
    c.batch_size = 16;
    c.memory_capacity = 500;
    return c;
}

}  // namespace

TEST(PairMining, NestedLoopOracle) {
    Rng rng(1);
    std::vector<Vector> b;
    for (int i = 0; i < 5; ++i) b.push_back(random_vec(rng, 4));
    auto got = mine_pairs_inbatch(b);
    std::vector<ItemPair> want;
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
            if (i != j) want.push_back({i, j, cosine(b[i], b[j])});
        }
    }
    auto key = [](const ItemPair& p) { return std::make_pair(p.i, p.j); };
    std::sort(got.begin(), got.end(), [&](auto& x, auto& y) { return key(x) < key(y); });
    EXPECT_EQ(got, want);
    EXPECT_THROW(mine_pairs_inbatch({b[0]}), std::invalid_argument);
}

TEST(PairMining, TopkEqualsSortOracle) {
    Rng rng(2);
    std::vector<ItemPair> pairs;
    for (std::size_t i = 0; i < 20; ++i) pairs.push_back({i, i + 1, rng.uniform()});
    auto sorted = pairs;
    std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.sim > b.sim; });
    sorted.resize(5);
    EXPECT_EQ(select_topk_pairs(pairs, 5), sorted);
    EXPECT_EQ(select_topk_pairs(pairs, 50).size(), 20u);
}

TEST(Adam, FirstStepMatchesFormula) {
    Vector p{1.0, -2.0};
    const Vector g{0.5, -0.25};
    AdamState st;
    optimizer_step(p, g, st, 0.1);
    // Bias-corrected first step moves each coordinate by lr·sign(g), up to ε.
    EXPECT_NEAR(p[0], to_f32(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)), 1e-7);
    EXPECT_NEAR(p[1], to_f32(-2.0 + 0.1 * 0.25 / (0.25 + 1e-8)), 1e-7);
    EXPECT_EQ(p[0], to_f32(p[0]));
    EXPECT_THROW(optimizer_step(p, Vector{1.0}, st, 0.1), std::invalid_argument);
}

TEST(Adam, QuadraticBowlDecreases) {
    Vector p{3.0, -2.0, 1.5};
    AdamState st;
    auto loss = [&] { return p[0] * p[0] + 4 * p[1] * p[1] + 0.5 * p[2] * p[2]; };
    double prev = loss();
    const double start = prev;
    for (int t = 0; t < 100; ++t) {
        const Vector g{2 * p[0], 8 * p[1], p[2]};
        optimizer_step(p, g, st, 0.01);
        const double now = loss();
        if (t >= 10) EXPECT_LE(now, prev);
        prev = now;
    }
    EXPECT_LT(prev, 0.5 * start);
}

TEST(AdapterOptimizer, RefusesFrozenStage) {
    AdapterStack st;
    st.input_dim = 4;
    auto& s = append_stage(st, {4, 2}, 1);
    s.frozen = true;
    AdapterOptimizer opt;
    StageGradients g{Vector(4, 0.0), Matrix(2, 2), Vector(2, 0.0)};
    EXPECT_THROW(opt.step(s, g), InvalidState);
}

TEST(Tau, AnnealsGeometrically) {
    TrainConfig c = small_config({8, 4});
    EXPECT_EQ(detail::tau_at(c, 0, 11), to_f32(1.0));
    EXPECT_EQ(detail::tau_at(c, 10, 11), to_f32(0.1));
    EXPECT_NEAR(detail::tau_at(c, 5, 11), std::sqrt(0.1), 1e-6);
}

TEST(TrainStage, PrefixStageImprovesValidation) {
    const auto data = planted(16, 4, 0.0, 100, 300);
    auto cfg = small_config({16, 8});
    cfg.epoch_cap = 6;
    cfg.use_ads = false;
    cfg.use_xbm = false;
    AdapterStack stack;
    const auto reps = train_smrl(stack, data, cfg);
    ASSERT_EQ(reps.size(), 1u);
    EXPECT_LT(reps[0].final_val_loss, reps[0].initial_val_loss);
    EXPECT_TRUE(stack.stages[0].frozen);
    EXPECT_EQ(reps[0].series.size(), reps[0].steps);
    EXPECT_EQ(composed_selection(stack, 1), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
}

TEST(TrainStage, AdsPrefersSignalDims) {
    // Chance level is 4 · 8/16 = 2 signal dims among the 8 selected.
    double hits = 0;
    for (std::uint64_t seed : {42, 43, 44}) {
        const auto data = planted(16, 4, 0.1, 100, 300, seed);
        auto cfg = small_config({16, 8});
        cfg.epoch_cap = 6;
        cfg.use_xbm = false;
        cfg.seed = seed;
        AdapterStack stack;
        const auto reps = train_smrl(stack, data, cfg);
        EXPECT_LE(reps[0].peak_memory, cfg.memory_capacity);
        const auto signal = random_subset(16, 4, seed);
        for (auto i : composed_selection(stack, 1)) hits += std::binary_search(signal.begin(), signal.end(), i);
    }
    EXPECT_GT(hits / 3, 2.5);
}

TEST(TrainSmrl, ResumeLeavesFrozenStagesBitIdentical) {
    const auto data = planted(32, 8, 0.05, 80, 200);
    auto cfg = small_config({32, 16});
    cfg.epoch_cap = 2;
    AdapterStack stack;
    train_smrl(stack, data, cfg);
    const auto bytes = serialize_stack(stack);
    AdapterStack resumed = deserialize_stack(bytes);
    cfg.trajectory = {32, 16, 8};
    const auto reps = train_smrl(resumed, data, cfg);
    ASSERT_EQ(reps.size(), 1u);
    EXPECT_EQ(reps[0].in_dim, 16u);
    EXPECT_TRUE(resumed.stages[0].same_parameters(deserialize_stack(bytes).stages[0]));
    EXPECT_EQ(resumed.stages.size(), 2u);
}

TEST(TrainSmrl, RejectsIncompatibleCheckpoint) {
    const auto data = planted(16, 4, 0.05, 40, 100);
    AdapterStack stack;
    stack.input_dim = 16;
    append_stage(stack, {16, 12}, 1);
    EXPECT_THROW(train_smrl(stack, data, small_config({16, 8, 4})), std::invalid_argument);
    AdapterStack empty;
    EXPECT_THROW(train_smrl(empty, data, small_config({32, 8})), std::invalid_argument);
}

TEST(TrainSmrl, SameSeedSameResult) {
    const auto data = planted(16, 4, 0.05, 60, 150);
    auto cfg = small_config({16, 8, 4});
    cfg.epoch_cap = 2;
    AdapterStack a, b;
    const auto ra = train_smrl(a, data, cfg);
    const auto rb = train_smrl(b, data, cfg);
    EXPECT_EQ(serialize_stack(a), serialize_stack(b));
    EXPECT_EQ(stage_report_table(ra[1]).str(), stage_report_table(rb[1]).str());
    cfg.use_xbm = false;
    AdapterStack c;
    train_smrl(c, data, cfg);
    EXPECT_NE(serialize_stack(a), serialize_stack(c));
}

TEST(TrainSmrl, DivergenceRaisesNumericAbort) {
    const auto data = planted(16, 4, 0.05, 40, 100);
    auto cfg = small_config({16, 8});
    cfg.learning_rate = 1e300;
    AdapterStack stack;
    EXPECT_THROW(train_smrl(stack, data, cfg), NumericAbort);
}

TEST(TrainMrl, ReportsEveryHead) {
    const auto data = planted(16, 4, 0.05, 60, 150);
    auto cfg = small_config({16, 8, 4});
    cfg.epoch_cap = 2;
    const auto [a, rep] = train_mrl(data, cfg);
    EXPECT_EQ(rep.val_loss_by_dim.size(), 3u);
    EXPECT_EQ(a.head_dims, cfg.trajectory);
    ASSERT_FALSE(rep.series.empty());
    EXPECT_EQ(rep.series.front().grad.group_means.size(), 4u);
}

TEST(Config, Validation) {
    auto c = small_config({16, 16});
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small_config({16, 8});
    c.batch_size = 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small_config({16, 8});
    c.alpha = -1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}
