#include <gtest/gtest.h>

#include "smec/report.hpp"

using namespace smec;

TEST(Csv, QuotesFieldsPerRfc4180) {
    EXPECT_EQ(csv_field("plain"), "plain");
    EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
    EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    CsvTable t({"x", "y"});
    t.add({"1", "a\nb"});
    EXPECT_EQ(t.str(), "x,y\r\n1,\"a\nb\"\r\n");
    EXPECT_THROW(t.add({"only"}), std::invalid_argument);
}

TEST(Csv, NumbersRoundTripWithDotDecimal) {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678}) EXPECT_EQ(std::stod(format_number(v)), v);
    EXPECT_EQ(format_number(std::size_t{42}), "42");
    EXPECT_EQ(format_number(0.5), "0.5");
}

TEST(Tables, RetrievalHasMeanRow) {
    RetrievalReport rep;
    rep.per_query = {{"q1", 1.0, false}, {"q2", 0.0, true}};
    rep.mean = 0.5;
    rep.zero_relevant = 1;
    const auto t = retrieval_table(rep);
    ASSERT_EQ(t.rows().size(), 3u);
    EXPECT_EQ(t.rows().back()[0], "mean");
    EXPECT_EQ(t.rows().back()[1], "0.5");
}

TEST(Tables, GradientTableOffsetsSteps) {
    StageReport a, b;
    a.steps = 2;
    for (std::size_t s = 0; s < 2; ++s) a.series.push_back({s, 0, 1.0, 1.0, {s, {{"g", 0.5}}, 0.1}});
    b.steps = 1;
    b.series.push_back({0, 0, 1.0, 1.0, {0, {{"g", 0.25}}, 0.2}});
    const auto t = gradient_table({a, b});
    ASSERT_EQ(t.rows().size(), 3u);
    EXPECT_EQ(t.rows()[2][0], "2");
    EXPECT_EQ(t.rows()[2][2], "0.25");
}

TEST(Tables, WareJsonMapsDimToValue) {
    WareReport rep;
    rep.values = {0.5, 0.25};
    rep.ranking = {0, 1};
    const auto j = nlohmann::json::parse(ware_json(rep));
    EXPECT_EQ(j["ware"]["1"].get<double>(), 0.25);
    EXPECT_EQ(j["ranking"][0].get<int>(), 0);
}

TEST(Tables, AblationColumnsByDescendingDim) {
    AblationRow r{"MRL", TrainMode::mrl, false, false, {{8, 0.5}, {16, 0.75}}};
    const auto t = ablation_table({r});
    EXPECT_EQ(t.str().substr(0, t.str().find('\r')), "method,ndcg@10 d=16,ndcg@10 d=8");
    EXPECT_EQ(t.rows()[0][1], "0.75");
}
