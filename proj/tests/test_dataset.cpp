#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "smec/dataset.hpp"

using namespace smec;
namespace fs = std::filesystem;

namespace {

EmbeddingSet random_set(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(n, d);
    for (auto& v : m.values) v = to_f32(rng.normal());
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
    return {ids, m};
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / "smec_test_dataset";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST(Embeddings, BinaryRoundTripIsBitIdentical) {
    const auto set = random_set(37, 9, 1);
    const auto path = scratch("rt.smec").string();
    save_embeddings(path, set);
    EXPECT_EQ(load_embeddings(path), set);
}

TEST(Embeddings, JsonlRoundTrip) {
    const auto set = random_set(5, 3, 2);
    const auto path = scratch("rt.jsonl").string();
    save_embeddings(path, set);
    EXPECT_EQ(load_embeddings(path), set);
}

TEST(Embeddings, JsonlRaggedRowNamesRow) {
    std::istringstream in("{\"id\":\"a\",\"vec\":[1,2]}\n{\"id\":\"b\",\"vec\":[1,2,3]}\n");
    try {
        read_embeddings_jsonl(in);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
    }
}

TEST(Embeddings, RejectsEmptyDuplicateAndMissing) {
    std::istringstream empty("");
    EXPECT_THROW(read_embeddings_jsonl(empty), FormatError);
    std::istringstream dup("{\"id\":\"a\",\"vec\":[1]}\n{\"id\":\"a\",\"vec\":[2]}\n");
    EXPECT_THROW(read_embeddings_jsonl(dup), FormatError);
    EXPECT_THROW(load_embeddings(scratch("missing.smec").string()), IoError);
    std::ofstream(scratch("bad.smec")) << "XXXXjunk";
    EXPECT_THROW(load_embeddings(scratch("bad.smec").string()), FormatError);
}

TEST(Embeddings, TruncatedBinaryRejected) {
    std::ostringstream out;
    write_embeddings_binary(out, random_set(4, 4, 3));
    const auto bytes = out.str();
    std::istringstream in(bytes.substr(0, bytes.size() - 5));
    EXPECT_THROW(read_embeddings_binary(in), FormatError);
}

TEST(Qrels, MatchesNaiveParse) {
    Rng rng(4);
    std::ostringstream text;
    std::map<std::pair<std::string, std::string>, double> naive;
    for (int i = 0; i < 100; ++i) {
        const auto q = "q" + std::to_string(rng.below(10));
        const auto d = "d" + std::to_string(rng.below(30));
        const double g = static_cast<double>(rng.below(4));
        text << q << '\t' << d << '\t' << g << '\n';
        naive[{q, d}] = g;
    }
    std::istringstream in(text.str());
    const auto parsed = parse_qrels(in);
    std::size_t count = 0;
    for (const auto& [q, docs] : parsed) {
        for (const auto& [d, g] : docs) {
            EXPECT_EQ(naive.at({q, d}), g);
            ++count;
        }
    }
    EXPECT_EQ(count, naive.size());
}

TEST(Qrels, BadLinesNameTheLine) {
    std::istringstream in("q1\td1\t1\nq1\td2\tabc\n");
    try {
        parse_qrels(in);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
    std::istringstream neg("q\td\t-1\n");
    EXPECT_THROW(parse_qrels(neg), FormatError);
    EXPECT_THROW(load_qrels(scratch("nope.tsv").string()), IoError);
}

TEST(Qrels, ValidateAgainstSets) {
    const auto q = random_set(2, 2, 5), d = random_set(3, 2, 6);
    EXPECT_NO_THROW(validate_qrels({{"id0", {{"id2", 1}}}}, q, d));
    EXPECT_THROW(validate_qrels({{"id0", {{"zz", 1}}}}, q, d), FormatError);
    EXPECT_THROW(validate_qrels({{"qq", {{"id2", 1}}}}, q, d), FormatError);
}

TEST(Planted, ShapesAndRelevance) {
    PlantedSpec spec;
    spec.signal_dims = random_subset(64, 16, 1);
    spec.n_queries = 20;
    spec.n_docs = 100;
    const auto data = synth_planted(spec);
    EXPECT_EQ(data.queries.size(), 20u);
    EXPECT_EQ(data.docs.dim(), 64u);
    for (std::size_t q = 0; q < 20; ++q) {
        const auto& judged = data.qrels.at("q" + std::to_string(q));
        EXPECT_EQ(judged.size(), spec.judged_negatives + 1);
        EXPECT_EQ(judged.at("d" + std::to_string(q)), 1.0);
    }
    EXPECT_NO_THROW(validate_qrels(data.qrels, data.queries, data.docs));
}

TEST(Planted, NoiseFreeQueriesLiveOnSignalDims) {
    PlantedSpec spec;
    spec.signal_dims = {1, 5, 9};
    spec.total_dim = 12;
    spec.noise_scale = 0.0;
    spec.n_queries = 10;
    spec.n_docs = 10;
    spec.judged_negatives = 3;
    const auto data = synth_planted(spec);
    const std::set<std::size_t> s(spec.signal_dims.begin(), spec.signal_dims.end());
    for (std::size_t r = 0; r < 10; ++r) {
        for (std::size_t c = 0; c < 12; ++c) {
            if (!s.count(c)) EXPECT_EQ(data.queries.row(r)[c], 0.0);
        }
        EXPECT_EQ(data.queries.row_vector(r), data.docs.row_vector(r));
    }
}

TEST(Planted, RejectsBadSpecs) {
    PlantedSpec spec;
    spec.total_dim = 4;
    spec.signal_dims = {0, 1, 2, 3, 4};
    EXPECT_THROW(synth_planted(spec), std::invalid_argument);
    spec.signal_dims = {};
    EXPECT_THROW(synth_planted(spec), std::invalid_argument);
    spec.signal_dims = {7};
    EXPECT_THROW(synth_planted(spec), std::invalid_argument);
}

TEST(Batches, EpochCoversEveryQueryOnce) {
    PlantedSpec spec;
    spec.signal_dims = {0, 1};
    spec.total_dim = 4;
    spec.n_queries = 1000;
    spec.n_docs = 50;
    spec.judged_negatives = 2;
    const auto data = synth_planted(spec);
    BatchIterator it(data.queries, data.docs, data.qrels, 64, 7);
    EXPECT_EQ(it.batches_per_epoch(), 16u);
    for (int e = 0; e < 2; ++e) {
        std::multiset<std::size_t> seen;
        for (const auto& b : it.next_epoch()) {
            for (const auto& q : b) {
                seen.insert(q.query_row);
                EXPECT_EQ(q.doc_rows.size(), 3u);
            }
        }
        std::multiset<std::size_t> expect;
        for (std::size_t i = 0; i < 1000; ++i) expect.insert(i);
        EXPECT_EQ(seen, expect);
    }
    EXPECT_THROW(BatchIterator(data.queries, data.docs, data.qrels, 1, 7), std::invalid_argument);
}

TEST(Batches, SameSeedSameOrder) {
    PlantedSpec spec;
    spec.signal_dims = {0};
    spec.total_dim = 2;
    spec.n_queries = 50;
    spec.n_docs = 10;
    spec.judged_negatives = 1;
    const auto data = synth_planted(spec);
    BatchIterator a(data.queries, data.docs, data.qrels, 8, 3), b(data.queries, data.docs, data.qrels, 8, 3);
    for (int e = 0; e < 3; ++e) {
        auto ea = a.next_epoch(), eb = b.next_epoch();
        ASSERT_EQ(ea.size(), eb.size());
        for (std::size_t i = 0; i < ea.size(); ++i) {
            for (std::size_t j = 0; j < ea[i].size(); ++j) EXPECT_EQ(ea[i][j].query_row, eb[i][j].query_row);
        }
    }
}

TEST(Split, DisjointAndStable) {
    const auto set = random_set(500, 1, 8);
    const auto [train, val] = split_queries(set, 0.1);
    EXPECT_EQ(train.size() + val.size(), 500u);
    EXPECT_GT(val.size(), 25u);
    EXPECT_LT(val.size(), 80u);
    EXPECT_EQ(split_queries(set, 0.1).second, val);
    EXPECT_TRUE(split_queries(set, 0.0).second.empty());
}

TEST(Fnv, KnownVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}
