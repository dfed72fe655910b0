#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "smec/error.hpp"
#include "smec/numerics.hpp"

namespace smec {

/// Id-indexed dense N×D embedding matrix.
class EmbeddingSet {
public:
    EmbeddingSet() = default;

    EmbeddingSet(std::vector<std::string> ids, Matrix matrix) : ids_(std::move(ids)), matrix_(std::move(matrix)) {
        if (matrix_.cols == 0) throw std::invalid_argument("EmbeddingSet: dim must be >= 1");
        if (ids_.size() != matrix_.rows) throw std::invalid_argument("EmbeddingSet: id count != row count");
        index_.reserve(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            if (!index_.emplace(ids_[i], i).second) {
                throw std::invalid_argument("EmbeddingSet: duplicate id '" + ids_[i] + "'");
            }
        }
        if (!all_finite(matrix_.values)) throw std::invalid_argument("EmbeddingSet: non-finite value");
    }

    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return matrix_.cols; }
    const std::vector<std::string>& ids() const { return ids_; }
    const Matrix& matrix() const { return matrix_; }
    ConstSpan row(std::size_t i) const { return matrix_.row(i); }
    Vector row_vector(std::size_t i) const {
        auto r = matrix_.row(i);
        return {r.begin(), r.end()};
    }

    std::optional<std::size_t> find(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    bool operator==(const EmbeddingSet& o) const { return ids_ == o.ids_ && matrix_ == o.matrix_; }

private:
    std::vector<std::string> ids_;
    Matrix matrix_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// query-id → (doc-id → gain). Ordered maps keep iteration deterministic.
using RelevanceJudgments = std::map<std::string, std::map<std::string, double>>;

enum class EmbeddingFormat { binary, jsonl };

inline EmbeddingFormat format_from_path(const std::string& path) {
    auto ends_with = [&](std::string_view suffix) {
        return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return (ends_with(".jsonl") || ends_with(".json")) ? EmbeddingFormat::jsonl : EmbeddingFormat::binary;
}

namespace detail {

template <class T>
void put_le(std::ostream& out, T value) {
    unsigned char bytes[sizeof(T)];
    std::uint64_t bits = 0;
    if constexpr (std::is_same_v<T, float>) {
        std::uint32_t b;
        std::memcpy(&b, &value, sizeof b);
        bits = b;
    } else {
        bits = static_cast<std::uint64_t>(value);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in, const char* what) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
        throw FormatError(std::string("truncated file while reading ") + what);
    }
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    if constexpr (std::is_same_v<T, float>) {
        const auto b32 = static_cast<std::uint32_t>(bits);
        float f;
        std::memcpy(&f, &b32, sizeof f);
        return f;
    } else {
        return static_cast<T>(bits);
    }
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return in;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    return out;
}

}  // namespace detail

inline constexpr char kEmbeddingMagic[4] = {'S', 'M', 'E', 'C'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

inline void write_embeddings_binary(std::ostream& out, const EmbeddingSet& set) {
    out.write(kEmbeddingMagic, 4);
    detail::put_le<std::uint32_t>(out, kEmbeddingVersion);
    detail::put_le<std::uint64_t>(out, set.size());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.dim()));
    for (double v : set.matrix().values) detail::put_le<float>(out, static_cast<float>(v));
    for (const auto& id : set.ids()) {
        if (id.size() > 0xFFFF) throw FormatError("id longer than 65535 bytes: " + id.substr(0, 32));
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
    }
}

inline EmbeddingSet read_embeddings_binary(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4)) throw FormatError("empty or truncated embeddings file (zero rows rejected)");
    if (std::memcmp(magic, kEmbeddingMagic, 4) != 0) throw FormatError("bad magic: not an SMEC embeddings file");
    const auto version = detail::get_le<std::uint32_t>(in, "version");
    if (version != kEmbeddingVersion) throw FormatError("unsupported embeddings version " + std::to_string(version));
    const auto n = detail::get_le<std::uint64_t>(in, "row count");
    const auto d = detail::get_le<std::uint32_t>(in, "dim");
    if (n == 0) throw FormatError("embeddings file has zero rows");
    if (d == 0) throw FormatError("embeddings file has dim 0");
    Matrix m(static_cast<std::size_t>(n), d);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const float f = detail::get_le<float>(in, "matrix");
            if (!std::isfinite(f)) {
                throw FormatError("non-finite value at row " + std::to_string(r) + ", column " + std::to_string(c));
            }
            m(r, c) = f;
        }
    }
    std::vector<std::string> ids(n);
    for (auto& id : ids) {
        const auto len = detail::get_le<std::uint16_t>(in, "id length");
        id.resize(len);
        if (len > 0 && !in.read(id.data(), len)) throw FormatError("truncated id block");
    }
    try {
        return EmbeddingSet(std::move(ids), std::move(m));
    } catch (const std::invalid_argument& e) {
        throw FormatError(e.what());
    }
}

inline void write_embeddings_jsonl(std::ostream& out, const EmbeddingSet& set) {
    for (std::size_t i = 0; i < set.size(); ++i) {
        nlohmann::json row;
        row["id"] = set.ids()[i];
        row["vec"] = set.row_vector(i);
        out << row.dump() << '\n';
    }
}

inline EmbeddingSet read_embeddings_jsonl(std::istream& in) {
    std::vector<std::string> ids;
    std::vector<double> values;
    std::size_t dim = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json row;
        try {
            row = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!row.contains("id") || !row["id"].is_string() || !row.contains("vec") || !row["vec"].is_array()) {
            throw FormatError("line " + std::to_string(line_no) + ": expected fields 'id' (string) and 'vec' (array)");
        }
        const auto& vec = row["vec"];
        if (ids.empty()) {
            dim = vec.size();
            if (dim == 0) throw FormatError("line " + std::to_string(line_no) + ": empty vector");
        } else if (vec.size() != dim) {
            throw FormatError("row " + std::to_string(ids.size()) + " (line " + std::to_string(line_no) +
                              "): dimension " + std::to_string(vec.size()) + " != " + std::to_string(dim));
        }
        for (const auto& v : vec) {
            if (!v.is_number()) throw FormatError("line " + std::to_string(line_no) + ": non-numeric entry");
            const double x = v.get<double>();
            if (!std::isfinite(x)) throw FormatError("line " + std::to_string(line_no) + ": non-finite value");
            values.push_back(x);
        }
        ids.push_back(row["id"].get<std::string>());
    }
    if (ids.empty()) throw FormatError("embeddings file has zero rows");
    Matrix m(ids.size(), dim);
    m.values = std::move(values);
    try {
        return EmbeddingSet(std::move(ids), std::move(m));
    } catch (const std::invalid_argument& e) {
        throw FormatError(e.what());
    }
}

inline EmbeddingSet load_embeddings(const std::string& path, EmbeddingFormat format) {
    auto in = detail::open_in(path);
    try {
        return format == EmbeddingFormat::binary ? read_embeddings_binary(in) : read_embeddings_jsonl(in);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

inline EmbeddingSet load_embeddings(const std::string& path) { return load_embeddings(path, format_from_path(path)); }

inline void save_embeddings(const std::string& path, const EmbeddingSet& set, EmbeddingFormat format) {
    auto out = detail::open_out(path);
    if (format == EmbeddingFormat::binary) {
        write_embeddings_binary(out, set);
    } else {
        write_embeddings_jsonl(out, set);
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline void save_embeddings(const std::string& path, const EmbeddingSet& set) {
    save_embeddings(path, set, format_from_path(path));
}

/// Parses `query<TAB>doc<TAB>gain` lines (any whitespace separates columns).
/// Later duplicates of a (query, doc) pair overwrite earlier ones.
inline RelevanceJudgments parse_qrels(std::istream& in) {
    RelevanceJudgments out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream fields(line);
        std::string q, d, gain_text, extra;
        if (!(fields >> q >> d >> gain_text) || (fields >> extra)) {
            throw FormatError("qrels line " + std::to_string(line_no) + ": expected 3 columns");
        }
        double gain = 0.0;
        const auto [ptr, ec] = std::from_chars(gain_text.data(), gain_text.data() + gain_text.size(), gain);
        if (ec != std::errc{} || ptr != gain_text.data() + gain_text.size() || !std::isfinite(gain)) {
            throw FormatError("qrels line " + std::to_string(line_no) + ": non-numeric gain '" + gain_text + "'");
        }
        if (gain < 0.0) throw FormatError("qrels line " + std::to_string(line_no) + ": negative gain");
        out[q][d] = gain;
    }
    return out;
}

inline RelevanceJudgments load_qrels(const std::string& path) {
    auto in = detail::open_in(path);
    try {
        return parse_qrels(in);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

inline void save_qrels(const std::string& path, const RelevanceJudgments& qrels) {
    auto out = detail::open_out(path);
    for (const auto& [q, docs] : qrels) {
        for (const auto& [d, g] : docs) out << q << '\t' << d << '\t' << g << '\n';
    }
}

/// Throws FormatError if any judged id is missing from the bound sets.
inline void validate_qrels(const RelevanceJudgments& qrels, const EmbeddingSet& queries, const EmbeddingSet& docs) {
    for (const auto& [q, judged] : qrels) {
        if (!queries.find(q)) throw FormatError("qrels references unknown query id '" + q + "'");
        for (const auto& [d, g] : judged) {
            if (!docs.find(d)) throw FormatError("qrels references unknown doc id '" + d + "'");
        }
    }
}

/// Ground-truth synthetic task: relevant (query, doc) pairs share a latent
/// vector expressed only on `signal_dims`.
struct PlantedSpec {
    std::size_t total_dim = 64;
    std::vector<std::size_t> signal_dims;
    double noise_scale = 0.05;
    std::size_t n_queries = 200;
    std::size_t n_docs = 2000;
    std::uint64_t seed = 42;
    /// Explicit gain-0 judgments per query (hard-labelled negatives).
    std::size_t judged_negatives = 15;
};

struct PlantedData {
    EmbeddingSet queries;
    EmbeddingSet docs;
    RelevanceJudgments qrels;
};

/// `count` distinct indices in [0, total) chosen uniformly, returned ascending.
inline std::vector<std::size_t> random_subset(std::size_t total, std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> all(total);
    for (std::size_t i = 0; i < total; ++i) all[i] = i;
    Rng rng(seed);
    rng.shuffle(all);
    all.resize(std::min(count, total));
    std::sort(all.begin(), all.end());
    return all;
}

inline PlantedData synth_planted(const PlantedSpec& spec) {
    if (spec.total_dim == 0) throw std::invalid_argument("synth_planted: total_dim must be >= 1");
    if (spec.signal_dims.size() > spec.total_dim) throw std::invalid_argument("synth_planted: |S| > D");
    std::unordered_set<std::size_t> seen;
    for (auto s : spec.signal_dims) {
        if (s >= spec.total_dim) throw std::invalid_argument("synth_planted: signal dim out of range");
        if (!seen.insert(s).second) throw std::invalid_argument("synth_planted: duplicate signal dim");
    }
    if (spec.signal_dims.empty() && spec.n_queries > 0) {
        throw std::invalid_argument("synth_planted: no signal dims, nothing to learn");
    }
    if (spec.n_docs == 0) throw std::invalid_argument("synth_planted: n_docs must be >= 1");
    if (!(spec.noise_scale >= 0.0)) throw std::invalid_argument("synth_planted: noise_scale must be >= 0");

    const std::size_t D = spec.total_dim;
    const std::size_t S = spec.signal_dims.size();
    Rng rng(spec.seed);

    Matrix latents(spec.n_docs, S);
    for (double& v : latents.values) v = rng.normal();

    auto express = [&](ConstSpan latent, MutSpan out) {
        for (std::size_t c = 0; c < D; ++c) out[c] = spec.noise_scale * rng.normal();
        for (std::size_t k = 0; k < S; ++k) out[spec.signal_dims[k]] += latent[k];
        for (double& v : out) v = to_f32(v);
    };

    Matrix doc_m(spec.n_docs, D);
    std::vector<std::string> doc_ids(spec.n_docs);
    for (std::size_t i = 0; i < spec.n_docs; ++i) {
        doc_ids[i] = "d" + std::to_string(i);
        express(latents.row(i), doc_m.row(i));
    }

    Matrix query_m(spec.n_queries, D);
    std::vector<std::string> query_ids(spec.n_queries);
    RelevanceJudgments qrels;
    for (std::size_t q = 0; q < spec.n_queries; ++q) {
        query_ids[q] = "q" + std::to_string(q);
        const std::size_t rel = q % spec.n_docs;
        express(latents.row(rel), query_m.row(q));
        auto& judged = qrels[query_ids[q]];
        judged[doc_ids[rel]] = 1.0;
        const std::size_t negatives = std::min(spec.judged_negatives, spec.n_docs - 1);
        while (judged.size() < negatives + 1) {
            const std::size_t d = rng.below(spec.n_docs);
            if (d != rel) judged.emplace(doc_ids[d], 0.0);
        }
    }
    return {EmbeddingSet(std::move(query_ids), std::move(query_m)), EmbeddingSet(std::move(doc_ids), std::move(doc_m)),
            std::move(qrels)};
}

/// One query of a batch with its judged docs (rows into the doc set).
struct BatchQuery {
    std::size_t query_row = 0;
    std::vector<std::size_t> doc_rows;
    std::vector<double> gains;
};

using Batch = std::vector<BatchQuery>;

/// Shuffled query batches. Each call to `next_epoch` reshuffles from the
/// iterator's own stream, so the epoch sequence is a pure function of the seed.
class BatchIterator {
public:
    BatchIterator(const EmbeddingSet& queries, const EmbeddingSet& docs, const RelevanceJudgments& qrels,
                  std::vector<std::size_t> query_rows, std::size_t batch_size, std::uint64_t seed)
        : batch_size_(batch_size), rng_(seed) {
        if (batch_size < 2) throw std::invalid_argument("batch_iter: batch size must be >= 2");
        entries_.reserve(query_rows.size());
        for (auto row : query_rows) {
            BatchQuery bq;
            bq.query_row = row;
            if (auto it = qrels.find(queries.ids().at(row)); it != qrels.end()) {
                for (const auto& [doc_id, gain] : it->second) {
                    auto d = docs.find(doc_id);
                    if (!d) throw FormatError("qrels references unknown doc id '" + doc_id + "'");
                    bq.doc_rows.push_back(*d);
                    bq.gains.push_back(gain);
                }
            }
            entries_.push_back(std::move(bq));
        }
    }

    /// All queries of the set, in row order.
    BatchIterator(const EmbeddingSet& queries, const EmbeddingSet& docs, const RelevanceJudgments& qrels,
                  std::size_t batch_size, std::uint64_t seed)
        : BatchIterator(queries, docs, qrels, all_rows(queries.size()), batch_size, seed) {}

    std::vector<Batch> next_epoch() {
        std::vector<std::size_t> order(entries_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng_.shuffle(order);
        std::vector<Batch> batches;
        for (std::size_t start = 0; start < order.size(); start += batch_size_) {
            Batch b;
            for (std::size_t i = start; i < std::min(order.size(), start + batch_size_); ++i) b.push_back(entries_[order[i]]);
            batches.push_back(std::move(b));
        }
        return batches;
    }

    std::size_t batches_per_epoch() const { return (entries_.size() + batch_size_ - 1) / batch_size_; }

    static std::vector<std::size_t> all_rows(std::size_t n) {
        std::vector<std::size_t> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = i;
        return rows;
    }

private:
    std::size_t batch_size_;
    Rng rng_;
    std::vector<BatchQuery> entries_;
};

/// FNV-1a 64-bit, used for content checksums, id hashing and file digests.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Deterministic 90/10 split on query ids; returns (train_rows, val_rows).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_queries(const EmbeddingSet& queries,
                                                                                   double val_fraction = 0.1) {
    std::vector<std::size_t> train, val;
    const auto threshold = static_cast<std::uint64_t>(std::llround(val_fraction * 10000.0));
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto bucket = fnv1a64(queries.ids()[i]) % 10000;
        (bucket < threshold ? val : train).push_back(i);
    }
    return {std::move(train), std::move(val)};
}

}  // namespace smec
