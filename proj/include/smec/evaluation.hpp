#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "smec/adapter.hpp"
#include "smec/dataset.hpp"
#include "smec/error.hpp"
#include "smec/numerics.hpp"
#include "smec/trainer.hpp"

namespace smec {

// ---------------------------------------------------------------------------
// Retrieval and nDCG.

struct Ranking {
    std::string query_id;
    std::vector<std::string> doc_ids;  // descending score
    std::vector<double> scores;
};

struct NdcgResult {
    double value = 0.0;
    bool zero_relevant = false;  // no judged doc with positive gain
};

/// DCG_k / IDCG_k with gain 2^rel − 1 and discount log2(rank + 1).
/// The ideal ordering is taken over every judged doc of the query.
inline NdcgResult ndcg_at_k(const Ranking& ranking, const RelevanceJudgments& qrels, std::size_t k = 10) {
    if (k == 0) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
    NdcgResult out;
    const auto it = qrels.find(ranking.query_id);
    std::vector<double> ideal;
    if (it != qrels.end()) {
        for (const auto& [doc, rel] : it->second) {
            if (rel > 0.0) ideal.push_back(rel);
        }
    }
    if (ideal.empty()) {
        out.zero_relevant = true;
        return out;
    }
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    auto gain = [](double rel) { return std::exp2(rel) - 1.0; };
    auto discount = [](std::size_t rank) { return std::log2(static_cast<double>(rank) + 1.0); };
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) idcg += gain(ideal[i]) / discount(i + 1);
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ranking.doc_ids.size()); ++i) {
        const auto d = it->second.find(ranking.doc_ids[i]);
        if (d != it->second.end() && d->second > 0.0) dcg += gain(d->second) / discount(i + 1);
    }
    out.value = dcg / idcg;
    return out;
}

/// Brute-force cosine retrieval of the top `k` docs; ties go to the lower doc row.
inline Ranking retrieve(const std::string& query_id, ConstSpan query, const EmbeddingSet& docs, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> scored(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) scored[d] = {cosine(query, docs.row(d)), d};
    const std::size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    Ranking r;
    r.query_id = query_id;
    for (std::size_t i = 0; i < take; ++i) {
        r.doc_ids.push_back(docs.ids()[scored[i].second]);
        r.scores.push_back(scored[i].first);
    }
    return r;
}

struct QueryMetric {
    std::string query_id;
    double ndcg = 0.0;
    bool zero_relevant = false;
};

struct RetrievalReport {
    std::vector<QueryMetric> per_query;
    double mean = 0.0;
    std::size_t zero_relevant = 0;
};

/// nDCG@k for each query row of `queries` (already encoded) against `docs`.
inline RetrievalReport evaluate_retrieval(const EmbeddingSet& queries, const EmbeddingSet& docs,
                                          const RelevanceJudgments& qrels, const std::vector<std::size_t>& rows,
                                          std::size_t k = 10) {
    if (queries.dim() != docs.dim()) throw std::invalid_argument("evaluate_retrieval: query/doc dims differ");
    RetrievalReport rep;
    for (auto r : rows) {
        const auto& id = queries.ids()[r];
        const auto res = ndcg_at_k(retrieve(id, queries.row(r), docs, k), qrels, k);
        rep.per_query.push_back({id, res.value, res.zero_relevant});
        rep.mean += res.value;
        if (res.zero_relevant) ++rep.zero_relevant;
    }
    if (!rows.empty()) rep.mean /= static_cast<double>(rows.size());
    return rep;
}

inline RetrievalReport evaluate_retrieval(const EmbeddingSet& queries, const EmbeddingSet& docs,
                                          const RelevanceJudgments& qrels, std::size_t k = 10) {
    return evaluate_retrieval(queries, docs, qrels, BatchIterator::all_rows(queries.size()), k);
}

using Encoder = std::function<Vector(ConstSpan)>;

inline EmbeddingSet encode_set(const EmbeddingSet& set, const Encoder& enc) {
    std::vector<Vector> rows(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) rows[i] = enc(set.row(i));
    const std::size_t dim = rows.empty() ? 0 : rows.front().size();
    Matrix m(set.size(), dim);
    for (std::size_t i = 0; i < set.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    return EmbeddingSet(set.ids(), std::move(m));
}

// ---------------------------------------------------------------------------
// WARE and achievement rate.

struct WareValue {
    double value = 0.0;
    std::size_t used = 0;
    std::size_t excluded = 0;  // y_m == 0
};

/// (1/M) Σ |ŷ_m − y_m| / |y_m| over entries with y_m != 0.
inline WareValue ware(ConstSpan before, ConstSpan after) {
    if (before.size() != after.size() || before.empty()) throw std::invalid_argument("ware: need equal, non-empty lists");
    WareValue out;
    double acc = 0.0;
    for (std::size_t m = 0; m < before.size(); ++m) {
        if (before[m] == 0.0) {
            ++out.excluded;
            continue;
        }
        acc += std::abs(after[m] - before[m]) / std::abs(before[m]);
        ++out.used;
    }
    if (out.used > 0) out.value = acc / static_cast<double>(out.used);
    return out;
}

struct WareReport {
    std::vector<double> values;          // per dimension
    std::vector<std::size_t> ranking;    // dims by descending WARE, ties to the lower dim
    std::size_t excluded = 0;            // pairs with zero baseline score
};

struct IndexPair {
    std::size_t a = 0;
    std::size_t b = 0;
};

/// `count` random pairs of distinct rows in [0, n).
inline std::vector<IndexPair> sample_pairs(std::size_t n, std::size_t count = 10000, std::uint64_t seed = 42) {
    if (n < 2) throw std::invalid_argument("sample_pairs: need at least 2 rows");
    Rng rng(seed);
    std::vector<IndexPair> out(count);
    for (auto& p : out) {
        p.a = rng.below(n);
        do {
            p.b = rng.below(n);
        } while (p.b == p.a);
    }
    return out;
}

/// Per-dimension WARE of pair cosines when that dimension is zeroed.
inline WareReport ware_per_dimension(const std::vector<Vector>& lhs, const std::vector<Vector>& rhs) {
    if (lhs.size() != rhs.size() || lhs.empty()) throw std::invalid_argument("ware_per_dimension: need equal, non-empty pair lists");
    const std::size_t D = lhs.front().size();
    const std::size_t M = lhs.size();
    std::vector<double> dots(M), na2(M), nb2(M), before(M);
    for (std::size_t m = 0; m < M; ++m) {
        if (lhs[m].size() != D || rhs[m].size() != D) throw std::invalid_argument("ware_per_dimension: dim mismatch");
        dots[m] = dot(lhs[m], rhs[m]);
        na2[m] = dot(lhs[m], lhs[m]);
        nb2[m] = dot(rhs[m], rhs[m]);
        before[m] = (na2[m] > 0.0 && nb2[m] > 0.0) ? dots[m] / std::sqrt(na2[m] * nb2[m]) : 0.0;
    }
    WareReport rep;
    rep.values.assign(D, 0.0);
    std::vector<double> after(M);
    for (std::size_t c = 0; c < D; ++c) {
        for (std::size_t m = 0; m < M; ++m) {
            const double a = lhs[m][c], b = rhs[m][c];
            if (a == 0.0 && b == 0.0) {
                after[m] = before[m];
                continue;
            }
            const double n1 = na2[m] - a * a, n2 = nb2[m] - b * b;
            after[m] = (n1 > 0.0 && n2 > 0.0) ? (dots[m] - a * b) / std::sqrt(n1 * n2) : 0.0;
        }
        const auto w = ware(before, after);
        rep.values[c] = w.value;
        rep.excluded = w.excluded;
    }
    rep.ranking = detail::descending_order(rep.values);
    return rep;
}

inline WareReport ware_per_dimension(const EmbeddingSet& set, std::size_t sample = 10000, std::uint64_t seed = 42) {
    std::vector<Vector> lhs, rhs;
    for (const auto& p : sample_pairs(set.size(), sample, seed)) {
        lhs.push_back(set.row_vector(p.a));
        rhs.push_back(set.row_vector(p.b));
    }
    return ware_per_dimension(lhs, rhs);
}

/// |selected ∩ topN(ranking)| / |selected|, with N = |selected| by default.
inline double achievement_rate(const std::vector<std::size_t>& selected, const std::vector<std::size_t>& ranking,
                               std::size_t n = 0) {
    if (selected.empty()) throw std::invalid_argument("achievement_rate: selected set is empty");
    if (n == 0) n = selected.size();
    if (n > ranking.size()) throw std::invalid_argument("achievement_rate: N exceeds the number of ranked dims");
    const std::vector<std::size_t> top(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(n));
    std::size_t hit = 0;
    for (auto s : selected) hit += std::find(top.begin(), top.end(), s) != top.end();
    return static_cast<double>(hit) / static_cast<double>(selected.size());
}

// ---------------------------------------------------------------------------
// PCA baseline.

struct PcaProjection {
    Vector mean;
    Matrix components;    // out_dim × D, orthonormal rows
    Vector eigenvalues;   // covariance eigenvalues, descending
};

inline constexpr double kPcaTolerance = 1e-9;
inline constexpr std::size_t kPcaMaxIterations = 1000;

/// Power iteration with deflation on the sample covariance.
inline PcaProjection pca_fit(const Matrix& x, std::size_t out_dim) {
    const std::size_t N = x.rows, D = x.cols;
    if (N < 2) throw std::invalid_argument("pca_fit: need at least 2 rows");
    if (out_dim == 0 || out_dim > D) throw std::invalid_argument("pca_fit: out_dim must be in [1, D]");
    PcaProjection p;
    p.mean.assign(D, 0.0);
    for (std::size_t r = 0; r < N; ++r)
        for (std::size_t c = 0; c < D; ++c) p.mean[c] += x(r, c);
    for (double& m : p.mean) m /= static_cast<double>(N);
    Matrix cov(D, D);
    for (std::size_t r = 0; r < N; ++r) {
        for (std::size_t i = 0; i < D; ++i) {
            const double xi = x(r, i) - p.mean[i];
            for (std::size_t j = 0; j < D; ++j) cov(i, j) += xi * (x(r, j) - p.mean[j]);
        }
    }
    double trace = 0.0;
    for (std::size_t i = 0; i < D; ++i) trace += cov(i, i);
    for (double& v : cov.values) v /= static_cast<double>(N - 1);
    trace /= static_cast<double>(N - 1);
    const double floor = std::max(trace, 1e-300) * 1e-12;

    p.components = Matrix(out_dim, D);
    Rng rng(0x5ca1ab1e);
    for (std::size_t k = 0; k < out_dim; ++k) {
        Vector v(D);
        for (double& e : v) e = rng.normal();
        // Start orthogonal to the components found so far.
        for (std::size_t j = 0; j < k; ++j) {
            const double proj = dot(v, p.components.row(j));
            for (std::size_t c = 0; c < D; ++c) v[c] -= proj * p.components(j, c);
        }
        double nv = norm(v);
        for (double& e : v) e /= nv;
        for (std::size_t it = 0; it < kPcaMaxIterations; ++it) {
            Vector w = matvec(cov, v);
            for (std::size_t j = 0; j < k; ++j) {
                const double proj = dot(w, p.components.row(j));
                for (std::size_t c = 0; c < D; ++c) w[c] -= proj * p.components(j, c);
            }
            const double nw = norm(w);
            if (nw <= floor) break;
            for (double& e : w) e /= nw;
            if (dot(w, v) < 0.0)
                for (double& e : w) e = -e;
            double diff = 0.0;
            for (std::size_t c = 0; c < D; ++c) diff = std::max(diff, std::abs(w[c] - v[c]));
            v = std::move(w);
            if (diff < kPcaTolerance) break;
        }
        const double lambda = dot(v, matvec(cov, v));
        if (!(lambda > floor)) {
            throw DegenerateInput("pca_fit: out_dim " + std::to_string(out_dim) + " exceeds the data rank " +
                                  std::to_string(k));
        }
        const auto big = std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
        if (*big < 0.0)
            for (double& e : v) e = -e;
        std::copy(v.begin(), v.end(), p.components.row(k).begin());
        p.eigenvalues.push_back(lambda);
        // Deflate.
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j) cov(i, j) -= lambda * v[i] * v[j];
    }
    return p;
}

inline PcaProjection pca_fit(const EmbeddingSet& set, std::size_t out_dim) { return pca_fit(set.matrix(), out_dim); }

inline Vector pca_transform(const PcaProjection& p, ConstSpan z) {
    Vector centered(z.begin(), z.end());
    for (std::size_t c = 0; c < centered.size(); ++c) centered[c] -= p.mean[c];
    return matvec(p.components, centered);
}

inline EmbeddingSet pca_transform(const PcaProjection& p, const EmbeddingSet& set) {
    return encode_set(set, [&](ConstSpan z) { return pca_transform(p, z); });
}

// ---------------------------------------------------------------------------
// Experiment harnesses.

/// A trained model of either kind, encodable at each of its dims.
struct TrainedModel {
    TrainMode mode = TrainMode::smrl;
    AdapterStack stack;
    std::optional<MrlAdapter> mrl;
    std::vector<StageReport> reports;

    Encoder encoder(std::size_t dim) const {
        if (mode == TrainMode::mrl) {
            return [this, dim](ConstSpan z) { return mrl_encode(*mrl, z, dim); };
        }
        return [this, dim](ConstSpan z) { return encode_at_dim(stack, z, dim); };
    }

    double mean_step_seconds() const {
        double total = 0.0;
        std::size_t n = 0;
        for (const auto& r : reports) {
            for (double s : r.step_seconds) total += s;
            n += r.step_seconds.size();
        }
        return n == 0 ? 0.0 : total / static_cast<double>(n);
    }
};

/// Runs either training mode. MRL gets the SMRL epoch budget summed over stages.
inline TrainedModel train_model(const TrainData& data, const TrainConfig& cfg) {
    TrainedModel m;
    m.mode = cfg.mode;
    if (cfg.mode == TrainMode::smrl) {
        m.reports = train_smrl(m.stack, data, cfg);
    } else {
        TrainConfig c = cfg;
        c.epoch_cap = cfg.epoch_cap * (cfg.trajectory.size() - 1);
        auto [a, rep] = train_mrl(data, c);
        m.mrl = std::move(a);
        m.reports.push_back(std::move(rep));
    }
    return m;
}

/// nDCG@k of the validation queries at one dim.
inline double model_ndcg(const TrainedModel& m, const TrainData& data, std::size_t dim, std::size_t k = 10) {
    const auto enc = m.encoder(dim);
    const auto q = encode_set(data.queries, enc);
    const auto d = encode_set(data.docs, enc);
    return evaluate_retrieval(q, d, data.qrels, data.val_rows, k).mean;
}

struct AblationRow {
    std::string name;
    TrainMode mode = TrainMode::mrl;
    bool ads = false;
    bool xbm = false;
    std::map<std::size_t, double> ndcg;  // compressed dim → nDCG@10
};

/// Baseline MRL, each component added alone, and everything together.
inline std::vector<AblationRow> ablation_grid() {
    return {
        {"MRL", TrainMode::mrl, false, false, {}},
        {"+SMRL", TrainMode::smrl, false, false, {}},
        {"+ADS", TrainMode::mrl, true, false, {}},
        {"+S-XBM", TrainMode::mrl, false, true, {}},
        {"SMEC", TrainMode::smrl, true, true, {}},
    };
}

inline std::vector<AblationRow> run_ablation(const TrainData& data, const TrainConfig& cfg) {
    auto rows = ablation_grid();
    for (auto& row : rows) {
        TrainConfig c = cfg;
        c.mode = row.mode;
        c.use_ads = row.ads;
        c.use_xbm = row.xbm;
        const auto model = train_model(data, c);
        for (std::size_t i = 1; i < cfg.trajectory.size(); ++i) {
            row.ndcg[cfg.trajectory[i]] = model_ndcg(model, data, cfg.trajectory[i]);
        }
    }
    return rows;
}

struct MemorySweepRow {
    std::size_t size = 0;
    double mean_step_seconds = 0.0;
    double ndcg = 0.0;
    std::size_t peak_occupancy = 0;
};

/// One SMRL run with S-XBM per memory size; nDCG at the last trajectory dim.
inline std::vector<MemorySweepRow> run_memory_sweep(const TrainData& data, const TrainConfig& cfg,
                                                    const std::vector<std::size_t>& sizes) {
    std::vector<MemorySweepRow> out;
    for (auto size : sizes) {
        if (size == 0) throw std::invalid_argument("run_memory_sweep: sizes must be positive");
        TrainConfig c = cfg;
        c.mode = TrainMode::smrl;
        c.use_xbm = true;
        c.memory_capacity = size;
        const auto model = train_model(data, c);
        MemorySweepRow row;
        row.size = size;
        row.mean_step_seconds = model.mean_step_seconds();
        row.ndcg = model_ndcg(model, data, cfg.trajectory.back());
        for (const auto& r : model.reports) row.peak_occupancy = std::max(row.peak_occupancy, r.peak_memory);
        out.push_back(row);
    }
    return out;
}

}  // namespace smec
