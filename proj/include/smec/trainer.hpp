#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "smec/adapter.hpp"
#include "smec/dataset.hpp"
#include "smec/error.hpp"
#include "smec/grad.hpp"
#include "smec/losses.hpp"
#include "smec/memory.hpp"

namespace smec {

enum class TrainMode { mrl, smrl };

inline const char* to_string(TrainMode m) { return m == TrainMode::mrl ? "mrl" : "smrl"; }

struct TrainConfig {
    TrainMode mode = TrainMode::smrl;
    std::vector<std::size_t> trajectory;  // [D, d1, ..., d_target]
    std::size_t batch_size = 32;
    std::size_t epoch_cap = 20;  // per stage (SMRL) or total (MRL)
    double learning_rate = 1e-3;
    double logit_learning_rate = 0.05;  // ADS selection logits
    double alpha = kDefaultAlpha;
    std::size_t memory_capacity = 5000;
    std::size_t neighbor_k = 10;
    std::size_t pair_top_k = 64;
    std::size_t patience = 3;
    double min_delta = 1e-4;  // relative improvement needed to reset patience
    bool early_stop = true;
    bool use_ads = true;
    bool use_xbm = true;
    double tau_start = 1.0;
    double tau_end = 0.1;
    std::uint64_t seed = 42;
    std::size_t threads = 1;
    Reduction reduction = Reduction::mean;

    void validate() const {
        if (trajectory.empty()) throw std::invalid_argument("trajectory must not be empty");
        for (std::size_t i = 1; i < trajectory.size(); ++i) {
            if (trajectory[i] >= trajectory[i - 1] || trajectory[i] == 0) {
                throw std::invalid_argument("trajectory must be strictly decreasing and positive");
            }
        }
        if (batch_size < 2) throw std::invalid_argument("batch size must be >= 2");
        if (learning_rate < 0.0 || !std::isfinite(learning_rate)) throw std::invalid_argument("learning rate must be >= 0");
        if (logit_learning_rate < 0.0 || !std::isfinite(logit_learning_rate)) {
            throw std::invalid_argument("logit learning rate must be >= 0");
        }
        if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
        if (memory_capacity == 0) throw std::invalid_argument("memory capacity must be >= 1");
        if (epoch_cap == 0) throw std::invalid_argument("epoch cap must be >= 1");
        if (!(tau_start > 0.0) || !(tau_end > 0.0)) throw std::invalid_argument("temperatures must be > 0");
    }
};

/// Queries, corpus, judgments and the train/validation query split.
struct TrainData {
    EmbeddingSet queries;
    EmbeddingSet docs;
    RelevanceJudgments qrels;
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> val_rows;

    static TrainData from(EmbeddingSet queries, EmbeddingSet docs, RelevanceJudgments qrels, double val_fraction = 0.1) {
        if (queries.dim() != docs.dim()) throw std::invalid_argument("query and doc dims differ");
        validate_qrels(qrels, queries, docs);
        TrainData d{std::move(queries), std::move(docs), std::move(qrels), {}, {}};
        auto [train, val] = split_queries(d.queries, val_fraction);
        if (train.empty()) std::swap(train, val);
        if (val.empty()) val = train;  // tiny sets: validate on the training queries
        d.train_rows = std::move(train);
        d.val_rows = std::move(val);
        return d;
    }
};

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;  // validation loss of the epoch this step belongs to
    GradStats grad;
};

struct StageReport {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::size_t steps = 0;
    std::size_t epochs = 0;
    double initial_val_loss = 0.0;
    double final_train_loss = 0.0;
    double final_val_loss = 0.0;
    bool converged = false;
    std::size_t peak_memory = 0;  // largest S-XBM occupancy seen
    std::vector<StepRecord> series;
    std::vector<double> val_series;                  // per epoch
    std::map<std::size_t, double> val_loss_by_dim;   // MRL: per head
    std::vector<double> step_seconds;                // wall clock, not part of the determinism contract

    double mean_step_seconds() const {
        if (step_seconds.empty()) return 0.0;
        double s = 0.0;
        for (double x : step_seconds) s += x;
        return s / static_cast<double>(step_seconds.size());
    }
};

// ---------------------------------------------------------------------------
// In-batch pair mining.

struct ItemPair {
    std::size_t i = 0;
    std::size_t j = 0;
    double sim = 0.0;
    bool operator==(const ItemPair&) const = default;
};

/// All ordered pairs (i, j), i != j, with cosine of the high-dim vectors.
inline std::vector<ItemPair> mine_pairs_inbatch(const std::vector<Vector>& batch) {
    if (batch.size() < 2) throw std::invalid_argument("mine_pairs_inbatch: need at least 2 samples");
    std::vector<ItemPair> pairs;
    pairs.reserve(batch.size() * (batch.size() - 1));
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t j = 0; j < batch.size(); ++j) {
            if (i != j) pairs.push_back({i, j, cosine(batch[i], batch[j])});
        }
    }
    return pairs;
}

/// The k most similar pairs; ties keep the earlier pair.
inline std::vector<ItemPair> select_topk_pairs(std::vector<ItemPair> pairs, std::size_t k) {
    std::stable_sort(pairs.begin(), pairs.end(), [](const ItemPair& a, const ItemPair& b) { return a.sim > b.sim; });
    if (pairs.size() > k) pairs.resize(k);
    return pairs;
}

// ---------------------------------------------------------------------------
// Adam.

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct AdamState {
    Vector m;
    Vector v;
    std::size_t t = 0;
};

/// One Adam update in place. Results are rounded to float32 so parameters
/// stay exactly representable in checkpoints.
inline void optimizer_step(MutSpan params, ConstSpan grads, AdamState& st, double lr) {
    if (params.size() != grads.size()) throw std::invalid_argument("optimizer_step: shape mismatch");
    if (st.m.size() != params.size()) {
        st.m.assign(params.size(), 0.0);
        st.v.assign(params.size(), 0.0);
        st.t = 0;
    }
    ++st.t;
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = kAdamBeta1 * st.m[i] + (1.0 - kAdamBeta1) * grads[i];
        st.v[i] = kAdamBeta2 * st.v[i] + (1.0 - kAdamBeta2) * grads[i] * grads[i];
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        params[i] = to_f32(params[i] - lr * mhat / (std::sqrt(vhat) + kAdamEps));
    }
}

/// Per-tensor Adam state for one adapter.
struct AdapterOptimizer {
    AdamState logits, W, b;
    double lr = 1e-3;
    double logit_lr = 0.05;

    void step(Vector& p_logits, Matrix& p_W, Vector& p_b, const StageGradients& g) {
        if (!g.logits.empty()) optimizer_step(p_logits, g.logits, logits, logit_lr);
        optimizer_step(p_W.values, g.W.values, W, lr);
        optimizer_step(p_b, g.b, b, lr);
    }

    void step(AdapterStage& stage, const StageGradients& g) {
        if (stage.frozen) throw InvalidState("optimizer_step: stage is frozen");
        step(stage.logits, stage.W, stage.b, g);
    }
};

// ---------------------------------------------------------------------------
// Shared batch assembly.

namespace detail {

/// Unique vectors participating in one step plus the index structure the
/// objectives need.
struct StepItems {
    std::vector<std::string> ids;  // "q:<id>" / "d:<id>", unique within the batch
    std::vector<Vector> inputs;    // high-dim (stage input) vectors
    std::vector<RankGroup> groups;
    std::size_t batch_count = 0;   // items [0, batch_count) are batch members; the rest are memory neighbors
};

inline StepItems assemble(const Batch& batch, const std::vector<Vector>& query_inputs,
                          const std::vector<Vector>& doc_inputs, const TrainData& data) {
    StepItems items;
    std::map<std::size_t, std::size_t> doc_slot;
    for (const auto& bq : batch) {
        items.ids.push_back("q:" + data.queries.ids()[bq.query_row]);
        items.inputs.push_back(query_inputs[bq.query_row]);
    }
    for (std::size_t qi = 0; qi < batch.size(); ++qi) {
        const auto& bq = batch[qi];
        RankGroup g;
        g.query = qi;
        for (std::size_t k = 0; k < bq.doc_rows.size(); ++k) {
            const auto row = bq.doc_rows[k];
            auto [it, fresh] = doc_slot.emplace(row, items.inputs.size());
            if (fresh) {
                items.ids.push_back("d:" + data.docs.ids()[row]);
                items.inputs.push_back(doc_inputs[row]);
            }
            g.docs.push_back(it->second);
            g.gains.push_back(bq.gains[k]);
        }
        items.groups.push_back(std::move(g));
    }
    items.batch_count = items.inputs.size();
    return items;
}

/// Adds the similarity-preservation neighbors: from the memory bank when
/// `bank` is given, otherwise from the top-k in-batch pairs.
inline NeighborMap attach_neighbors(StepItems& items, const MemoryBank* bank, const TrainConfig& cfg) {
    NeighborMap nbrs;
    if (cfg.alpha == 0.0) return nbrs;
    if (bank) {
        if (bank->size() == 0) return nbrs;
        std::vector<Vector> anchors(items.inputs.begin(), items.inputs.begin() + static_cast<std::ptrdiff_t>(items.batch_count));
        std::vector<std::string> excl(items.ids.begin(), items.ids.begin() + static_cast<std::ptrdiff_t>(items.batch_count));
        auto found = mine_neighbors(*bank, anchors, cfg.neighbor_k, excl, cfg.threads);
        for (std::size_t i = 0; i < found.size(); ++i) {
            for (auto& n : found[i]) {
                nbrs[i].push_back(items.inputs.size());
                items.ids.push_back(n.id);
                items.inputs.push_back(std::move(n.vec));
            }
        }
    } else if (items.batch_count >= 2) {
        std::vector<Vector> batch(items.inputs.begin(), items.inputs.begin() + static_cast<std::ptrdiff_t>(items.batch_count));
        for (const auto& p : select_topk_pairs(mine_pairs_inbatch(batch), cfg.pair_top_k)) nbrs[p.i].push_back(p.j);
    }
    return nbrs;
}

inline double tau_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (total_steps <= 1) return cfg.tau_end;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return to_f32(cfg.tau_start * std::pow(cfg.tau_end / cfg.tau_start, std::min(1.0, frac)));
}

/// W row halves plus bias, over the flat [W | b] gradient.
inline std::vector<ParamGroup> row_groups(std::size_t rows, std::size_t cols,
                                          const std::vector<std::size_t>& boundaries) {
    std::vector<ParamGroup> groups;
    std::size_t prev = 0;
    for (auto b : boundaries) {
        if (b > prev && b <= rows) {
            groups.push_back({"rows[" + std::to_string(prev) + "," + std::to_string(b) + ")", prev * cols, b * cols});
            prev = b;
        }
    }
    if (prev < rows) groups.push_back({"rows[" + std::to_string(prev) + "," + std::to_string(rows) + ")", prev * cols, rows * cols});
    groups.push_back({"bias", rows * cols, rows * cols + rows});
    return groups;
}

/// Flat [W | b] gradient. With `row_order`, rows (and bias entries) are
/// listed in that order so head-relative groups are contiguous.
inline Vector dense_flat(const StageGradients& g, const std::vector<std::size_t>& row_order = {}) {
    if (row_order.empty()) {
        Vector flat(g.W.values.begin(), g.W.values.end());
        flat.insert(flat.end(), g.b.begin(), g.b.end());
        return flat;
    }
    Vector flat;
    flat.reserve(g.W.values.size() + g.b.size());
    for (auto r : row_order) flat.insert(flat.end(), g.W.row(r).begin(), g.W.row(r).end());
    for (auto r : row_order) flat.push_back(g.b[r]);
    return flat;
}

inline void check_finite(double loss, const std::string& where, std::size_t step, double tau) {
    if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at " << where << ", step " << step << ", tau " << tau << ", loss " << loss;
        throw NumericAbort(msg.str());
    }
}

/// Mean rank loss over validation queries for an encoder map.
template <class Encode>
double validation_rank_loss(const TrainData& data, Encode&& encode) {
    std::vector<Vector> emb;
    std::vector<RankGroup> groups;
    std::map<std::size_t, std::size_t> doc_slot;
    for (auto row : data.val_rows) {
        auto it = data.qrels.find(data.queries.ids()[row]);
        if (it == data.qrels.end()) continue;
        RankGroup g;
        g.query = emb.size();
        emb.push_back(encode(data.queries.row(row)));
        for (const auto& [doc_id, gain] : it->second) {
            const auto d = *data.docs.find(doc_id);
            auto [slot, fresh] = doc_slot.emplace(d, emb.size());
            if (fresh) emb.push_back(encode(data.docs.row(d)));
            g.docs.push_back(slot->second);
            g.gains.push_back(gain);
        }
        groups.push_back(std::move(g));
    }
    Objective obj;
    obj.rank_groups = std::move(groups);
    return evaluate_objective(obj, emb, false).rank.mean();
}

/// Patience-based stopping on a validation series.
class ConvergenceMonitor {
public:
    ConvergenceMonitor(double initial, const TrainConfig& cfg) : best_(initial), cfg_(cfg) {}

    /// Returns true once `patience` consecutive evaluations failed to improve.
    bool update(double val) {
        if (val < best_ - cfg_.min_delta * std::abs(best_)) {
            best_ = val;
            bad_ = 0;
        } else {
            ++bad_;
        }
        return bad_ >= cfg_.patience;
    }

private:
    double best_;
    std::size_t bad_ = 0;
    const TrainConfig& cfg_;
};

}  // namespace detail

/// Trains stack.stages[stage_idx] with every earlier stage frozen, then freezes it.
inline StageReport train_stage(AdapterStack& stack, std::size_t stage_idx, const TrainData& data,
                               const TrainConfig& cfg) {
    cfg.validate();
    if (stage_idx >= stack.stages.size()) throw std::invalid_argument("train_stage: stage index out of range");
    for (std::size_t s = 0; s < stage_idx; ++s) {
        if (!stack.stages[s].frozen) throw std::invalid_argument("train_stage: earlier stages must be frozen");
    }
    AdapterStage& stage = stack.stages[stage_idx];
    if (stage.frozen) throw std::invalid_argument("train_stage: stage is already frozen");
    for (std::size_t s = stage_idx + 1; s < stack.stages.size(); ++s) {
        if (!stack.stages[s].frozen) throw InvalidState("train_stage: more than one unfrozen stage");
    }

    // The frozen prefix is fixed for the whole stage: precompute stage inputs.
    std::vector<Vector> q_in(data.queries.size()), d_in(data.docs.size());
    for (std::size_t r = 0; r < data.queries.size(); ++r) q_in[r] = forward_through(stack, data.queries.row(r), stage_idx);
    for (std::size_t r = 0; r < data.docs.size(); ++r) d_in[r] = forward_through(stack, data.docs.row(r), stage_idx);

    BatchIterator batches(data.queries, data.docs, data.qrels, data.train_rows, cfg.batch_size,
                          mix_seed(cfg.seed, 100 + stage_idx));
    Rng select_rng(mix_seed(cfg.seed, 200 + stage_idx));
    std::optional<MemoryBank> bank;
    if (cfg.use_xbm) bank.emplace(cfg.memory_capacity);
    AdapterOptimizer opt;
    opt.lr = cfg.learning_rate;
    opt.logit_lr = cfg.logit_learning_rate;

    auto encode_val = [&](ConstSpan x) {
        const Vector z = forward_through(stack, x, stage_idx);
        return apply_stage(stage, z, select_for(stage, ForwardMode::infer, nullptr)).output;
    };

    StageReport rep;
    rep.in_dim = stage.spec.in_dim;
    rep.out_dim = stage.spec.out_dim;
    rep.initial_val_loss = detail::validation_rank_loss(data, encode_val);
    detail::ConvergenceMonitor monitor(rep.initial_val_loss, cfg);
    const std::size_t total_steps = cfg.epoch_cap * batches.batches_per_epoch();
    const auto groups = detail::row_groups(stage.spec.out_dim, stage.spec.out_dim, {stage.spec.out_dim / 2});
    const std::string where = "stage " + std::to_string(stage_idx) + " (" + std::to_string(stage.spec.in_dim) + "->" +
                              std::to_string(stage.spec.out_dim) + ")";

    for (std::size_t epoch = 0; epoch < cfg.epoch_cap; ++epoch) {
        const std::size_t epoch_first = rep.series.size();
        for (const auto& batch : batches.next_epoch()) {
            const auto t0 = std::chrono::steady_clock::now();
            stage.tau = detail::tau_at(cfg, rep.steps, total_steps);
            auto items = detail::assemble(batch, q_in, d_in, data);
            Objective obj;
            obj.rank_groups = items.groups;
            obj.alpha = cfg.alpha;
            obj.reduction = cfg.reduction;
            obj.neighbors = detail::attach_neighbors(items, bank ? &*bank : nullptr, cfg);
            if (!obj.neighbors.empty()) obj.high = items.inputs;

            GradTape tape(stage, select_for(stage, ForwardMode::train, &select_rng), items.inputs);
            auto [res, grads] = backward(tape, obj);
            detail::check_finite(res.total, where, rep.steps, stage.tau);

            StepRecord rec;
            rec.step = rep.steps;
            rec.epoch = epoch;
            rec.train_loss = res.total;
            rec.grad = grad_stats(detail::dense_flat(grads), groups, rep.steps);
            rep.series.push_back(std::move(rec));

            opt.step(stage, grads);
            if (bank) {
                std::vector<std::pair<std::string, Vector>> fresh;
                for (std::size_t i = 0; i < items.batch_count; ++i) fresh.emplace_back(items.ids[i], items.inputs[i]);
                bank->enqueue(fresh);
                rep.peak_memory = std::max(rep.peak_memory, bank->size());
            }
            ++rep.steps;
            rep.step_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        const double val = detail::validation_rank_loss(data, encode_val);
        detail::check_finite(val, where + " validation", rep.steps, stage.tau);
        rep.val_series.push_back(val);
        for (std::size_t i = epoch_first; i < rep.series.size(); ++i) rep.series[i].val_loss = val;
        ++rep.epochs;
        if (monitor.update(val)) {
            rep.converged = true;
            if (cfg.early_stop) break;
        }
    }
    rep.final_val_loss = rep.val_series.empty() ? rep.initial_val_loss : rep.val_series.back();
    rep.final_train_loss = rep.series.empty() ? 0.0 : rep.series.back().train_loss;
    rep.val_loss_by_dim[rep.out_dim] = rep.final_val_loss;
    freeze_through(stack, stage_idx);
    return rep;
}

using StageCallback = std::function<void(const AdapterStack&, const StageReport&)>;

/// Sequential training along the trajectory. An existing stack must match a
/// prefix of the trajectory; only the missing stages are trained.
inline std::vector<StageReport> train_smrl(AdapterStack& stack, const TrainData& data, const TrainConfig& cfg,
                                           const StageCallback& on_stage_done = {}) {
    cfg.validate();
    const auto& traj = cfg.trajectory;
    if (traj.front() != data.queries.dim()) {
        throw std::invalid_argument("trajectory starts at " + std::to_string(traj.front()) + " but data dim is " +
                                    std::to_string(data.queries.dim()));
    }
    if (stack.input_dim == 0 && stack.stages.empty()) stack.input_dim = traj.front();
    const auto have = stack.dims();
    if (have.size() > traj.size() || !std::equal(have.begin(), have.end(), traj.begin())) {
        std::string got;
        for (auto d : have) got += (got.empty() ? "" : ",") + std::to_string(d);
        throw std::invalid_argument("checkpoint trajectory [" + got + "] is not a prefix of the requested trajectory");
    }
    for (auto& s : stack.stages) s.frozen = true;
    std::vector<StageReport> reports;
    for (std::size_t s = stack.stages.size(); s + 1 < traj.size(); ++s) {
        append_stage(stack, {traj[s], traj[s + 1]}, mix_seed(cfg.seed, 300 + s),
                     cfg.use_ads ? SelectionMode::ads : SelectionMode::prefix);
        reports.push_back(train_stage(stack, s, data, cfg));
        if (on_stage_done) on_stage_done(stack, reports.back());
    }
    return reports;
}

/// Parallel baseline: one full-width adapter, joint loss over every trajectory
/// dim with unit weights. Returns the trained adapter and a single report.
inline std::pair<MrlAdapter, StageReport> train_mrl(const TrainData& data, const TrainConfig& cfg) {
    cfg.validate();
    const auto& traj = cfg.trajectory;
    if (traj.front() != data.queries.dim()) throw std::invalid_argument("trajectory does not start at the data dim");
    MrlAdapter a = MrlAdapter::create(traj, cfg.use_ads ? SelectionMode::ads : SelectionMode::prefix,
                                      mix_seed(cfg.seed, 300));
    const std::size_t D = a.dim;

    std::vector<Vector> q_in(data.queries.size()), d_in(data.docs.size());
    for (std::size_t r = 0; r < data.queries.size(); ++r) q_in[r] = data.queries.row_vector(r);
    for (std::size_t r = 0; r < data.docs.size(); ++r) d_in[r] = data.docs.row_vector(r);

    BatchIterator batches(data.queries, data.docs, data.qrels, data.train_rows, cfg.batch_size, mix_seed(cfg.seed, 100));
    Rng select_rng(mix_seed(cfg.seed, 200));
    std::optional<MemoryBank> bank;
    if (cfg.use_xbm) bank.emplace(cfg.memory_capacity);
    AdapterOptimizer opt;
    opt.lr = cfg.learning_rate;
    opt.logit_lr = cfg.logit_learning_rate;
    const std::vector<double> weights(traj.size(), 1.0);

    auto val_by_head = [&] {
        std::map<std::size_t, double> out;
        for (auto m : traj) out[m] = detail::validation_rank_loss(data, [&](ConstSpan x) { return mrl_encode(a, x, m); });
        return out;
    };
    auto joint = [](const std::map<std::size_t, double>& by) {
        double s = 0.0;
        for (const auto& [m, v] : by) s += v;
        return s;
    };

    StageReport rep;
    rep.in_dim = D;
    rep.out_dim = traj.back();
    rep.initial_val_loss = joint(val_by_head());
    detail::ConvergenceMonitor monitor(rep.initial_val_loss, cfg);
    const std::size_t total_steps = cfg.epoch_cap * batches.batches_per_epoch();
    std::vector<std::size_t> bounds(traj.rbegin(), traj.rend());
    const auto groups = detail::row_groups(D, D, bounds);

    for (std::size_t epoch = 0; epoch < cfg.epoch_cap; ++epoch) {
        const std::size_t epoch_first = rep.series.size();
        for (const auto& batch : batches.next_epoch()) {
            const auto t0 = std::chrono::steady_clock::now();
            a.tau = detail::tau_at(cfg, rep.steps, total_steps);
            auto items = detail::assemble(batch, q_in, d_in, data);
            const auto nbrs = detail::attach_neighbors(items, bank ? &*bank : nullptr, cfg);
            std::vector<Objective> per_head(traj.size());
            for (auto& obj : per_head) {
                obj.rank_groups = items.groups;
                obj.alpha = cfg.alpha;
                obj.reduction = cfg.reduction;
                obj.neighbors = nbrs;
                if (!nbrs.empty()) obj.high = items.inputs;
            }
            MrlTape tape(a, mrl_select(a, ForwardMode::train, &select_rng), items.inputs);
            auto [results, grads] = backward(tape, per_head, weights);
            double total = 0.0;
            for (std::size_t h = 0; h < results.size(); ++h) total += weights[h] * results[h].total;
            detail::check_finite(total, "mrl adapter", rep.steps, a.tau);

            StepRecord rec;
            rec.step = rep.steps;
            rec.epoch = epoch;
            rec.train_loss = total;
            rec.grad = grad_stats(detail::dense_flat(grads, tape.selection().order), groups, rep.steps);
            rep.series.push_back(std::move(rec));

            opt.step(a.logits, a.W, a.b, grads);
            if (bank) {
                std::vector<std::pair<std::string, Vector>> fresh;
                for (std::size_t i = 0; i < items.batch_count; ++i) fresh.emplace_back(items.ids[i], items.inputs[i]);
                bank->enqueue(fresh);
                rep.peak_memory = std::max(rep.peak_memory, bank->size());
            }
            ++rep.steps;
            rep.step_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        const auto by = val_by_head();
        const double val = joint(by);
        detail::check_finite(val, "mrl validation", rep.steps, a.tau);
        rep.val_series.push_back(val);
        rep.val_loss_by_dim = by;
        for (std::size_t i = epoch_first; i < rep.series.size(); ++i) rep.series[i].val_loss = val;
        ++rep.epochs;
        if (monitor.update(val)) {
            rep.converged = true;
            if (cfg.early_stop) break;
        }
    }
    if (rep.val_loss_by_dim.empty()) rep.val_loss_by_dim = val_by_head();
    rep.final_val_loss = rep.val_series.empty() ? rep.initial_val_loss : rep.val_series.back();
    rep.final_train_loss = rep.series.empty() ? 0.0 : rep.series.back().train_loss;
    return {std::move(a), std::move(rep)};
}

inline std::size_t total_epochs(const std::vector<StageReport>& reports) {
    std::size_t e = 0;
    for (const auto& r : reports) e += r.epochs;
    return e;
}

}  // namespace smec
