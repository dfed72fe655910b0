#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "smec/adapter.hpp"
#include "smec/error.hpp"
#include "smec/losses.hpp"
#include "smec/numerics.hpp"

namespace smec {

// ---------------------------------------------------------------------------
// Objectives over a list of embeddings (indices refer to that list).

enum class LossKind { rank, mse, ce, unsup };

inline const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::rank: return "rank";
        case LossKind::mse: return "mse";
        case LossKind::ce: return "ce";
        case LossKind::unsup: return "unsup";
    }
    return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "rank") return LossKind::rank;
    if (s == "mse") return LossKind::mse;
    if (s == "ce") return LossKind::ce;
    if (s == "unsup") return LossKind::unsup;
    throw std::invalid_argument("unknown loss kind '" + s + "' (expected rank|mse|ce|unsup)");
}

struct RankGroup {
    std::size_t query = 0;
    std::vector<std::size_t> docs;
    std::vector<double> gains;
};

struct LabeledPair {
    std::size_t a = 0;
    std::size_t b = 0;
    double label = 0.0;
};

/// How each loss component is reduced over its terms before summing.
enum class Reduction { sum, mean };

struct Objective {
    std::vector<RankGroup> rank_groups;
    std::vector<LabeledPair> mse_pairs;
    std::vector<LabeledPair> ce_pairs;
    /// Teacher vectors for the similarity-preservation term, aligned with the
    /// embedding list; empty disables the term.
    std::vector<Vector> high;
    NeighborMap neighbors;
    double alpha = kDefaultAlpha;
    Reduction reduction = Reduction::sum;
};

struct ObjectiveResult {
    LossValue rank;
    LossValue mse;
    LossValue ce;
    LossValue unsup;
    double total = 0.0;
    std::vector<Vector> d_embeddings;  // ∂total/∂embedding, empty unless requested
};

inline ObjectiveResult evaluate_objective(const Objective& obj, const std::vector<Vector>& emb, bool want_grad) {
    ObjectiveResult r;
    if (want_grad) {
        r.d_embeddings.resize(emb.size());
        for (std::size_t i = 0; i < emb.size(); ++i) r.d_embeddings[i].assign(emb[i].size(), 0.0);
    }
    auto accumulate = [](Vector& into, const Vector& from, double w) {
        for (std::size_t i = 0; i < into.size(); ++i) into[i] += w * from[i];
    };
    auto scale = [&](const LossValue& l) {
        return obj.reduction == Reduction::mean && l.n_terms > 0 ? 1.0 / static_cast<double>(l.n_terms) : 1.0;
    };
    auto reduced = [&](const LossValue& l) { return l.value * scale(l); };

    if (!obj.rank_groups.empty()) {
        std::vector<QueryGroup> groups;
        groups.reserve(obj.rank_groups.size());
        for (const auto& g : obj.rank_groups) {
            QueryGroup qg;
            for (std::size_t k = 0; k < g.docs.size(); ++k) {
                qg.push_back({g.query, g.docs[k], cosine(emb[g.query], emb[g.docs[k]]), g.gains[k]});
            }
            groups.push_back(std::move(qg));
        }
        std::vector<Vector> dsim;
        r.rank = rank_loss(groups, want_grad ? &dsim : nullptr);
        if (want_grad) {
            const double w = scale(r.rank);
            for (std::size_t gi = 0; gi < obj.rank_groups.size(); ++gi) {
                const auto& g = obj.rank_groups[gi];
                for (std::size_t k = 0; k < g.docs.size(); ++k) {
                    cosine_backward(emb[g.query], emb[g.docs[k]], w * dsim[gi][k], r.d_embeddings[g.query],
                                    r.d_embeddings[g.docs[k]]);
                }
            }
        }
    }
    const double w_mse = obj.reduction == Reduction::mean && !obj.mse_pairs.empty() ? 1.0 / static_cast<double>(obj.mse_pairs.size()) : 1.0;
    for (const auto& p : obj.mse_pairs) {
        PairGrad pg;
        r.mse += mse_pair_loss(emb[p.a], emb[p.b], p.label, want_grad ? &pg : nullptr);
        if (want_grad) {
            accumulate(r.d_embeddings[p.a], pg.d1, w_mse);
            accumulate(r.d_embeddings[p.b], pg.d2, w_mse);
        }
    }
    const double w_ce = obj.reduction == Reduction::mean && !obj.ce_pairs.empty() ? 1.0 / static_cast<double>(obj.ce_pairs.size()) : 1.0;
    for (const auto& p : obj.ce_pairs) {
        PairGrad pg;
        r.ce += ce_pair_loss(emb[p.a], emb[p.b], p.label, want_grad ? &pg : nullptr);
        if (want_grad) {
            accumulate(r.d_embeddings[p.a], pg.d1, w_ce);
            accumulate(r.d_embeddings[p.b], pg.d2, w_ce);
        }
    }
    if (!obj.high.empty() && !obj.neighbors.empty()) {
        std::vector<Vector> dlow;
        r.unsup = unsup_loss(obj.high, emb, obj.neighbors, want_grad ? &dlow : nullptr);
        if (want_grad) {
            const double w = obj.alpha * scale(r.unsup);
            for (std::size_t i = 0; i < emb.size(); ++i) accumulate(r.d_embeddings[i], dlow[i], w);
        }
    }
    r.total = reduced(r.rank) + reduced(r.mse) + reduced(r.ce) + obj.alpha * reduced(r.unsup);
    return r;
}

// ---------------------------------------------------------------------------
// Stage tape and backward pass.

struct StageGradients {
    Vector logits;  // empty when selection carries no soft weights
    Matrix W;
    Vector b;
};

/// Forward record of one stage over a batch of inputs. Consumed by backward.
class GradTape {
public:
    GradTape(const AdapterStage& stage, SelectionResult selection, const std::vector<Vector>& inputs,
             ConstSpan multipliers = {})
        : stage_(&stage), selection_(std::move(selection)) {
        caches_.reserve(inputs.size());
        for (const auto& z : inputs) caches_.push_back(apply_stage(stage, z, selection_, multipliers));
    }

    std::vector<Vector> outputs() const {
        std::vector<Vector> out;
        out.reserve(caches_.size());
        for (const auto& c : caches_) out.push_back(c.output);
        return out;
    }

    const SelectionResult& selection() const { return selection_; }
    const std::vector<StageCache>& caches() const { return caches_; }
    const AdapterStage& stage() const { return *stage_; }
    bool consumed() const { return consumed_; }
    void mark_consumed() {
        if (consumed_) throw InvalidState("gradient tape already consumed by a backward pass");
        consumed_ = true;
    }

private:
    const AdapterStage* stage_;
    SelectionResult selection_;
    std::vector<StageCache> caches_;
    bool consumed_ = false;
};

/// Straight-through gradient of the logits: the forward pass gathers hard
/// coordinates, the backward pass treats slot j as scaled by
/// p_{a_j}/sg(p_{a_j}) with p = softmax_tau(logits + noise), so that
/// ∂L/∂logit_b = (C_b − p_b Σ_a C_a) / τ with C_a = Σ ∂L/∂slot · input_a.
inline Vector straight_through_logit_grad(ConstSpan per_index_signal, const SelectionResult& sel) {
    const auto& p = sel.soft_weights;
    double total = 0.0;
    for (double c : per_index_signal) total += c;
    Vector g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = (per_index_signal[i] - p[i] * total) / sel.tau;
    return g;
}

/// Gradients of an unfrozen stage given ∂L/∂output for every taped vector.
inline StageGradients backward(GradTape& tape, const std::vector<Vector>& d_outputs) {
    const auto& stage = tape.stage();
    if (stage.frozen) throw InvalidState("backward: stage is frozen");
    if (d_outputs.size() != tape.caches().size()) throw std::invalid_argument("backward: upstream count mismatch");
    tape.mark_consumed();

    const std::size_t m = stage.spec.out_dim;
    const auto& sel = tape.selection();
    const bool with_logits = !sel.soft_weights.empty();
    StageGradients g;
    g.W = Matrix(m, m);
    g.b.assign(m, 0.0);
    Vector signal(with_logits ? stage.spec.in_dim : 0, 0.0);

    for (std::size_t v = 0; v < d_outputs.size(); ++v) {
        const auto& up = d_outputs[v];
        const auto& cache = tape.caches()[v];
        for (std::size_t r = 0; r < m; ++r) {
            if (up[r] == 0.0) continue;
            g.b[r] += up[r];
            auto row = g.W.row(r);
            for (std::size_t c = 0; c < m; ++c) row[c] += up[r] * cache.selected[c];
        }
        if (with_logits) {
            const Vector d_sel_w = matvec_t(stage.W, up);
            for (std::size_t j = 0; j < m; ++j) {
                const auto a = sel.indices[j];
                signal[a] += (up[j] + d_sel_w[j]) * cache.input[a];
            }
        }
    }
    if (with_logits) g.logits = straight_through_logit_grad(signal, sel);
    return g;
}

/// Evaluates `obj` on the taped outputs, then runs backward.
inline std::pair<ObjectiveResult, StageGradients> backward(GradTape& tape, const Objective& obj) {
    auto res = evaluate_objective(obj, tape.outputs(), true);
    auto g = backward(tape, res.d_embeddings);
    return {std::move(res), std::move(g)};
}

// ---------------------------------------------------------------------------
// Parallel (MRL) adapter tape.

class MrlTape {
public:
    MrlTape(const MrlAdapter& a, MrlSelection selection, const std::vector<Vector>& inputs, ConstSpan multipliers = {})
        : adapter_(&a), selection_(std::move(selection)), inputs_(inputs) {
        hidden_.reserve(inputs.size());
        for (const auto& z : inputs) hidden_.push_back(mrl_hidden(a, z));
        for (auto m : a.head_dims) head_indices_.push_back(selection_.head_indices(m));
        heads_.resize(a.head_dims.size());
        for (std::size_t h = 0; h < a.head_dims.size(); ++h) {
            for (const auto& hv : hidden_) {
                Vector out(head_indices_[h].size());
                for (std::size_t j = 0; j < out.size(); ++j) {
                    const auto idx = head_indices_[h][j];
                    out[j] = hv[idx] * (multipliers.empty() ? 1.0 : multipliers[idx]);
                }
                heads_[h].push_back(std::move(out));
            }
        }
    }

    /// heads()[h][v]: vector v compressed to head_dims[h].
    const std::vector<std::vector<Vector>>& heads() const { return heads_; }
    const MrlSelection& selection() const { return selection_; }
    const MrlAdapter& adapter() const { return *adapter_; }
    void mark_consumed() {
        if (consumed_) throw InvalidState("gradient tape already consumed by a backward pass");
        consumed_ = true;
    }

    /// Gradient given ∂L/∂head outputs, d_heads[h][v]. Linear in the upstream,
    /// so per-head contributions can be computed separately and summed.
    StageGradients gradients(const std::vector<std::vector<Vector>>& d_heads) const {
        const auto& a = *adapter_;
        const std::size_t D = a.dim;
        const bool with_logits = !selection_.soft_weights.empty();
        StageGradients g;
        g.W = Matrix(D, D);
        g.b.assign(D, 0.0);
        Vector signal(with_logits ? D : 0, 0.0);
        for (std::size_t v = 0; v < inputs_.size(); ++v) {
            Vector dh(D, 0.0);
            for (std::size_t h = 0; h < d_heads.size(); ++h) {
                if (d_heads[h].empty()) continue;
                const auto& up = d_heads[h][v];
                for (std::size_t j = 0; j < up.size(); ++j) {
                    const auto idx = head_indices_[h][j];
                    dh[idx] += up[j];
                    if (with_logits) signal[idx] += up[j] * hidden_[v][idx];
                }
            }
            for (std::size_t r = 0; r < D; ++r) {
                if (dh[r] == 0.0) continue;
                g.b[r] += dh[r];
                auto row = g.W.row(r);
                const auto& z = inputs_[v];
                for (std::size_t c = 0; c < D; ++c) row[c] += dh[r] * z[c];
            }
        }
        if (with_logits) {
            SelectionResult proxy;
            proxy.soft_weights = selection_.soft_weights;
            proxy.tau = selection_.tau;
            g.logits = straight_through_logit_grad(signal, proxy);
        }
        return g;
    }

private:
    const MrlAdapter* adapter_;
    MrlSelection selection_;
    std::vector<Vector> inputs_;
    std::vector<Vector> hidden_;
    std::vector<std::vector<std::size_t>> head_indices_;
    std::vector<std::vector<Vector>> heads_;
    bool consumed_ = false;
};

/// Joint MRL objective Σ_m c_m · obj(head m); returns per-head results and the
/// gradient of the weighted sum.
inline std::pair<std::vector<ObjectiveResult>, StageGradients> backward(MrlTape& tape,
                                                                        const std::vector<Objective>& per_head,
                                                                        const std::vector<double>& weights) {
    tape.mark_consumed();
    std::vector<ObjectiveResult> results;
    std::vector<std::vector<Vector>> d_heads(per_head.size());
    for (std::size_t h = 0; h < per_head.size(); ++h) {
        auto r = evaluate_objective(per_head[h], tape.heads()[h], true);
        d_heads[h] = r.d_embeddings;
        for (auto& d : d_heads[h]) {
            for (double& x : d) x *= weights[h];
        }
        results.push_back(std::move(r));
    }
    return {std::move(results), tape.gradients(d_heads)};
}

// ---------------------------------------------------------------------------
// Closed-form gradient for the clamped-cosine MSE pair loss with y = W x:
//   ∂L/∂w_i = 2(s − Y)[(y2_i/(AB) − s·y1_i/A²) x1 + (y1_i/(AB) − s·y2_i/B²) x2]
// where A = |y1|, B = |y2|, s = y1ᵀy2/(AB).

inline Vector analytic_grad_mse_pair(ConstSpan x1, ConstSpan x2, const Matrix& W, double label, std::size_t row) {
    if (x1.size() != W.cols || x2.size() != W.cols) throw std::invalid_argument("analytic_grad_mse_pair: dim mismatch");
    if (row >= W.rows) throw std::invalid_argument("analytic_grad_mse_pair: row out of range");
    const Vector y1 = matvec(W, x1);
    const Vector y2 = matvec(W, x2);
    const double A = norm(y1);
    const double B = norm(y2);
    if (A == 0.0 || B == 0.0) throw DegenerateInput("analytic_grad_mse_pair: zero-norm projection");
    const double C = dot(y1, y2);
    const double s = C / (A * B);
    Vector g(x1.size(), 0.0);
    if (s <= 0.0) return g;  // clamped region: one-sided derivative 0
    const double k1 = y2[row] / (A * B) - s / (A * A) * y1[row];
    const double k2 = y1[row] / (A * B) - s / (B * B) * y2[row];
    const double f = 2.0 * (s - label);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = f * (k1 * x1[c] + k2 * x2[c]);
    return g;
}

/// Reverse-mode gradient of the same loss with respect to every row of W,
/// built from the generic cosine/loss backward kernels.
inline Matrix linear_pair_backward(ConstSpan x1, ConstSpan x2, const Matrix& W, LossKind kind, double label,
                                   std::size_t head_dim) {
    std::vector<Vector> y(2);
    y[0] = matvec(W, x1);
    y[1] = matvec(W, x2);
    for (auto& v : y) v.resize(head_dim);
    PairGrad pg;
    if (kind == LossKind::mse) {
        mse_pair_loss(y[0], y[1], label, &pg);
    } else if (kind == LossKind::ce) {
        ce_pair_loss(y[0], y[1], label, &pg);
    } else {
        throw std::invalid_argument("linear_pair_backward: pair losses only");
    }
    Matrix g(W.rows, W.cols);
    for (std::size_t r = 0; r < head_dim; ++r) {
        for (std::size_t c = 0; c < W.cols; ++c) g(r, c) = pg.d1[r] * x1[c] + pg.d2[r] * x2[c];
    }
    return g;
}

// ---------------------------------------------------------------------------
// Finite differences.

/// Central differences (f(θ+ε) − f(θ−ε)) / 2ε for every coordinate.
inline Vector finite_diff(const std::function<double(const Vector&)>& loss_fn, const Vector& params, double epsilon) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("finite_diff: epsilon must be > 0");
    Vector g(params.size());
    Vector probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        probe[i] = params[i] + epsilon;
        const double up = loss_fn(probe);
        probe[i] = params[i] - epsilon;
        const double down = loss_fn(probe);
        probe[i] = params[i];
        g[i] = (up - down) / (2.0 * epsilon);
    }
    return g;
}

/// [logits | W | b] flattening used by optimizers and probes.
inline Vector flatten(const StageGradients& g) {
    Vector out(g.logits.begin(), g.logits.end());
    out.insert(out.end(), g.W.values.begin(), g.W.values.end());
    out.insert(out.end(), g.b.begin(), g.b.end());
    return out;
}

inline Vector flatten_params(const AdapterStage& s) {
    Vector out(s.logits.begin(), s.logits.end());
    out.insert(out.end(), s.W.values.begin(), s.W.values.end());
    out.insert(out.end(), s.b.begin(), s.b.end());
    return out;
}

inline void unflatten_params(AdapterStage& s, const Vector& flat) {
    const std::size_t nl = s.logits.size(), nw = s.W.values.size();
    std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(nl), s.logits.begin());
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(nl), flat.begin() + static_cast<std::ptrdiff_t>(nl + nw),
              s.W.values.begin());
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(nl + nw), flat.end(), s.b.begin());
}

/// Loss of `obj` as a function of the stage's flat parameters with the
/// selection pinned: hard indices stay fixed and every gathered slot is scaled
/// by p_a(θ)/p_a(θ₀), the quantity the straight-through backward differentiates.
inline std::function<double(const Vector&)> pinned_stage_loss(const AdapterStage& stage, const SelectionResult& sel,
                                                              const std::vector<Vector>& inputs, const Objective& obj) {
    Vector ref_logp;
    if (!sel.soft_weights.empty()) {
        Vector perturbed(stage.logits.size());
        for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] = stage.logits[i] + sel.noise[i];
        ref_logp = log_softmax_tau(perturbed, sel.tau);
    }
    return [stage, sel, inputs, obj, ref_logp](const Vector& flat) {
        AdapterStage probe = stage;
        unflatten_params(probe, flat);
        Vector mult;
        if (!ref_logp.empty()) {
            Vector perturbed(probe.logits.size());
            for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] = probe.logits[i] + sel.noise[i];
            const Vector logp = log_softmax_tau(perturbed, sel.tau);
            mult.resize(sel.indices.size());
            for (std::size_t j = 0; j < mult.size(); ++j) {
                const auto a = sel.indices[j];
                mult[j] = std::exp(logp[a] - ref_logp[a]);
            }
        }
        GradTape tape(probe, sel, inputs, mult);
        return evaluate_objective(obj, tape.outputs(), false).total;
    };
}

// ---------------------------------------------------------------------------
// Gradient statistics.

struct ParamGroup {
    std::string label;
    std::size_t begin = 0;  // half-open range into the flat gradient
    std::size_t end = 0;
};

struct GradStats {
    std::size_t step = 0;
    std::vector<std::pair<std::string, double>> group_means;  // label → mean |g|
    double total_variance = 0.0;
};

/// Per-group mean |g| and population variance over the union of the groups.
inline GradStats grad_stats(ConstSpan gradients, const std::vector<ParamGroup>& groups, std::size_t step = 0) {
    GradStats st;
    st.step = step;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (const auto& g : groups) {
        if (g.begin >= g.end) throw std::invalid_argument("grad_stats: empty group '" + g.label + "'");
        if (g.end > gradients.size()) throw std::invalid_argument("grad_stats: group '" + g.label + "' out of range");
        for (const auto& [b, e] : ranges) {
            if (g.begin < e && b < g.end) throw std::invalid_argument("grad_stats: overlapping groups");
        }
        ranges.emplace_back(g.begin, g.end);
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& g : groups) {
        double abs_sum = 0.0;
        for (std::size_t i = g.begin; i < g.end; ++i) {
            abs_sum += std::abs(gradients[i]);
            sum += gradients[i];
        }
        n += g.end - g.begin;
        st.group_means.emplace_back(g.label, abs_sum / static_cast<double>(g.end - g.begin));
    }
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (const auto& g : groups) {
        for (std::size_t i = g.begin; i < g.end; ++i) sq += (gradients[i] - mean) * (gradients[i] - mean);
    }
    st.total_variance = sq / static_cast<double>(n);
    return st;
}

// ---------------------------------------------------------------------------
// Dimension-scaling probe: how the gradient reaching a fixed projection row
// shrinks as the compared prefix dimension d grows.

struct ScalingRow {
    std::size_t dim = 0;
    double mean_projection_norm = 0.0;  // empirical δ(d) proxy, mean |y^d|
    double mean_grad = 0.0;             // mean |∂L/∂w_i| over rows i < min(dims)
};

struct ScalingRatio {
    std::size_t dim_a = 0;
    std::size_t dim_b = 0;
    double measured = 0.0;   // grad(a) / grad(b)
    double predicted = 0.0;  // (δ(b) / δ(a))²
    double relative_error() const { return std::abs(measured - predicted) / predicted; }
};

struct ScalingResult {
    std::vector<ScalingRow> rows;
    std::vector<ScalingRatio> ratios;  // every pair a < b in input order
};

/// Random Gaussian probe. Each trial draws W (rows = max dim, entries
/// N(0, 1/n)), a correlated input pair (correlation `rho`) and, for rank loss,
/// an independent negative; the same draws are reused across all dims.
inline ScalingResult scaling_probe(const std::vector<std::size_t>& dims, LossKind kind, std::size_t trials,
                                   std::uint64_t seed, double rho = 0.5) {
    if (dims.empty() || trials == 0) throw std::invalid_argument("scaling_probe: need dims and trials >= 1");
    if (kind == LossKind::unsup) throw std::invalid_argument("scaling_probe: unsup loss is not a pair objective");
    for (std::size_t i = 1; i < dims.size(); ++i) {
        if (dims[i] < dims[i - 1]) throw std::invalid_argument("scaling_probe: dims must be ascending");
    }
    const std::size_t max_d = dims.back();
    const std::size_t min_d = dims.front();
    const std::size_t n = max_d;
    std::vector<double> sum_norm(dims.size(), 0.0), sum_grad(dims.size(), 0.0);

    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng(mix_seed(seed, t));
        Matrix W(max_d, n);
        const double scale = 1.0 / std::sqrt(static_cast<double>(n));
        for (double& w : W.values) w = scale * rng.normal();
        Vector x1(n), x2(n), x3(n);
        for (std::size_t c = 0; c < n; ++c) {
            x1[c] = rng.normal();
            x2[c] = rho * x1[c] + std::sqrt(1.0 - rho * rho) * rng.normal();
            x3[c] = rng.normal();
        }
        const double label = rng.uniform() < 0.5 ? 0.0 : 1.0;
        const std::vector<Vector> inputs{x1, x2, x3};
        std::vector<Vector> full;
        for (const auto& x : inputs) full.push_back(matvec(W, x));

        for (std::size_t di = 0; di < dims.size(); ++di) {
            const std::size_t d = dims[di];
            std::vector<Vector> y;
            for (const auto& f : full) y.emplace_back(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(d));
            Objective obj;
            if (kind == LossKind::rank) {
                obj.rank_groups.push_back({0, {1, 2}, {1.0, 0.0}});
            } else if (kind == LossKind::mse) {
                obj.mse_pairs.push_back({0, 1, label});
            } else {
                obj.ce_pairs.push_back({0, 1, label});
            }
            const auto res = evaluate_objective(obj, y, true);
            double g_abs = 0.0;
            for (std::size_t r = 0; r < min_d; ++r) {
                for (std::size_t c = 0; c < n; ++c) {
                    double gr = 0.0;
                    for (std::size_t v = 0; v < inputs.size(); ++v) gr += res.d_embeddings[v][r] * inputs[v][c];
                    g_abs += std::abs(gr);
                }
            }
            sum_grad[di] += g_abs / static_cast<double>(min_d * n);
            sum_norm[di] += 0.5 * (norm(y[0]) + norm(y[1]));
        }
    }

    ScalingResult out;
    for (std::size_t di = 0; di < dims.size(); ++di) {
        out.rows.push_back({dims[di], sum_norm[di] / static_cast<double>(trials), sum_grad[di] / static_cast<double>(trials)});
    }
    for (std::size_t a = 0; a < out.rows.size(); ++a) {
        for (std::size_t b = a + 1; b < out.rows.size(); ++b) {
            const auto& ra = out.rows[a];
            const auto& rb = out.rows[b];
            const double delta_ratio = rb.mean_projection_norm / ra.mean_projection_norm;
            out.ratios.push_back({ra.dim, rb.dim, ra.mean_grad / rb.mean_grad, delta_ratio * delta_ratio});
        }
    }
    return out;
}

}  // namespace smec
