#pragma once

#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "smec/numerics.hpp"

namespace smec {

struct LossValue {
    double value = 0.0;
    std::size_t n_terms = 0;

    LossValue& operator+=(const LossValue& o) {
        value += o.value;
        n_terms += o.n_terms;
        return *this;
    }
    double mean() const { return n_terms == 0 ? 0.0 : value / static_cast<double>(n_terms); }
};

struct PairScore {
    std::size_t query_idx = 0;
    std::size_t doc_idx = 0;
    double sim = 0.0;
    double gain = 0.0;
};

/// Scored docs of one query.
using QueryGroup = std::vector<PairScore>;

namespace detail {

/// log(1 + e^x) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

/// Pairwise logistic rank loss
///   Σ_i Σ_{j,k} [y_ij > y_ik] (y_ij − y_ik) log(1 + exp(s_ik − s_ij)).
/// When `dsim` is given it receives ∂L/∂s with the same shape as `groups`.
inline LossValue rank_loss(const std::vector<QueryGroup>& groups, std::vector<Vector>* dsim = nullptr) {
    LossValue out;
    if (dsim) {
        dsim->assign(groups.size(), {});
        for (std::size_t g = 0; g < groups.size(); ++g) (*dsim)[g].assign(groups[g].size(), 0.0);
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& grp = groups[g];
        for (std::size_t j = 0; j < grp.size(); ++j) {
            for (std::size_t k = 0; k < grp.size(); ++k) {
                const double dy = grp[j].gain - grp[k].gain;
                if (!(dy > 0.0)) continue;
                const double margin = grp[k].sim - grp[j].sim;
                out.value += dy * detail::softplus(margin);
                ++out.n_terms;
                if (dsim) {
                    const double d = dy * detail::sigmoid(margin);
                    (*dsim)[g][k] += d;
                    (*dsim)[g][j] -= d;
                }
            }
        }
    }
    return out;
}

/// Gradient of a pair loss with respect to both embeddings.
struct PairGrad {
    Vector d1;
    Vector d2;
};

/// (label − clamp01(cos(e1, e2)))². Below the clamp the derivative is 0.
inline LossValue mse_pair_loss(ConstSpan e1, ConstSpan e2, double label, PairGrad* grad = nullptr) {
    const double raw = cosine(e1, e2);
    const double s = std::max(0.0, raw);
    const double diff = label - s;
    if (grad) {
        grad->d1.assign(e1.size(), 0.0);
        grad->d2.assign(e2.size(), 0.0);
        if (raw > 0.0) cosine_backward(e1, e2, -2.0 * diff, grad->d1, grad->d2);
    }
    return {diff * diff, 1};
}

inline constexpr double kCeEps = 1e-7;

/// Binary cross-entropy on p = clamp01(cos) squeezed into [ε, 1 − ε].
inline LossValue ce_pair_loss(ConstSpan e1, ConstSpan e2, double label, PairGrad* grad = nullptr) {
    const double raw = cosine(e1, e2);
    const double clamped = std::max(0.0, raw);
    const double p = std::clamp(clamped, kCeEps, 1.0 - kCeEps);
    const double value = -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
    if (grad) {
        grad->d1.assign(e1.size(), 0.0);
        grad->d2.assign(e2.size(), 0.0);
        const bool active = raw > 0.0 && clamped > kCeEps && clamped < 1.0 - kCeEps;
        if (active) {
            const double dp = -label / p + (1.0 - label) / (1.0 - p);
            cosine_backward(e1, e2, dp, grad->d1, grad->d2);
        }
    }
    return {value, 1};
}

/// anchor index → neighbor indices, both into the same high/low lists.
using NeighborMap = std::map<std::size_t, std::vector<std::size_t>>;

/// Σ_i Σ_{j ∈ N(i)} |cos(high_i, high_j) − cos(low_i, low_j)|.
/// When `dlow` is given it receives ∂L/∂low (shape of `low`).
inline LossValue unsup_loss(const std::vector<Vector>& high, const std::vector<Vector>& low,
                            const NeighborMap& neighbors, std::vector<Vector>* dlow = nullptr) {
    if (high.size() != low.size()) throw std::invalid_argument("unsup_loss: high/low length mismatch");
    if (dlow) {
        dlow->assign(low.size(), {});
        for (std::size_t i = 0; i < low.size(); ++i) (*dlow)[i].assign(low[i].size(), 0.0);
    }
    LossValue out;
    for (const auto& [i, nbrs] : neighbors) {
        for (auto j : nbrs) {
            if (i >= high.size() || j >= high.size()) throw std::invalid_argument("unsup_loss: neighbor index out of range");
            const double gap = cosine(high[i], high[j]) - cosine(low[i], low[j]);
            out.value += std::abs(gap);
            ++out.n_terms;
            if (dlow && gap != 0.0) {
                const double up = gap > 0.0 ? -1.0 : 1.0;
                cosine_backward(low[i], low[j], up, (*dlow)[i], (*dlow)[j]);
            }
        }
    }
    return out;
}

/// Σ c_m · L_m.
inline LossValue mrl_joint_loss(const std::vector<std::pair<double, LossValue>>& per_dim) {
    LossValue out;
    for (const auto& [c, l] : per_dim) {
        if (c < 0.0) throw std::invalid_argument("mrl_joint_loss: weights must be >= 0");
        out.value += c * l.value;
        out.n_terms += l.n_terms;
    }
    return out;
}

inline constexpr double kDefaultAlpha = 1.0;

inline LossValue total_loss(const LossValue& rank, const LossValue& unsup, double alpha = kDefaultAlpha) {
    if (alpha < 0.0) throw std::invalid_argument("total_loss: alpha must be >= 0");
    return {rank.value + alpha * unsup.value, rank.n_terms + unsup.n_terms};
}

}  // namespace smec
