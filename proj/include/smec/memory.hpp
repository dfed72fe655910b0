#pragma once

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "smec/numerics.hpp"

namespace smec {

/// One retrieved memory entry.
struct Neighbor {
    std::string id;
    Vector vec;
    double sim = 0.0;
    std::uint64_t tick = 0;
};

/// Fixed-capacity FIFO of stage-input embeddings. Entries are copied on
/// insert and never modified afterwards.
class MemoryBank {
public:
    struct Entry {
        std::string id;
        Vector vec;
        double norm = 0.0;
        std::uint64_t tick = 0;
    };

    explicit MemoryBank(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw std::invalid_argument("MemoryBank: capacity must be >= 1");
    }

    /// Appends in order and evicts the oldest entries beyond capacity.
    std::size_t enqueue(const std::vector<std::pair<std::string, Vector>>& batch) {
        for (const auto& [id, v] : batch) {
            if (dim_ == 0) {
                if (v.empty()) throw std::invalid_argument("MemoryBank: empty vector");
                dim_ = v.size();
            } else if (v.size() != dim_) {
                throw std::invalid_argument("MemoryBank: vector dim " + std::to_string(v.size()) + " != bank dim " +
                                            std::to_string(dim_));
            }
        }
        std::size_t evicted = 0;
        for (const auto& [id, v] : batch) {
            entries_.push_back({id, v, norm(v), next_tick_++});
            if (entries_.size() > capacity_) {
                entries_.pop_front();
                ++evicted;
            }
        }
        return evicted;
    }

    /// Highest-cosine entries, descending; ties go to the older entry.
    std::vector<Neighbor> topk_similar(ConstSpan query, std::size_t k,
                                       const std::optional<std::string>& exclude_id = std::nullopt) const {
        if (k == 0 || entries_.empty()) return {};
        if (query.size() != dim_) throw std::invalid_argument("topk_similar: query dim mismatch");
        const double qn = norm(query);
        struct Scored {
            double sim;
            std::size_t pos;
        };
        std::vector<Scored> scored;
        scored.reserve(entries_.size());
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& e = entries_[i];
            if (exclude_id && e.id == *exclude_id) continue;
            double s = 0.0;
            if (qn != 0.0 && e.norm != 0.0) s = std::clamp(dot(query, e.vec) / (qn * e.norm), -1.0, 1.0);
            scored.push_back({s, i});
        }
        // Deque position order equals tick order, so the position breaks ties.
        auto better = [](const Scored& a, const Scored& b) { return a.sim != b.sim ? a.sim > b.sim : a.pos < b.pos; };
        const std::size_t take = std::min(k, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
        std::vector<Neighbor> out;
        out.reserve(take);
        for (std::size_t i = 0; i < take; ++i) {
            const auto& e = entries_[scored[i].pos];
            out.push_back({e.id, e.vec, scored[i].sim, e.tick});
        }
        return out;
    }

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t dim() const { return dim_; }
    const std::deque<Entry>& entries() const { return entries_; }

private:
    std::size_t capacity_;
    std::size_t dim_ = 0;
    std::uint64_t next_tick_ = 0;
    std::deque<Entry> entries_;
};

/// Worker cap from SMEC_THREADS (default 1).
inline std::size_t worker_count() {
    if (const char* env = std::getenv("SMEC_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    return 1;
}

/// Per-anchor top-k neighbors from the bank. Anchors are split across
/// `workers` threads; each writes only its own slots, so results do not depend
/// on the worker count.
inline std::vector<std::vector<Neighbor>> mine_neighbors(const MemoryBank& bank, const std::vector<Vector>& anchors,
                                                         std::size_t k,
                                                         const std::vector<std::string>& exclude_ids = {},
                                                         std::size_t workers = 1) {
    std::vector<std::vector<Neighbor>> out(anchors.size());
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            std::optional<std::string> ex;
            if (i < exclude_ids.size()) ex = exclude_ids[i];
            out[i] = bank.topk_similar(anchors[i], k, ex);
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, anchors.size()));
    if (workers == 1) {
        work(0, anchors.size());
        return out;
    }
    {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (anchors.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t b = w * chunk, e = std::min(anchors.size(), b + chunk);
            if (b < e) pool.emplace_back(work, b, e);
        }
    }
    return out;
}

}  // namespace smec
