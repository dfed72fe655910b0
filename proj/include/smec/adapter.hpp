#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "smec/dataset.hpp"
#include "smec/error.hpp"
#include "smec/numerics.hpp"

namespace smec {

struct StageSpec {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;

    void validate() const {
        if (out_dim < 1 || out_dim >= in_dim) {
            throw std::invalid_argument("StageSpec: require 1 <= out_dim < in_dim (got " + std::to_string(in_dim) +
                                        "->" + std::to_string(out_dim) + ")");
        }
    }
    bool operator==(const StageSpec&) const = default;
};

/// Hard selection plus the soft distribution used by the straight-through
/// backward pass. `noise` is empty for deterministic selections.
struct SelectionResult {
    std::vector<std::size_t> indices;  // ascending
    Vector soft_weights;               // softmax_tau(logits + noise) over in_dim; empty for prefix/infer
    Vector noise;                      // Gumbel draws used for this selection
    double tau = 1.0;
};

enum class SelectionMode : std::uint8_t { ads, prefix };

namespace detail {

/// Positions ordered by descending value, ties to the lower index.
inline std::vector<std::size_t> descending_order(ConstSpan values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    return order;
}

inline std::vector<std::size_t> top_k_ascending(ConstSpan values, std::size_t k) {
    auto order = descending_order(values);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

inline void check_out_dim(std::size_t in_dim, std::size_t out_dim) {
    if (out_dim >= in_dim) {
        throw std::invalid_argument("ADS: out_dim (" + std::to_string(out_dim) + ") must be < number of logits (" +
                                    std::to_string(in_dim) + ")");
    }
}

}  // namespace detail

/// Selection from logits perturbed by the given Gumbel noise.
inline SelectionResult ads_select_with_noise(ConstSpan logits, std::size_t out_dim, double tau, Vector noise) {
    detail::check_out_dim(logits.size(), out_dim);
    if (noise.size() != logits.size()) throw std::invalid_argument("ADS: noise length != logits length");
    Vector perturbed(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) perturbed[i] = logits[i] + noise[i];
    SelectionResult out;
    out.indices = detail::top_k_ascending(perturbed, out_dim);
    out.soft_weights = softmax_tau(perturbed, tau);
    out.noise = std::move(noise);
    out.tau = tau;
    return out;
}

inline SelectionResult ads_select_train(ConstSpan logits, std::size_t out_dim, double tau, Rng& rng) {
    detail::check_out_dim(logits.size(), out_dim);
    if (!(tau > 0.0)) throw std::invalid_argument("ADS: tau must be > 0");
    return ads_select_with_noise(logits, out_dim, tau, sample_gumbel(logits.size(), rng));
}

/// Deterministic top-k of the raw logits.
inline SelectionResult ads_select_infer(ConstSpan logits, std::size_t out_dim) {
    detail::check_out_dim(logits.size(), out_dim);
    SelectionResult out;
    out.indices = detail::top_k_ascending(logits, out_dim);
    return out;
}

inline SelectionResult prefix_select(std::size_t in_dim, std::size_t out_dim) {
    detail::check_out_dim(in_dim, out_dim);
    SelectionResult out;
    out.indices.resize(out_dim);
    std::iota(out.indices.begin(), out.indices.end(), std::size_t{0});
    return out;
}

/// One compression stage: select out_dim of in_dim coordinates, then apply a
/// residual dense layer at the reduced width: out = s + W s + b.
struct AdapterStage {
    StageSpec spec;
    Vector logits;
    Matrix W;
    Vector b;
    bool frozen = false;
    double tau = 1.0;
    /// Training-time selection rule. Not persisted: inference always uses the
    /// top-k of `logits`, and prefix stages carry strictly decreasing logits.
    SelectionMode selection = SelectionMode::ads;

    bool same_parameters(const AdapterStage& o) const {
        return spec == o.spec && logits == o.logits && W == o.W && b == o.b && frozen == o.frozen && tau == o.tau;
    }
};

enum class ForwardMode { train, infer };

inline SelectionResult select_for(const AdapterStage& stage, ForwardMode mode, Rng* rng) {
    if (stage.selection == SelectionMode::prefix) return prefix_select(stage.spec.in_dim, stage.spec.out_dim);
    if (mode == ForwardMode::infer) return ads_select_infer(stage.logits, stage.spec.out_dim);
    if (!rng) throw std::invalid_argument("stage_forward: train mode needs a random stream");
    return ads_select_train(stage.logits, stage.spec.out_dim, stage.tau, *rng);
}

/// Forward intermediates of one vector through one stage.
struct StageCache {
    Vector input;
    Vector selected;  // gathered (and multiplier-scaled) coordinates
    Vector output;
};

/// Applies a stage under a fixed selection. `multipliers`, when non-empty,
/// scales each gathered slot; it is only used by finite-difference probing of
/// the straight-through surrogate (the training forward pass uses 1).
inline StageCache apply_stage(const AdapterStage& stage, ConstSpan z, const SelectionResult& sel,
                              ConstSpan multipliers = {}) {
    if (z.size() != stage.spec.in_dim) {
        throw std::invalid_argument("stage_forward: input dim " + std::to_string(z.size()) + " != " +
                                    std::to_string(stage.spec.in_dim));
    }
    const std::size_t m = stage.spec.out_dim;
    StageCache c;
    c.input.assign(z.begin(), z.end());
    c.selected.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        c.selected[j] = z[sel.indices[j]];
        if (!multipliers.empty()) c.selected[j] *= multipliers[j];
    }
    c.output = matvec(stage.W, c.selected);
    for (std::size_t j = 0; j < m; ++j) c.output[j] += c.selected[j] + stage.b[j];
    return c;
}

inline std::pair<Vector, StageCache> stage_forward(const AdapterStage& stage, ConstSpan z, ForwardMode mode,
                                                   Rng* rng = nullptr) {
    const auto sel = select_for(stage, mode, rng);
    auto cache = apply_stage(stage, z, sel);
    Vector out = cache.output;
    return {std::move(out), std::move(cache)};
}

/// Ordered chain of stages.
struct AdapterStack {
    std::size_t input_dim = 0;
    std::vector<AdapterStage> stages;

    std::size_t output_dim() const { return stages.empty() ? input_dim : stages.back().spec.out_dim; }

    /// [D, d1, ..., d_last]
    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> out{input_dim};
        for (const auto& s : stages) out.push_back(s.spec.out_dim);
        return out;
    }
};

/// Infer-mode composition of the first `stage_count` stages (0 = identity).
inline Vector forward_through(const AdapterStack& stack, ConstSpan z, std::size_t stage_count) {
    if (z.size() != stack.input_dim) throw std::invalid_argument("stack_forward: input dim mismatch");
    if (stage_count > stack.stages.size()) throw std::invalid_argument("stack_forward: stage index out of range");
    Vector cur(z.begin(), z.end());
    for (std::size_t s = 0; s < stage_count; ++s) {
        cur = apply_stage(stack.stages[s], cur, select_for(stack.stages[s], ForwardMode::infer, nullptr)).output;
    }
    return cur;
}

/// Composition of stages 0..=upto_stage; train mode samples selection only for
/// unfrozen stages.
inline Vector stack_forward(const AdapterStack& stack, ConstSpan z, std::size_t upto_stage, ForwardMode mode,
                            Rng* rng = nullptr) {
    if (upto_stage >= stack.stages.size()) throw std::invalid_argument("stack_forward: stage index out of range");
    if (z.size() != stack.input_dim) throw std::invalid_argument("stack_forward: input dim mismatch");
    Vector cur(z.begin(), z.end());
    for (std::size_t s = 0; s <= upto_stage; ++s) {
        const auto& st = stack.stages[s];
        const auto m = st.frozen ? ForwardMode::infer : mode;
        cur = apply_stage(st, cur, select_for(st, m, rng)).output;
    }
    return cur;
}

/// Stack output truncated to the stage whose output width is `dim`.
inline Vector encode_at_dim(const AdapterStack& stack, ConstSpan z, std::size_t dim) {
    const auto dims = stack.dims();
    auto it = std::find(dims.begin(), dims.end(), dim);
    if (it == dims.end()) throw std::invalid_argument("dimension " + std::to_string(dim) + " not in stack");
    return forward_through(stack, z, static_cast<std::size_t>(it - dims.begin()));
}

/// Composed map from output slot to original input coordinate, valid for the
/// selection part of each stage (infer mode).
inline std::vector<std::size_t> composed_selection(const AdapterStack& stack, std::size_t stage_count) {
    std::vector<std::size_t> map(stack.input_dim);
    std::iota(map.begin(), map.end(), std::size_t{0});
    for (std::size_t s = 0; s < stage_count; ++s) {
        const auto sel = select_for(stack.stages.at(s), ForwardMode::infer, nullptr);
        std::vector<std::size_t> next(sel.indices.size());
        for (std::size_t j = 0; j < next.size(); ++j) next[j] = map[sel.indices[j]];
        map = std::move(next);
    }
    return map;
}

inline void freeze_through(AdapterStack& stack, std::size_t stage_idx) {
    if (stage_idx >= stack.stages.size()) throw std::invalid_argument("freeze_through: index out of range");
    for (std::size_t s = 0; s <= stage_idx; ++s) stack.stages[s].frozen = true;
}

inline void init_stage(AdapterStage& stage, std::uint64_t init_seed) {
    const auto in = stage.spec.in_dim;
    const auto out = stage.spec.out_dim;
    stage.logits.assign(in, 0.0);
    if (stage.selection == SelectionMode::prefix) {
        for (std::size_t i = 0; i < in; ++i) stage.logits[i] = -static_cast<double>(i);
    }
    Rng rng(init_seed);
    stage.W = Matrix(out, out);
    for (double& w : stage.W.values) w = to_f32(0.02 * rng.normal());
    stage.b.assign(out, 0.0);
    stage.frozen = false;
    stage.tau = 1.0;
}

inline AdapterStage& append_stage(AdapterStack& stack, const StageSpec& spec, std::uint64_t init_seed,
                                  SelectionMode mode = SelectionMode::ads) {
    spec.validate();
    if (spec.in_dim != stack.output_dim()) {
        throw std::invalid_argument("append_stage: in_dim " + std::to_string(spec.in_dim) +
                                    " does not match stack output dim " + std::to_string(stack.output_dim()));
    }
    AdapterStage stage;
    stage.spec = spec;
    stage.selection = mode;
    init_stage(stage, init_seed);
    stack.stages.push_back(std::move(stage));
    return stack.stages.back();
}

// ---------------------------------------------------------------------------
// Parallel (MRL baseline) adapter: one residual dense layer at full width whose
// nested selections feed one loss per trajectory dim.

struct MrlAdapter {
    std::size_t dim = 0;
    std::vector<std::size_t> head_dims;  // trajectory, descending, head_dims[0] == dim
    SelectionMode selection = SelectionMode::prefix;
    Vector logits;
    Matrix W;
    Vector b;
    double tau = 1.0;

    static MrlAdapter create(std::vector<std::size_t> trajectory, SelectionMode mode, std::uint64_t init_seed) {
        if (trajectory.empty()) throw std::invalid_argument("MrlAdapter: empty trajectory");
        for (std::size_t i = 1; i < trajectory.size(); ++i) {
            if (trajectory[i] >= trajectory[i - 1] || trajectory[i] == 0) {
                throw std::invalid_argument("MrlAdapter: trajectory must be strictly decreasing and positive");
            }
        }
        MrlAdapter a;
        a.dim = trajectory.front();
        a.head_dims = std::move(trajectory);
        a.selection = mode;
        a.logits.assign(a.dim, 0.0);
        if (mode == SelectionMode::prefix) {
            for (std::size_t i = 0; i < a.dim; ++i) a.logits[i] = -static_cast<double>(i);
        }
        Rng rng(init_seed);
        a.W = Matrix(a.dim, a.dim);
        for (double& w : a.W.values) w = to_f32(0.02 * rng.normal());
        a.b.assign(a.dim, 0.0);
        return a;
    }
};

/// Nested selection for every head: `order` ranks coordinates, head m keeps
/// the first m positions of that ranking (sorted ascending).
struct MrlSelection {
    std::vector<std::size_t> order;
    Vector soft_weights;  // empty for prefix / infer
    Vector noise;
    double tau = 1.0;

    std::vector<std::size_t> head_indices(std::size_t m) const {
        std::vector<std::size_t> idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
        std::sort(idx.begin(), idx.end());
        return idx;
    }
};

inline MrlSelection mrl_select(const MrlAdapter& a, ForwardMode mode, Rng* rng) {
    MrlSelection sel;
    sel.tau = a.tau;
    if (a.selection == SelectionMode::prefix) {
        sel.order.resize(a.dim);
        std::iota(sel.order.begin(), sel.order.end(), std::size_t{0});
        return sel;
    }
    if (mode == ForwardMode::infer) {
        sel.order = detail::descending_order(a.logits);
        return sel;
    }
    if (!rng) throw std::invalid_argument("mrl_select: train mode needs a random stream");
    sel.noise = sample_gumbel(a.dim, *rng);
    Vector perturbed(a.dim);
    for (std::size_t i = 0; i < a.dim; ++i) perturbed[i] = a.logits[i] + sel.noise[i];
    sel.order = detail::descending_order(perturbed);
    sel.soft_weights = softmax_tau(perturbed, a.tau);
    return sel;
}

/// Full-width residual transform h = z + W z + b.
inline Vector mrl_hidden(const MrlAdapter& a, ConstSpan z) {
    if (z.size() != a.dim) throw std::invalid_argument("MrlAdapter: input dim mismatch");
    Vector h = matvec(a.W, z);
    for (std::size_t i = 0; i < a.dim; ++i) h[i] += z[i] + a.b[i];
    return h;
}

inline Vector mrl_encode(const MrlAdapter& a, ConstSpan z, std::size_t head_dim) {
    if (std::find(a.head_dims.begin(), a.head_dims.end(), head_dim) == a.head_dims.end()) {
        throw std::invalid_argument("dimension " + std::to_string(head_dim) + " not in MRL trajectory");
    }
    const auto h = mrl_hidden(a, z);
    const auto sel = mrl_select(a, ForwardMode::infer, nullptr);
    Vector out;
    for (auto i : sel.head_indices(head_dim)) out.push_back(h[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints. Stack: magic SMCA. MRL adapter: magic SMCM. Both end with a
// u64 FNV-1a checksum over all preceding bytes.

inline constexpr char kStackMagic[4] = {'S', 'M', 'C', 'A'};
inline constexpr char kMrlMagic[4] = {'S', 'M', 'C', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_floats(std::ostream& out, ConstSpan values) {
    for (double v : values) put_le<float>(out, static_cast<float>(v));
}

inline void get_floats(std::istream& in, MutSpan values, const char* what) {
    for (double& v : values) {
        const float f = get_le<float>(in, what);
        if (!std::isfinite(f)) throw FormatError(std::string("non-finite value in ") + what);
        v = f;
    }
}

inline std::string seal(const std::string& body) {
    std::ostringstream out;
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    put_le<std::uint64_t>(out, fnv1a64(body));
    return out.str();
}

inline std::string unseal(const std::string& bytes) {
    if (bytes.size() < 12) throw FormatError("checkpoint too short");
    const std::string body = bytes.substr(0, bytes.size() - 8);
    std::istringstream trailer(bytes.substr(bytes.size() - 8));
    const auto stored = get_le<std::uint64_t>(trailer, "checksum");
    if (stored != fnv1a64(body)) throw FormatError("checkpoint checksum mismatch");
    return body;
}

inline std::string read_all(const std::string& path) {
    auto in = open_in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

inline std::string serialize_stack(const AdapterStack& stack) {
    std::ostringstream out;
    out.write(kStackMagic, 4);
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(stack.input_dim));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(stack.stages.size()));
    for (const auto& s : stack.stages) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.spec.in_dim));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.spec.out_dim));
        detail::put_le<std::uint8_t>(out, s.frozen ? 1 : 0);
        detail::put_le<float>(out, static_cast<float>(s.tau));
        detail::put_floats(out, s.logits);
        detail::put_floats(out, s.W.values);
        detail::put_floats(out, s.b);
    }
    return detail::seal(out.str());
}

inline AdapterStack deserialize_stack(const std::string& bytes) {
    std::istringstream in(detail::unseal(bytes));
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kStackMagic, 4) != 0) throw FormatError("bad magic: not an SMCA checkpoint");
    const auto version = detail::get_le<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    AdapterStack stack;
    stack.input_dim = detail::get_le<std::uint32_t>(in, "input_dim");
    const auto count = detail::get_le<std::uint32_t>(in, "stage count");
    for (std::uint32_t i = 0; i < count; ++i) {
        AdapterStage s;
        s.spec.in_dim = detail::get_le<std::uint32_t>(in, "in_dim");
        s.spec.out_dim = detail::get_le<std::uint32_t>(in, "out_dim");
        try {
            s.spec.validate();
        } catch (const std::invalid_argument& e) {
            throw FormatError(e.what());
        }
        if (s.spec.in_dim != stack.output_dim()) throw FormatError("checkpoint stages are not chain-consistent");
        s.frozen = detail::get_le<std::uint8_t>(in, "frozen flag") != 0;
        s.tau = detail::get_le<float>(in, "tau");
        s.logits.resize(s.spec.in_dim);
        s.W = Matrix(s.spec.out_dim, s.spec.out_dim);
        s.b.resize(s.spec.out_dim);
        detail::get_floats(in, s.logits, "logits");
        detail::get_floats(in, s.W.values, "W");
        detail::get_floats(in, s.b, "b");
        stack.stages.push_back(std::move(s));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in checkpoint");
    return stack;
}

inline std::string serialize_mrl(const MrlAdapter& a) {
    std::ostringstream out;
    out.write(kMrlMagic, 4);
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.dim));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.head_dims.size()));
    for (auto d : a.head_dims) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(a.selection));
    detail::put_le<float>(out, static_cast<float>(a.tau));
    detail::put_floats(out, a.logits);
    detail::put_floats(out, a.W.values);
    detail::put_floats(out, a.b);
    return detail::seal(out.str());
}

inline MrlAdapter deserialize_mrl(const std::string& bytes) {
    std::istringstream in(detail::unseal(bytes));
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMrlMagic, 4) != 0) throw FormatError("bad magic: not an SMCM checkpoint");
    const auto version = detail::get_le<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    MrlAdapter a;
    a.dim = detail::get_le<std::uint32_t>(in, "dim");
    const auto heads = detail::get_le<std::uint32_t>(in, "head count");
    for (std::uint32_t i = 0; i < heads; ++i) a.head_dims.push_back(detail::get_le<std::uint32_t>(in, "head dim"));
    const auto mode = detail::get_le<std::uint8_t>(in, "selection mode");
    if (mode > 1) throw FormatError("bad selection mode");
    a.selection = static_cast<SelectionMode>(mode);
    a.tau = detail::get_le<float>(in, "tau");
    a.logits.resize(a.dim);
    a.W = Matrix(a.dim, a.dim);
    a.b.resize(a.dim);
    detail::get_floats(in, a.logits, "logits");
    detail::get_floats(in, a.W.values, "W");
    detail::get_floats(in, a.b, "b");
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in checkpoint");
    return a;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    auto out = detail::open_out(path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline void save_stack(const std::string& path, const AdapterStack& stack) { write_file(path, serialize_stack(stack)); }
inline AdapterStack load_stack(const std::string& path) { return deserialize_stack(detail::read_all(path)); }
inline void save_mrl(const std::string& path, const MrlAdapter& a) { write_file(path, serialize_mrl(a)); }
inline MrlAdapter load_mrl(const std::string& path) { return deserialize_mrl(detail::read_all(path)); }

/// Peeks at the magic to tell stack and MRL checkpoints apart.
inline bool is_mrl_checkpoint(const std::string& path) {
    auto in = detail::open_in(path);
    char magic[4] = {};
    in.read(magic, 4);
    return std::memcmp(magic, kMrlMagic, 4) == 0;
}

}  // namespace smec
