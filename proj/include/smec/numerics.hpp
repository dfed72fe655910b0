#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace smec {

using Vector = std::vector<double>;
using ConstSpan = std::span<const double>;
using MutSpan = std::span<double>;

/// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    MutSpan row(std::size_t r) { return {values.data() + r * cols, cols}; }
    ConstSpan row(std::size_t r) const { return {values.data() + r * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

/// Seeded random stream. Uses the standardized mt19937_64 engine and maps raw
/// bits to doubles by hand, so draws are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 42) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on the open interval (0, 1).
    double uniform_open() {
        double u;
        do {
            u = uniform();
        } while (u == 0.0);
        return u;
    }

    /// Standard normal via Box-Muller; the spare draw is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n) {
        assert(n > 0);
        // Lemire-style rejection keeps the draw unbiased and portable.
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % n);
    }

    /// Fisher-Yates shuffle driven by `below`.
    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

    /// Derive an independent child seed.
    std::uint64_t fork() { return engine_() ^ 0x9E3779B97F4A7C15ULL; }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Deterministic seed mixing (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline double dot(ConstSpan a, ConstSpan b) {
    assert(a.size() == b.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double norm(ConstSpan a) { return std::sqrt(dot(a, a)); }

/// Cosine similarity clamped to [-1, 1]. A zero-norm operand yields 0 and sets
/// `degenerate` when provided.
inline double cosine(ConstSpan a, ConstSpan b, bool* degenerate = nullptr) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("cosine: operands must have equal, non-zero length");
    }
    const double na = norm(a);
    const double nb = norm(b);
    if (degenerate) *degenerate = false;
    if (na == 0.0 || nb == 0.0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline double cosine_clamped01(ConstSpan a, ConstSpan b, bool* degenerate = nullptr) {
    return std::max(0.0, cosine(a, b, degenerate));
}

/// Accumulates upstream * ∂cos/∂a into `da` and upstream * ∂cos/∂b into `db`.
/// With A = |a|, B = |b|, s = aᵀb/(AB): ∂s/∂a = b/(AB) − s·a/A².
/// Zero-norm operands contribute nothing.
inline void cosine_backward(ConstSpan a, ConstSpan b, double upstream, MutSpan da, MutSpan db) {
    const double A = norm(a);
    const double B = norm(b);
    if (A == 0.0 || B == 0.0 || upstream == 0.0) return;
    const double s = dot(a, b) / (A * B);
    const double inv_ab = 1.0 / (A * B);
    for (std::size_t i = 0; i < a.size(); ++i) {
        da[i] += upstream * (b[i] * inv_ab - s * a[i] / (A * A));
        db[i] += upstream * (a[i] * inv_ab - s * b[i] / (B * B));
    }
}

/// Temperature softmax; subtracts the max before exponentiating.
inline Vector softmax_tau(ConstSpan z, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("softmax_tau: tau must be > 0");
    if (z.empty()) return {};
    const double zmax = *std::max_element(z.begin(), z.end());
    Vector out(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp((z[i] - zmax) / tau);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

/// log(softmax_tau(z)) computed without forming the probabilities.
inline Vector log_softmax_tau(ConstSpan z, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("log_softmax_tau: tau must be > 0");
    if (z.empty()) return {};
    const double zmax = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double v : z) total += std::exp((v - zmax) / tau);
    const double log_total = std::log(total);
    Vector out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - zmax) / tau - log_total;
    return out;
}

inline constexpr double kGumbelEps = 1e-12;

/// Gumbel(0, 1) draws from any callable returning uniforms on (0, 1).
template <class UniformSource>
    requires std::is_invocable_r_v<double, UniformSource&>
Vector sample_gumbel(std::size_t n, UniformSource& uniform) {
    Vector out(n);
    for (double& g : out) {
        const double u = std::clamp(static_cast<double>(uniform()), kGumbelEps, 1.0 - kGumbelEps);
        g = -std::log(-std::log(u));
    }
    return out;
}

inline Vector sample_gumbel(std::size_t n, Rng& rng) {
    auto source = [&rng] { return rng.uniform_open(); };
    return sample_gumbel(n, source);
}

/// y = M x
inline Vector matvec(const Matrix& m, ConstSpan x) {
    assert(m.cols == x.size());
    Vector y(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) y[r] = dot(m.row(r), x);
    return y;
}

/// y = Mᵀ x
inline Vector matvec_t(const Matrix& m, ConstSpan x) {
    assert(m.rows == x.size());
    Vector y(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double xr = x[r];
        if (xr == 0.0) continue;
        const auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
    }
    return y;
}

inline bool all_finite(ConstSpan v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Round to the nearest float32 value; parameters are kept float-representable
/// so that checkpoints round-trip exactly.
inline double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace smec
