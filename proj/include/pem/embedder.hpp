#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pem/error.hpp"

namespace pem {

inline constexpr double kUnitNormTolerance = 1e-4;

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Lowercased whitespace-separated words, empty tokens dropped.
inline std::vector<std::string> whitespace_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!cur.empty()) {
                tokens.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

/// Maps text to a fixed-length L2-normalized vector. Implementations must be
/// deterministic: identical text yields an identical vector.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dim() const = 0;
    virtual std::vector<float> embed(std::string_view text) const = 0;
};

/// Deterministic text embedder: each token maps to a pseudo-random unit
/// vector through a seeded hash, and a text embeds as the normalized sum of
/// its token vectors. Token order does not matter (bag composition); the
/// whole construction is platform-independent for a fixed seed because it
/// only uses integer mixing plus exact IEEE arithmetic.
class HashProjectionEmbedder final : public Embedder {
public:
    HashProjectionEmbedder(std::size_t dim, std::uint64_t seed)
        : dim_(dim), seed_(seed) {
        if (dim < 2) throw Error("embedder dim must be >= 2");
    }

    std::size_t dim() const override { return dim_; }
    std::uint64_t seed() const { return seed_; }

    std::vector<float> embed(std::string_view text) const override {
        auto tokens = whitespace_tokens(text);
        if (tokens.empty()) throw Error("embed: text is empty");
        // Sorting makes the sum bitwise order-invariant.
        std::sort(tokens.begin(), tokens.end());
        std::vector<double> dir = token_direction(tokens.front());
        if (tokens.size() == 1) return to_float(dir);
        std::vector<double> acc = std::move(dir);
        for (std::size_t t = 1; t < tokens.size(); ++t) {
            auto d = token_direction(tokens[t]);
            for (std::size_t i = 0; i < dim_; ++i) acc[i] += d[i];
        }
        double norm = l2(acc);
        if (norm < 1e-9) throw Error("embed: degenerate embedding for text");
        for (auto& v : acc) v /= norm;
        return to_float(acc);
    }

    /// Unit vector assigned to one token (already lowercased by embed()).
    std::vector<float> token_vector(std::string_view token) const {
        return to_float(token_direction(token));
    }

private:
    std::vector<double> token_direction(std::string_view token) const {
        std::uint64_t state = fnv1a64(token) ^ (seed_ * 0x9E3779B97F4A7C15ull);
        std::vector<double> v(dim_);
        for (std::size_t i = 0; i < dim_; ++i) {
            const std::uint64_t bits = splitmix64(state);
            // 53 uniform bits -> [-1, 1); exact IEEE operations only.
            v[i] = static_cast<double>(bits >> 11) * 0x1.0p-53 * 2.0 - 1.0;
        }
        double norm = l2(v);
        if (norm < 1e-12) throw Error("embedder: degenerate token hash");
        for (auto& x : v) x /= norm;
        return v;
    }

    static double l2(const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    }

    static std::vector<float> to_float(const std::vector<double>& v) {
        std::vector<float> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
        return out;
    }

    std::size_t dim_;
    std::uint64_t seed_;
};

} // namespace pem
