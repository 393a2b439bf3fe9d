#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "pem/embedder.hpp"
#include "pem/embedding_store.hpp"
#include "pem/error.hpp"

namespace pem {

inline constexpr float kDefaultSuppressWeight = 0.5f;
inline constexpr float kDefaultCentroidAlpha = 0.5f;
inline constexpr double kDefaultHalfLifeDays = 30.0;
inline constexpr float kDefaultMmrLambda = 0.7f;
inline constexpr std::size_t kDefaultPool = 500;
inline constexpr std::size_t kMmrOversample = 3;

struct SuppressSpec {
    std::string text;
    float weight = kDefaultSuppressWeight;
    friend bool operator==(const SuppressSpec&, const SuppressSpec&) = default;
};

struct CentroidSpec {
    std::vector<std::string> example_ids;
    float alpha = kDefaultCentroidAlpha;
    friend bool operator==(const CentroidSpec&, const CentroidSpec&) = default;
};

struct TrajectorySpec {
    std::string from_text;
    std::string to_text;
    friend bool operator==(const TrajectorySpec&, const TrajectorySpec&) = default;
};

struct DecaySpec {
    double half_life_days = kDefaultHalfLifeDays;
    friend bool operator==(const DecaySpec&, const DecaySpec&) = default;
};

/// One query's worth of score-surface operations. Modulations execute in a
/// fixed order regardless of how the caller assembled the spec: centroid
/// (query shift), base similarity, trajectory, decay, suppress, diverse.
struct ModulationSpec {
    std::optional<CentroidSpec> centroid;
    std::optional<TrajectorySpec> trajectory;
    std::optional<DecaySpec> decay;
    std::vector<SuppressSpec> suppress;
    bool diverse = false;
    float mmr_lambda = kDefaultMmrLambda;
    std::size_t pool = kDefaultPool;
    friend bool operator==(const ModulationSpec&, const ModulationSpec&) = default;
};

/// Scores are configuration-relative: comparable within one result set,
/// meaningless across different modulation configurations.
struct ScoredCandidate {
    std::string id;
    float score = 0.0f;
    friend bool operator==(const ScoredCandidate&, const ScoredCandidate&) = default;
};

inline float dot(std::span<const float> a, std::span<const float> b) {
    float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
    std::size_t i = 0;
    const std::size_t n = a.size();
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

/// q' = alpha * q + (1 - alpha) * mean(examples), renormalized.
inline std::vector<float> apply_centroid(std::span<const float> q,
                                         const std::vector<std::span<const float>>& examples,
                                         float alpha) {
    if (examples.empty()) throw Error("centroid: no example vectors");
    const std::size_t dim = q.size();
    std::vector<double> mean(dim, 0.0);
    for (const auto& e : examples) {
        if (e.size() != dim) throw Error("centroid: example dimensionality mismatch");
        for (std::size_t i = 0; i < dim; ++i) mean[i] += e[i];
    }
    const double inv = 1.0 / static_cast<double>(examples.size());
    std::vector<double> blend(dim);
    double norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        blend[i] = static_cast<double>(alpha) * q[i] + (1.0 - alpha) * mean[i] * inv;
        norm += blend[i] * blend[i];
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw Error("centroid: blended query vector is zero");
    std::vector<float> out(dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(blend[i] / norm);
    return out;
}

/// scores[i] = dot(row_i, q). One pass over the candidate matrix; rows are
/// independent so an optional thread split changes nothing numerically.
inline std::vector<float> base_scores(const CandidateView& view, std::span<const float> q,
                                      std::size_t threads = 1) {
    if (!view.empty() && view.dim() != q.size())
        throw Error("dimensionality mismatch: query dim " + std::to_string(q.size()) +
                    " vs store dim " + std::to_string(view.dim()));
    std::vector<float> scores(view.size());
    auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) scores[i] = dot(view.row(i), q);
    };
    if (threads <= 1 || view.size() < 4096) {
        worker(0, view.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t per = (view.size() + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t begin = t * per;
            if (begin >= view.size()) break;
            pool.emplace_back(worker, begin, std::min(begin + per, view.size()));
        }
        for (auto& th : pool) th.join();
    }
    return scores;
}

/// scores[i] = 0.5 * scores[i] + 0.5 * dot(row_i, to - from). The direction
/// vector is used as-is, not renormalized.
inline void apply_trajectory(std::vector<float>& scores, const CandidateView& view,
                             std::span<const float> from_vec, std::span<const float> to_vec) {
    if (scores.size() != view.size()) throw Error("trajectory: scores not aligned to view");
    std::vector<float> direction(from_vec.size());
    for (std::size_t i = 0; i < direction.size(); ++i) direction[i] = to_vec[i] - from_vec[i];
    for (std::size_t i = 0; i < scores.size(); ++i)
        scores[i] = 0.5f * scores[i] + 0.5f * dot(view.row(i), direction);
}

/// scores[i] *= 1 / (1 + age_days / half_life). Age equal to the half-life
/// halves the score exactly.
inline void apply_decay(std::vector<float>& scores, std::span<const double> ages_days,
                        double half_life_days) {
    if (half_life_days <= 0.0) throw Error("decay: half-life must be positive");
    if (scores.size() != ages_days.size()) throw Error("decay: ages not aligned to scores");
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double factor = 1.0 / (1.0 + ages_days[i] / half_life_days);
        scores[i] = static_cast<float>(scores[i] * factor);
    }
}

/// scores[i] -= weight * dot(row_i, suppress_vec). Repeated calls compose
/// additively; negative final scores are allowed.
inline void apply_suppress(std::vector<float>& scores, const CandidateView& view,
                           std::span<const float> suppress_vec, float weight) {
    if (scores.size() != view.size()) throw Error("suppress: scores not aligned to view");
    for (std::size_t i = 0; i < scores.size(); ++i)
        scores[i] -= weight * dot(view.row(i), suppress_vec);
}

namespace detail {

// Ordering rule shared by plain selection and MMR: score descending, id
// ascending on ties, so results are deterministic.
inline bool ranks_before(float score_a, const std::string& id_a, float score_b,
                         const std::string& id_b) {
    if (score_a != score_b) return score_a > score_b;
    return id_a < id_b;
}

inline std::vector<std::uint32_t> top_indices(const CandidateView& view,
                                              std::span<const float> scores, std::size_t k) {
    std::vector<std::uint32_t> order(view.size());
    std::iota(order.begin(), order.end(), 0u);
    const std::size_t take = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          return ranks_before(scores[a], view.ids[a], scores[b], view.ids[b]);
                      });
    order.resize(take);
    return order;
}

} // namespace detail

inline std::vector<ScoredCandidate> top_k_select(const CandidateView& view,
                                                 std::span<const float> scores, std::size_t k) {
    auto order = detail::top_indices(view, scores, k);
    std::vector<ScoredCandidate> out;
    out.reserve(order.size());
    for (auto i : order) out.push_back({view.ids[i], scores[i]});
    return out;
}

/// MMR selection over an oversample pool of the top (oversample_factor * k)
/// candidates by modulated score. Iteratively picks
///   argmax  lambda * rel(c) - (1 - lambda) * max_{s selected} cos(c, s)
/// where rel is the modulated score and the similarity term is raw pairwise
/// embedding cosine. The first pick is the relevance argmax. Reported scores
/// are the relevance scores; the selection order carries the diversity.
inline std::vector<ScoredCandidate> mmr_select(const CandidateView& view,
                                               std::span<const float> scores, std::size_t k,
                                               float lambda,
                                               std::size_t oversample_factor = kMmrOversample) {
    if (lambda < 0.0f || lambda > 1.0f) throw Error("diverse: lambda must be in [0, 1]");
    if (k == 0 || view.empty()) return {};
    auto pool = detail::top_indices(view, scores, oversample_factor * k);
    const std::size_t take = std::min(k, pool.size());

    std::vector<ScoredCandidate> out;
    out.reserve(take);
    std::vector<char> picked(pool.size(), 0);
    std::vector<float> max_sim(pool.size(), -std::numeric_limits<float>::infinity());

    // pool[0] is the relevance argmax with the shared tie-break.
    std::size_t last = 0;
    picked[0] = 1;
    out.push_back({view.ids[pool[0]], scores[pool[0]]});

    while (out.size() < take) {
        std::span<const float> last_row = view.row(pool[last]);
        bool found = false;
        std::size_t best = 0;
        float best_obj = 0.0f;
        for (std::size_t j = 0; j < pool.size(); ++j) {
            if (picked[j]) continue;
            const float sim = dot(view.row(pool[j]), last_row);
            if (sim > max_sim[j]) max_sim[j] = sim;
            const float obj = lambda * scores[pool[j]] - (1.0f - lambda) * max_sim[j];
            if (!found || detail::ranks_before(obj, view.ids[pool[j]], best_obj, view.ids[pool[best]])) {
                found = true;
                best = j;
                best_obj = obj;
            }
        }
        if (!found) break;
        picked[best] = 1;
        last = best;
        out.push_back({view.ids[pool[best]], scores[pool[best]]});
    }
    return out;
}

namespace detail {

inline std::vector<float> embed_payload(const Embedder& embedder, std::string_view text,
                                        const char* token_name) {
    if (whitespace_tokens(text).empty())
        throw Error(std::string(token_name) + ": payload empty");
    try {
        return embedder.embed(text);
    } catch (const Error& e) {
        throw Error(std::string(token_name) + ": " + e.what());
    }
}

} // namespace detail

/// Executes one query's modulations in the fixed order and selects the top
/// pool-K candidates (MMR order when diverse). Scores are never renormalized
/// between steps. An empty view yields an empty result.
inline std::vector<ScoredCandidate> run_pipeline(const ModulationSpec& spec,
                                                 std::string_view query_text,
                                                 const CandidateView& view,
                                                 const Embedder& embedder) {
    if (view.empty()) return {};
    const bool has_text = !whitespace_tokens(query_text).empty();
    if (!has_text && !spec.centroid)
        throw Error("no scoring direction: need query text or centroid examples");

    std::vector<float> q(view.dim(), 0.0f);
    if (has_text) q = detail::embed_payload(embedder, query_text, "similar");

    if (spec.centroid) {
        const EmbeddingStore& store = *view.store;
        std::vector<std::span<const float>> examples;
        examples.reserve(spec.centroid->example_ids.size());
        for (const auto& id : spec.centroid->example_ids) {
            auto r = store.find(id);
            if (!r) throw Error("centroid: unknown example id '" + id + "'");
            examples.push_back(store.row(*r));
        }
        q = apply_centroid(q, examples, spec.centroid->alpha);
    }

    std::vector<float> scores = base_scores(view, q);

    if (spec.trajectory) {
        auto from_vec = detail::embed_payload(embedder, spec.trajectory->from_text, "from");
        auto to_vec = detail::embed_payload(embedder, spec.trajectory->to_text, "to");
        apply_trajectory(scores, view, from_vec, to_vec);
    }
    if (spec.decay) apply_decay(scores, view.ages_days, spec.decay->half_life_days);
    for (const auto& s : spec.suppress) {
        auto svec = detail::embed_payload(embedder, s.text, "suppress");
        apply_suppress(scores, view, svec, s.weight);
    }

    if (spec.diverse) return mmr_select(view, scores, spec.pool, spec.mmr_lambda);
    return top_k_select(view, scores, spec.pool);
}

} // namespace pem
