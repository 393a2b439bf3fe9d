#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pem/error.hpp"
#include "pem/modulation.hpp"

namespace pem {

/// Decoded token string: query text plus the modulation spec it selected.
/// Token order in the source string never affects the result.
struct ParsedQuery {
    std::string similar_text;
    ModulationSpec spec;
    std::string raw;

    friend bool operator==(const ParsedQuery& a, const ParsedQuery& b) {
        return a.similar_text == b.similar_text && a.spec == b.spec;
    }
};

namespace grammar_detail {

inline constexpr std::array<std::string_view, 7> kPayloadHeads = {
    "similar:", "suppress:", "decay:", "centroid:", "from:", "to:", "pool:"};
inline constexpr std::string_view kValidHeads =
    "similar:, suppress:, decay:, centroid:, from:, to:, pool:, diverse";

inline std::optional<std::string_view> match_head(std::string_view word) {
    if (word == "diverse") return std::string_view("diverse");
    for (auto head : kPayloadHeads)
        if (word.starts_with(head)) return head;
    return std::nullopt;
}

inline std::vector<std::string_view> split_words(std::string_view s) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t start = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i > start) words.push_back(s.substr(start, i - start));
    }
    return words;
}

inline double parse_positive_double(std::string_view payload, std::string_view token) {
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(payload.data(), payload.data() + payload.size(), value);
    if (ec != std::errc() || ptr != payload.data() + payload.size() || value <= 0.0)
        throw ParseError(std::string(token) + " expects a positive number, got '" +
                         std::string(payload) + "'");
    return value;
}

inline std::size_t parse_positive_integer(std::string_view payload, std::string_view token) {
    unsigned long long value = 0;
    auto [ptr, ec] = std::from_chars(payload.data(), payload.data() + payload.size(), value);
    if (ec != std::errc() || ptr != payload.data() + payload.size() || value == 0)
        throw ParseError(std::string(token) + " expects a positive integer, got '" +
                         std::string(payload) + "'");
    return static_cast<std::size_t>(value);
}

inline std::string format_number(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

} // namespace grammar_detail

/// Grammar defaults: suppress weight 0.5, centroid blend 0.5, decay half-life
/// 30 days, diverse lambda 0.7, pool 500.
inline ModulationSpec default_spec() { return ModulationSpec{}; }

/// Parses the whitespace-delimited token string. Heads are matched
/// case-sensitively; a payload-bearing head consumes following words greedily
/// until the next recognized head. Duplicate singleton tokens and bare words
/// outside any payload are errors, never silently resolved.
inline ParsedQuery parse_tokens(std::string_view token_string) {
    using namespace grammar_detail;
    auto words = split_words(token_string);
    if (words.empty()) throw ParseError("empty token string");

    struct Collected {
        std::string_view head;      // "similar:", ... or "diverse"
        std::vector<std::string_view> payload;
    };
    std::vector<Collected> tokens;
    for (auto word : words) {
        if (auto head = match_head(word)) {
            tokens.push_back({*head, {}});
            if (*head != "diverse") {
                auto inline_payload = word.substr(head->size());
                if (!inline_payload.empty()) tokens.back().payload.push_back(inline_payload);
            }
        } else {
            if (tokens.empty() || tokens.back().head == "diverse")
                throw ParseError("unrecognized token '" + std::string(word) +
                                 "' (valid: " + std::string(kValidHeads) + ")");
            tokens.back().payload.push_back(word);
        }
    }

    ParsedQuery out;
    out.raw = std::string(token_string);
    bool saw_similar = false, saw_diverse = false, saw_pool = false;
    std::optional<std::string> from_text, to_text;

    auto join = [](const std::vector<std::string_view>& payload) {
        std::string s;
        for (std::size_t i = 0; i < payload.size(); ++i) {
            if (i) s.push_back(' ');
            s.append(payload[i]);
        }
        return s;
    };

    for (const auto& tok : tokens) {
        if (tok.head == "diverse") {
            if (saw_diverse) throw ParseError("duplicate token 'diverse'");
            saw_diverse = true;
            out.spec.diverse = true;
            continue;
        }
        if (tok.payload.empty())
            throw ParseError(std::string(tok.head) + " payload empty");
        std::string payload = join(tok.payload);

        if (tok.head == "similar:") {
            if (saw_similar) throw ParseError("duplicate token 'similar:'");
            saw_similar = true;
            out.similar_text = payload;
        } else if (tok.head == "suppress:") {
            out.spec.suppress.push_back({payload, kDefaultSuppressWeight});
        } else if (tok.head == "decay:") {
            if (out.spec.decay) throw ParseError("duplicate token 'decay:'");
            out.spec.decay = DecaySpec{parse_positive_double(payload, "decay:")};
        } else if (tok.head == "pool:") {
            if (saw_pool) throw ParseError("duplicate token 'pool:'");
            saw_pool = true;
            out.spec.pool = parse_positive_integer(payload, "pool:");
        } else if (tok.head == "centroid:") {
            if (out.spec.centroid) throw ParseError("duplicate token 'centroid:'");
            if (tok.payload.size() > 1)
                throw ParseError("centroid: ids must be one comma-separated list without spaces, got '" +
                                 payload + "'");
            CentroidSpec spec;
            std::string_view list = tok.payload.front();
            while (!list.empty()) {
                auto comma = list.find(',');
                auto id = list.substr(0, comma);
                if (id.empty()) throw ParseError("centroid: empty id in list");
                spec.example_ids.emplace_back(id);
                if (comma == std::string_view::npos) break;
                list.remove_prefix(comma + 1);
                if (list.empty()) throw ParseError("centroid: empty id in list");
            }
            out.spec.centroid = std::move(spec);
        } else if (tok.head == "from:") {
            if (from_text) throw ParseError("duplicate token 'from:'");
            from_text = payload;
        } else if (tok.head == "to:") {
            if (to_text) throw ParseError("duplicate token 'to:'");
            to_text = payload;
        }
    }

    if (from_text.has_value() != to_text.has_value())
        throw ParseError(from_text ? "'from:' without matching 'to:'"
                                   : "'to:' without matching 'from:'");
    if (from_text) out.spec.trajectory = TrajectorySpec{*from_text, *to_text};

    // Suppression is additive, so a canonical application order makes every
    // token permutation produce a bitwise-identical pipeline.
    std::stable_sort(out.spec.suppress.begin(), out.spec.suppress.end(),
                     [](const SuppressSpec& a, const SuppressSpec& b) { return a.text < b.text; });

    if (out.similar_text.empty() && !out.spec.centroid)
        throw ParseError("a scoring direction is required: add similar: text or centroid: ids");
    return out;
}

/// Canonical renderer: parse(render(parse(s))) == parse(s).
inline std::string render_tokens(const ParsedQuery& query) {
    using grammar_detail::format_number;
    std::string s;
    auto emit = [&s](std::string_view part) {
        if (!s.empty()) s.push_back(' ');
        s.append(part);
    };
    if (!query.similar_text.empty()) emit("similar:" + query.similar_text);
    if (query.spec.centroid) {
        std::string ids;
        for (std::size_t i = 0; i < query.spec.centroid->example_ids.size(); ++i) {
            if (i) ids.push_back(',');
            ids += query.spec.centroid->example_ids[i];
        }
        emit("centroid:" + ids);
    }
    if (query.spec.trajectory) {
        emit("from:" + query.spec.trajectory->from_text);
        emit("to:" + query.spec.trajectory->to_text);
    }
    if (query.spec.decay) emit("decay:" + format_number(query.spec.decay->half_life_days));
    for (const auto& sup : query.spec.suppress) emit("suppress:" + sup.text);
    emit("pool:" + std::to_string(query.spec.pool));
    if (query.spec.diverse) emit("diverse");
    return s;
}

} // namespace pem
