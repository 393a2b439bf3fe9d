#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pem/embedder.hpp"
#include "pem/error.hpp"

namespace pem {

struct LoadReport {
    std::size_t rows = 0;
    std::size_t renormalized = 0;
};

/// Id-aligned matrix of L2-normalized float32 embeddings, immutable once
/// loaded. Persisted as a sidecar file so startup is one sequential read:
///
///   header  : magic "PEM1", u32 version, u32 dim, u64 count (little-endian)
///   body    : count rows of dim little-endian float32
///   trailer : count newline-delimited chunk ids
class EmbeddingStore {
public:
    static constexpr char kMagic[5] = "PEM1";
    static constexpr std::uint32_t kVersion = 1;

    explicit EmbeddingStore(std::size_t dim) : dim_(dim) {
        if (dim == 0) throw Error("embedding store dim must be positive");
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    const std::vector<std::string>& ids() const { return ids_; }

    /// Resident matrix payload in bytes: rows * dim * sizeof(float).
    std::size_t matrix_bytes() const { return size() * dim_ * sizeof(float); }

    std::span<const float> row(std::size_t i) const {
        return {data_.data() + i * dim_, dim_};
    }

    std::optional<std::size_t> find(std::string_view id) const {
        auto it = index_.find(std::string(id));
        return it == index_.end() ? std::nullopt : std::optional(it->second);
    }

    /// Appends one embedding. Vectors more than 1e-4 off unit norm are
    /// renormalized; zero vectors are rejected (an upstream bug, always).
    void append(std::string_view id, std::span<const float> vec) {
        if (vec.size() != dim_)
            throw Error("dimensionality mismatch for id '" + std::string(id) + "': got " +
                        std::to_string(vec.size()) + ", store is " + std::to_string(dim_));
        if (index_.contains(std::string(id)))
            throw Error("duplicate id '" + std::string(id) + "'");
        double norm = 0.0;
        for (float v : vec) norm += static_cast<double>(v) * v;
        norm = std::sqrt(norm);
        if (norm < 1e-12)
            throw Error("zero embedding for id '" + std::string(id) + "'");
        const std::size_t row_index = ids_.size();
        data_.resize(data_.size() + dim_);
        float* out = data_.data() + row_index * dim_;
        if (std::abs(norm - 1.0) > kUnitNormTolerance) {
            for (std::size_t i = 0; i < dim_; ++i)
                out[i] = static_cast<float>(vec[i] / norm);
        } else {
            std::memcpy(out, vec.data(), dim_ * sizeof(float));
        }
        ids_.emplace_back(id);
        index_.emplace(ids_.back(), row_index);
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write sidecar '" + path.string() + "'");
        std::string header;
        header.append(kMagic, 4);
        put_u32(header, kVersion);
        put_u32(header, static_cast<std::uint32_t>(dim_));
        put_u64(header, static_cast<std::uint64_t>(size()));
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        std::string body;
        body.reserve(data_.size() * 4);
        for (float f : data_) put_u32(body, std::bit_cast<std::uint32_t>(f));
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        for (const auto& id : ids_) {
            out.write(id.data(), static_cast<std::streamsize>(id.size()));
            out.put('\n');
        }
        if (!out) throw Error("short write to sidecar '" + path.string() + "'");
    }

    static EmbeddingStore load(const std::filesystem::path& path, LoadReport* report = nullptr) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open sidecar '" + path.string() + "'");
        std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

        constexpr std::size_t kHeaderBytes = 20;
        if (buf.size() < kHeaderBytes)
            throw Error("sidecar truncated: header needs " + std::to_string(kHeaderBytes) +
                        " bytes, file has " + std::to_string(buf.size()));
        if (std::memcmp(buf.data(), kMagic, 4) != 0)
            throw Error("bad magic: '" + path.string() + "' is not an embedding sidecar");
        const std::uint32_t version = get_u32(buf, 4);
        if (version != kVersion)
            throw Error("unsupported sidecar version " + std::to_string(version));
        const std::uint32_t dim = get_u32(buf, 8);
        const std::uint64_t count = get_u64(buf, 12);
        if (dim == 0) throw Error("sidecar declares dim 0");

        const std::uint64_t body_bytes = count * dim * 4ull;
        if (buf.size() < kHeaderBytes + body_bytes)
            throw Error("vector payload truncated at byte offset " + std::to_string(buf.size()) +
                        ": need " + std::to_string(kHeaderBytes + body_bytes) + " bytes for " +
                        std::to_string(count) + " rows");

        // Trailer first, so row-level errors can name the offending id.
        std::vector<std::string> ids;
        ids.reserve(count);
        {
            std::size_t pos = kHeaderBytes + body_bytes;
            while (ids.size() < count && pos < buf.size()) {
                std::size_t nl = buf.find('\n', pos);
                if (nl == std::string::npos) nl = buf.size();
                ids.emplace_back(buf.substr(pos, nl - pos));
                pos = nl + 1;
            }
            if (ids.size() != count)
                throw Error("id trailer truncated: has " + std::to_string(ids.size()) + " of " +
                            std::to_string(count) + " ids");
        }

        EmbeddingStore store(dim);
        store.ids_.reserve(count);
        store.data_.resize(count * dim);
        LoadReport local;
        for (std::uint64_t r = 0; r < count; ++r) {
            const std::string& id = ids[r];
            if (id.empty())
                throw Error("empty id at trailer row " + std::to_string(r));
            float* out = store.data_.data() + r * dim;
            const std::size_t off = kHeaderBytes + r * dim * 4ull;
            double norm = 0.0;
            for (std::uint32_t i = 0; i < dim; ++i) {
                out[i] = std::bit_cast<float>(get_u32(buf, off + i * 4));
                norm += static_cast<double>(out[i]) * out[i];
            }
            norm = std::sqrt(norm);
            if (norm < 1e-12)
                throw Error("zero embedding for id '" + id + "' (row " + std::to_string(r) + ")");
            if (std::abs(norm - 1.0) > kUnitNormTolerance) {
                for (std::uint32_t i = 0; i < dim; ++i)
                    out[i] = static_cast<float>(out[i] / norm);
                ++local.renormalized;
            }
            store.ids_.push_back(id);
            auto [it, fresh] = store.index_.emplace(id, r);
            if (!fresh) throw Error("duplicate id '" + id + "' in sidecar");
        }
        local.rows = count;
        if (report) *report = local;
        return store;
    }

private:
    static void put_u32(std::string& out, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    static void put_u64(std::string& out, std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    static std::uint32_t get_u32(const std::string& buf, std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
        return v;
    }
    static std::uint64_t get_u64(const std::string& buf, std::size_t off) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
        return v;
    }

    std::size_t dim_;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Read-only projection of a Phase-1 id set onto the store, order-preserving.
/// ages_days is aligned to ids and holds fractional days since each chunk's
/// timestamp at query time (0 when unset or future-dated).
struct CandidateView {
    const EmbeddingStore* store = nullptr;
    std::vector<std::uint32_t> rows;
    std::vector<std::string> ids;
    std::vector<double> ages_days;
    std::size_t dropped_unknown = 0;

    std::size_t size() const { return rows.size(); }
    bool empty() const { return rows.empty(); }
    std::size_t dim() const { return store ? store->dim() : 0; }
    std::span<const float> row(std::size_t i) const { return store->row(rows[i]); }
};

/// Unknown ids are dropped (Phase-1 SQL may select rows that were never
/// embedded) and counted, not raised.
inline CandidateView subset(const EmbeddingStore& store, std::span<const std::string> ids) {
    CandidateView view;
    view.store = &store;
    view.rows.reserve(ids.size());
    view.ids.reserve(ids.size());
    for (const auto& id : ids) {
        if (auto r = store.find(id)) {
            view.rows.push_back(static_cast<std::uint32_t>(*r));
            view.ids.push_back(id);
        } else {
            ++view.dropped_unknown;
        }
    }
    view.ages_days.assign(view.rows.size(), 0.0);
    return view;
}

inline CandidateView full_view(const EmbeddingStore& store) {
    CandidateView view;
    view.store = &store;
    view.rows.resize(store.size());
    std::iota(view.rows.begin(), view.rows.end(), 0u);
    view.ids = store.ids();
    view.ages_days.assign(store.size(), 0.0);
    return view;
}

} // namespace pem
