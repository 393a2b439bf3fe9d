#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "pem/embedder.hpp"
#include "pem/embedding_store.hpp"

using namespace pem;
namespace fs = std::filesystem;

namespace {

double dnorm(const std::vector<float>& v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

double dcos(const std::vector<float>& a, const std::vector<float>& b) {
    double num = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) num += static_cast<double>(a[i]) * b[i];
    return num / (dnorm(a) * dnorm(b));
}

fs::path temp_file(const std::string& tag) {
    static std::atomic<int> counter{0};
    return fs::temp_directory_path() /
           ("pem_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++) + ".emb");
}

// Independent sidecar writer so load() is checked against the documented
// byte layout, not against save().
void raw_put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void raw_put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string raw_sidecar(std::uint32_t dim, const std::vector<std::vector<float>>& rows,
                        const std::vector<std::string>& ids) {
    std::string buf = "PEM1";
    raw_put_u32(buf, 1);
    raw_put_u32(buf, dim);
    raw_put_u64(buf, rows.size());
    for (const auto& row : rows)
        for (float f : row) {
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            raw_put_u32(buf, bits);
        }
    for (const auto& id : ids) {
        buf += id;
        buf += '\n';
    }
    return buf;
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<float> unit4(float a, float b, float c, float d) {
    std::vector<float> v{a, b, c, d};
    double n = dnorm(v);
    for (auto& x : v) x = static_cast<float>(x / n);
    return v;
}

} // namespace

TEST_CASE("hash embedder is deterministic") {
    HashProjectionEmbedder e(32, 42);
    auto a = e.embed("x");
    auto b = e.embed("x");
    REQUIRE(a == b);

    HashProjectionEmbedder e2(32, 42);
    REQUIRE(e2.embed("retrieval kernel over sqlite") == e.embed("retrieval kernel over sqlite"));

    HashProjectionEmbedder other_seed(32, 43);
    REQUIRE(other_seed.embed("x") != a);
}

TEST_CASE("hash embedder output is unit norm") {
    HashProjectionEmbedder e(128, 7);
    REQUIRE(std::abs(dnorm(e.embed("database storage")) - 1.0) < 1e-4);
    REQUIRE(std::abs(dnorm(e.embed("a b c d e f g h i j")) - 1.0) < 1e-4);
}

TEST_CASE("hash embedder composes as a bag of words") {
    HashProjectionEmbedder e(64, 11);
    REQUIRE(e.embed("a b") == e.embed("b a"));
    REQUIRE(dcos(e.embed("alpha beta gamma"), e.embed("gamma alpha beta")) ==
            Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("single token embeds to its token vector") {
    HashProjectionEmbedder e(48, 3);
    REQUIRE(e.embed("Token") == e.token_vector("token"));
}

TEST_CASE("disjoint vocabularies are near orthogonal at dim 128") {
    HashProjectionEmbedder e(128, 5);
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        std::string a, b;
        for (int w = 0; w < 3; ++w) {
            a += "left" + std::to_string(rng() % 1000) + " ";
            b += "right" + std::to_string(rng() % 1000) + " ";
        }
        REQUIRE(std::abs(dcos(e.embed(a), e.embed(b))) < 0.3);
    }
}

TEST_CASE("shared tokens raise cosine on equal-length texts") {
    HashProjectionEmbedder e(128, 17);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const std::string base = std::to_string(rng() % 100000);
        auto word = [&](int i) { return "w" + base + "_" + std::to_string(i); };
        // A and B share three of four tokens, A and C share one.
        std::string a = word(0) + " " + word(1) + " " + word(2) + " " + word(3);
        std::string b = word(0) + " " + word(1) + " " + word(2) + " " + word(9);
        std::string c = word(0) + " " + word(7) + " " + word(8) + " " + word(6);
        REQUIRE(dcos(e.embed(a), e.embed(b)) > dcos(e.embed(a), e.embed(c)));
    }
}

TEST_CASE("embedder rejects empty text and tiny dim") {
    HashProjectionEmbedder e(16, 1);
    REQUIRE_THROWS_AS(e.embed(""), Error);
    REQUIRE_THROWS_AS(e.embed("   \t\n"), Error);
    REQUIRE_THROWS_AS(HashProjectionEmbedder(1, 1), Error);
}

TEST_CASE("store holds appended unit vectors without renormalizing") {
    EmbeddingStore store(4);
    store.append("a", unit4(1, 0, 0, 0));
    store.append("b", unit4(0, 1, 0, 0));
    store.append("c", unit4(1, 1, 1, 1));
    REQUIRE(store.size() == 3);
    REQUIRE(store.dim() == 4);
    REQUIRE(store.matrix_bytes() == 3 * 4 * sizeof(float));

    auto path = temp_file("identity");
    store.save(path);
    LoadReport report;
    auto loaded = EmbeddingStore::load(path, &report);
    REQUIRE(report.rows == 3);
    REQUIRE(report.renormalized == 0);
    fs::remove(path);
}

TEST_CASE("load renormalizes rows off unit norm and counts them") {
    // Row with norm 2 written through the raw byte layout.
    std::vector<float> scaled{2.0f, 0.0f, 0.0f, 0.0f};
    auto path = temp_file("renorm");
    write_file(path, raw_sidecar(4, {scaled, unit4(0, 0, 1, 0)}, {"big", "ok"}));

    LoadReport report;
    auto store = EmbeddingStore::load(path, &report);
    REQUIRE(report.renormalized == 1);
    auto row = store.row(*store.find("big"));
    REQUIRE(row[0] == Catch::Approx(1.0f));
    REQUIRE(std::abs(dnorm({row.begin(), row.end()}) - 1.0) < 1e-6);
    fs::remove(path);
}

TEST_CASE("save/load round-trips bitwise") {
    std::mt19937_64 rng(12);
    EmbeddingStore store(9);
    for (int i = 0; i < 40; ++i) {
        std::vector<float> v(9);
        double n = 0.0;
        for (auto& x : v) {
            x = static_cast<float>((rng() % 2000) / 1000.0 - 1.0);
            n += static_cast<double>(x) * x;
        }
        if (n < 1e-9) v[0] = 1.0f;
        store.append("id" + std::to_string(i), v);
    }
    auto path = temp_file("roundtrip");
    store.save(path);
    LoadReport report;
    auto loaded = EmbeddingStore::load(path, &report);
    REQUIRE(report.renormalized == 0);
    REQUIRE(loaded.size() == store.size());
    REQUIRE(loaded.ids() == store.ids());
    for (std::size_t r = 0; r < store.size(); ++r) {
        auto a = store.row(r);
        auto b = loaded.row(r);
        REQUIRE(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    }
    fs::remove(path);
}

TEST_CASE("every loaded row is unit norm") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        const std::uint32_t dim = 2 + rng() % 31;
        const std::size_t n = 1 + rng() % 40;
        std::vector<std::vector<float>> rows;
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<float> v(dim);
            for (auto& x : v)
                x = static_cast<float>(((rng() % 2001) / 1000.0 - 1.0) * (1 + rng() % 50));
            bool zero = true;
            for (auto x : v) zero = zero && x == 0.0f;
            if (zero) v[0] = 0.25f;
            rows.push_back(v);
            ids.push_back("r" + std::to_string(i));
        }
        auto path = temp_file("norms");
        write_file(path, raw_sidecar(dim, rows, ids));
        auto store = EmbeddingStore::load(path);
        for (std::size_t r = 0; r < store.size(); ++r) {
            auto row = store.row(r);
            REQUIRE(std::abs(dnorm({row.begin(), row.end()}) - 1.0) < 1e-4);
        }
        fs::remove(path);
    }
}

TEST_CASE("zero vectors are rejected at load, naming the id") {
    auto path = temp_file("zero");
    write_file(path, raw_sidecar(3, {{0.0f, 0.0f, 0.0f}}, {"dead"}));
    REQUIRE_THROWS_WITH(EmbeddingStore::load(path), Catch::Matchers::ContainsSubstring("dead"));
    fs::remove(path);
}

TEST_CASE("corrupt sidecars abort with location detail") {
    auto path = temp_file("corrupt");

    write_file(path, "PE");
    REQUIRE_THROWS_WITH(EmbeddingStore::load(path),
                        Catch::Matchers::ContainsSubstring("header"));

    write_file(path, "NOPE" + std::string(16, '\0'));
    REQUIRE_THROWS_WITH(EmbeddingStore::load(path), Catch::Matchers::ContainsSubstring("magic"));

    // Body shorter than count*dim*4: error carries a byte offset.
    auto full = raw_sidecar(4, {unit4(1, 0, 0, 0), unit4(0, 1, 0, 0)}, {"a", "b"});
    write_file(path, full.substr(0, 20 + 10));
    REQUIRE_THROWS_WITH(EmbeddingStore::load(path),
                        Catch::Matchers::ContainsSubstring("byte offset 30"));

    // Trailer with one id missing.
    std::string missing = raw_sidecar(4, {unit4(1, 0, 0, 0), unit4(0, 1, 0, 0)}, {"a"});
    write_file(path, missing);
    REQUIRE_THROWS_WITH(EmbeddingStore::load(path),
                        Catch::Matchers::ContainsSubstring("1 of 2"));

    // Duplicate id.
    write_file(path, raw_sidecar(4, {unit4(1, 0, 0, 0), unit4(0, 1, 0, 0)}, {"a", "a"}));
    REQUIRE_THROWS_WITH(EmbeddingStore::load(path),
                        Catch::Matchers::ContainsSubstring("duplicate id 'a'"));
    fs::remove(path);
}

TEST_CASE("append validates dimension, duplicates and zero vectors") {
    EmbeddingStore store(4);
    store.append("a", unit4(1, 2, 3, 4));
    REQUIRE_THROWS_WITH(store.append("a", unit4(1, 0, 0, 0)),
                        Catch::Matchers::ContainsSubstring("duplicate id 'a'"));
    std::vector<float> short_vec{1.0f, 0.0f};
    REQUIRE_THROWS_WITH(store.append("b", short_vec),
                        Catch::Matchers::ContainsSubstring("'b'"));
    std::vector<float> zero{0, 0, 0, 0};
    REQUIRE_THROWS_AS(store.append("c", zero), Error);
}

TEST_CASE("subset of all ids is the identity projection") {
    EmbeddingStore store(4);
    store.append("a", unit4(1, 0, 0, 0));
    store.append("b", unit4(0, 1, 0, 0));
    store.append("c", unit4(0, 0, 1, 0));
    auto view = subset(store, store.ids());
    REQUIRE(view.size() == 3);
    REQUIRE(view.dropped_unknown == 0);
    for (std::size_t i = 0; i < view.size(); ++i)
        REQUIRE(view.row(i).data() == store.row(i).data());
}

TEST_CASE("empty subset is a distinguishable empty-candidate condition") {
    EmbeddingStore store(4);
    store.append("a", unit4(1, 0, 0, 0));
    std::vector<std::string> none;
    auto view = subset(store, none);
    REQUIRE(view.empty());
    REQUIRE(view.dropped_unknown == 0);
}

TEST_CASE("subset drops unknown ids with a count and preserves order") {
    EmbeddingStore store(3);
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 10; ++i) {
        std::vector<float> v{static_cast<float>(i + 1), 1.0f, 0.5f};
        store.append("id" + std::to_string(i), v);
    }
    std::vector<std::string> request{"id7", "missing1", "id0", "id3", "missing2", "id9", "id1"};
    auto view = subset(store, request);
    REQUIRE(view.size() == 5);
    REQUIRE(view.dropped_unknown == 2);
    std::vector<std::string> expect{"id7", "id0", "id3", "id9", "id1"};
    REQUIRE(view.ids == expect);
    // Rows equal direct indexing, bitwise.
    for (std::size_t i = 0; i < view.size(); ++i) {
        auto direct = store.row(*store.find(expect[i]));
        auto via = view.row(i);
        REQUIRE(std::memcmp(direct.data(), via.data(), direct.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("embedder outputs satisfy the store norm contract") {
    HashProjectionEmbedder e(24, 123);
    EmbeddingStore store(24);
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
        std::string text;
        const int words = 1 + static_cast<int>(rng() % 6);
        for (int w = 0; w < words; ++w) text += "tok" + std::to_string(rng() % 40) + " ";
        store.append("t" + std::to_string(i), e.embed(text));
    }
    auto path = temp_file("lawcheck");
    store.save(path);
    LoadReport report;
    EmbeddingStore::load(path, &report);
    REQUIRE(report.renormalized == 0);
    fs::remove(path);
}
