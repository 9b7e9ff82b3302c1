#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "movi/range_coder.hpp"
#include "movi/rng.hpp"

using namespace movi;

namespace {

// Random plane with probabilities in [p_lo, p_hi] and symbols drawn from
// those probabilities, so typical payloads are near the entropy bound.
SymbolPlane random_plane(Rng& rng, size_t n, float p_lo, float p_hi) {
    SymbolPlane plane;
    plane.symbols.resize(n);
    plane.prob_plus.resize(n);
    for (size_t i = 0; i < n; ++i) {
        float p = p_lo + (p_hi - p_lo) * static_cast<float>(rng.uniform());
        plane.prob_plus[i] = p;
        plane.symbols[i] = rng.uniform() < p ? int8_t{1} : int8_t{-1};
    }
    return plane;
}

// Shannon cost of the plane in bits, using the same quantized probabilities
// the coder commits to the stream.
double ideal_bits(const SymbolPlane& plane) {
    double bits = 0.0;
    for (size_t i = 0; i < plane.symbols.size(); ++i) {
        double p16 = quantize_prob16(plane.prob_plus[i]) / 65536.0;
        double q = plane.symbols[i] > 0 ? p16 : 1.0 - p16;
        bits -= std::log2(q);
    }
    return bits;
}

}  // namespace

TEST_CASE("quantize_prob16 clamps and rounds") {
    CHECK(quantize_prob16(0.0f) == 1);
    CHECK(quantize_prob16(-1.0f) == 1);
    CHECK(quantize_prob16(1.0f) == 65535);
    CHECK(quantize_prob16(2.0f) == 65535);
    CHECK(quantize_prob16(0.5f) == 32768);
    CHECK(quantize_prob16(0.25f) == 16384);
    // Monotone over a sweep.
    uint16_t prev = 0;
    for (int i = 0; i <= 1000; ++i) {
        uint16_t q = quantize_prob16(static_cast<float>(i) / 1000.0f);
        CHECK(q >= prev);
        prev = q;
    }
}

TEST_CASE("empty plane encodes to zero bytes and decodes to zero symbols") {
    SymbolPlane plane;
    std::vector<uint8_t> bytes = rc_encode_plane(plane);
    CHECK(bytes.empty());
    std::vector<int8_t> symbols = rc_decode_plane(bytes, {});
    CHECK(symbols.empty());
}

TEST_CASE("roundtrip over a sweep of plane lengths") {
    Rng rng(401);
    for (size_t n : {size_t{1}, size_t{2}, size_t{3}, size_t{7}, size_t{64},
                     size_t{1000}, size_t{4096}, size_t{10000}}) {
        SymbolPlane plane = random_plane(rng, n, 0.05f, 0.95f);
        std::vector<uint8_t> bytes = rc_encode_plane(plane);
        CHECK(bytes.size() >= 4);  // flush alone is 4 bytes
        std::vector<int8_t> decoded = rc_decode_plane(bytes, plane.prob_plus);
        REQUIRE(decoded.size() == n);
        CHECK(decoded == plane.symbols);
    }
}

TEST_CASE("roundtrip with extreme probabilities and adversarial symbols") {
    Rng rng(402);
    SymbolPlane plane;
    size_t n = 2000;
    plane.symbols.resize(n);
    plane.prob_plus.resize(n);
    for (size_t i = 0; i < n; ++i) {
        // Probabilities pinned near the clamp boundaries, symbols drawn
        // uniformly so the coder regularly pays for improbable symbols.
        plane.prob_plus[i] = rng.uniform() < 0.5 ? 1e-6f : 1.0f - 1e-6f;
        plane.symbols[i] = rng.uniform() < 0.5 ? int8_t{1} : int8_t{-1};
    }
    std::vector<uint8_t> bytes = rc_encode_plane(plane);
    std::vector<int8_t> decoded = rc_decode_plane(bytes, plane.prob_plus);
    CHECK(decoded == plane.symbols);
}

TEST_CASE("constant half probability costs about one bit per symbol") {
    Rng rng(403);
    size_t n = 8192;
    SymbolPlane plane;
    plane.symbols.resize(n);
    plane.prob_plus.assign(n, 0.5f);
    for (size_t i = 0; i < n; ++i)
        plane.symbols[i] = rng.uniform() < 0.5 ? int8_t{1} : int8_t{-1};
    std::vector<uint8_t> bytes = rc_encode_plane(plane);
    double bits = 8.0 * static_cast<double>(bytes.size());
    CHECK(bits >= static_cast<double>(n));  // entropy is exactly n bits
    CHECK(bits <= static_cast<double>(n) * 1.01 + 32.0);
    CHECK(rc_decode_plane(bytes, plane.prob_plus) == plane.symbols);
}

TEST_CASE("compressed size stays within one percent of the entropy bound") {
    Rng rng(404);
    for (int rep = 0; rep < 20; ++rep) {
        size_t n = 1000 + static_cast<size_t>(rng.uniform_int(0, 9000));
        SymbolPlane plane = random_plane(rng, n, 0.05f, 0.95f);
        std::vector<uint8_t> bytes = rc_encode_plane(plane);
        double bits = 8.0 * static_cast<double>(bytes.size());
        CHECK(bits <= ideal_bits(plane) * 1.01 + 32.0);
        CHECK(rc_decode_plane(bytes, plane.prob_plus) == plane.symbols);
    }
}

TEST_CASE("skewed probabilities compress far below one bit per symbol") {
    Rng rng(405);
    size_t n = 20000;
    SymbolPlane plane;
    plane.symbols.resize(n);
    plane.prob_plus.assign(n, 0.99f);
    for (size_t i = 0; i < n; ++i)
        plane.symbols[i] = rng.uniform() < 0.99 ? int8_t{1} : int8_t{-1};
    std::vector<uint8_t> bytes = rc_encode_plane(plane);
    double bits_per_symbol = 8.0 * static_cast<double>(bytes.size()) / static_cast<double>(n);
    CHECK(bits_per_symbol < 0.12);  // H(0.99) is about 0.08 bits
    CHECK(rc_decode_plane(bytes, plane.prob_plus) == plane.symbols);
}

TEST_CASE("encoder is deterministic") {
    Rng rng(406);
    SymbolPlane plane = random_plane(rng, 3000, 0.05f, 0.95f);
    CHECK(rc_encode_plane(plane) == rc_encode_plane(plane));
}

TEST_CASE("carry propagation survives long one-sided runs") {
    // Long runs of the improbable symbol drive low_ toward the top of the
    // interval, the regime where pending carries ripple back through the
    // emitted bytes.
    for (float p : {0.9f, 0.99f, 0.999f}) {
        SymbolPlane plane;
        size_t n = 5000;
        plane.symbols.assign(n, int8_t{-1});
        plane.prob_plus.assign(n, p);
        std::vector<uint8_t> bytes = rc_encode_plane(plane);
        CHECK(rc_decode_plane(bytes, plane.prob_plus) == plane.symbols);
    }
    // Alternating near-certain probabilities with matching symbols.
    SymbolPlane plane;
    for (int i = 0; i < 5000; ++i) {
        plane.prob_plus.push_back(i % 2 == 0 ? 0.999f : 0.001f);
        plane.symbols.push_back(i % 2 == 0 ? int8_t{1} : int8_t{-1});
    }
    std::vector<uint8_t> bytes = rc_encode_plane(plane);
    CHECK(rc_decode_plane(bytes, plane.prob_plus) == plane.symbols);
}

TEST_CASE("truncated payload throws TruncatedStream") {
    Rng rng(407);
    SymbolPlane plane = random_plane(rng, 4000, 0.05f, 0.95f);
    std::vector<uint8_t> bytes = rc_encode_plane(plane);
    REQUIRE(bytes.size() > 4);
    std::vector<uint8_t> cut(bytes.begin(), bytes.end() - 1);
    CHECK_THROWS_AS(rc_decode_plane(cut, plane.prob_plus), TruncatedStream);
    // Cutting to under the 4 priming bytes fails on the first symbol.
    std::vector<uint8_t> stub(bytes.begin(), bytes.begin() + 3);
    RangeDecoder dec(stub);
    CHECK_THROWS_AS(dec.decode(32768), TruncatedStream);
}

TEST_CASE("decoding with mismatched probabilities corrupts the symbols") {
    Rng rng(408);
    SymbolPlane plane = random_plane(rng, 4000, 0.2f, 0.8f);
    std::vector<uint8_t> bytes = rc_encode_plane(plane);
    std::vector<float> wrong(plane.prob_plus.size());
    for (size_t i = 0; i < wrong.size(); ++i) wrong[i] = 1.0f - plane.prob_plus[i];
    // A desynchronized decode may also run off the payload; either outcome
    // proves the stream is bound to its probabilities.
    size_t mismatches = 0;
    try {
        std::vector<int8_t> decoded = rc_decode_plane(bytes, wrong);
        for (size_t i = 0; i < decoded.size(); ++i)
            if (decoded[i] != plane.symbols[i]) ++mismatches;
    } catch (const TruncatedStream&) {
        mismatches = plane.symbols.size();
    }
    CHECK(mismatches > 100);
}

TEST_CASE("mid-plane probability agreement keeps encoder and decoder in sync") {
    // Interleave two probability sources the way the codec interleaves
    // hyperprior and latent planes: one plane per source, coded separately,
    // must not interfere.
    Rng rng(409);
    SymbolPlane a = random_plane(rng, 1500, 0.1f, 0.9f);
    SymbolPlane b = random_plane(rng, 700, 0.3f, 0.7f);
    std::vector<uint8_t> bytes_a = rc_encode_plane(a);
    std::vector<uint8_t> bytes_b = rc_encode_plane(b);
    CHECK(rc_decode_plane(bytes_a, a.prob_plus) == a.symbols);
    CHECK(rc_decode_plane(bytes_b, b.prob_plus) == b.symbols);
}

TEST_CASE("plane with mismatched symbol and probability counts is rejected") {
    SymbolPlane plane;
    plane.symbols = {1, -1};
    plane.prob_plus = {0.5f};
    CHECK_THROWS_AS(rc_encode_plane(plane), std::invalid_argument);
}

TEST_CASE("single symbol roundtrips at any probability") {
    for (float p : {1e-6f, 0.1f, 0.5f, 0.9f, 1.0f - 1e-6f}) {
        for (int8_t s : {int8_t{-1}, int8_t{1}}) {
            SymbolPlane plane;
            plane.symbols = {s};
            plane.prob_plus = {p};
            std::vector<uint8_t> bytes = rc_encode_plane(plane);
            // 4 flush bytes plus at most two renormalization bytes when the
            // improbable side shrinks the range below 2^24 immediately.
            CHECK(bytes.size() >= 4);
            CHECK(bytes.size() <= 6);
            std::vector<int8_t> decoded = rc_decode_plane(bytes, plane.prob_plus);
            REQUIRE(decoded.size() == 1);
            CHECK(decoded[0] == s);
        }
    }
}
