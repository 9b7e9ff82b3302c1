#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace movi {

struct TruncatedStream : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Probability of the +1 symbol quantized to 16 bits. Clamped to [1, 65535]
// so both symbols always keep a nonzero subinterval. Encoder and decoder
// must run this exact mapping on the same float to stay synchronized.
inline uint16_t quantize_prob16(float p_plus) {
    float scaled = p_plus * 65536.0f;
    long q = std::lround(scaled);
    if (q < 1) q = 1;
    if (q > 65535) q = 65535;
    return static_cast<uint16_t>(q);
}

// Byte-oriented binary range coder. 32-bit range, renormalized below 2^24;
// carries walk back through the output buffer. Flush emits the remaining
// 32 bits of low, so a nonempty payload costs exactly 4 bytes of overhead
// beyond the renormalization bytes.
class RangeEncoder {
public:
    // probability is for symbol +1; symbol is +1 or -1.
    void encode(int8_t symbol, uint16_t p16);
    std::vector<uint8_t> finish();
    bool empty() const { return out_.empty() && !touched_; }

private:
    void shift_low();
    void propagate_carry();

    std::vector<uint8_t> out_;
    uint32_t low_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
    bool touched_ = false;
};

class RangeDecoder {
public:
    // Takes ownership of the payload; reads past the end throw
    // TruncatedStream.
    explicit RangeDecoder(std::vector<uint8_t> bytes);

    int8_t decode(uint16_t p16);
    // True once every payload byte has been consumed.
    bool exhausted() const { return pos_ == buf_.size(); }

private:
    uint8_t next_byte();

    std::vector<uint8_t> buf_;
    size_t pos_ = 0;
    uint32_t code_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
    bool primed_ = false;
};

// One coded latent plane: symbols in {-1, +1} and per-symbol probabilities
// of +1, in the same flattened order.
struct SymbolPlane {
    std::vector<int8_t> symbols;
    std::vector<float> prob_plus;
};

// Empty planes encode to an empty payload.
std::vector<uint8_t> rc_encode_plane(const SymbolPlane& plane);
std::vector<int8_t> rc_decode_plane(const std::vector<uint8_t>& bytes,
                                    const std::vector<float>& prob_plus);

}  // namespace movi
