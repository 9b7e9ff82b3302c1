#include "movi/range_coder.hpp"

namespace movi {

void RangeEncoder::propagate_carry() {
    // The pending add overflowed 32 bits: bump already-emitted bytes,
    // walking back over 0xFF wraparounds. If the whole buffer wraps the
    // carry creates a new leading byte.
    size_t i = out_.size();
    while (i > 0) {
        if (++out_[--i] != 0) return;
    }
    out_.insert(out_.begin(), 1);
}

void RangeEncoder::shift_low() {
    out_.push_back(static_cast<uint8_t>(low_ >> 24));
    low_ <<= 8;
}

void RangeEncoder::encode(int8_t symbol, uint16_t p16) {
    touched_ = true;
    uint32_t split = static_cast<uint32_t>(
        (static_cast<uint64_t>(range_) * p16) >> 16);
    // +1 owns [0, split), -1 owns [split, range). split stays in
    // (0, range) because range >= 2^24 and 1 <= p16 <= 65535.
    if (symbol > 0) {
        range_ = split;
    } else {
        uint32_t prev = low_;
        low_ += split;
        if (low_ < prev) propagate_carry();
        range_ -= split;
    }
    while (range_ < (1u << 24)) {
        shift_low();
        range_ <<= 8;
    }
}

std::vector<uint8_t> RangeEncoder::finish() {
    if (!touched_) return {};
    for (int i = 0; i < 4; ++i) shift_low();
    touched_ = false;
    std::vector<uint8_t> out = std::move(out_);
    out_.clear();
    low_ = 0;
    range_ = 0xFFFFFFFFu;
    return out;
}

RangeDecoder::RangeDecoder(std::vector<uint8_t> bytes) : buf_(std::move(bytes)) {}

uint8_t RangeDecoder::next_byte() {
    if (pos_ >= buf_.size())
        throw TruncatedStream("range coder: payload shorter than symbol plane");
    return buf_[pos_++];
}

int8_t RangeDecoder::decode(uint16_t p16) {
    if (!primed_) {
        // Deferred so that decoding zero symbols never touches the payload.
        for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
        primed_ = true;
    }
    uint32_t split = static_cast<uint32_t>(
        (static_cast<uint64_t>(range_) * p16) >> 16);
    int8_t symbol;
    if (code_ < split) {
        symbol = 1;
        range_ = split;
    } else {
        symbol = -1;
        code_ -= split;
        range_ -= split;
    }
    while (range_ < (1u << 24)) {
        code_ = (code_ << 8) | next_byte();
        range_ <<= 8;
    }
    return symbol;
}

std::vector<uint8_t> rc_encode_plane(const SymbolPlane& plane) {
    if (plane.symbols.size() != plane.prob_plus.size())
        throw std::invalid_argument("rc_encode_plane: symbol/probability count mismatch");
    RangeEncoder enc;
    for (size_t i = 0; i < plane.symbols.size(); ++i)
        enc.encode(plane.symbols[i], quantize_prob16(plane.prob_plus[i]));
    return enc.finish();
}

std::vector<int8_t> rc_decode_plane(const std::vector<uint8_t>& bytes,
                                    const std::vector<float>& prob_plus) {
    RangeDecoder dec(bytes);
    std::vector<int8_t> symbols(prob_plus.size());
    for (size_t i = 0; i < prob_plus.size(); ++i)
        symbols[i] = dec.decode(quantize_prob16(prob_plus[i]));
    return symbols;
}

}  // namespace movi
