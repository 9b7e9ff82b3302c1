#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

namespace movi {

// Minimal incremental SHA-256, used to fingerprint model architecture and
// weights so bitstreams can be matched to the network that produced them.
class Sha256 {
public:
    Sha256() { reset(); }

    void reset();
    void update(const void* data, size_t len);
    void update(const std::string& s) { update(s.data(), s.size()); }
    std::array<uint8_t, 32> finish();

    static std::array<uint8_t, 32> digest(const void* data, size_t len) {
        Sha256 h;
        h.update(data, len);
        return h.finish();
    }

private:
    void compress(const uint8_t* block);

    uint32_t state_[8];
    uint64_t total_ = 0;
    uint8_t buf_[64];
    size_t buf_len_ = 0;
};

std::string hex_digest(const std::array<uint8_t, 32>& d);

}  // namespace movi
