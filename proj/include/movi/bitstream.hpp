#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "movi/dcu.hpp"

namespace movi {

struct BitstreamError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Wire format (all integers little-endian):
//   magic "MOVI", version u8
//   orig_w u16, orig_h u16, padded_w u16, padded_h u16
//   frame_count u32, fps_num u16, fps_den u16
//   model fingerprint, 32 bytes
//   displacement listing: u8 count + i8 offsets, horizontal then vertical
//   per frame: len_z u32, z payload, len_y u32, y payload
// The hyperprior payload precedes the latent payload because decoding the
// latents needs the probabilities the hyperprior produces.
struct BitstreamHeader {
    uint16_t orig_w = 0, orig_h = 0;
    uint16_t padded_w = 0, padded_h = 0;
    uint32_t frame_count = 0;
    uint16_t fps_num = 25, fps_den = 1;
    std::array<uint8_t, 32> fingerprint{};
    DisplacementSet displacements;
};

struct FramePayload {
    std::vector<uint8_t> z;
    std::vector<uint8_t> y;
};

struct BitstreamFile {
    BitstreamHeader header;
    std::vector<FramePayload> frames;
};

std::vector<uint8_t> serialize_bitstream(const BitstreamFile& bs);
BitstreamFile parse_bitstream(const std::vector<uint8_t>& bytes);

void write_bitstream(const BitstreamFile& bs, const std::string& path);
BitstreamFile read_bitstream(const std::string& path);

}  // namespace movi
