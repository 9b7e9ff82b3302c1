#pragma once

#include <stdexcept>
#include <vector>

#include "movi/bitstream.hpp"
#include "movi/model.hpp"
#include "movi/video_io.hpp"

namespace movi {

struct CodecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EncodeResult {
    BitstreamFile bitstream;
    // Encoder-local decode of its own stream, cropped to source size. The
    // decoder reproduces these frames bit-exactly, so there is no drift for
    // later frames to inherit.
    FrameSequence reconstruction;
    std::vector<int64_t> frame_bits;  // coded payload bits per frame (z + y)
};

EncodeResult encode_sequence(const MoviModel<float>& model, const FrameSequence& seq);
FrameSequence decode_sequence(const MoviModel<float>& model, const BitstreamFile& bs);

}  // namespace movi
