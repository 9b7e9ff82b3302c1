#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "movi/rng.hpp"
#include "movi/tensor.hpp"

namespace movi {

// A frame is a rank-3 float tensor (3, H, W), RGB, values in [-1, 1].
using Frame = Tensor<float>;

struct FrameSequence {
    std::vector<Frame> frames;
    int64_t width = 0, height = 0;
    int fps_num = 25, fps_den = 1;

    size_t size() const { return frames.size(); }
};

// Pixel mapping. 8-bit code v maps to v / 127.5 - 1, so 0 -> -1 and
// 255 -> +1 exactly; the inverse rounds to nearest and saturates.
float pixel_to_float(uint8_t v);
uint8_t float_to_pixel(float v);

// Interleaved RGB8 (H*W*3 bytes) <-> normalized planar frame.
Frame frame_from_rgb8(const std::vector<uint8_t>& rgb, int64_t h, int64_t w);
std::vector<uint8_t> frame_to_rgb8(const Frame& f);

Frame load_png(const std::string& path);
void save_png(const Frame& f, const std::string& path);
Frame load_ppm(const std::string& path);
void save_ppm(const Frame& f, const std::string& path);

// Loads a video from one of:
//  - a directory of .png/.ppm frames, ordered by filename
//  - a raw 8-bit 4:2:0 .yuv file (width/height required, BT.601 limited
//    range; chroma is upsampled by sample duplication)
// width/height are ignored for directories.
FrameSequence load_video(const std::string& path, int64_t width = 0, int64_t height = 0,
                         int fps_num = 25, int fps_den = 1);

// Writes frames as zero-padded PNGs (frame_000000.png, ...) into a directory.
void save_video_frames(const FrameSequence& seq, const std::string& dir);

// Replicate-pads on the bottom/right so both sides are multiples of 16.
Frame pad_to_multiple16(const Frame& f);
Frame crop_frame(const Frame& f, int64_t h, int64_t w);

// Spatio-temporal crop for training: `length` consecutive frames, same
// `patch` x `patch` window in each. Offsets are drawn uniformly.
struct ClipSample {
    std::vector<Frame> frames;
    size_t t0 = 0;
    int64_t y0 = 0, x0 = 0;
};
ClipSample sample_clip(const FrameSequence& seq, int64_t patch, size_t length, Rng& rng);

// Deterministic synthetic content for tests and ablations. Kinds:
//   Translate        smooth random texture; frame t is frame t-1 shifted by
//                    (vx, vy) with replicate-edge fill
//   Static           smooth random texture, no motion
//   NoiseTranslate   unsmoothed pixel noise, same shifting rule
// Integer velocities make the motion exactly representable by pixel
// displacements. |vx|, |vy| must not exceed size/4.
enum class SynthKind { Translate, Static, NoiseTranslate };

struct SynthSpec {
    SynthKind kind = SynthKind::Translate;
    int64_t width = 64, height = 64;
    size_t length = 7;
    int vx = 1, vy = 0;
    uint64_t seed = 0;
    int smooth_radius = 4;  // box-blur radius for the textured kinds
};
FrameSequence make_synthetic_clip(const SynthSpec& spec);

}  // namespace movi
