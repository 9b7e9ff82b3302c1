#include "movi/video_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <png.h>

namespace movi {

namespace fs = std::filesystem;

float pixel_to_float(uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

uint8_t float_to_pixel(float v) {
    float x = std::round((v + 1.0f) * 127.5f);
    if (x < 0.0f) x = 0.0f;
    if (x > 255.0f) x = 255.0f;
    return static_cast<uint8_t>(x);
}

Frame frame_from_rgb8(const std::vector<uint8_t>& rgb, int64_t h, int64_t w) {
    if (static_cast<int64_t>(rgb.size()) != h * w * 3)
        throw std::invalid_argument("frame_from_rgb8: buffer size mismatch");
    Frame f({3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                f.at3(c, y, x) = pixel_to_float(rgb[static_cast<size_t>((y * w + x) * 3 + c)]);
    return f;
}

std::vector<uint8_t> frame_to_rgb8(const Frame& f) {
    if (f.rank() != 3 || f.dim(0) != 3) throw std::invalid_argument("frame_to_rgb8: want (3,H,W)");
    int64_t h = f.dim(1), w = f.dim(2);
    std::vector<uint8_t> rgb(static_cast<size_t>(h * w * 3));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                rgb[static_cast<size_t>((y * w + x) * 3 + c)] = float_to_pixel(f.at3(c, y, x));
    return rgb;
}

Frame load_png(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw std::runtime_error("cannot read png " + path + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw std::runtime_error("cannot decode png " + path + ": " + msg);
    }
    return frame_from_rgb8(buf, image.height, image.width);
}

void save_png(const Frame& f, const std::string& path) {
    std::vector<uint8_t> rgb = frame_to_rgb8(f);
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(f.dim(2));
    image.height = static_cast<png_uint_32>(f.dim(1));
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr))
        throw std::runtime_error("cannot write png " + path + ": " + image.message);
}

Frame load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw std::runtime_error(path + ": not a binary ppm");
    auto next_token = [&in, &path]() {
        // Skips whitespace and '#' comment lines between header fields.
        std::string tok;
        for (;;) {
            if (!(in >> tok)) throw std::runtime_error(path + ": truncated ppm header");
            if (tok[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return tok;
        }
    };
    int64_t w = std::stoll(next_token());
    int64_t h = std::stoll(next_token());
    int64_t maxval = std::stoll(next_token());
    if (maxval != 255) throw std::runtime_error(path + ": only maxval 255 supported");
    in.get();  // single whitespace after maxval
    std::vector<uint8_t> rgb(static_cast<size_t>(h * w * 3));
    in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(rgb.size()))
        throw std::runtime_error(path + ": truncated ppm payload");
    return frame_from_rgb8(rgb, h, w);
}

void save_ppm(const Frame& f, const std::string& path) {
    std::vector<uint8_t> rgb = frame_to_rgb8(f);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "P6\n" << f.dim(2) << ' ' << f.dim(1) << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!out) throw std::runtime_error("cannot write " + path);
}

namespace {

// BT.601 limited-range YUV to full-range RGB. Studio black (Y=16) lands on
// RGB 0, which normalizes to -1.
void yuv_to_rgb(uint8_t y, uint8_t cb, uint8_t cr, uint8_t* out) {
    double c = 1.164383561643836 * (static_cast<double>(y) - 16.0);
    double d = static_cast<double>(cb) - 128.0;
    double e = static_cast<double>(cr) - 128.0;
    double rgb[3] = {c + 1.596026785714286 * e,
                     c - 0.391762290094914 * d - 0.812967647237771 * e,
                     c + 2.017232142857143 * d};
    for (int i = 0; i < 3; ++i) {
        double v = std::round(rgb[i]);
        out[i] = static_cast<uint8_t>(v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v));
    }
}

FrameSequence load_yuv420(const std::string& path, int64_t w, int64_t h, int fps_num, int fps_den) {
    if (w <= 0 || h <= 0)
        throw std::invalid_argument("raw yuv input needs explicit --width/--height");
    if (w % 2 != 0 || h % 2 != 0)
        throw std::invalid_argument("4:2:0 input dimensions must be even");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    int64_t ysize = w * h, csize = (w / 2) * (h / 2);
    std::vector<uint8_t> yp(static_cast<size_t>(ysize)), up(static_cast<size_t>(csize)),
        vp(static_cast<size_t>(csize));
    std::vector<uint8_t> rgb(static_cast<size_t>(ysize * 3));
    FrameSequence seq;
    seq.width = w;
    seq.height = h;
    seq.fps_num = fps_num;
    seq.fps_den = fps_den;
    for (;;) {
        in.read(reinterpret_cast<char*>(yp.data()), ysize);
        if (in.gcount() == 0) break;
        if (in.gcount() != ysize) throw std::runtime_error(path + ": truncated luma plane");
        in.read(reinterpret_cast<char*>(up.data()), csize);
        in.read(reinterpret_cast<char*>(vp.data()), csize);
        if (!in) throw std::runtime_error(path + ": truncated chroma plane");
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                size_t ci = static_cast<size_t>((y / 2) * (w / 2) + x / 2);
                yuv_to_rgb(yp[static_cast<size_t>(y * w + x)], up[ci], vp[ci],
                           rgb.data() + (y * w + x) * 3);
            }
        seq.frames.push_back(frame_from_rgb8(rgb, h, w));
    }
    if (seq.frames.empty()) throw std::runtime_error(path + ": no complete frames");
    return seq;
}

bool has_ext(const fs::path& p, const char* ext) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e == ext;
}

}  // namespace

FrameSequence load_video(const std::string& path, int64_t width, int64_t height,
                         int fps_num, int fps_den) {
    fs::path p(path);
    if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(p))
            if (entry.is_regular_file() && (has_ext(entry.path(), ".png") || has_ext(entry.path(), ".ppm")))
                files.push_back(entry.path());
        if (files.empty()) throw std::runtime_error(path + ": no .png/.ppm frames found");
        std::sort(files.begin(), files.end());
        FrameSequence seq;
        seq.fps_num = fps_num;
        seq.fps_den = fps_den;
        for (const auto& f : files)
            seq.frames.push_back(has_ext(f, ".png") ? load_png(f.string()) : load_ppm(f.string()));
        seq.height = seq.frames[0].dim(1);
        seq.width = seq.frames[0].dim(2);
        for (const auto& f : seq.frames)
            if (f.dim(1) != seq.height || f.dim(2) != seq.width)
                throw std::runtime_error(path + ": frames have mixed dimensions");
        return seq;
    }
    if (has_ext(p, ".yuv")) return load_yuv420(path, width, height, fps_num, fps_den);
    if (has_ext(p, ".png") || has_ext(p, ".ppm")) {
        FrameSequence seq;
        seq.fps_num = fps_num;
        seq.fps_den = fps_den;
        seq.frames.push_back(has_ext(p, ".png") ? load_png(path) : load_ppm(path));
        seq.height = seq.frames[0].dim(1);
        seq.width = seq.frames[0].dim(2);
        return seq;
    }
    throw std::runtime_error(path + ": unsupported input (want a frame directory, .yuv, .png or .ppm)");
}

void save_video_frames(const FrameSequence& seq, const std::string& dir) {
    fs::create_directories(dir);
    char name[32];
    for (size_t i = 0; i < seq.frames.size(); ++i) {
        std::snprintf(name, sizeof name, "frame_%06zu.png", i);
        save_png(seq.frames[i], (fs::path(dir) / name).string());
    }
}

Frame pad_to_multiple16(const Frame& f) {
    int64_t h = f.dim(1), w = f.dim(2);
    int64_t hp = (h + 15) / 16 * 16, wp = (w + 15) / 16 * 16;
    if (hp == h && wp == w) return f;
    Frame out({3, hp, wp});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < hp; ++y) {
            int64_t sy = y < h ? y : h - 1;
            for (int64_t x = 0; x < wp; ++x)
                out.at3(c, y, x) = f.at3(c, sy, x < w ? x : w - 1);
        }
    return out;
}

Frame crop_frame(const Frame& f, int64_t h, int64_t w) {
    if (h > f.dim(1) || w > f.dim(2)) throw std::invalid_argument("crop_frame: target larger than frame");
    if (h == f.dim(1) && w == f.dim(2)) return f;
    Frame out({3, h, w});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) out.at3(c, y, x) = f.at3(c, y, x);
    return out;
}

ClipSample sample_clip(const FrameSequence& seq, int64_t patch, size_t length, Rng& rng) {
    if (seq.frames.size() < length)
        throw std::invalid_argument("sample_clip: sequence shorter than requested window");
    if (seq.height < patch || seq.width < patch)
        throw std::invalid_argument("sample_clip: frames smaller than patch");
    ClipSample cs;
    cs.t0 = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(seq.frames.size() - length)));
    cs.y0 = rng.uniform_int(0, seq.height - patch);
    cs.x0 = rng.uniform_int(0, seq.width - patch);
    for (size_t t = 0; t < length; ++t) {
        const Frame& src = seq.frames[cs.t0 + t];
        Frame dst({3, patch, patch});
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < patch; ++y)
                for (int64_t x = 0; x < patch; ++x)
                    dst.at3(c, y, x) = src.at3(c, cs.y0 + y, cs.x0 + x);
        cs.frames.push_back(std::move(dst));
    }
    return cs;
}

FrameSequence make_synthetic_clip(const SynthSpec& spec) {
    int64_t h = spec.height, w = spec.width;
    if (std::abs(spec.vx) > w / 4 || std::abs(spec.vy) > h / 4)
        throw std::invalid_argument("make_synthetic_clip: velocity too large (limit size/4)");
    Rng rng(spec.seed);
    // Base texture: uniform noise, box-blurred for the textured kinds and
    // stretched back to cover most of [-1, 1].
    Tensor<float> base({3, h, w});
    for (int64_t i = 0; i < base.numel(); ++i)
        base[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    int r = spec.kind == SynthKind::NoiseTranslate ? 0 : spec.smooth_radius;
    if (r > 0) {
        Tensor<float> tmp({3, h, w});
        for (int pass = 0; pass < 2; ++pass) {
            // Horizontal then vertical wraparound box blur.
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x) {
                        float acc = 0.0f;
                        for (int d = -r; d <= r; ++d)
                            acc += base.at3(c, y, ((x + d) % w + w) % w);
                        tmp.at3(c, y, x) = acc / static_cast<float>(2 * r + 1);
                    }
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x) {
                        float acc = 0.0f;
                        for (int d = -r; d <= r; ++d)
                            acc += tmp.at3(c, ((y + d) % h + h) % h, x);
                        base.at3(c, y, x) = acc / static_cast<float>(2 * r + 1);
                    }
        }
        float mx = 0.0f;
        for (int64_t i = 0; i < base.numel(); ++i) mx = std::max(mx, std::abs(base[i]));
        if (mx > 0.0f)
            for (int64_t i = 0; i < base.numel(); ++i) base[i] *= 0.9f / mx;
    }
    // Snap to the 8-bit pixel lattice so frames are representable images.
    for (int64_t i = 0; i < base.numel(); ++i) base[i] = pixel_to_float(float_to_pixel(base[i]));

    int vx = spec.kind == SynthKind::Static ? 0 : spec.vx;
    int vy = spec.kind == SynthKind::Static ? 0 : spec.vy;
    FrameSequence seq;
    seq.width = w;
    seq.height = h;
    Frame cur = base;
    for (size_t t = 0; t < spec.length; ++t) {
        if (t > 0) {
            // frame t = frame t-1 shifted by (vx, vy), replicate-edge fill.
            Frame next({3, h, w});
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t y = 0; y < h; ++y) {
                    int64_t sy = std::clamp<int64_t>(y - vy, 0, h - 1);
                    for (int64_t x = 0; x < w; ++x)
                        next.at3(c, y, x) = cur.at3(c, sy, std::clamp<int64_t>(x - vx, 0, w - 1));
                }
            cur = std::move(next);
        }
        seq.frames.push_back(cur);
    }
    return seq;
}

}  // namespace movi
