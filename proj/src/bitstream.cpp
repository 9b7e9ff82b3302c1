#include "movi/bitstream.hpp"

#include <fstream>

namespace movi {

namespace {

constexpr uint8_t kMagic[4] = {'M', 'O', 'V', 'I'};
constexpr uint8_t kVersion = 1;

struct Writer {
    std::vector<uint8_t> out;

    void u8(uint8_t v) { out.push_back(v); }
    void i8(int8_t v) { out.push_back(static_cast<uint8_t>(v)); }
    void u16(uint16_t v) {
        out.push_back(static_cast<uint8_t>(v));
        out.push_back(static_cast<uint8_t>(v >> 8));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void bytes(const uint8_t* p, size_t n) { out.insert(out.end(), p, p + n); }
};

struct Reader {
    const std::vector<uint8_t>& in;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > in.size()) throw BitstreamError("bitstream truncated");
    }
    uint8_t u8() {
        need(1);
        return in[pos++];
    }
    int8_t i8() { return static_cast<int8_t>(u8()); }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(in[pos] | (in[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::vector<uint8_t> bytes(size_t n) {
        need(n);
        std::vector<uint8_t> v(in.begin() + static_cast<ptrdiff_t>(pos),
                               in.begin() + static_cast<ptrdiff_t>(pos + n));
        pos += n;
        return v;
    }
};

}  // namespace

std::vector<uint8_t> serialize_bitstream(const BitstreamFile& bs) {
    const BitstreamHeader& h = bs.header;
    if (bs.frames.size() != h.frame_count)
        throw BitstreamError("frame_count does not match payload count");
    Writer w;
    w.bytes(kMagic, 4);
    w.u8(kVersion);
    w.u16(h.orig_w);
    w.u16(h.orig_h);
    w.u16(h.padded_w);
    w.u16(h.padded_h);
    w.u32(h.frame_count);
    w.u16(h.fps_num);
    w.u16(h.fps_den);
    w.bytes(h.fingerprint.data(), h.fingerprint.size());
    w.u8(static_cast<uint8_t>(h.displacements.horizontal.size()));
    for (int s : h.displacements.horizontal) w.i8(static_cast<int8_t>(s));
    w.u8(static_cast<uint8_t>(h.displacements.vertical.size()));
    for (int s : h.displacements.vertical) w.i8(static_cast<int8_t>(s));
    for (const FramePayload& f : bs.frames) {
        w.u32(static_cast<uint32_t>(f.z.size()));
        w.bytes(f.z.data(), f.z.size());
        w.u32(static_cast<uint32_t>(f.y.size()));
        w.bytes(f.y.data(), f.y.size());
    }
    return std::move(w.out);
}

BitstreamFile parse_bitstream(const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4);
    for (int i = 0; i < 4; ++i)
        if (bytes[static_cast<size_t>(i)] != kMagic[i])
            throw BitstreamError("not a MOVI bitstream (bad magic)");
    r.pos = 4;
    uint8_t version = r.u8();
    if (version != kVersion)
        throw BitstreamError("unsupported bitstream version " + std::to_string(version));
    BitstreamFile bs;
    BitstreamHeader& h = bs.header;
    h.orig_w = r.u16();
    h.orig_h = r.u16();
    h.padded_w = r.u16();
    h.padded_h = r.u16();
    h.frame_count = r.u32();
    h.fps_num = r.u16();
    h.fps_den = r.u16();
    auto fp = r.bytes(32);
    std::copy(fp.begin(), fp.end(), h.fingerprint.begin());
    uint8_t nh = r.u8();
    for (int i = 0; i < nh; ++i) h.displacements.horizontal.push_back(r.i8());
    uint8_t nv = r.u8();
    for (int i = 0; i < nv; ++i) h.displacements.vertical.push_back(r.i8());
    if (h.padded_w % 16 != 0 || h.padded_h % 16 != 0)
        throw BitstreamError("padded dimensions are not multiples of 16");
    if (h.orig_w > h.padded_w || h.orig_h > h.padded_h)
        throw BitstreamError("original dimensions exceed padded dimensions");
    bs.frames.reserve(h.frame_count);
    for (uint32_t i = 0; i < h.frame_count; ++i) {
        FramePayload f;
        f.z = r.bytes(r.u32());
        f.y = r.bytes(r.u32());
        bs.frames.push_back(std::move(f));
    }
    if (r.pos != bytes.size()) throw BitstreamError("trailing bytes after last frame");
    return bs;
}

void write_bitstream(const BitstreamFile& bs, const std::string& path) {
    std::vector<uint8_t> bytes = serialize_bitstream(bs);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw BitstreamError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw BitstreamError("cannot write " + path);
}

BitstreamFile read_bitstream(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw BitstreamError("cannot open " + path);
    std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw BitstreamError("cannot read " + path);
    return parse_bitstream(bytes);
}

}  // namespace movi
