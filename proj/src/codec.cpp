#include "movi/codec.hpp"

#include "movi/range_coder.hpp"

namespace movi {

namespace {

using ag::Var;

// Both sessions funnel every reconstruction-side operation through here so
// encoder and decoder execute identical arithmetic on identical values;
// that, plus deterministic single-threaded kernels, is what makes the
// encoder-local reconstruction bit-exact against the decoder's.
struct Session {
    const MoviModel<float>& model;
    typename Dcn<float>::State dcn_state;
    typename Frn<float>::State frn_state;
    Var<float> x_prev;

    Session(const MoviModel<float>& m, int64_t ph, int64_t pw)
        : model(m), x_prev(Var<float>::leaf(Tensor<float>::zeros({1, 3, ph, pw}))) {}

    // (z_hat, y_hat) -> x_hat; advances the recurrent state and the
    // reference frame.
    Var<float> reconstruct(const Var<float>& y_hat) {
        Var<float> d_hat = model.dcn.decode(y_hat, dcn_state);
        Var<float> x_hat = model.frn.reconstruct(d_hat, x_prev, frn_state);
        x_prev = x_hat;
        return x_hat;
    }
};

std::vector<int8_t> to_symbols(const Tensor<float>& t) {
    std::vector<int8_t> s(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i) s[static_cast<size_t>(i)] = t[i] >= 0.0f ? 1 : -1;
    return s;
}

Tensor<float> from_symbols(const std::vector<int8_t>& s, const Shape& shape) {
    Tensor<float> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(s[static_cast<size_t>(i)]);
    return t;
}

std::vector<float> to_probs(const Tensor<float>& p) {
    return p.vec();
}

// Spatial size after one stride-2 k3 p1 conv.
int64_t half_up(int64_t v) { return (v + 1) / 2; }

Frame crop_to_frame(const Tensor<float>& x, int64_t h, int64_t w) {
    Frame full({3, x.dim(2), x.dim(3)}, x.vec());
    return crop_frame(full, h, w);
}

}  // namespace

EncodeResult encode_sequence(const MoviModel<float>& model, const FrameSequence& seq) {
    if (seq.frames.empty()) throw CodecError("nothing to encode: sequence has no frames");
    if (seq.width <= 0 || seq.height <= 0 || seq.width > 65535 || seq.height > 65535)
        throw CodecError("frame size out of range for the bitstream header");
    for (const Frame& f : seq.frames)
        if (f.dim(1) != seq.height || f.dim(2) != seq.width)
            throw CodecError("sequence contains frames of differing sizes");

    ag::NoGradGuard ng;
    int64_t ph = (seq.height + 15) / 16 * 16;
    int64_t pw = (seq.width + 15) / 16 * 16;

    EncodeResult res;
    res.bitstream.header.orig_w = static_cast<uint16_t>(seq.width);
    res.bitstream.header.orig_h = static_cast<uint16_t>(seq.height);
    res.bitstream.header.padded_w = static_cast<uint16_t>(pw);
    res.bitstream.header.padded_h = static_cast<uint16_t>(ph);
    res.bitstream.header.frame_count = static_cast<uint32_t>(seq.frames.size());
    res.bitstream.header.fps_num = static_cast<uint16_t>(seq.fps_num);
    res.bitstream.header.fps_den = static_cast<uint16_t>(seq.fps_den);
    res.bitstream.header.fingerprint = model.fingerprint();
    res.bitstream.header.displacements = model.cfg.displacements;
    res.reconstruction.width = seq.width;
    res.reconstruction.height = seq.height;
    res.reconstruction.fps_num = seq.fps_num;
    res.reconstruction.fps_den = seq.fps_den;

    Session session(model, ph, pw);
    typename Dcn<float>::State enc_state;  // encoder-side recurrence (analysis path)

    for (const Frame& src : seq.frames) {
        Frame padded = pad_to_multiple16(src);
        Var<float> x = Var<float>::leaf(Tensor<float>({1, 3, ph, pw}, padded.vec()));
        Var<float> d = displaced_differences(x, session.x_prev, model.cfg.displacements);
        Var<float> y = model.dcn.encode(d, enc_state);
        Var<float> y_hat = Var<float>::leaf(from_symbols(to_symbols(y.val()), y.val().shape()));
        Var<float> z = model.dcn.hyper_encode(y);
        Var<float> z_hat = Var<float>::leaf(from_symbols(to_symbols(z.val()), z.val().shape()));

        FramePayload payload;
        Var<float> p_z = model.dcn.factorized_probs(1, z.val().dim(2), z.val().dim(3));
        payload.z = rc_encode_plane({to_symbols(z_hat.val()), to_probs(p_z.val())});
        Var<float> p_y = model.dcn.hyper_decode(z_hat, y.val().dim(2), y.val().dim(3));
        payload.y = rc_encode_plane({to_symbols(y_hat.val()), to_probs(p_y.val())});
        res.frame_bits.push_back(8 * static_cast<int64_t>(payload.z.size() + payload.y.size()));
        res.bitstream.frames.push_back(std::move(payload));

        // The encoder's copy of the decoder keeps the loop closed: the next
        // frame is differenced against this reconstruction, not the source.
        Var<float> x_hat = session.reconstruct(y_hat);
        res.reconstruction.frames.push_back(crop_to_frame(x_hat.val(), seq.height, seq.width));
    }
    return res;
}

FrameSequence decode_sequence(const MoviModel<float>& model, const BitstreamFile& bs) {
    const BitstreamHeader& h = bs.header;
    if (model.fingerprint() != h.fingerprint)
        throw CodecError(
            "bitstream was produced by a different model (fingerprint mismatch); decoding "
            "would produce garbage");
    if (!(h.displacements == model.cfg.displacements))
        throw CodecError("bitstream displacement set " + h.displacements.describe() +
                         " does not match the model's " + model.cfg.displacements.describe());
    if (bs.frames.size() != h.frame_count)
        throw CodecError("bitstream frame payload count does not match the header");

    ag::NoGradGuard ng;
    int64_t ph = h.padded_h, pw = h.padded_w;
    int64_t yh = ph / 16, yw = pw / 16;
    int64_t zh = half_up(half_up(yh)), zw = half_up(half_up(yw));

    FrameSequence out;
    out.width = h.orig_w;
    out.height = h.orig_h;
    out.fps_num = h.fps_num;
    out.fps_den = h.fps_den;

    Session session(model, ph, pw);
    for (const FramePayload& payload : bs.frames) {
        Var<float> p_z = model.dcn.factorized_probs(1, zh, zw);
        Tensor<float> z_sym = from_symbols(rc_decode_plane(payload.z, to_probs(p_z.val())),
                                           {1, model.cfg.hyper_latent_channels, zh, zw});
        Var<float> z_hat = Var<float>::leaf(std::move(z_sym));
        Var<float> p_y = model.dcn.hyper_decode(z_hat, yh, yw);
        Tensor<float> y_sym = from_symbols(rc_decode_plane(payload.y, to_probs(p_y.val())),
                                           {1, model.cfg.latent_channels, yh, yw});
        Var<float> y_hat = Var<float>::leaf(std::move(y_sym));
        Var<float> x_hat = session.reconstruct(y_hat);
        out.frames.push_back(crop_to_frame(x_hat.val(), h.orig_h, h.orig_w));
    }
    return out;
}

}  // namespace movi
