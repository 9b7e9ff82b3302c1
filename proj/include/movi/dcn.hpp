#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "movi/config.hpp"
#include "movi/nn.hpp"

namespace movi {

using ag::Var;

// How latents are turned into symbols during a forward pass.
//   Stochastic  draw +-1 with P(+1) = (1+y)/2 (training); may capture the
//               realized offsets for later frozen replay
//   Sign        deterministic sign rule (inference / bitstream coding)
//   Frozen      add back previously captured offsets, keeping the pass a
//               smooth function of y so finite differences see the same
//               noise on every evaluation
template <typename T>
struct QuantCtx {
    enum class Mode { Stochastic, Sign, Frozen } mode = Mode::Sign;
    Rng* rng = nullptr;
    std::vector<Tensor<T>>* capture = nullptr;  // Stochastic: record y_hat - y here
    const std::vector<Tensor<T>>* frozen = nullptr;
    size_t frozen_next = 0;

    static QuantCtx train(Rng& r) { return {Mode::Stochastic, &r, nullptr, nullptr, 0}; }
    static QuantCtx eval() { return {Mode::Sign, nullptr, nullptr, nullptr, 0}; }
};

template <typename T>
Var<T> quantize(const Var<T>& y, QuantCtx<T>& q) {
    switch (q.mode) {
        case QuantCtx<T>::Mode::Stochastic: {
            Var<T> s = ag::binarize_stochastic(y, *q.rng);
            if (q.capture) {
                Tensor<T> off(y.val().shape());
                for (int64_t i = 0; i < off.numel(); ++i) off[i] = s.val()[i] - y.val()[i];
                q.capture->push_back(std::move(off));
            }
            return s;
        }
        case QuantCtx<T>::Mode::Sign:
            return ag::binarize_sign(y);
        case QuantCtx<T>::Mode::Frozen: {
            if (!q.frozen || q.frozen_next >= q.frozen->size())
                throw std::logic_error("quantize: frozen offsets exhausted");
            return ag::add_const(y, (*q.frozen)[q.frozen_next++]);
        }
    }
    throw std::logic_error("quantize: bad mode");
}

// Ideal codelength of realized symbols in bits, differentiable with respect
// to the probabilities only (the symbol pattern is a constant of the graph).
// q_e = p(e) when symbol +1, else 1 - p(e); bits = sum -log2 q_e.
template <typename T>
Var<T> rate_bits(const Tensor<T>& symbols, const Var<T>& p_plus) {
    if (!symbols.same_shape(p_plus.val()))
        throw std::invalid_argument("rate_bits: shape mismatch");
    // q = p*s + (1-s)/2 maps s=+1 -> p and s=-1 -> 1-p.
    Tensor<T> shift(symbols.shape());
    for (int64_t i = 0; i < shift.numel(); ++i) shift[i] = (T(1) - symbols[i]) * T(0.5);
    Var<T> q = ag::add_const(ag::mul_const(p_plus, symbols), std::move(shift));
    constexpr double ln2 = 0.6931471805599453094172321;
    return ag::scale(ag::sum_all(ag::log_(q)), static_cast<T>(-1.0 / ln2));
}

template <typename T>
struct RateEstimate {
    Var<T> bits_y, bits_z;
    int64_t area = 0;  // original (pre-padding) pixels per frame

    Var<T> bpp() const {
        return ag::scale(ag::add(bits_y, bits_z), static_cast<T>(1.0 / static_cast<double>(area)));
    }
    double bits_y_value() const { return static_cast<double>(bits_y.val()[0]); }
    double bits_z_value() const { return static_cast<double>(bits_z.val()[0]); }
    double bpp_value() const {
        return (bits_y_value() + bits_z_value()) / static_cast<double>(area);
    }
};

// Displacement Compression Network: recurrent autoencoder over the residual
// stack with a binarizing quantizer and a hyperprior that prices the latent
// symbols. Spatial contract: latents at 1/16 of the frame, hyper latents at
// ceil(latent/4).
template <typename T>
struct Dcn {
    ModelConfig cfg;
    // encoder: conv stride 2 + C-LSTM, three times, then the latent conv
    nn::Conv2d<T> ec0, ec1, ec2, elat;
    nn::ConvLstm<T> el0, el1, el2;
    // decoder mirrors with up-convolutions
    nn::UpConv<T> du0, du1, du2, dfinal;
    nn::ConvLstm<T> dl0, dl1, dl2;
    // hyperprior
    nn::Conv2d<T> he0, he1;
    nn::UpConv<T> hd0, hd1;
    nn::Conv2d<T> hlogit;
    Var<T> pz_logit;  // factorized model: one logit per z channel

    Dcn() = default;
    Dcn(nn::ParamStore<T>& ps, const ModelConfig& c, Rng& rng) : cfg(c) {
        int64_t in = c.input_channels();
        const auto& w = c.enc_widths;
        ec0 = {ps, "dcn.ec0", in, w[0], 3, 2, rng};
        el0 = {ps, "dcn.el0", w[0], w[0], rng};
        ec1 = {ps, "dcn.ec1", w[0], w[1], 3, 2, rng};
        el1 = {ps, "dcn.el1", w[1], w[1], rng};
        ec2 = {ps, "dcn.ec2", w[1], w[2], 3, 2, rng};
        el2 = {ps, "dcn.el2", w[2], w[2], rng};
        elat = {ps, "dcn.elat", w[2], c.latent_channels, 3, 2, rng};

        du0 = {ps, "dcn.du0", c.latent_channels, w[2], rng};
        dl0 = {ps, "dcn.dl0", w[2], w[2], rng};
        du1 = {ps, "dcn.du1", w[2], w[1], rng};
        dl1 = {ps, "dcn.dl1", w[1], w[1], rng};
        du2 = {ps, "dcn.du2", w[1], w[0], rng};
        dl2 = {ps, "dcn.dl2", w[0], w[0], rng};
        dfinal = {ps, "dcn.dfinal", w[0], in, rng};

        he0 = {ps, "dcn.he0", c.latent_channels, c.hyper_width, 3, 2, rng};
        he1 = {ps, "dcn.he1", c.hyper_width, c.hyper_latent_channels, 3, 2, rng};
        hd0 = {ps, "dcn.hd0", c.hyper_latent_channels, c.hyper_width, rng};
        hd1 = {ps, "dcn.hd1", c.hyper_width, c.hyper_width, rng};
        hlogit = {ps, "dcn.hlogit", c.hyper_width, c.latent_channels, 1, 1, rng};
        pz_logit = ps.create("dcn.pz_logit", {c.hyper_latent_channels}, T(0), rng);
    }

    struct State {
        typename nn::ConvLstm<T>::State e0, e1, e2, d0, d1, d2;
    };

    Var<T> encode(const Var<T>& d, State& st) const {
        if (d.val().dim(1) != cfg.input_channels())
            throw std::invalid_argument("dcn encode: stack has " + std::to_string(d.val().dim(1)) +
                                        " channels, model wants " +
                                        std::to_string(cfg.input_channels()));
        Var<T> h = ec0(d);
        if (!st.e0.defined()) st.e0 = el0.initial(h.val().dim(0), h.val().dim(2), h.val().dim(3));
        std::tie(h, st.e0) = el0.step(h, st.e0);
        h = ec1(h);
        if (!st.e1.defined()) st.e1 = el1.initial(h.val().dim(0), h.val().dim(2), h.val().dim(3));
        std::tie(h, st.e1) = el1.step(h, st.e1);
        h = ec2(h);
        if (!st.e2.defined()) st.e2 = el2.initial(h.val().dim(0), h.val().dim(2), h.val().dim(3));
        std::tie(h, st.e2) = el2.step(h, st.e2);
        return ag::tanh_(elat(h));
    }

    Var<T> decode(const Var<T>& y_hat, State& st) const {
        Var<T> h = du0(y_hat);
        if (!st.d0.defined()) st.d0 = dl0.initial(h.val().dim(0), h.val().dim(2), h.val().dim(3));
        std::tie(h, st.d0) = dl0.step(h, st.d0);
        h = du1(h);
        if (!st.d1.defined()) st.d1 = dl1.initial(h.val().dim(0), h.val().dim(2), h.val().dim(3));
        std::tie(h, st.d1) = dl1.step(h, st.d1);
        h = du2(h);
        if (!st.d2.defined()) st.d2 = dl2.initial(h.val().dim(0), h.val().dim(2), h.val().dim(3));
        std::tie(h, st.d2) = dl2.step(h, st.d2);
        // Differences of [-1,1] frames live in [-2,2].
        return ag::scale(ag::tanh_(dfinal(h)), T(2));
    }

    Var<T> hyper_encode(const Var<T>& y) const { return ag::tanh_(he1(he0(y))); }

    // P(y_hat = +1) per element, from quantized hyper latents.
    Var<T> hyper_decode(const Var<T>& z_hat, int64_t hy, int64_t wy) const {
        Var<T> h = hd1(hd0(z_hat));
        h = ag::crop_hw(h, hy, wy);
        return ag::clamp(ag::sigmoid(hlogit(h)), T(1e-6), T(1) - T(1e-6));
    }

    // P(z_hat = +1), one learned value per channel broadcast over space.
    Var<T> factorized_probs(int64_t n, int64_t hz, int64_t wz) const {
        return ag::clamp(ag::sigmoid(ag::expand_cparam(pz_logit, n, hz, wz)), T(1e-6),
                         T(1) - T(1e-6));
    }
};

}  // namespace movi
