#pragma once

#include <string>

#include "movi/config.hpp"
#include "movi/nn.hpp"

namespace movi {

using ag::Var;

// Frame Reconstruction Network: a 4-scale UNet whose encoder carries one
// C-LSTM block per scale (the temporal buffer), fed with the channel
// concatenation of the decoded residual stack and the previous
// reconstruction. With cfg.frn_recurrent = false each C-LSTM is replaced by
// a plain 3x3 conv + tanh of the same width, which is the non-recurrent
// ablation variant.
template <typename T>
struct Frn {
    ModelConfig cfg;
    nn::Conv2d<T> e0, e1, e2, e3;
    nn::ConvLstm<T> l0, l1, l2, l3;
    nn::Conv2d<T> p0, p1, p2, p3;  // plain-conv stand-ins when not recurrent
    nn::UpConv<T> u0, u1, u2;      // deep-to-shallow upsampling
    nn::Conv2d<T> m0, m1, m2;      // merge convs after skip concatenation
    nn::Conv2d<T> out;

    Frn() = default;
    Frn(nn::ParamStore<T>& ps, const ModelConfig& c, Rng& rng) : cfg(c) {
        int64_t in = c.input_channels() + 3;
        const auto& w = c.frn_widths;
        e0 = {ps, "frn.e0", in, w[0], 3, 1, rng};
        e1 = {ps, "frn.e1", w[0], w[1], 3, 2, rng};
        e2 = {ps, "frn.e2", w[1], w[2], 3, 2, rng};
        e3 = {ps, "frn.e3", w[2], w[3], 3, 2, rng};
        if (c.frn_recurrent) {
            l0 = {ps, "frn.l0", w[0], w[0], rng};
            l1 = {ps, "frn.l1", w[1], w[1], rng};
            l2 = {ps, "frn.l2", w[2], w[2], rng};
            l3 = {ps, "frn.l3", w[3], w[3], rng};
        } else {
            p0 = {ps, "frn.p0", w[0], w[0], 3, 1, rng};
            p1 = {ps, "frn.p1", w[1], w[1], 3, 1, rng};
            p2 = {ps, "frn.p2", w[2], w[2], 3, 1, rng};
            p3 = {ps, "frn.p3", w[3], w[3], 3, 1, rng};
        }
        u2 = {ps, "frn.u2", w[3], w[2], rng};
        m2 = {ps, "frn.m2", 2 * w[2], w[2], 3, 1, rng};
        u1 = {ps, "frn.u1", w[2], w[1], rng};
        m1 = {ps, "frn.m1", 2 * w[1], w[1], 3, 1, rng};
        u0 = {ps, "frn.u0", w[1], w[0], rng};
        m0 = {ps, "frn.m0", 2 * w[0], w[0], 3, 1, rng};
        out = {ps, "frn.out", w[0], 3, 3, 1, rng};
    }

    struct State {
        typename nn::ConvLstm<T>::State s0, s1, s2, s3;
    };

    Var<T> block(int scale, const Var<T>& x, State& st) const {
        if (!cfg.frn_recurrent) {
            const nn::Conv2d<T>* p[4] = {&p0, &p1, &p2, &p3};
            return ag::tanh_((*p[scale])(x));
        }
        const nn::ConvLstm<T>* l[4] = {&l0, &l1, &l2, &l3};
        typename nn::ConvLstm<T>::State* s[4] = {&st.s0, &st.s1, &st.s2, &st.s3};
        if (!s[scale]->defined())
            *s[scale] = l[scale]->initial(x.val().dim(0), x.val().dim(2), x.val().dim(3));
        auto [h, next] = l[scale]->step(x, *s[scale]);
        *s[scale] = next;
        return h;
    }

    // (d_hat, x_prev) -> x_hat, all at full frame resolution.
    Var<T> reconstruct(const Var<T>& d_hat, const Var<T>& x_prev, State& st) const {
        if (d_hat.val().dim(2) != x_prev.val().dim(2) || d_hat.val().dim(3) != x_prev.val().dim(3))
            throw std::invalid_argument("frn: residual stack and previous frame sizes differ");
        Var<T> x = ag::concat_c<T>({d_hat, x_prev});
        Var<T> h0 = block(0, e0(x), st);
        Var<T> h1 = block(1, e1(h0), st);
        Var<T> h2 = block(2, e2(h1), st);
        Var<T> h3 = block(3, e3(h2), st);
        Var<T> g2 = ag::relu(m2(ag::concat_c<T>({u2(h3), h2})));
        Var<T> g1 = ag::relu(m1(ag::concat_c<T>({u1(g2), h1})));
        Var<T> g0 = ag::relu(m0(ag::concat_c<T>({u0(g1), h0})));
        return ag::tanh_(out(g0));
    }
};

}  // namespace movi
