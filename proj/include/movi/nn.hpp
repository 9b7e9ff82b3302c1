#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "movi/autograd.hpp"

namespace movi::nn {

using ag::Var;

// Flat registry of named trainable tensors. Registration order is the
// serialization and optimizer-state order, so module construction order
// must stay deterministic.
template <typename T>
struct ParamStore {
    std::vector<std::pair<std::string, Var<T>>> items;

    Var<T> create(const std::string& name, Shape shape, T init_scale, Rng& rng) {
        Tensor<T> t(shape);
        if (init_scale > T(0))
            for (int64_t i = 0; i < t.numel(); ++i)
                t[i] = static_cast<T>(rng.uniform(-static_cast<double>(init_scale), static_cast<double>(init_scale)));
        Var<T> v = Var<T>::leaf(std::move(t), true);
        items.emplace_back(name, v);
        return v;
    }

    Var<T>* find(const std::string& name) {
        for (auto& [n, v] : items)
            if (n == name) return &v;
        return nullptr;
    }

    void zero_grad() {
        for (auto& [n, v] : items) v.zero_grad();
    }
};

template <typename T>
struct Conv2d {
    Var<T> w, b;
    int64_t stride = 1, pad = 1;

    Conv2d() = default;
    Conv2d(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout,
           int64_t k, int64_t stride_, Rng& rng, bool bias = true)
        : stride(stride_), pad(k / 2) {
        T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cin * k * k)));
        w = ps.create(name + ".w", {cout, cin, k, k}, s, rng);
        if (bias) b = ps.create(name + ".b", {cout}, T(0), rng);
    }

    Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, w, b, stride, pad); }
};

// Convolutional LSTM cell. Gate order along the channel axis is
// input, forget, cell, output; the forget gate carries a +1 bias so early
// training does not wipe the recurrent state.
template <typename T>
struct ConvLstm {
    Conv2d<T> x2g, h2g;
    int64_t channels = 0;

    ConvLstm() = default;
    ConvLstm(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t c, Rng& rng)
        : x2g(ps, name + ".x2g", cin, 4 * c, 3, 1, rng, true),
          h2g(ps, name + ".h2g", c, 4 * c, 3, 1, rng, false),
          channels(c) {}

    struct State {
        Var<T> h, c;
        bool defined() const { return h.defined(); }
    };

    State initial(int64_t n, int64_t h, int64_t w) const {
        return {Var<T>::leaf(Tensor<T>::zeros({n, channels, h, w})),
                Var<T>::leaf(Tensor<T>::zeros({n, channels, h, w}))};
    }

    std::pair<Var<T>, State> step(const Var<T>& x, const State& prev) const {
        Var<T> gates = ag::add(x2g(x), h2g(prev.h));
        int64_t c = channels;
        Var<T> i = ag::sigmoid(ag::slice_c(gates, 0, c));
        Var<T> f = ag::sigmoid(ag::add_scalar(ag::slice_c(gates, c, c), T(1)));
        Var<T> g = ag::tanh_(ag::slice_c(gates, 2 * c, c));
        Var<T> o = ag::sigmoid(ag::slice_c(gates, 3 * c, c));
        Var<T> cell = ag::add(ag::mul(f, prev.c), ag::mul(i, g));
        Var<T> h = ag::mul(o, ag::tanh_(cell));
        return {h, State{h, cell}};
    }
};

// Nearest-neighbour x2 upsample followed by a 3x3 conv. Used everywhere a
// decoder needs to grow spatial resolution; avoids transposed-conv
// checkerboard artifacts and keeps the op set small.
template <typename T>
struct UpConv {
    Conv2d<T> conv;

    UpConv() = default;
    UpConv(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout, Rng& rng)
        : conv(ps, name, cin, cout, 3, 1, rng, true) {}

    Var<T> operator()(const Var<T>& x) const { return conv(ag::upsample_nearest2(x)); }
};

}  // namespace movi::nn
