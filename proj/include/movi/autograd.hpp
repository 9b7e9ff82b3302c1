#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "movi/gemm.hpp"
#include "movi/rng.hpp"
#include "movi/tensor.hpp"

// Reverse-mode autodiff on a dynamically built tape. Templated on the scalar
// type so the same network code runs in float for production and in double
// for finite-difference gradient verification. Everything is single-threaded
// and allocation-order deterministic; encode/decode bit-exactness depends on
// inference replaying identical instruction sequences.
namespace movi::ag {

inline bool& grad_enabled() {
    static bool on = true;
    return on;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
    ~NoGradGuard() { grad_enabled() = prev; }
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward;
    bool needs_grad = false;

    Tensor<T>& g() {
        if (!grad.defined()) grad = Tensor<T>::zeros(value.shape());
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

    static Var leaf(Tensor<T> v, bool requires_grad = false) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(v);
        n->needs_grad = requires_grad;
        return Var(std::move(n));
    }

    bool defined() const { return n_ != nullptr; }
    const Tensor<T>& val() const { return n_->value; }
    Tensor<T>& val() { return n_->value; }
    Tensor<T>& grad() { return n_->g(); }
    bool needs_grad() const { return n_ && n_->needs_grad; }
    const std::shared_ptr<Node<T>>& node() const { return n_; }

    void zero_grad() {
        if (n_ && n_->grad.defined()) n_->grad.fill(T(0));
    }

private:
    std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <typename T>
void accum(const std::shared_ptr<Node<T>>& p, const Tensor<T>& g) {
    if (!p->needs_grad) return;
    p->g().add_(g);
}

template <typename T, typename F>
Var<T> make_op(Tensor<T> out, std::vector<Var<T>> parents, F&& bw) {
    bool need = false;
    if (grad_enabled()) {
        for (const auto& p : parents)
            if (p.defined() && p.needs_grad()) { need = true; break; }
    }
    if (!need) return Var<T>::leaf(std::move(out), false);
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(out);
    n->needs_grad = true;
    for (auto& p : parents)
        if (p.defined()) n->parents.push_back(p.node());
    n->backward = std::forward<F>(bw);
    return Var<T>(std::move(n));
}

}  // namespace detail

// Runs reverse accumulation from a scalar root. Iterative reverse post-order
// keeps recursion depth independent of rollout length.
template <typename T>
void backward(const Var<T>& root) {
    if (root.val().numel() != 1)
        throw std::logic_error("backward requires a scalar root");
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->needs_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->g()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);
}

// ---- elementwise ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (!a.val().same_shape(b.val()))
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.val().shape()) + " vs " + shape_str(b.val().shape()));
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + b.val()[i];
    return detail::make_op(std::move(out), {a, b}, [](Node<T>& self) {
        detail::accum(self.parents[0], self.grad);
        detail::accum(self.parents[1], self.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    if (!a.val().same_shape(b.val()))
        throw std::invalid_argument("sub: shape mismatch " + shape_str(a.val().shape()) + " vs " + shape_str(b.val().shape()));
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] - b.val()[i];
    return detail::make_op(std::move(out), {a, b}, [](Node<T>& self) {
        detail::accum(self.parents[0], self.grad);
        auto& p = self.parents[1];
        if (p->needs_grad) {
            auto& g = p->g();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    if (!a.val().same_shape(b.val()))
        throw std::invalid_argument("mul: shape mismatch");
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * b.val()[i];
    return detail::make_op(std::move(out), {a, b}, [](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->needs_grad) {
            auto& g = pa->g();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb->value[i];
        }
        if (pb->needs_grad) {
            auto& g = pb->g();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa->value[i];
        }
    });
}

// Elementwise quotient. Kept as a true division (not mul by a reciprocal)
// so identical operands give exactly 1 in IEEE arithmetic; the similarity
// metrics rely on that to report a perfect score for identical inputs.
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    if (!a.val().same_shape(b.val()))
        throw std::invalid_argument("div: shape mismatch");
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] / b.val()[i];
    return detail::make_op(std::move(out), {a, b}, [](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->needs_grad) {
            auto& g = pa->g();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / pb->value[i];
        }
        if (pb->needs_grad) {
            auto& g = pb->g();
            for (int64_t i = 0; i < g.numel(); ++i)
                g[i] -= self.grad[i] * self.value[i] / pb->value[i];
        }
    });
}

// out = k * x + c
template <typename T>
Var<T> affine(const Var<T>& a, T k, T c) {
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = k * a.val()[i] + c;
    return detail::make_op(std::move(out), {a}, [k](Node<T>& self) {
        auto& p = self.parents[0];
        if (p->needs_grad) {
            auto& g = p->g();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += k * self.grad[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T k) { return affine(a, k, T(0)); }

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) { return affine(a, T(1), c); }

// Elementwise product with a constant tensor (no gradient into the constant).
template <typename T>
Var<T> mul_const(const Var<T>& a, Tensor<T> c) {
    if (!a.val().same_shape(c))
        throw std::invalid_argument("mul_const: shape mismatch");
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * c[i];
    return detail::make_op(std::move(out), {a}, [c = std::move(c)](Node<T>& self) {
        auto& p = self.parents[0];
        if (p->needs_grad) {
            auto& g = p->g();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * c[i];
        }
    });
}

template <typename T>
Var<T> add_const(const Var<T>& a, Tensor<T> c) {
    if (!a.val().same_shape(c))
        throw std::invalid_argument("add_const: shape mismatch");
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + c[i];
    return detail::make_op(std::move(out), {a}, [](Node<T>& self) {
        detail::accum(self.parents[0], self.grad);
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        T x = a.val()[i];
        // Split by sign to avoid exp overflow.
        out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                           : std::exp(x) / (T(1) + std::exp(x));
    }
    return detail::make_op(std::move(out), {a}, [](Node<T>& self) {
        auto& p = self.parents[0];
        if (p->needs_grad) {
            auto& g = p->g();
            for (int64_t i = 0; i < g.numel(); ++i) {
                T s = self.value[i];
                g[i] += self.grad[i] * s * (T(1) - s);
            }
        }
    });
}

template <typename T>
Var<T> tanh_(const Var<T>& a) {
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(a.val()[i]);
    return detail::make_op(std::move(out), {a}, [](Node<T>& self) {
        auto& p = self.parents[0];
        if (p->needs_grad) {
            auto& g = p->g();
            for (int64_t i = 0; i < g.numel(); ++i) {
                T t = self.value[i];
                g[i] += self.grad[i] * (T(1) - t * t);
            }
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] > T(0) ? a.val()[i] : T(0);
    return detail::make_op(std::move(out), {a}, [](Node<T>& self) {
        auto& p = self.parents[0];
        if (p->needs_grad) {
            auto& g = p->g();
            for (int64_t i = 0; i < g.numel(); ++i)
                if (p->value[i] > T(0)) g[i] += self.grad[i];
        }
    });
}

// Natural log; callers must keep inputs strictly positive (clamp upstream).
template <typename T>
Var<T> log_(const Var<T>& a) {
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(a.val()[i]);
    return detail::make_op(std::move(out), {a}, [](Node<T>& self) {
        auto& p = self.parents[0];
        if (p->needs_grad) {
            auto& g = p->g();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / p->value[i];
        }
    });
}

// x^e for positive x.
template <typename T>
Var<T> pow_const(const Var<T>& a, T e) {
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::pow(a.val()[i], e);
    return detail::make_op(std::move(out), {a}, [e](Node<T>& self) {
        auto& p = self.parents[0];
        if (p->needs_grad) {
            auto& g = p->g();
            for (int64_t i = 0; i < g.numel(); ++i)
                g[i] += self.grad[i] * e * std::pow(p->value[i], e - T(1));
        }
    });
}

// Gradient passes inside [lo, hi] inclusive.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        T x = a.val()[i];
        out[i] = x < lo ? lo : (x > hi ? hi : x);
    }
    return detail::make_op(std::move(out), {a}, [lo, hi](Node<T>& self) {
        auto& p = self.parents[0];
        if (p->needs_grad) {
            auto& g = p->g();
            for (int64_t i = 0; i < g.numel(); ++i) {
                T x = p->value[i];
                if (x >= lo && x <= hi) g[i] += self.grad[i];
            }
        }
    });
}

template <typename T>
Var<T> clamp_min(const Var<T>& a, T lo) {
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] < lo ? lo : a.val()[i];
    return detail::make_op(std::move(out), {a}, [lo](Node<T>& self) {
        auto& p = self.parents[0];
        if (p->needs_grad) {
            auto& g = p->g();
            for (int64_t i = 0; i < g.numel(); ++i)
                if (p->value[i] >= lo) g[i] += self.grad[i];
        }
    });
}

// ---- reductions ----

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    T s = T(0);
    for (int64_t i = 0; i < a.val().numel(); ++i) s += a.val()[i];
    Tensor<T> out({1});
    out[0] = s;
    return detail::make_op(std::move(out), {a}, [](Node<T>& self) {
        auto& p = self.parents[0];
        if (p->needs_grad) {
            auto& g = p->g();
            T go = self.grad[0];
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += go;
        }
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    // True division, not scale by 1/n: a mean of n exact ones must be
    // exactly one (sum == n, n/n == 1), which scale by a rounded
    // reciprocal does not guarantee.
    const T n = static_cast<T>(a.val().numel());
    Var<T> s = sum_all(a);
    Tensor<T> out({1});
    out[0] = s.val()[0] / n;
    return detail::make_op(std::move(out), {s}, [n](Node<T>& self) {
        auto& p = self.parents[0];
        if (p->needs_grad) p->g()[0] += self.grad[0] / n;
    });
}

// ---- shape ops (NCHW) ----

template <typename T>
Var<T> concat_c(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_c: no inputs");
    const Shape& s0 = parts[0].val().shape();
    int64_t ctotal = 0;
    for (const auto& p : parts) {
        const Shape& s = p.val().shape();
        if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
            throw std::invalid_argument("concat_c: incompatible shapes");
        ctotal += s[1];
    }
    int64_t n = s0[0], h = s0[2], w = s0[3], hw = h * w;
    Tensor<T> out({n, ctotal, h, w});
    std::vector<int64_t> offs;
    int64_t co = 0;
    for (const auto& p : parts) {
        offs.push_back(co);
        int64_t c = p.val().dim(1);
        for (int64_t b = 0; b < n; ++b) {
            const T* src = p.val().data() + b * c * hw;
            T* dst = out.data() + (b * ctotal + co) * hw;
            std::copy(src, src + c * hw, dst);
        }
        co += c;
    }
    std::vector<Var<T>> parents = parts;
    return detail::make_op(std::move(out), std::move(parents),
                           [offs, n, ctotal, hw](Node<T>& self) {
        for (size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = self.parents[k];
            if (!p->needs_grad) continue;
            auto& g = p->g();
            int64_t c = p->value.dim(1);
            for (int64_t b = 0; b < n; ++b) {
                const T* src = self.grad.data() + (b * ctotal + offs[k]) * hw;
                T* dst = g.data() + b * c * hw;
                for (int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
            }
        }
    });
}

template <typename T>
Var<T> slice_c(const Var<T>& a, int64_t c0, int64_t len) {
    const Shape& s = a.val().shape();
    if (s.size() != 4 || c0 < 0 || c0 + len > s[1])
        throw std::invalid_argument("slice_c: bad range");
    int64_t n = s[0], c = s[1], h = s[2], w = s[3], hw = h * w;
    Tensor<T> out({n, len, h, w});
    for (int64_t b = 0; b < n; ++b) {
        const T* src = a.val().data() + (b * c + c0) * hw;
        std::copy(src, src + len * hw, out.data() + b * len * hw);
    }
    return detail::make_op(std::move(out), {a}, [c0, len, n, c, hw](Node<T>& self) {
        auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& g = p->g();
        for (int64_t b = 0; b < n; ++b) {
            const T* src = self.grad.data() + b * len * hw;
            T* dst = g.data() + (b * c + c0) * hw;
            for (int64_t i = 0; i < len * hw; ++i) dst[i] += src[i];
        }
    });
}

// Keeps the top-left h x w window; used to align odd-sized hyper tensors.
template <typename T>
Var<T> crop_hw(const Var<T>& a, int64_t h, int64_t w) {
    const Shape& s = a.val().shape();
    if (s.size() != 4 || h > s[2] || w > s[3])
        throw std::invalid_argument("crop_hw: target larger than input");
    if (h == s[2] && w == s[3]) return a;
    int64_t n = s[0], c = s[1], hi = s[2], wi = s[3];
    Tensor<T> out({n, c, h, w});
    for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < h; ++y) {
                const T* src = a.val().data() + (((b * c + ch) * hi) + y) * wi;
                std::copy(src, src + w, out.data() + (((b * c + ch) * h) + y) * w);
            }
    return detail::make_op(std::move(out), {a}, [n, c, h, w, hi, wi](Node<T>& self) {
        auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& g = p->g();
        for (int64_t b = 0; b < n; ++b)
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t y = 0; y < h; ++y) {
                    const T* src = self.grad.data() + (((b * c + ch) * h) + y) * w;
                    T* dst = g.data() + (((b * c + ch) * hi) + y) * wi;
                    for (int64_t x = 0; x < w; ++x) dst[x] += src[x];
                }
    });
}

// Broadcasts a per-channel parameter vector (shape {C}) to NCHW.
template <typename T>
Var<T> expand_cparam(const Var<T>& p, int64_t n, int64_t h, int64_t w) {
    if (p.val().rank() != 1) throw std::invalid_argument("expand_cparam: want rank-1");
    int64_t c = p.val().dim(0), hw = h * w;
    Tensor<T> out({n, c, h, w});
    for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
            T v = p.val()[ch];
            T* dst = out.data() + (b * c + ch) * hw;
            std::fill(dst, dst + hw, v);
        }
    return detail::make_op(std::move(out), {p}, [n, c, hw](Node<T>& self) {
        auto& par = self.parents[0];
        if (!par->needs_grad) return;
        auto& g = par->g();
        for (int64_t b = 0; b < n; ++b)
            for (int64_t ch = 0; ch < c; ++ch) {
                const T* src = self.grad.data() + (b * c + ch) * hw;
                T s = T(0);
                for (int64_t i = 0; i < hw; ++i) s += src[i];
                g[ch] += s;
            }
    });
}

// ---- convolution ----

namespace detail {

template <typename T>
void im2col(const T* x, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t ho, int64_t wo, T* cols) {
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj) {
                T* row = cols + ((ch * kh + ki) * kw + kj) * ho * wo;
                for (int64_t oy = 0; oy < ho; ++oy) {
                    int64_t iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= h) {
                        std::fill(row + oy * wo, row + (oy + 1) * wo, T(0));
                        continue;
                    }
                    const T* src = x + (ch * h + iy) * w;
                    for (int64_t ox = 0; ox < wo; ++ox) {
                        int64_t ix = ox * stride + kj - pad;
                        row[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* cols, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t ho, int64_t wo, T* x) {
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj) {
                const T* row = cols + ((ch * kh + ki) * kw + kj) * ho * wo;
                for (int64_t oy = 0; oy < ho; ++oy) {
                    int64_t iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = x + (ch * h + iy) * w;
                    for (int64_t ox = 0; ox < wo; ++ox) {
                        int64_t ix = ox * stride + kj - pad;
                        if (ix >= 0 && ix < w) dst[ix] += row[oy * wo + ox];
                    }
                }
            }
}

}  // namespace detail

// x: (N,Cin,H,W), w: (Cout,Cin,Kh,Kw), optional bias (Cout). Zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride, int64_t pad) {
    const Shape& xs = x.val().shape();
    const Shape& ws = w.val().shape();
    if (xs.size() != 4 || ws.size() != 4)
        throw std::invalid_argument("conv2d: want rank-4 input and weight");
    if (xs[1] != ws[1])
        throw std::invalid_argument("conv2d: channel mismatch " + shape_str(xs) + " vs " + shape_str(ws));
    int64_t n = xs[0], cin = xs[1], h = xs[2], wdt = xs[3];
    int64_t cout = ws[0], kh = ws[2], kw = ws[3];
    int64_t ho = (h + 2 * pad - kh) / stride + 1;
    int64_t wo = (wdt + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");
    int64_t k = cin * kh * kw, p = ho * wo;

    Tensor<T> out({n, cout, ho, wo});
    std::vector<T> cols(static_cast<size_t>(k * p));
    for (int64_t bn = 0; bn < n; ++bn) {
        detail::im2col(x.val().data() + bn * cin * h * wdt, cin, h, wdt, kh, kw, stride, pad, ho, wo, cols.data());
        gemm(w.val().data(), cols.data(), out.data() + bn * cout * p, cout, k, p);
        if (b.defined()) {
            T* o = out.data() + bn * cout * p;
            for (int64_t co = 0; co < cout; ++co) {
                T bias = b.val()[co];
                for (int64_t i = 0; i < p; ++i) o[co * p + i] += bias;
            }
        }
    }

    bool has_bias = b.defined();
    return detail::make_op(std::move(out), {x, w, b},
                           [n, cin, h, wdt, cout, kh, kw, stride, pad, ho, wo, k, p, has_bias](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        std::vector<T> cols(static_cast<size_t>(k * p));
        std::vector<T> dcols;
        for (int64_t bn = 0; bn < n; ++bn) {
            const T* go = self.grad.data() + bn * cout * p;
            if (pw->needs_grad || px->needs_grad)
                detail::im2col(px->value.data() + bn * cin * h * wdt, cin, h, wdt, kh, kw, stride, pad, ho, wo, cols.data());
            if (pw->needs_grad)
                gemm(go, cols.data(), pw->g().data(), cout, p, k, /*accumulate=*/true,
                     /*trans_a=*/false, /*trans_b=*/true);
            if (px->needs_grad) {
                dcols.resize(static_cast<size_t>(k * p));
                gemm(pw->value.data(), go, dcols.data(), k, cout, p, /*accumulate=*/false,
                     /*trans_a=*/true, /*trans_b=*/false);
                detail::col2im_add(dcols.data(), cin, h, wdt, kh, kw, stride, pad, ho, wo,
                                   px->g().data() + bn * cin * h * wdt);
            }
        }
        if (has_bias) {
            auto& pb = self.parents[2];
            if (pb->needs_grad) {
                auto& gb = pb->g();
                for (int64_t bn = 0; bn < n; ++bn) {
                    const T* go = self.grad.data() + bn * cout * p;
                    for (int64_t co = 0; co < cout; ++co) {
                        T s = T(0);
                        for (int64_t i = 0; i < p; ++i) s += go[co * p + i];
                        gb[co] += s;
                    }
                }
            }
        }
    });
}

// ---- resampling ----

template <typename T>
Var<T> upsample_nearest2(const Var<T>& a) {
    const Shape& s = a.val().shape();
    if (s.size() != 4) throw std::invalid_argument("upsample_nearest2: want rank-4");
    int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    Tensor<T> out({n, c, 2 * h, 2 * w});
    for (int64_t bc = 0; bc < n * c; ++bc) {
        const T* src = a.val().data() + bc * h * w;
        T* dst = out.data() + bc * 4 * h * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                T v = src[y * w + x];
                T* d = dst + (2 * y) * 2 * w + 2 * x;
                d[0] = v;
                d[1] = v;
                d[2 * w] = v;
                d[2 * w + 1] = v;
            }
    }
    return detail::make_op(std::move(out), {a}, [n, c, h, w](Node<T>& self) {
        auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& g = p->g();
        for (int64_t bc = 0; bc < n * c; ++bc) {
            const T* go = self.grad.data() + bc * 4 * h * w;
            T* gi = g.data() + bc * h * w;
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    const T* s = go + (2 * y) * 2 * w + 2 * x;
                    gi[y * w + x] += s[0] + s[1] + s[2 * w] + s[2 * w + 1];
                }
        }
    });
}

// 2x2 stride-2 mean pool; odd trailing row/column is dropped.
template <typename T>
Var<T> avg_pool2(const Var<T>& a) {
    const Shape& s = a.val().shape();
    if (s.size() != 4) throw std::invalid_argument("avg_pool2: want rank-4");
    int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    int64_t ho = h / 2, wo = w / 2;
    if (ho == 0 || wo == 0) throw std::invalid_argument("avg_pool2: input too small");
    Tensor<T> out({n, c, ho, wo});
    for (int64_t bc = 0; bc < n * c; ++bc) {
        const T* src = a.val().data() + bc * h * w;
        T* dst = out.data() + bc * ho * wo;
        for (int64_t y = 0; y < ho; ++y)
            for (int64_t x = 0; x < wo; ++x) {
                const T* p = src + (2 * y) * w + 2 * x;
                dst[y * wo + x] = (p[0] + p[1] + p[w] + p[w + 1]) * T(0.25);
            }
    }
    return detail::make_op(std::move(out), {a}, [n, c, h, w, ho, wo](Node<T>& self) {
        auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& g = p->g();
        for (int64_t bc = 0; bc < n * c; ++bc) {
            const T* go = self.grad.data() + bc * ho * wo;
            T* gi = g.data() + bc * h * w;
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t x = 0; x < wo; ++x) {
                    T v = go[y * wo + x] * T(0.25);
                    T* q = gi + (2 * y) * w + 2 * x;
                    q[0] += v;
                    q[1] += v;
                    q[w] += v;
                    q[w + 1] += v;
                }
        }
    });
}

// Separable correlation with a fixed 1-D tap vector, 'valid' extent.
// Output is (H-K+1, W-K+1). The taps are constants, not parameters.
template <typename T>
Var<T> sep_filter_valid(const Var<T>& a, std::vector<T> taps) {
    const Shape& s = a.val().shape();
    if (s.size() != 4) throw std::invalid_argument("sep_filter_valid: want rank-4");
    int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    int64_t kk = static_cast<int64_t>(taps.size());
    int64_t ho = h - kk + 1, wo = w - kk + 1;
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("sep_filter_valid: input smaller than window");
    Tensor<T> out({n, c, ho, wo});
    std::vector<T> tmp(static_cast<size_t>(h * wo));
    for (int64_t bc = 0; bc < n * c; ++bc) {
        const T* src = a.val().data() + bc * h * w;
        // Horizontal pass.
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < wo; ++x) {
                T acc = T(0);
                for (int64_t t = 0; t < kk; ++t) acc += src[y * w + x + t] * taps[static_cast<size_t>(t)];
                tmp[static_cast<size_t>(y * wo + x)] = acc;
            }
        // Vertical pass.
        T* dst = out.data() + bc * ho * wo;
        for (int64_t y = 0; y < ho; ++y)
            for (int64_t x = 0; x < wo; ++x) {
                T acc = T(0);
                for (int64_t t = 0; t < kk; ++t) acc += tmp[static_cast<size_t>((y + t) * wo + x)] * taps[static_cast<size_t>(t)];
                dst[y * wo + x] = acc;
            }
    }
    return detail::make_op(std::move(out), {a}, [n, c, h, w, ho, wo, kk, taps = std::move(taps)](Node<T>& self) {
        auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& g = p->g();
        std::vector<T> tmp(static_cast<size_t>(h * wo), T(0));
        for (int64_t bc = 0; bc < n * c; ++bc) {
            const T* go = self.grad.data() + bc * ho * wo;
            std::fill(tmp.begin(), tmp.end(), T(0));
            // Adjoint of the vertical pass.
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t x = 0; x < wo; ++x) {
                    T v = go[y * wo + x];
                    for (int64_t t = 0; t < kk; ++t) tmp[static_cast<size_t>((y + t) * wo + x)] += v * taps[static_cast<size_t>(t)];
                }
            // Adjoint of the horizontal pass.
            T* gi = g.data() + bc * h * w;
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < wo; ++x) {
                    T v = tmp[static_cast<size_t>(y * wo + x)];
                    for (int64_t t = 0; t < kk; ++t) gi[y * w + x + t] += v * taps[static_cast<size_t>(t)];
                }
        }
    });
}

// out(y, x) = in(y, x + s) horizontally (axis 1) or in(y + s, x) vertically
// (axis 0), with source coordinates clamped to the frame (edge replication).
template <typename T>
Var<T> shift2d(const Var<T>& a, int axis, int64_t s) {
    const Shape& sh = a.val().shape();
    if (sh.size() != 4) throw std::invalid_argument("shift2d: want rank-4");
    int64_t n = sh[0], c = sh[1], h = sh[2], w = sh[3];
    Tensor<T> out(sh);
    for (int64_t bc = 0; bc < n * c; ++bc) {
        const T* src = a.val().data() + bc * h * w;
        T* dst = out.data() + bc * h * w;
        for (int64_t y = 0; y < h; ++y) {
            int64_t sy = axis == 0 ? std::min(std::max(y + s, int64_t(0)), h - 1) : y;
            for (int64_t x = 0; x < w; ++x) {
                int64_t sx = axis == 1 ? std::min(std::max(x + s, int64_t(0)), w - 1) : x;
                dst[y * w + x] = src[sy * w + sx];
            }
        }
    }
    return detail::make_op(std::move(out), {a}, [axis, s, n, c, h, w](Node<T>& self) {
        auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& g = p->g();
        for (int64_t bc = 0; bc < n * c; ++bc) {
            const T* go = self.grad.data() + bc * h * w;
            T* gi = g.data() + bc * h * w;
            for (int64_t y = 0; y < h; ++y) {
                int64_t sy = axis == 0 ? std::min(std::max(y + s, int64_t(0)), h - 1) : y;
                for (int64_t x = 0; x < w; ++x) {
                    int64_t sx = axis == 1 ? std::min(std::max(x + s, int64_t(0)), w - 1) : x;
                    gi[sy * w + sx] += go[y * w + x];
                }
            }
        }
    });
}

// ---- quantization ----

// Stochastic binarizer: emits +1 with probability (1+y)/2, else -1, and
// copies the incoming gradient straight through. Inputs live in [-1, 1].
template <typename T>
Var<T> binarize_stochastic(const Var<T>& a, Rng& rng) {
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        T y = a.val()[i];
        double p = (1.0 + static_cast<double>(y)) * 0.5;
        out[i] = rng.uniform() < p ? T(1) : T(-1);
    }
    return detail::make_op(std::move(out), {a}, [](Node<T>& self) {
        detail::accum(self.parents[0], self.grad);
    });
}

// Deterministic binarizer for inference: sign with sign(0) = +1.
template <typename T>
Var<T> binarize_sign(const Var<T>& a) {
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] >= T(0) ? T(1) : T(-1);
    return detail::make_op(std::move(out), {a}, [](Node<T>& self) {
        detail::accum(self.parents[0], self.grad);
    });
}

}  // namespace movi::ag
