#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "movi/autograd.hpp"
#include "movi/dcn.hpp"

namespace movi {

namespace metric_detail {

// 11-tap Gaussian window, sigma 1.5, normalized to sum 1.
template <typename T>
std::vector<T> gaussian_taps() {
    constexpr int k = 11;
    constexpr double sigma = 1.5;
    std::vector<double> g(k);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        double d = i - (k - 1) / 2.0;
        g[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += g[static_cast<size_t>(i)];
    }
    std::vector<T> taps(k);
    for (int i = 0; i < k; ++i) taps[static_cast<size_t>(i)] = static_cast<T>(g[static_cast<size_t>(i)] / sum);
    return taps;
}

constexpr double kMsssimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

inline int msssim_scales(int64_t h, int64_t w) {
    // Each scale halves; the 11x11 window must fit at the coarsest one.
    int64_t m = std::min(h, w);
    int scales = 0;
    while (scales < 5 && m >= 11) {
        ++scales;
        m /= 2;
    }
    if (scales == 0)
        throw std::invalid_argument("ms_ssim: input smaller than the 11x11 window");
    return scales;
}

}  // namespace metric_detail

// Multi-scale SSIM on [-1,1] tensors (NCHW; channels and batch are averaged
// together). Dynamic range L = 2, K1 = 0.01, K2 = 0.03, reference exponents;
// when fewer than 5 scales fit, the weights renormalize over the usable
// prefix. Differentiable.
template <typename T>
ag::Var<T> ms_ssim(const ag::Var<T>& a, const ag::Var<T>& b) {
    using namespace metric_detail;
    if (!a.val().same_shape(b.val()))
        throw std::invalid_argument("ms_ssim: shape mismatch " + shape_str(a.val().shape()) +
                                    " vs " + shape_str(b.val().shape()));
    if (a.val().rank() != 4) throw std::invalid_argument("ms_ssim: want rank-4");
    constexpr double kC1 = (0.01 * 2.0) * (0.01 * 2.0);
    constexpr double kC2 = (0.03 * 2.0) * (0.03 * 2.0);
    const std::vector<T> taps = gaussian_taps<T>();
    int scales = msssim_scales(a.val().dim(2), a.val().dim(3));
    double wsum = 0.0;
    for (int j = 0; j < scales; ++j) wsum += kMsssimWeights[j];

    ag::Var<T> x = a, y = b;
    ag::Var<T> result;
    for (int j = 0; j < scales; ++j) {
        ag::Var<T> mu_x = ag::sep_filter_valid(x, taps);
        ag::Var<T> mu_y = ag::sep_filter_valid(y, taps);
        ag::Var<T> xx = ag::sep_filter_valid(ag::mul(x, x), taps);
        ag::Var<T> yy = ag::sep_filter_valid(ag::mul(y, y), taps);
        ag::Var<T> xy = ag::sep_filter_valid(ag::mul(x, y), taps);
        ag::Var<T> mu_xx = ag::mul(mu_x, mu_x);
        ag::Var<T> mu_yy = ag::mul(mu_y, mu_y);
        ag::Var<T> mu_xy = ag::mul(mu_x, mu_y);
        ag::Var<T> var_x = ag::sub(xx, mu_xx);
        ag::Var<T> var_y = ag::sub(yy, mu_yy);
        ag::Var<T> cov = ag::sub(xy, mu_xy);

        // cs = (2 cov + C2) / (var_x + var_y + C2)
        ag::Var<T> cs_map = ag::div(ag::affine(cov, T(2), static_cast<T>(kC2)),
                                    ag::clamp_min(ag::add_scalar(ag::add(var_x, var_y), static_cast<T>(kC2)), T(1e-9)));
        ag::Var<T> cs = ag::clamp_min(ag::mean_all(cs_map), T(1e-6));
        bool last = j == scales - 1;
        double w = kMsssimWeights[j] / wsum;
        if (last) {
            // l = (2 mu_x mu_y + C1) / (mu_x^2 + mu_y^2 + C1), coarsest only.
            ag::Var<T> l_map = ag::div(ag::affine(mu_xy, T(2), static_cast<T>(kC1)),
                                       ag::add_scalar(ag::add(mu_xx, mu_yy), static_cast<T>(kC1)));
            ag::Var<T> l = ag::clamp_min(ag::mean_all(l_map), T(1e-6));
            ag::Var<T> term = ag::mul(ag::pow_const(l, static_cast<T>(w)),
                                      ag::pow_const(cs, static_cast<T>(w)));
            result = result.defined() ? ag::mul(result, term) : term;
        } else {
            ag::Var<T> term = ag::pow_const(cs, static_cast<T>(w));
            result = result.defined() ? ag::mul(result, term) : term;
            x = ag::avg_pool2(x);
            y = ag::avg_pool2(y);
        }
    }
    return result;
}

// Convenience scalar evaluation without touching the tape.
template <typename T>
double ms_ssim_value(const Tensor<T>& a, const Tensor<T>& b) {
    ag::NoGradGuard ng;
    Tensor<T> a4 = a, b4 = b;
    if (a.rank() == 3) {
        Shape s = {1, a.dim(0), a.dim(1), a.dim(2)};
        a4 = Tensor<T>(s, a.vec());
        b4 = Tensor<T>(s, b.vec());
    }
    return static_cast<double>(ms_ssim(ag::Var<T>::leaf(a4), ag::Var<T>::leaf(b4)).val()[0]);
}

template <typename T>
double mse_value(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

// PSNR over the [-1,1] range (peak 2). Identical inputs hit the documented
// 100 dB cap; the cap also bounds pathological near-zero MSE.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    double mse = mse_value(a, b);
    if (mse <= 0.0) return 100.0;
    double v = 10.0 * std::log10(4.0 / mse);
    return v > 100.0 ? 100.0 : v;
}

template <typename T>
ag::Var<T> mse_var(const ag::Var<T>& a, const ag::Var<T>& b) {
    ag::Var<T> d = ag::sub(a, b);
    return ag::mean_all(ag::mul(d, d));
}

enum class DistortionKind { MsSsim, Mse };

inline const char* distortion_name(DistortionKind k) {
    return k == DistortionKind::MsSsim ? "msssim" : "mse";
}

// Per-frame training objective: L = D1 + beta*D2 + lambda*rate_bpp.
// D1 compares frames under the configured distortion (1 - MS-SSIM or MSE);
// D2 is always the MSE over the residual stacks; the rate term is in bits
// per pixel.
template <typename T>
struct LossBreakdown {
    ag::Var<T> total, d1, d2, rate_bpp;
    double lambda = 0.0, beta = 1.0;

    double total_value() const { return static_cast<double>(total.val()[0]); }
    double d1_value() const { return static_cast<double>(d1.val()[0]); }
    double d2_value() const { return static_cast<double>(d2.val()[0]); }
    double rate_value() const { return static_cast<double>(rate_bpp.val()[0]); }
};

template <typename T>
LossBreakdown<T> frame_loss(const ag::Var<T>& x, const ag::Var<T>& x_hat, const ag::Var<T>& d,
                            const ag::Var<T>& d_hat, const RateEstimate<T>& rate, double lambda,
                            double beta, DistortionKind kind) {
    LossBreakdown<T> lb;
    lb.lambda = lambda;
    lb.beta = beta;
    lb.d1 = kind == DistortionKind::MsSsim
                ? ag::affine(ms_ssim(x, x_hat), T(-1), T(1))
                : mse_var(x, x_hat);
    lb.d2 = mse_var(d, d_hat);
    lb.rate_bpp = rate.bpp();
    lb.total = ag::add(ag::add(lb.d1, ag::scale(lb.d2, static_cast<T>(beta))),
                       ag::scale(lb.rate_bpp, static_cast<T>(lambda)));
    return lb;
}

// Window objective: plain mean of the per-frame totals.
template <typename T>
ag::Var<T> sequence_loss(const std::vector<LossBreakdown<T>>& frames) {
    if (frames.empty()) throw std::invalid_argument("sequence_loss: no frames");
    ag::Var<T> acc = frames[0].total;
    for (size_t i = 1; i < frames.size(); ++i) acc = ag::add(acc, frames[i].total);
    return ag::scale(acc, static_cast<T>(1.0 / static_cast<double>(frames.size())));
}

}  // namespace movi
