#include <doctest.h>

#include <cmath>
#include <vector>

#include "movi/metrics.hpp"

using namespace movi;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// Independent scalar MS-SSIM: direct 2D 11x11 Gaussian windows (no separable
// passes), plain double loops, one plane at a time. Matches the documented
// formula: per-scale mean cs, luminance only at the coarsest scale, weights
// renormalized over the scales that fit, maps clamped at 1e-6 after
// averaging.
struct Plane {
    int64_t h = 0, w = 0;
    std::vector<double> v;
    double at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
    double& at(int64_t y, int64_t x) { return v[static_cast<size_t>(y * w + x)]; }
};

std::vector<double> oracle_window() {
    std::vector<double> g(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        double d = i - 5.0;
        g[static_cast<size_t>(i)] = std::exp(-d * d / 4.5);
        sum += g[static_cast<size_t>(i)];
    }
    for (double& x : g) x /= sum;
    return g;
}

Plane filter_valid(const Plane& p, const std::vector<double>& g) {
    Plane out{p.h - 10, p.w - 10, {}};
    out.v.resize(static_cast<size_t>(out.h * out.w));
    for (int64_t y = 0; y < out.h; ++y)
        for (int64_t x = 0; x < out.w; ++x) {
            double acc = 0.0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j)
                    acc += g[static_cast<size_t>(i)] * g[static_cast<size_t>(j)] *
                           p.at(y + i, x + j);
            out.at(y, x) = acc;
        }
    return out;
}

Plane halve(const Plane& p) {
    Plane out{p.h / 2, p.w / 2, {}};
    out.v.resize(static_cast<size_t>(out.h * out.w));
    for (int64_t y = 0; y < out.h; ++y)
        for (int64_t x = 0; x < out.w; ++x)
            out.at(y, x) = 0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) +
                                   p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1));
    return out;
}

template <typename T>
std::vector<Plane> to_planes(const Tensor<T>& t) {
    std::vector<Plane> planes;
    int64_t n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
    for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
            Plane p{h, w, {}};
            p.v.resize(static_cast<size_t>(h * w));
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    p.at(y, x) = static_cast<double>(t.at4(b, ch, y, x));
            planes.push_back(std::move(p));
        }
    return planes;
}

template <typename T>
double oracle_msssim(const Tensor<T>& a, const Tensor<T>& b) {
    const double c1 = 0.02 * 0.02, c2 = 0.06 * 0.06;
    const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    std::vector<double> g = oracle_window();

    int64_t m = std::min(a.dim(2), a.dim(3));
    int scales = 0;
    while (scales < 5 && m >= 11) {
        ++scales;
        m /= 2;
    }
    double wsum = 0.0;
    for (int j = 0; j < scales; ++j) wsum += weights[j];

    std::vector<Plane> xs = to_planes(a), ys = to_planes(b);
    double product = 1.0;
    for (int j = 0; j < scales; ++j) {
        double cs_sum = 0.0, l_sum = 0.0;
        int64_t count = 0;
        for (size_t p = 0; p < xs.size(); ++p) {
            const Plane& x = xs[p];
            const Plane& y = ys[p];
            Plane xx{x.h, x.w, x.v}, yy{y.h, y.w, y.v}, xy{x.h, x.w, x.v};
            for (size_t i = 0; i < xx.v.size(); ++i) {
                xx.v[i] = x.v[i] * x.v[i];
                yy.v[i] = y.v[i] * y.v[i];
                xy.v[i] = x.v[i] * y.v[i];
            }
            Plane mu_x = filter_valid(x, g), mu_y = filter_valid(y, g);
            Plane exx = filter_valid(xx, g), eyy = filter_valid(yy, g), exy = filter_valid(xy, g);
            for (int64_t k = 0; k < mu_x.h * mu_x.w; ++k) {
                double mx = mu_x.v[static_cast<size_t>(k)], my = mu_y.v[static_cast<size_t>(k)];
                double vx = exx.v[static_cast<size_t>(k)] - mx * mx;
                double vy = eyy.v[static_cast<size_t>(k)] - my * my;
                double cov = exy.v[static_cast<size_t>(k)] - mx * my;
                double denom = vx + vy + c2;
                if (denom < 1e-9) denom = 1e-9;
                cs_sum += (2.0 * cov + c2) / denom;
                l_sum += (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                ++count;
            }
        }
        double cs = cs_sum / static_cast<double>(count);
        if (cs < 1e-6) cs = 1e-6;
        double w = weights[j] / wsum;
        if (j == scales - 1) {
            double l = l_sum / static_cast<double>(count);
            if (l < 1e-6) l = 1e-6;
            product *= std::pow(l, w) * std::pow(cs, w);
        } else {
            product *= std::pow(cs, w);
            for (Plane& p : xs) p = halve(p);
            for (Plane& p : ys) p = halve(p);
        }
    }
    return product;
}

template <typename T>
double run_msssim(const Tensor<T>& a, const Tensor<T>& b) {
    return ms_ssim_value(a, b);
}

}  // namespace

TEST_CASE("ms_ssim scale selection follows the window size") {
    CHECK(metric_detail::msssim_scales(256, 256) == 5);
    CHECK(metric_detail::msssim_scales(176, 176) == 5);
    CHECK(metric_detail::msssim_scales(64, 64) == 3);
    CHECK(metric_detail::msssim_scales(32, 32) == 2);
    CHECK(metric_detail::msssim_scales(16, 16) == 1);
    CHECK(metric_detail::msssim_scales(128, 11) == 1);  // limited by the short side
    CHECK_THROWS_AS(metric_detail::msssim_scales(10, 256), std::invalid_argument);
}

TEST_CASE("ms_ssim matches the scalar oracle in double precision") {
    Rng rng(600);
    for (int rep = 0; rep < 3; ++rep) {
        Tensor<double> a = random_tensor<double>({1, 2, 48, 64}, rng);
        Tensor<double> b = a;
        // Correlated pair: the interesting regime for the statistics.
        for (int64_t i = 0; i < b.numel(); ++i)
            b[i] = std::clamp(b[i] + 0.3 * rng.uniform(-1.0, 1.0), -1.0, 1.0);
        double got = run_msssim(a, b);
        double want = oracle_msssim(a, b);
        CHECK(got == doctest::Approx(want).epsilon(1e-10));
        // Uncorrelated pair exercises negative covariances.
        Tensor<double> c = random_tensor<double>({1, 2, 48, 64}, rng);
        CHECK(run_msssim(a, c) == doctest::Approx(oracle_msssim(a, c)).epsilon(1e-10));
    }
}

TEST_CASE("ms_ssim matches the scalar oracle in float at all five scales") {
    Rng rng(601);
    Tensor<float> a = random_tensor<float>({1, 3, 176, 176}, rng);
    Tensor<float> b = a;
    for (int64_t i = 0; i < b.numel(); ++i)
        b[i] = static_cast<float>(std::clamp(b[i] + 0.2 * rng.uniform(-1.0, 1.0), -1.0, 1.0));
    double got = run_msssim(a, b);
    double want = oracle_msssim(a, b);
    CHECK(got == doctest::Approx(want).epsilon(1e-4));
    CHECK(got > 0.0);
    CHECK(got <= 1.0 + 1e-9);
}

TEST_CASE("ms_ssim of identical images is exactly one") {
    // True division makes each per-window ratio exactly 1, the window means
    // are exact (window counts are far below the float mantissa limit), and
    // pow/products of exact ones stay exact, so no tolerance is needed.
    Rng rng(602);
    Tensor<double> a = random_tensor<double>({1, 3, 64, 64}, rng);
    CHECK(run_msssim(a, a) == 1.0);
    Tensor<float> af = random_tensor<float>({2, 3, 32, 32}, rng);
    CHECK(run_msssim(af, af) == 1.0);
}

TEST_CASE("ms_ssim is symmetric and decreases with noise amplitude") {
    Rng rng(603);
    Tensor<double> a = random_tensor<double>({1, 1, 64, 64}, rng);
    Tensor<double> mild = a, harsh = a;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double n = rng.uniform(-1.0, 1.0);
        mild[i] = std::clamp(mild[i] + 0.1 * n, -1.0, 1.0);
        harsh[i] = std::clamp(harsh[i] + 0.6 * n, -1.0, 1.0);
    }
    double s_mild = run_msssim(a, mild);
    double s_harsh = run_msssim(a, harsh);
    CHECK(s_mild > s_harsh);
    CHECK(s_harsh > 0.0);
    CHECK(run_msssim(a, mild) == doctest::Approx(run_msssim(mild, a)).epsilon(1e-12));
}

TEST_CASE("ms_ssim forgives a one-pixel translation of smooth content") {
    // Smooth sinusoidal texture: a single-pixel shift keeps local structure,
    // so MS-SSIM stays high while per-pixel error is substantial.
    int64_t n = 96;
    Tensor<double> a({1, 1, n, n});
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x)
            a.at4(0, 0, y, x) =
                0.8 * std::sin(2.0 * M_PI * static_cast<double>(x) / 24.0) *
                std::cos(2.0 * M_PI * static_cast<double>(y) / 24.0);
    Tensor<double> shifted({1, 1, n, n});
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x)
            shifted.at4(0, 0, y, x) = a.at4(0, 0, y, std::min(x + 1, n - 1));
    CHECK(run_msssim(a, shifted) > 0.9);
    CHECK(psnr(a, shifted) < 28.0);  // per-pixel metric punishes the shift
}

TEST_CASE("ms_ssim rejects mismatched shapes and low ranks") {
    Tensor<double> a = Tensor<double>::zeros({1, 1, 32, 32});
    Tensor<double> b = Tensor<double>::zeros({1, 1, 32, 16});
    ag::NoGradGuard ng;
    CHECK_THROWS_AS(ms_ssim(ag::Var<double>::leaf(a), ag::Var<double>::leaf(b)),
                    std::invalid_argument);
    Tensor<double> r3({2, 32, 32});
    CHECK_THROWS_AS(ms_ssim(ag::Var<double>::leaf(r3), ag::Var<double>::leaf(r3)),
                    std::invalid_argument);
}

TEST_CASE("ms_ssim gradient flows toward the reference") {
    // One gradient-descent step on x must increase ms_ssim(x, target).
    Rng rng(604);
    Tensor<double> target = random_tensor<double>({1, 1, 32, 32}, rng);
    Tensor<double> start = random_tensor<double>({1, 1, 32, 32}, rng);
    ag::Var<double> x = ag::Var<double>::leaf(start, true);
    ag::Var<double> t = ag::Var<double>::leaf(target);
    ag::Var<double> s = ms_ssim(x, t);
    double before = s.val()[0];
    ag::backward(s);
    Tensor<double> moved = start;
    for (int64_t i = 0; i < moved.numel(); ++i) moved[i] += 0.05 * x.grad()[i];
    double after = ms_ssim_value(moved, target);
    CHECK(after > before);
}

TEST_CASE("mse and psnr follow their closed forms") {
    Tensor<double> a = Tensor<double>::zeros({1, 1, 8, 8});
    Tensor<double> b = a;
    for (int64_t i = 0; i < b.numel(); ++i) b[i] = 0.2;
    CHECK(mse_value(a, b) == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));  // 10 log10(4/0.04)
    CHECK(psnr(a, a) == 100.0);
    Tensor<double> tiny = a;
    for (int64_t i = 0; i < tiny.numel(); ++i) tiny[i] = 1e-9;
    CHECK(psnr(a, tiny) == 100.0);  // capped
    Tensor<double> wrong = Tensor<double>::zeros({1, 1, 4, 4});
    CHECK_THROWS_AS(mse_value(a, wrong), std::invalid_argument);

    Rng rng(605);
    Tensor<double> x = random_tensor<double>({2, 3, 5, 7}, rng);
    Tensor<double> y = random_tensor<double>({2, 3, 5, 7}, rng);
    double acc = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    CHECK(mse_value(x, y) == doctest::Approx(acc / static_cast<double>(x.numel())).epsilon(1e-12));
    CHECK(mse_var(ag::Var<double>::leaf(x), ag::Var<double>::leaf(y)).val()[0] ==
          doctest::Approx(mse_value(x, y)).epsilon(1e-12));
}

TEST_CASE("frame_loss composes distortion and rate linearly") {
    Rng rng(606);
    ag::NoGradGuard ng;
    ag::Var<double> x = ag::Var<double>::leaf(random_tensor<double>({1, 3, 16, 16}, rng));
    ag::Var<double> x_hat = ag::Var<double>::leaf(random_tensor<double>({1, 3, 16, 16}, rng));
    ag::Var<double> d = ag::Var<double>::leaf(random_tensor<double>({1, 6, 16, 16}, rng));
    ag::Var<double> d_hat = ag::Var<double>::leaf(random_tensor<double>({1, 6, 16, 16}, rng));
    RateEstimate<double> rate{ag::Var<double>::leaf(Tensor<double>({1}, {640.0})),
                              ag::Var<double>::leaf(Tensor<double>({1}, {128.0})), 256};

    for (double lambda : {0.0, 0.01, 1.0}) {
        for (double beta : {0.0, 1.0, 2.5}) {
            auto lb = frame_loss(x, x_hat, d, d_hat, rate, lambda, beta, DistortionKind::MsSsim);
            CHECK(lb.d1_value() ==
                  doctest::Approx(1.0 - ms_ssim_value(x.val(), x_hat.val())).epsilon(1e-9));
            // D2 stays plain MSE over the residual stacks for either kind.
            CHECK(lb.d2_value() == doctest::Approx(mse_value(d.val(), d_hat.val())).epsilon(1e-12));
            CHECK(lb.rate_value() == doctest::Approx(3.0).epsilon(1e-12));  // 768 bits / 256 px
            CHECK(lb.total_value() ==
                  doctest::Approx(lb.d1_value() + beta * lb.d2_value() + lambda * 3.0)
                      .epsilon(1e-9));

            auto mb = frame_loss(x, x_hat, d, d_hat, rate, lambda, beta, DistortionKind::Mse);
            CHECK(mb.d1_value() == doctest::Approx(mse_value(x.val(), x_hat.val())).epsilon(1e-12));
            CHECK(mb.d2_value() == doctest::Approx(lb.d2_value()).epsilon(1e-12));
        }
    }
}

TEST_CASE("sequence_loss averages frame totals") {
    ag::NoGradGuard ng;
    auto scalar = [](double v) {
        LossBreakdown<double> lb;
        lb.total = ag::Var<double>::leaf(Tensor<double>({1}, {v}));
        return lb;
    };
    std::vector<LossBreakdown<double>> frames{scalar(1.0), scalar(2.0), scalar(6.0)};
    CHECK(sequence_loss(frames).val()[0] == doctest::Approx(3.0).epsilon(1e-12));
    std::vector<LossBreakdown<double>> empty;
    CHECK_THROWS_AS(sequence_loss(empty), std::invalid_argument);
}

TEST_CASE("distortion names are stable identifiers") {
    CHECK(std::string(distortion_name(DistortionKind::MsSsim)) == "msssim");
    CHECK(std::string(distortion_name(DistortionKind::Mse)) == "mse");
}
