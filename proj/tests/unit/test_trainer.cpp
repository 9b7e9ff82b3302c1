#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "movi/trainer.hpp"

using namespace movi;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

std::vector<Tensor<float>> random_clip(int frames, Shape fshape, Rng& rng) {
    std::vector<Tensor<float>> clip;
    for (int t = 0; t < frames; ++t) clip.push_back(random_tensor<float>(fshape, rng));
    return clip;
}

struct DirGuard {
    std::filesystem::path p;
    explicit DirGuard(std::string path) : p(std::move(path)) {}
    ~DirGuard() { std::filesystem::remove_all(p); }
};

// CSV row split with the wall-clock column dropped (the only
// non-deterministic field in the log).
std::vector<std::string> log_rows_no_time(const std::filesystem::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::vector<std::string> rows;
    std::string line;
    while (std::getline(in, line)) {
        size_t cut = line.rfind(',');
        REQUIRE(cut != std::string::npos);
        rows.push_back(line.substr(0, cut));
    }
    return rows;
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.model = ModelConfig::micro();
    cfg.lambda = 0.01;
    cfg.beta = 1.0;
    cfg.window = 2;
    cfg.batch = 2;
    cfg.patch = 16;
    cfg.distortion = DistortionKind::Mse;
    cfg.lr = 1e-3;
    cfg.steps = 6;
    cfg.seed = 5;
    cfg.checkpoint_every = 3;
    cfg.eval_every = 0;
    CorpusEntry e;
    e.type = CorpusEntry::Type::Synthetic;
    e.synth.kind = SynthKind::Translate;
    e.synth.width = 24;
    e.synth.height = 24;
    e.synth.length = 6;
    e.synth.vx = 1;
    e.synth.vy = 0;
    e.synth.seed = 9;
    cfg.corpus = {e};
    return cfg;
}

}  // namespace

TEST_CASE("rollout closes the loop on its own reconstructions") {
    ag::NoGradGuard ng;
    MoviModel<float> model(ModelConfig::micro(), 700);
    Rng rng(701);
    std::vector<Tensor<float>> clip = random_clip(3, {1, 3, 32, 32}, rng);
    QuantCtx<float> q = QuantCtx<float>::eval();
    auto traces = rollout(model, clip, q);
    REQUIRE(traces.size() == 3);

    // Frame 0 is differenced against an all-zero reference.
    Var<float> zero = Var<float>::leaf(Tensor<float>::zeros({1, 3, 32, 32}));
    Var<float> x0 = Var<float>::leaf(clip[0]);
    Var<float> d0 = displaced_differences(x0, zero, model.cfg.displacements);
    CHECK(max_abs_diff(traces[0].d.val(), d0.val()) == 0.0);

    // Every later frame is differenced against the model's own previous
    // output, not the source frame.
    for (size_t t = 1; t < traces.size(); ++t) {
        Var<float> xt = Var<float>::leaf(clip[t]);
        Var<float> want =
            displaced_differences(xt, traces[t - 1].x_hat, model.cfg.displacements);
        CHECK(max_abs_diff(traces[t].d.val(), want.val()) == 0.0);
        Var<float> not_this =
            displaced_differences(xt, Var<float>::leaf(clip[t - 1]), model.cfg.displacements);
        CHECK(max_abs_diff(traces[t].d.val(), not_this.val()) > 1e-6);
    }

    for (const auto& tr : traces) {
        CHECK(tr.x_hat.val().shape() == Shape{1, 3, 32, 32});
        CHECK(tr.d_hat.val().shape() == Shape{1, 6, 32, 32});
        CHECK(tr.rate.area == 32 * 32);
        CHECK(tr.rate.bpp_value() > 0.0);
    }
}

TEST_CASE("rollout validates its clip") {
    ag::NoGradGuard ng;
    MoviModel<float> model(ModelConfig::micro(), 702);
    QuantCtx<float> q = QuantCtx<float>::eval();
    std::vector<Tensor<float>> empty;
    CHECK_THROWS_AS(rollout(model, empty, q), std::invalid_argument);
    std::vector<Tensor<float>> bad_ch{Tensor<float>::zeros({1, 4, 32, 32})};
    CHECK_THROWS_AS(rollout(model, bad_ch, q), std::invalid_argument);
    std::vector<Tensor<float>> bad_side{Tensor<float>::zeros({1, 3, 24, 32})};
    CHECK_THROWS_AS(rollout(model, bad_side, q), std::invalid_argument);
}

TEST_CASE("window_loss aggregates per-frame breakdowns") {
    ag::NoGradGuard ng;
    MoviModel<float> model(ModelConfig::micro(), 703);
    Rng rng(704);
    std::vector<Tensor<float>> clip = random_clip(3, {1, 3, 32, 32}, rng);
    QuantCtx<float> q = QuantCtx<float>::eval();
    WindowLoss<float> wl = window_loss(model, clip, q, 0.02, 1.5, DistortionKind::Mse);
    REQUIRE(wl.frames.size() == 3);
    double d1 = 0, d2 = 0, bpp = 0, total = 0;
    for (const auto& lb : wl.frames) {
        d1 += lb.d1_value();
        d2 += lb.d2_value();
        bpp += lb.rate_value();
        total += lb.total_value();
    }
    CHECK(wl.d1_mean() == doctest::Approx(d1 / 3.0).epsilon(1e-9));
    CHECK(wl.d2_mean() == doctest::Approx(d2 / 3.0).epsilon(1e-9));
    CHECK(wl.bpp_mean() == doctest::Approx(bpp / 3.0).epsilon(1e-9));
    CHECK(static_cast<double>(wl.total.val()[0]) == doctest::Approx(total / 3.0).epsilon(1e-6));
    for (const auto& lb : wl.frames) {
        CHECK(lb.lambda == 0.02);
        CHECK(lb.beta == 1.5);
    }
}

TEST_CASE("adam follows the reference update rule") {
    nn::ParamStore<double> ps;
    Rng rng(705);
    Var<double> p = ps.create("p", {4}, 0.5, rng);
    Tensor<double> start = p.val();

    Adam<double> opt;
    opt.lr = 0.1;
    opt.ensure_state(ps);

    // Two steps with hand-planted gradients, tracked by a scalar reference
    // implementation with bias correction.
    std::vector<double> m(4, 0.0), v(4, 0.0), want(4);
    for (int64_t i = 0; i < 4; ++i) want[i] = start[i];
    for (int step = 1; step <= 2; ++step) {
        Tensor<double> g({4});
        for (int64_t i = 0; i < 4; ++i) g[i] = std::sin(static_cast<double>(step) + static_cast<double>(i));
        p.grad() = g;
        opt.step(ps);
        for (int64_t i = 0; i < 4; ++i) {
            m[static_cast<size_t>(i)] = 0.9 * m[static_cast<size_t>(i)] + 0.1 * g[i];
            v[static_cast<size_t>(i)] = 0.999 * v[static_cast<size_t>(i)] + 0.001 * g[i] * g[i];
            double mh = m[static_cast<size_t>(i)] / (1.0 - std::pow(0.9, step));
            double vh = v[static_cast<size_t>(i)] / (1.0 - std::pow(0.999, step));
            want[static_cast<size_t>(i)] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        }
        for (int64_t i = 0; i < 4; ++i)
            CHECK(p.val()[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-12));
    }
    CHECK(opt.t == 2);
}

TEST_CASE("train_step reduces the loss of a fixed miniature problem") {
    MoviModel<float> model(ModelConfig::micro(), 706);
    Rng data_rng(707);
    // Static scene: frame 1 equals frame 0, the easiest temporal structure.
    Tensor<float> f0 = random_tensor<float>({1, 3, 16, 16}, data_rng, -0.5, 0.5);
    std::vector<Tensor<float>> clip{f0, f0};

    TrainConfig cfg;
    cfg.model = ModelConfig::micro();
    cfg.lambda = 0.001;
    cfg.beta = 1.0;
    cfg.distortion = DistortionKind::Mse;
    cfg.lr = 5e-3;

    Adam<float> opt;
    opt.lr = cfg.lr;
    opt.ensure_state(model.params);
    Rng rng(708);

    double first = 0.0, last = 0.0;
    const int steps = 200;
    for (int s = 0; s < steps; ++s) {
        StepStats<float> st = train_step(model, clip, opt, cfg, rng);
        if (s < 10) first += st.loss;
        if (s >= steps - 10) last += st.loss;
    }
    // Measured ratio on this fixed seed is about 0.19; 0.4 leaves margin
    // while still demanding a real optimization trend.
    CHECK(last < 0.4 * first);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto run = [](uint64_t seed) {
        MoviModel<float> model(ModelConfig::micro(), 42);
        Adam<float> opt;
        TrainConfig cfg;
        cfg.model = ModelConfig::micro();
        cfg.lambda = 0.01;
        cfg.distortion = DistortionKind::MsSsim;
        cfg.lr = 1e-3;
        opt.lr = cfg.lr;
        opt.ensure_state(model.params);
        Rng rng(seed);
        Rng data_rng(709);
        std::vector<double> losses;
        for (int s = 0; s < 3; ++s) {
            std::vector<Tensor<float>> clip = random_clip(2, {2, 3, 16, 16}, data_rng);
            losses.push_back(train_step(model, clip, opt, cfg, rng).loss);
        }
        return std::make_pair(model.fingerprint(), losses);
    };
    auto [fp_a, loss_a] = run(1);
    auto [fp_b, loss_b] = run(1);
    auto [fp_c, loss_c] = run(2);
    CHECK(fp_a == fp_b);
    CHECK(loss_a == loss_b);
    CHECK(fp_a != fp_c);  // different quantizer noise, different trajectory
}

TEST_CASE("every parameter group receives gradient from the window loss") {
    MoviModel<float> model(ModelConfig::micro(), 710);
    Rng rng(711);
    std::vector<Tensor<float>> clip = random_clip(2, {1, 3, 32, 32}, rng);
    QuantCtx<float> q = QuantCtx<float>::train(rng);
    WindowLoss<float> wl = window_loss(model, clip, q, 0.05, 1.0, DistortionKind::Mse);
    model.params.zero_grad();
    ag::backward(wl.total);
    for (auto& [name, p] : model.params.items) {
        double mass = 0.0;
        for (int64_t i = 0; i < p.grad().numel(); ++i)
            mass += std::abs(static_cast<double>(p.grad()[i]));
        INFO("parameter ", name);
        CHECK(mass > 0.0);
    }
}

TEST_CASE("batched rollout matches per-sample rollouts in sign mode") {
    ag::NoGradGuard ng;
    MoviModel<float> model(ModelConfig::micro(), 712);
    Rng rng(713);
    // Two distinct single-sample clips and their batched stacking.
    std::vector<Tensor<float>> a = random_clip(2, {1, 3, 32, 32}, rng);
    std::vector<Tensor<float>> b = random_clip(2, {1, 3, 32, 32}, rng);
    std::vector<Tensor<float>> batched;
    for (int t = 0; t < 2; ++t) {
        Tensor<float> bt({2, 3, 32, 32});
        for (int64_t i = 0; i < a[static_cast<size_t>(t)].numel(); ++i) {
            bt[i] = a[static_cast<size_t>(t)][i];
            bt[a[static_cast<size_t>(t)].numel() + i] = b[static_cast<size_t>(t)][i];
        }
        batched.push_back(std::move(bt));
    }
    QuantCtx<float> q1 = QuantCtx<float>::eval();
    QuantCtx<float> q2 = QuantCtx<float>::eval();
    QuantCtx<float> q3 = QuantCtx<float>::eval();
    auto ta = rollout(model, a, q1);
    auto tb = rollout(model, b, q2);
    auto tbat = rollout(model, batched, q3);
    for (int t = 0; t < 2; ++t) {
        const Tensor<float>& xa = ta[static_cast<size_t>(t)].x_hat.val();
        const Tensor<float>& xb = tb[static_cast<size_t>(t)].x_hat.val();
        const Tensor<float>& xs = tbat[static_cast<size_t>(t)].x_hat.val();
        for (int64_t i = 0; i < xa.numel(); ++i) {
            REQUIRE(xs[i] == xa[i]);
            REQUIRE(xs[xa.numel() + i] == xb[i]);
        }
    }
}

TEST_CASE("eval_clip is deterministic and reports all three statistics") {
    MoviModel<float> model(ModelConfig::micro(), 714);
    Rng rng(715);
    std::vector<Tensor<float>> clip = random_clip(3, {1, 3, 32, 32}, rng);
    EvalStats<float> a = eval_clip(model, clip);
    EvalStats<float> b = eval_clip(model, clip);
    CHECK(a.msssim == b.msssim);
    CHECK(a.psnr_db == b.psnr_db);
    CHECK(a.bpp == b.bpp);
    CHECK(std::isfinite(a.msssim));
    CHECK(std::isfinite(a.psnr_db));
    CHECK(a.bpp > 0.0);
}

TEST_CASE("stack_clips interleaves batch elements per timestep") {
    Frame f00({3, 4, 5}), f01({3, 4, 5}), f10({3, 4, 5}), f11({3, 4, 5});
    f00.fill(0.0f);
    f01.fill(1.0f);
    f10.fill(10.0f);
    f11.fill(11.0f);
    std::vector<std::vector<const Frame*>> clips{{&f00, &f01}, {&f10, &f11}};
    auto stacked = trainer_detail::stack_clips<float>(clips);
    REQUIRE(stacked.size() == 2);
    CHECK(stacked[0].shape() == Shape{2, 3, 4, 5});
    CHECK(stacked[0].at4(0, 0, 0, 0) == 0.0f);
    CHECK(stacked[0].at4(1, 2, 3, 4) == 10.0f);
    CHECK(stacked[1].at4(0, 1, 2, 3) == 1.0f);
    CHECK(stacked[1].at4(1, 0, 0, 0) == 11.0f);
}

TEST_CASE("non-finite loss aborts the step with diagnostics") {
    MoviModel<float> model(ModelConfig::micro(), 716);
    // Poison the reconstruction head: a NaN upstream of the quantizer would
    // be absorbed by the binarizer, but the output conv feeds D1 directly.
    model.frn.out.b.val().fill(std::numeric_limits<float>::quiet_NaN());
    Rng rng(717);
    std::vector<Tensor<float>> clip = random_clip(2, {1, 3, 16, 16}, rng);
    TrainConfig cfg;
    cfg.model = ModelConfig::micro();
    cfg.distortion = DistortionKind::Mse;
    Adam<float> opt;
    opt.ensure_state(model.params);
    CHECK_THROWS_WITH_AS(train_step(model, clip, opt, cfg, rng),
                         doctest::Contains("non-finite"), TrainingError);
}

TEST_CASE("train config json roundtrip") {
    TrainConfig cfg = tiny_config();
    cfg.distortion = DistortionKind::Mse;
    cfg.eval_every = 7;
    cfg.early_stop_msssim = 0.93;
    CorpusEntry vid;
    vid.type = CorpusEntry::Type::Video;
    vid.path = "clips/train.yuv";
    vid.width = 352;
    vid.height = 288;
    cfg.corpus.push_back(vid);

    TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.lambda == cfg.lambda);
    CHECK(back.beta == cfg.beta);
    CHECK(back.window == cfg.window);
    CHECK(back.batch == cfg.batch);
    CHECK(back.patch == cfg.patch);
    CHECK(back.distortion == cfg.distortion);
    CHECK(back.lr == cfg.lr);
    CHECK(back.steps == cfg.steps);
    CHECK(back.seed == cfg.seed);
    CHECK(back.model == cfg.model);
    CHECK(back.checkpoint_every == cfg.checkpoint_every);
    CHECK(back.eval_every == cfg.eval_every);
    CHECK(back.early_stop_msssim == cfg.early_stop_msssim);
    REQUIRE(back.corpus.size() == 2);
    CHECK(back.corpus[0].type == CorpusEntry::Type::Synthetic);
    CHECK(back.corpus[0].synth.kind == SynthKind::Translate);
    CHECK(back.corpus[0].synth.width == 24);
    CHECK(back.corpus[0].synth.vx == 1);
    CHECK(back.corpus[1].type == CorpusEntry::Type::Video);
    CHECK(back.corpus[1].path == "clips/train.yuv");
    CHECK(back.corpus[1].width == 352);
    CHECK(back.corpus[1].height == 288);
}

TEST_CASE("train_run produces a log, checkpoints and a final model") {
    DirGuard out("test_train_run_out");
    TrainConfig cfg = tiny_config();
    TrainRunResult res = train_run<float>(cfg, out.p.string());
    CHECK(res.steps_run == 6);
    CHECK(std::isfinite(res.final_loss));
    CHECK(std::filesystem::exists(out.p / "checkpoint.movm"));
    REQUIRE(std::filesystem::exists(res.model_path));

    auto rows = log_rows_no_time(out.p / "train_log.csv");
    REQUIRE(rows.size() == 7);  // header + 6 steps
    CHECK(rows[0] == "step,loss,d1,d2,bpp,eval_msssim,eval_bpp");
    CHECK(rows[1].substr(0, 2) == "1,");
    CHECK(rows[6].substr(0, 2) == "6,");

    MoviModel<float> final_model = model_io::load<float>(res.model_path);
    CHECK(final_model.meta["trained_steps"] == 6);
    CHECK(final_model.meta["lambda"] == cfg.lambda);
    CHECK(final_model.meta["distortion"] == "mse");
    CHECK(final_model.meta.contains("train_config"));
}

TEST_CASE("checkpoint resume replays the exact run") {
    DirGuard full_dir("test_resume_full");
    DirGuard split_dir("test_resume_split");

    TrainConfig cfg = tiny_config();  // 6 steps, checkpoint every 3
    TrainRunResult full = train_run<float>(cfg, full_dir.p.string());

    TrainConfig head = cfg;
    head.steps = 3;
    train_run<float>(head, split_dir.p.string());
    std::string ck = (split_dir.p / "checkpoint.movm").string();
    REQUIRE(std::filesystem::exists(ck));
    TrainRunResult tail = train_run<float>(cfg, split_dir.p.string(), ck);
    CHECK(tail.steps_run == 6);

    // The stitched log matches the uninterrupted one row for row
    // (wall-clock column excluded).
    auto rows_full = log_rows_no_time(full_dir.p / "train_log.csv");
    auto rows_split = log_rows_no_time(split_dir.p / "train_log.csv");
    REQUIRE(rows_full.size() == 7);
    REQUIRE(rows_split.size() == 7);
    for (size_t i = 0; i < rows_full.size(); ++i) CHECK(rows_full[i] == rows_split[i]);

    // And the final weights are bit-identical.
    MoviModel<float> a = model_io::load<float>(full.model_path);
    MoviModel<float> b = model_io::load<float>(tail.model_path);
    CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("train_run rejects impossible corpora") {
    DirGuard out("test_train_run_bad");
    TrainConfig cfg = tiny_config();
    cfg.corpus.clear();
    CHECK_THROWS_WITH_AS(train_run<float>(cfg, out.p.string()), doctest::Contains("corpus"),
                         TrainingError);

    cfg = tiny_config();
    cfg.patch = 32;  // corpus frames are 24x24
    CHECK_THROWS_WITH_AS(train_run<float>(cfg, out.p.string()),
                         doctest::Contains("smaller than patch"), TrainingError);

    cfg = tiny_config();
    cfg.window = 10;  // corpus clips are 6 frames long
    CHECK_THROWS_WITH_AS(train_run<float>(cfg, out.p.string()),
                         doctest::Contains("shorter than the training window"), TrainingError);
}
