#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "movi/metrics.hpp"
#include "movi/model.hpp"
#include "movi/video_io.hpp"

namespace movi {

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- rollout ----

template <typename T>
struct FrameTrace {
    ag::Var<T> x, x_hat, d, d_hat;
    RateEstimate<T> rate;
};

// Runs the coding loop over a clip: the first frame is predicted from an
// all-zero reference with fresh recurrent states, every later frame from the
// model's own previous reconstruction (closed loop). clip[t] is an
// (N,3,H,W) batch of frame t across clip samples. rate_area is the
// per-frame pixel count used for bpp; 0 means the padded batch area
// (batch * H * W), which is exact for unpadded training patches.
template <typename T>
std::vector<FrameTrace<T>> rollout(const MoviModel<T>& model, const std::vector<Tensor<T>>& clip,
                                   QuantCtx<T>& q, int64_t rate_area = 0) {
    if (clip.empty()) throw std::invalid_argument("rollout: empty clip");
    typename Dcn<T>::State ds;
    typename Frn<T>::State fs;
    const Shape& fshape = clip[0].shape();
    if (fshape.size() != 4 || fshape[1] != 3)
        throw std::invalid_argument("rollout: frames must be (N,3,H,W)");
    if (fshape[2] % 16 != 0 || fshape[3] % 16 != 0)
        throw std::invalid_argument("rollout: frame sides must be multiples of 16");
    int64_t area = rate_area > 0 ? rate_area : fshape[0] * fshape[2] * fshape[3];

    std::vector<FrameTrace<T>> traces;
    traces.reserve(clip.size());
    ag::Var<T> x_prev = ag::Var<T>::leaf(Tensor<T>::zeros(fshape));
    for (const Tensor<T>& frame : clip) {
        FrameTrace<T> tr;
        tr.x = ag::Var<T>::leaf(frame);
        tr.d = displaced_differences(tr.x, x_prev, model.cfg.displacements);
        ag::Var<T> y = model.dcn.encode(tr.d, ds);
        ag::Var<T> y_hat = quantize(y, q);
        ag::Var<T> z = model.dcn.hyper_encode(y);
        ag::Var<T> z_hat = quantize(z, q);
        ag::Var<T> p_y = model.dcn.hyper_decode(z_hat, y.val().dim(2), y.val().dim(3));
        ag::Var<T> p_z = model.dcn.factorized_probs(z.val().dim(0), z.val().dim(2), z.val().dim(3));
        // Symbols snap to exact +-1 (frozen-offset replay leaves tiny
        // rounding residue); the snap is locally constant so the rate stays
        // differentiable in the probabilities alone.
        auto snap = [](const Tensor<T>& v) {
            Tensor<T> s(v.shape());
            for (int64_t i = 0; i < v.numel(); ++i) s[i] = v[i] >= T(0) ? T(1) : T(-1);
            return s;
        };
        tr.rate = {rate_bits(snap(y_hat.val()), p_y), rate_bits(snap(z_hat.val()), p_z), area};
        tr.d_hat = model.dcn.decode(y_hat, ds);
        tr.x_hat = model.frn.reconstruct(tr.d_hat, x_prev, fs);
        x_prev = tr.x_hat;
        traces.push_back(std::move(tr));
    }
    return traces;
}

// Mean-over-window objective on one rollout.
template <typename T>
struct WindowLoss {
    ag::Var<T> total;
    std::vector<LossBreakdown<T>> frames;

    double d1_mean() const {
        double s = 0;
        for (const auto& f : frames) s += f.d1_value();
        return s / static_cast<double>(frames.size());
    }
    double d2_mean() const {
        double s = 0;
        for (const auto& f : frames) s += f.d2_value();
        return s / static_cast<double>(frames.size());
    }
    double bpp_mean() const {
        double s = 0;
        for (const auto& f : frames) s += f.rate_value();
        return s / static_cast<double>(frames.size());
    }
};

template <typename T>
WindowLoss<T> window_loss(const MoviModel<T>& model, const std::vector<Tensor<T>>& clip,
                          QuantCtx<T>& q, double lambda, double beta, DistortionKind kind,
                          int64_t rate_area = 0) {
    WindowLoss<T> wl;
    auto traces = rollout(model, clip, q, rate_area);
    for (const auto& tr : traces)
        wl.frames.push_back(frame_loss(tr.x, tr.x_hat, tr.d, tr.d_hat, tr.rate, lambda, beta, kind));
    wl.total = sequence_loss(wl.frames);
    return wl;
}

// ---- optimizer ----

template <typename T>
struct Adam {
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;
    std::vector<Tensor<T>> m, v;

    void ensure_state(const nn::ParamStore<T>& params) {
        if (m.size() == params.items.size()) return;
        m.clear();
        v.clear();
        for (const auto& [name, p] : params.items) {
            m.push_back(Tensor<T>::zeros(p.val().shape()));
            v.push_back(Tensor<T>::zeros(p.val().shape()));
        }
    }

    void step(nn::ParamStore<T>& params) {
        ensure_state(params);
        ++t;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t k = 0; k < params.items.size(); ++k) {
            auto& p = params.items[k].second;
            Tensor<T>& g = p.grad();
            Tensor<T>& mk = m[k];
            Tensor<T>& vk = v[k];
            T* pv = p.val().data();
            for (int64_t i = 0; i < g.numel(); ++i) {
                double gi = static_cast<double>(g[i]);
                double mi = beta1 * static_cast<double>(mk[i]) + (1.0 - beta1) * gi;
                double vi = beta2 * static_cast<double>(vk[i]) + (1.0 - beta2) * gi * gi;
                mk[i] = static_cast<T>(mi);
                vk[i] = static_cast<T>(vi);
                pv[i] -= static_cast<T>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
            }
        }
    }
};

// ---- configuration ----

struct CorpusEntry {
    enum class Type { Synthetic, Video } type = Type::Synthetic;
    SynthSpec synth;
    std::string path;
    int64_t width = 0, height = 0;  // for raw yuv
};

struct TrainConfig {
    double lambda = 0.01;
    double beta = 1.0;
    int window = 7;
    int batch = 8;
    int64_t patch = 128;
    DistortionKind distortion = DistortionKind::MsSsim;
    double lr = 1e-4;
    int64_t steps = 1000;
    uint64_t seed = 0;
    ModelConfig model;
    std::vector<CorpusEntry> corpus;
    int64_t checkpoint_every = 500;
    int64_t eval_every = 0;          // 0 disables periodic eval
    double early_stop_msssim = 0.0;  // stop once eval MS-SSIM reaches this (0 disables)

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig load(const std::string& path);
};

inline nlohmann::json TrainConfig::to_json() const {
    nlohmann::json corp = nlohmann::json::array();
    for (const auto& e : corpus) {
        if (e.type == CorpusEntry::Type::Synthetic) {
            const char* kind = e.synth.kind == SynthKind::Translate          ? "translate"
                               : e.synth.kind == SynthKind::Static           ? "static"
                                                                             : "noise-translate";
            corp.push_back({{"type", "synthetic"},
                            {"kind", kind},
                            {"width", e.synth.width},
                            {"height", e.synth.height},
                            {"length", e.synth.length},
                            {"vx", e.synth.vx},
                            {"vy", e.synth.vy},
                            {"seed", e.synth.seed},
                            {"smooth_radius", e.synth.smooth_radius}});
        } else {
            corp.push_back({{"type", "video"}, {"path", e.path}, {"width", e.width}, {"height", e.height}});
        }
    }
    return {{"lambda", lambda},       {"beta", beta},
            {"window", window},       {"batch", batch},
            {"patch", patch},         {"distortion", distortion_name(distortion)},
            {"lr", lr},               {"steps", steps},
            {"seed", seed},           {"model", model.to_json()},
            {"corpus", corp},         {"checkpoint_every", checkpoint_every},
            {"eval_every", eval_every}, {"early_stop_msssim", early_stop_msssim}};
}

inline TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lambda = j.value("lambda", c.lambda);
    c.beta = j.value("beta", c.beta);
    c.window = j.value("window", c.window);
    c.batch = j.value("batch", c.batch);
    c.patch = j.value("patch", c.patch);
    std::string dist = j.value("distortion", "msssim");
    if (dist == "msssim")
        c.distortion = DistortionKind::MsSsim;
    else if (dist == "mse")
        c.distortion = DistortionKind::Mse;
    else
        throw TrainingError("unknown distortion kind '" + dist + "' (want msssim or mse)");
    c.lr = j.value("lr", c.lr);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    ModelConfig base;
    std::string preset = j.value("preset", "full");
    if (preset == "full")
        base = ModelConfig::full();
    else if (preset == "small")
        base = ModelConfig::small();
    else if (preset == "micro")
        base = ModelConfig::micro();
    else
        throw TrainingError("unknown model preset '" + preset + "'");
    c.model = j.contains("model") ? ModelConfig::from_json(j["model"], base) : base;
    for (const auto& e : j.value("corpus", nlohmann::json::array())) {
        CorpusEntry ce;
        std::string type = e.value("type", "synthetic");
        if (type == "synthetic") {
            ce.type = CorpusEntry::Type::Synthetic;
            std::string kind = e.value("kind", "translate");
            if (kind == "translate")
                ce.synth.kind = SynthKind::Translate;
            else if (kind == "static")
                ce.synth.kind = SynthKind::Static;
            else if (kind == "noise-translate")
                ce.synth.kind = SynthKind::NoiseTranslate;
            else
                throw TrainingError("unknown synthetic kind '" + kind + "'");
            ce.synth.width = e.value("width", int64_t(64));
            ce.synth.height = e.value("height", int64_t(64));
            ce.synth.length = e.value("length", size_t(7));
            ce.synth.vx = e.value("vx", 1);
            ce.synth.vy = e.value("vy", 0);
            ce.synth.seed = e.value("seed", uint64_t(0));
            ce.synth.smooth_radius = e.value("smooth_radius", 4);
        } else if (type == "video") {
            ce.type = CorpusEntry::Type::Video;
            ce.path = e.at("path");
            ce.width = e.value("width", int64_t(0));
            ce.height = e.value("height", int64_t(0));
        } else {
            throw TrainingError("unknown corpus entry type '" + type + "'");
        }
        c.corpus.push_back(std::move(ce));
    }
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.early_stop_msssim = j.value("early_stop_msssim", c.early_stop_msssim);
    return c;
}

inline TrainConfig TrainConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TrainingError("cannot open config " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
}

// ---- training loop ----

template <typename T>
struct StepStats {
    double loss = 0, d1 = 0, d2 = 0, bpp = 0;
};

// One optimizer update on a batched clip. Throws when the loss goes
// non-finite; nothing is mutated in that case beyond parameter grads.
template <typename T>
StepStats<T> train_step(MoviModel<T>& model, const std::vector<Tensor<T>>& clip, Adam<T>& opt,
                        const TrainConfig& cfg, Rng& rng) {
    QuantCtx<T> q = QuantCtx<T>::train(rng);
    WindowLoss<T> wl = window_loss(model, clip, q, cfg.lambda, cfg.beta, cfg.distortion);
    StepStats<T> st{wl.total.val()[0], wl.d1_mean(), wl.d2_mean(), wl.bpp_mean()};
    if (!std::isfinite(st.loss))
        throw TrainingError("non-finite loss at optimizer step " + std::to_string(opt.t + 1) +
                            ": D1=" + std::to_string(st.d1) + " D2=" + std::to_string(st.d2) +
                            " bpp=" + std::to_string(st.bpp));
    model.params.zero_grad();
    ag::backward(wl.total);
    opt.lr = cfg.lr;
    opt.step(model.params);
    return st;
}

// Deterministic evaluation rollout (sign quantizer) over a clip; reports the
// mean MS-SSIM of reconstructions against sources plus the rate estimate.
template <typename T>
struct EvalStats {
    double msssim = 0, psnr_db = 0, bpp = 0;
};

template <typename T>
EvalStats<T> eval_clip(const MoviModel<T>& model, const std::vector<Tensor<T>>& clip) {
    ag::NoGradGuard ng;
    QuantCtx<T> q = QuantCtx<T>::eval();
    auto traces = rollout(model, clip, q);
    EvalStats<T> st;
    for (const auto& tr : traces) {
        st.msssim += ms_ssim_value(tr.x.val(), tr.x_hat.val());
        st.psnr_db += psnr(tr.x.val(), tr.x_hat.val());
        st.bpp += tr.rate.bpp_value();
    }
    double n = static_cast<double>(traces.size());
    st.msssim /= n;
    st.psnr_db /= n;
    st.bpp /= n;
    return st;
}

namespace trainer_detail {

// Stacks per-clip frames into per-timestep (B,3,H,W) batches.
template <typename T>
std::vector<Tensor<T>> stack_clips(const std::vector<std::vector<const Frame*>>& clips) {
    size_t batch = clips.size(), len = clips[0].size();
    int64_t h = clips[0][0]->dim(1), w = clips[0][0]->dim(2);
    std::vector<Tensor<T>> out;
    out.reserve(len);
    for (size_t t = 0; t < len; ++t) {
        Tensor<T> b({static_cast<int64_t>(batch), 3, h, w});
        for (size_t i = 0; i < batch; ++i) {
            const Frame& f = *clips[i][t];
            for (int64_t e = 0; e < f.numel(); ++e)
                b[static_cast<int64_t>(i) * f.numel() + e] = static_cast<T>(f[e]);
        }
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace trainer_detail

// Checkpoint = model container + optimizer moments + loop state in meta.
template <typename T>
void save_checkpoint(const MoviModel<T>& model, const Adam<T>& opt, const Rng& rng, int64_t step,
                     const std::string& path) {
    MoviModel<T>& m = const_cast<MoviModel<T>&>(model);
    nlohmann::json saved_meta = m.meta;
    m.meta["trainer"] = {{"step", step}, {"rng", rng.save_state()}, {"adam_t", opt.t}};
    nn::ParamStore<T> extra;
    Rng dummy(0);
    for (size_t k = 0; k < model.params.items.size(); ++k) {
        const auto& [name, p] = model.params.items[k];
        extra.create("opt.m." + name, p.val().shape(), T(0), dummy).val() = opt.m[k];
        extra.create("opt.v." + name, p.val().shape(), T(0), dummy).val() = opt.v[k];
    }
    model_io::save(m, path, &extra);
    m.meta = saved_meta;
}

template <typename T>
MoviModel<T> load_checkpoint(const std::string& path, Adam<T>& opt, Rng& rng, int64_t& step) {
    nn::ParamStore<T> extra;
    MoviModel<T> model = model_io::load<T>(path, &extra);
    if (!model.meta.contains("trainer"))
        throw TrainingError(path + ": container carries no trainer state, cannot resume");
    step = model.meta["trainer"]["step"];
    rng.load_state(model.meta["trainer"]["rng"]);
    opt.t = model.meta["trainer"]["adam_t"];
    opt.ensure_state(model.params);
    for (size_t k = 0; k < model.params.items.size(); ++k) {
        const auto& name = model.params.items[k].first;
        ag::Var<T>* m = extra.find("opt.m." + name);
        ag::Var<T>* v = extra.find("opt.v." + name);
        if (!m || !v) throw TrainingError(path + ": optimizer state missing for " + name);
        opt.m[k] = m->val();
        opt.v[k] = v->val();
    }
    return model;
}

struct TrainRunResult {
    int64_t steps_run = 0;
    double final_loss = 0;
    EvalStats<float> final_eval;
    std::string model_path;
};

// Full training entry point: assembles the corpus, runs the optimizer loop
// with per-step CSV logging, periodic checkpoints, optional eval-based early
// stopping, and a final model save. Resumable from a checkpoint path.
template <typename T>
TrainRunResult train_run(const TrainConfig& cfg, const std::string& out_dir,
                         const std::string& resume_from = "") {
    namespace fs = std::filesystem;
    if (cfg.corpus.empty()) throw TrainingError("corpus is empty");
    fs::create_directories(out_dir);

    std::vector<FrameSequence> corpus;
    for (const auto& e : cfg.corpus) {
        if (e.type == CorpusEntry::Type::Synthetic)
            corpus.push_back(make_synthetic_clip(e.synth));
        else
            corpus.push_back(load_video(e.path, e.width, e.height));
        const FrameSequence& seq = corpus.back();
        if (seq.height < cfg.patch || seq.width < cfg.patch)
            throw TrainingError("corpus entry smaller than patch size");
        if (seq.frames.size() < static_cast<size_t>(cfg.window))
            throw TrainingError("corpus entry shorter than the training window");
    }

    Adam<T> opt;
    opt.lr = cfg.lr;
    Rng rng(cfg.seed + 1);
    int64_t start_step = 0;
    std::optional<MoviModel<T>> model;
    if (!resume_from.empty()) {
        model.emplace(load_checkpoint<T>(resume_from, opt, rng, start_step));
    } else {
        model.emplace(cfg.model, cfg.seed);
        model->meta["train_config"] = cfg.to_json();
        opt.ensure_state(model->params);
    }

    // Deterministic eval clip: leading window of the first corpus entry,
    // top-left patch crop.
    std::vector<Tensor<T>> eval_clip_frames;
    {
        std::vector<Frame> cropped;
        for (int t = 0; t < cfg.window; ++t)
            cropped.push_back(crop_frame(corpus[0].frames[static_cast<size_t>(t)], cfg.patch, cfg.patch));
        std::vector<std::vector<const Frame*>> cp(1);
        for (const Frame& f : cropped) cp[0].push_back(&f);
        eval_clip_frames = trainer_detail::stack_clips<T>(cp);
    }

    std::ofstream log(fs::path(out_dir) / "train_log.csv",
                      resume_from.empty() ? std::ios::trunc : std::ios::app);
    if (resume_from.empty()) log << "step,loss,d1,d2,bpp,eval_msssim,eval_bpp,seconds\n";

    TrainRunResult result;
    auto t_start = std::chrono::steady_clock::now();
    for (int64_t step = start_step; step < cfg.steps; ++step) {
        // Assemble the batch: clips are sampled with the loop rng, so the
        // draw sequence (and therefore the whole run) is seed-deterministic.
        std::vector<ClipSample> samples;
        std::vector<std::vector<const Frame*>> ptrs;
        for (int b = 0; b < cfg.batch; ++b) {
            size_t which = corpus.size() == 1
                               ? 0
                               : static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(corpus.size()) - 1));
            samples.push_back(sample_clip(corpus[which], cfg.patch, static_cast<size_t>(cfg.window), rng));
        }
        for (auto& s : samples) {
            ptrs.emplace_back();
            for (Frame& f : s.frames) ptrs.back().push_back(&f);
        }
        std::vector<Tensor<T>> clip = trainer_detail::stack_clips<T>(ptrs);
        StepStats<T> st = train_step(*model, clip, opt, cfg, rng);
        result.final_loss = st.loss;
        result.steps_run = step + 1;

        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        bool do_eval = cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps);
        EvalStats<T> ev;
        if (do_eval) ev = eval_clip(*model, eval_clip_frames);
        log << step + 1 << ',' << st.loss << ',' << st.d1 << ',' << st.d2 << ',' << st.bpp << ',';
        if (do_eval)
            log << ev.msssim << ',' << ev.bpp;
        else
            log << ',';
        log << ',' << secs << '\n';
        log.flush();

        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(*model, opt, rng, step + 1, (fs::path(out_dir) / "checkpoint.movm").string());

        if (do_eval && cfg.early_stop_msssim > 0 && ev.msssim >= cfg.early_stop_msssim) {
            result.final_eval = {ev.msssim, ev.psnr_db, ev.bpp};
            break;
        }
        if (do_eval) result.final_eval = {ev.msssim, ev.psnr_db, ev.bpp};
    }

    model->meta["trained_steps"] = result.steps_run;
    model->meta["lambda"] = cfg.lambda;
    model->meta["distortion"] = distortion_name(cfg.distortion);
    result.model_path = (fs::path(out_dir) / "model_final.movm").string();
    model_io::save(*model, result.model_path);
    return result;
}

}  // namespace movi
