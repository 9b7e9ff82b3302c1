#pragma once

#include <string>
#include <vector>

#include "movi/codec.hpp"
#include "movi/trainer.hpp"

namespace movi {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One rate-distortion measurement of a model over a video. bpp counts every
// bit of the serialized container (header amortized over frames); the
// per-frame series carry the payload bits only.
struct RDPoint {
    double lambda = 0.0;
    bool has_lambda = false;
    double bpp = 0.0;
    double msssim = 0.0;
    double psnr_db = 0.0;
    std::vector<double> frame_bpp, frame_msssim, frame_psnr;
    double encode_fps = 0.0;  // wall clock; reporting only, never in normative CSV
    int64_t width = 0, height = 0;
    size_t frames = 0;
};

// Encodes, decodes, verifies the decoder matches the encoder-local
// reconstruction bit for bit, and measures quality against the source.
RDPoint evaluate(const MoviModel<float>& model, const FrameSequence& seq);

// Per-frame rows plus a summary row, byte-stable across reruns.
void write_eval_csv(const RDPoint& p, const std::string& path);

// One point per model averaged over the video set, rows sorted by bpp.
std::vector<RDPoint> rd_curve(const std::vector<std::string>& model_paths,
                              const std::vector<FrameSequence>& videos);
void write_rd_csv(const std::vector<RDPoint>& points, const std::string& path);
void write_rd_svg(const std::vector<RDPoint>& points, const std::string& path);

// First "model name" line of /proc/cpuinfo, or "unknown-cpu".
std::string hardware_string();

// Displacement-set ablation: trains one model per candidate set with an
// otherwise identical budget and reports the final objective terms per set.
struct AblationRow {
    std::string label;
    int64_t steps = 0;
    double loss = 0, d1 = 0, d2 = 0, bpp = 0, eval_msssim = 0;
};
std::vector<AblationRow> ablate_displacements(const TrainConfig& base,
                                              const std::vector<DisplacementSet>& sets,
                                              const std::string& out_dir);

// FRN recurrence ablation: recurrent blocks vs plain convolutions, same
// budget and seed; emits both loss-vs-step curves.
struct FrnAblationResult {
    AblationRow recurrent, plain;
    // per-step losses, index = step - 1
    std::vector<double> recurrent_curve, plain_curve;
};
FrnAblationResult ablate_frn(const TrainConfig& base, const std::string& out_dir);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);
void write_frn_curves_csv(const FrnAblationResult& r, const std::string& path);

}  // namespace movi
