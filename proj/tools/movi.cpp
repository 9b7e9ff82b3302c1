#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "movi/eval.hpp"

namespace {

using namespace movi;

// Seed policy: an explicit --seed always wins; otherwise the default is the
// fixed seed 0 so runs reproduce, unless MOVI_DETERMINISTIC=0 asks for a
// fresh seed per run.
uint64_t resolve_seed(bool seed_given, uint64_t seed) {
    if (seed_given) return seed;
    const char* det = std::getenv("MOVI_DETERMINISTIC");
    if (det && std::string(det) == "0") return std::random_device{}();
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& resume, bool seed_given, uint64_t seed) {
    TrainConfig cfg = TrainConfig::load(config_path);
    if (seed_given || std::getenv("MOVI_DETERMINISTIC")) cfg.seed = resolve_seed(seed_given, seed);
    TrainRunResult r = train_run<float>(cfg, out_dir, resume);
    std::cout << "trained " << r.steps_run << " steps, final loss " << r.final_loss << ", model at "
              << r.model_path << "\n";
    return 0;
}

int cmd_encode(const std::string& model_path, const std::string& in, const std::string& out,
               int64_t width, int64_t height, int fps) {
    MoviModel<float> model = model_io::load<float>(model_path);
    FrameSequence seq = load_video(in, width, height, fps, 1);
    EncodeResult res = encode_sequence(model, seq);
    write_bitstream(res.bitstream, out);
    int64_t payload = 0;
    for (int64_t b : res.frame_bits) payload += b;
    double area = static_cast<double>(seq.width * seq.height) * static_cast<double>(seq.frames.size());
    std::cout << "encoded " << seq.frames.size() << " frames (" << seq.width << "x" << seq.height
              << ") to " << out << ", " << static_cast<double>(payload) / area << " payload bpp\n";
    return 0;
}

int cmd_decode(const std::string& model_path, const std::string& in, const std::string& out) {
    MoviModel<float> model = model_io::load<float>(model_path);
    BitstreamFile bs = read_bitstream(in);
    FrameSequence seq = decode_sequence(model, bs);
    save_video_frames(seq, out);
    std::cout << "decoded " << seq.frames.size() << " frames (" << seq.width << "x" << seq.height
              << ") into " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& in, const std::string& csv,
             int64_t width, int64_t height) {
    MoviModel<float> model = model_io::load<float>(model_path);
    FrameSequence seq = load_video(in, width, height);
    RDPoint p = evaluate(model, seq);
    if (!csv.empty()) write_eval_csv(p, csv);
    std::cout << "bpp " << p.bpp << "  msssim " << p.msssim << "  psnr " << p.psnr_db << " dB  ("
              << p.frames << " frames " << p.width << "x" << p.height << ", encode " << p.encode_fps
              << " fps, " << hardware_string() << ")\n";
    return 0;
}

int cmd_rd_curve(const std::vector<std::string>& models, const std::vector<std::string>& videos,
                 const std::string& out, const std::string& plot, int64_t width, int64_t height) {
    std::vector<FrameSequence> seqs;
    for (const std::string& v : videos) seqs.push_back(load_video(v, width, height));
    std::vector<RDPoint> points = rd_curve(models, seqs);
    write_rd_csv(points, out);
    if (!plot.empty()) write_rd_svg(points, plot);
    for (const RDPoint& p : points)
        std::cout << "lambda " << (p.has_lambda ? std::to_string(p.lambda) : "?") << "  bpp " << p.bpp
                  << "  msssim " << p.msssim << "  psnr " << p.psnr_db << " dB\n";
    std::cout << "wrote " << out << (plot.empty() ? "" : " and " + plot) << "\n";
    return 0;
}

int cmd_ablate_displacements(const std::string& config_path, const std::string& out_dir,
                             bool seed_given, uint64_t seed) {
    std::ifstream in(config_path);
    if (!in) throw EvalError("cannot open config " + config_path);
    nlohmann::json j;
    in >> j;
    TrainConfig base = TrainConfig::from_json(j.at("train"));
    if (seed_given || std::getenv("MOVI_DETERMINISTIC")) base.seed = resolve_seed(seed_given, seed);
    std::vector<DisplacementSet> sets;
    for (const auto& s : j.at("sets")) {
        DisplacementSet ds;
        ds.horizontal = s.value("horizontal", std::vector<int>{});
        ds.vertical = s.value("vertical", std::vector<int>{});
        ds.canonicalize();
        sets.push_back(std::move(ds));
    }
    std::vector<AblationRow> rows = ablate_displacements(base, sets, out_dir);
    write_ablation_csv(rows, out_dir + "/report.csv");
    for (const AblationRow& r : rows)
        std::cout << r.label << "  steps " << r.steps << "  loss " << r.loss << "  d1 " << r.d1
                  << "  bpp " << r.bpp << "  eval msssim " << r.eval_msssim << "\n";
    std::cout << "wrote " << out_dir << "/report.csv\n";
    return 0;
}

int cmd_ablate_frn(const std::string& config_path, const std::string& out_dir, bool seed_given,
                   uint64_t seed) {
    std::ifstream in(config_path);
    if (!in) throw EvalError("cannot open config " + config_path);
    nlohmann::json j;
    in >> j;
    TrainConfig base = TrainConfig::from_json(j.contains("train") ? j["train"] : j);
    if (seed_given || std::getenv("MOVI_DETERMINISTIC")) base.seed = resolve_seed(seed_given, seed);
    FrnAblationResult r = ablate_frn(base, out_dir);
    write_frn_curves_csv(r, out_dir + "/curves.csv");
    write_ablation_csv({r.recurrent, r.plain}, out_dir + "/report.csv");
    std::cout << r.recurrent.label << "  final loss " << r.recurrent.loss << "  eval msssim "
              << r.recurrent.eval_msssim << "\n";
    std::cout << r.plain.label << "  final loss " << r.plain.loss << "  eval msssim "
              << r.plain.eval_msssim << "\n";
    std::cout << "wrote " << out_dir << "/curves.csv and " << out_dir << "/report.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"movi: motionless learned video codec"};
    app.require_subcommand(1);

    uint64_t seed = 0;
    bool seed_given = false;
    app.add_flag_callback("--version", [] {
        std::cout << "movi 1.0\n";
        std::exit(0);
    });

    auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, "deterministic seed override")
            ->each([&](const std::string&) { seed_given = true; });
    };

    // train
    auto* train = app.add_subcommand("train", "train a model from a JSON config");
    std::string config_path, out_dir = "train_out", resume;
    train->add_option("--config", config_path, "training config JSON")->required();
    train->add_option("--out", out_dir, "output directory (log, checkpoints, final model)");
    train->add_option("--resume", resume, "checkpoint to resume from");
    add_seed(train);

    // encode
    auto* enc = app.add_subcommand("encode", "encode a video to a .movi bitstream");
    std::string model_path, in_path, out_path;
    int64_t width = 0, height = 0;
    int fps = 25;
    enc->add_option("--model", model_path, "trained model container")->required();
    enc->add_option("--in", in_path, "video (frame directory, .yuv, or image)")->required();
    enc->add_option("--out", out_path, "output bitstream path")->required();
    enc->add_option("--width", width, "frame width (raw .yuv only)");
    enc->add_option("--height", height, "frame height (raw .yuv only)");
    enc->add_option("--fps", fps, "frames per second for the header");
    add_seed(enc);

    // decode
    auto* dec = app.add_subcommand("decode", "decode a .movi bitstream to PNG frames");
    dec->add_option("--model", model_path, "trained model container")->required();
    dec->add_option("--in", in_path, "bitstream path")->required();
    dec->add_option("--out", out_path, "output frame directory")->required();
    add_seed(dec);

    // eval
    auto* ev = app.add_subcommand("eval", "measure rate and quality of a model on a video");
    std::string csv_path;
    ev->add_option("--model", model_path, "trained model container")->required();
    ev->add_option("--in", in_path, "video path")->required();
    ev->add_option("--csv", csv_path, "per-frame metrics CSV to write");
    ev->add_option("--width", width, "frame width (raw .yuv only)");
    ev->add_option("--height", height, "frame height (raw .yuv only)");
    add_seed(ev);

    // rd-curve
    auto* rd = app.add_subcommand("rd-curve", "rate-distortion sweep over several models");
    std::vector<std::string> models, videos;
    std::string plot_path;
    rd->add_option("--models", models, "model containers (>= 2)")->required()->expected(-2);
    rd->add_option("--videos", videos, "evaluation videos")->required()->expected(-1);
    rd->add_option("--out", csv_path, "output CSV")->required();
    rd->add_option("--plot", plot_path, "optional SVG plot");
    rd->add_option("--width", width, "frame width (raw .yuv only)");
    rd->add_option("--height", height, "frame height (raw .yuv only)");
    add_seed(rd);

    // ablations
    auto* abd = app.add_subcommand("ablate-displacements", "train one model per displacement set");
    abd->add_option("--config", config_path, "JSON with {train:..., sets:[...]}")->required();
    abd->add_option("--out", out_dir, "output directory");
    add_seed(abd);

    auto* abf = app.add_subcommand("ablate-frn",
                                   "compare recurrent and plain frame reconstruction variants");
    abf->add_option("--config", config_path, "JSON with {train:...}")->required();
    abf->add_option("--out", out_dir, "output directory");
    add_seed(abf);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cmd_train(config_path, out_dir, resume, seed_given, seed);
        if (*enc) return cmd_encode(model_path, in_path, out_path, width, height, fps);
        if (*dec) return cmd_decode(model_path, in_path, out_path);
        if (*ev) return cmd_eval(model_path, in_path, csv_path, width, height);
        if (*rd) return cmd_rd_curve(models, videos, csv_path, plot_path, width, height);
        if (*abd) return cmd_ablate_displacements(config_path, out_dir, seed_given, seed);
        if (*abf) return cmd_ablate_frn(config_path, out_dir, seed_given, seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}
