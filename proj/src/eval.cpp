#include "movi/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

#include "movi/metrics.hpp"

namespace movi {

namespace {

// Fixed-format numbers keep CSV and SVG output byte-stable across reruns.
std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw EvalError("cannot open " + path + " for writing");
    return out;
}

}  // namespace

std::string hardware_string() {
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    while (std::getline(in, line)) {
        auto pos = line.find("model name");
        if (pos == std::string::npos) continue;
        pos = line.find(':');
        if (pos == std::string::npos) continue;
        pos = line.find_first_not_of(" \t", pos + 1);
        if (pos == std::string::npos) continue;
        return line.substr(pos);
    }
    return "unknown-cpu";
}

RDPoint evaluate(const MoviModel<float>& model, const FrameSequence& seq) {
    auto t0 = std::chrono::steady_clock::now();
    EncodeResult enc = encode_sequence(model, seq);
    double enc_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    FrameSequence dec = decode_sequence(model, enc.bitstream);
    for (size_t i = 0; i < dec.frames.size(); ++i)
        if (dec.frames[i].vec() != enc.reconstruction.frames[i].vec())
            throw EvalError("decoder output diverged from the encoder-local reconstruction at frame " +
                            std::to_string(i));

    RDPoint p;
    if (model.meta.contains("lambda")) {
        p.lambda = model.meta["lambda"];
        p.has_lambda = true;
    }
    p.width = seq.width;
    p.height = seq.height;
    p.frames = seq.frames.size();
    p.encode_fps = enc_secs > 0 ? static_cast<double>(p.frames) / enc_secs : 0.0;

    int64_t total_bits = 8 * static_cast<int64_t>(serialize_bitstream(enc.bitstream).size());
    double area = static_cast<double>(seq.width * seq.height);
    p.bpp = static_cast<double>(total_bits) / (area * static_cast<double>(p.frames));
    for (size_t i = 0; i < dec.frames.size(); ++i) {
        p.frame_bpp.push_back(static_cast<double>(enc.frame_bits[i]) / area);
        p.frame_msssim.push_back(ms_ssim_value(seq.frames[i], dec.frames[i]));
        p.frame_psnr.push_back(psnr(seq.frames[i], dec.frames[i]));
        p.msssim += p.frame_msssim.back();
        p.psnr_db += p.frame_psnr.back();
    }
    p.msssim /= static_cast<double>(p.frames);
    p.psnr_db /= static_cast<double>(p.frames);
    return p;
}

void write_eval_csv(const RDPoint& p, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "frame,bpp,msssim,psnr_db\n";
    for (size_t i = 0; i < p.frame_bpp.size(); ++i)
        out << i << ',' << num(p.frame_bpp[i]) << ',' << num(p.frame_msssim[i]) << ','
            << num(p.frame_psnr[i]) << '\n';
    out << "mean," << num(p.bpp) << ',' << num(p.msssim) << ',' << num(p.psnr_db) << '\n';
}

std::vector<RDPoint> rd_curve(const std::vector<std::string>& model_paths,
                              const std::vector<FrameSequence>& videos) {
    if (model_paths.size() < 2) throw EvalError("rd-curve needs at least two models");
    if (videos.empty()) throw EvalError("rd-curve needs at least one video");
    std::vector<RDPoint> points;
    for (const std::string& mp : model_paths) {
        MoviModel<float> model = model_io::load<float>(mp);
        RDPoint agg;
        size_t total_frames = 0;
        for (const FrameSequence& v : videos) {
            RDPoint p = evaluate(model, v);
            agg.bpp += p.bpp;
            agg.msssim += p.msssim;
            agg.psnr_db += p.psnr_db;
            agg.encode_fps += p.encode_fps;
            agg.width = p.width;
            agg.height = p.height;
            total_frames += p.frames;
            agg.has_lambda = p.has_lambda;
            agg.lambda = p.lambda;
        }
        double n = static_cast<double>(videos.size());
        agg.bpp /= n;
        agg.msssim /= n;
        agg.psnr_db /= n;
        agg.encode_fps /= n;
        agg.frames = total_frames;
        points.push_back(std::move(agg));
    }
    std::sort(points.begin(), points.end(),
              [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
    return points;
}

void write_rd_csv(const std::vector<RDPoint>& points, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "lambda,bpp,msssim,psnr_db\n";
    for (const RDPoint& p : points) {
        if (p.has_lambda)
            out << num(p.lambda);
        out << ',' << num(p.bpp) << ',' << num(p.msssim) << ',' << num(p.psnr_db) << '\n';
    }
}

void write_rd_svg(const std::vector<RDPoint>& points, const std::string& path) {
    if (points.empty()) throw EvalError("nothing to plot");
    double x_lo = points.front().bpp, x_hi = points.back().bpp;
    double y_lo = 1.0, y_hi = 0.0;
    for (const RDPoint& p : points) {
        y_lo = std::min(y_lo, p.msssim);
        y_hi = std::max(y_hi, p.msssim);
    }
    if (x_hi <= x_lo) x_hi = x_lo + 1e-6;
    if (y_hi <= y_lo) y_hi = y_lo + 1e-6;
    const double w = 640, h = 480, ml = 70, mr = 20, mt = 20, mb = 50;
    auto px = [&](double bpp) { return ml + (bpp - x_lo) / (x_hi - x_lo) * (w - ml - mr); };
    auto py = [&](double ms) { return h - mb - (ms - y_lo) / (y_hi - y_lo) * (h - mt - mb); };

    std::ofstream out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
        << h - mb << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12
        << "\" text-anchor=\"middle\" font-size=\"14\">bits per pixel</text>\n";
    out << "<text x=\"16\" y=\"" << (mt + h - mb) / 2
        << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 16 "
        << (mt + h - mb) / 2 << ")\">MS-SSIM</text>\n";
    out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (const RDPoint& p : points) out << num(px(p.bpp)) << ',' << num(py(p.msssim)) << ' ';
    out << "\"/>\n";
    for (const RDPoint& p : points) {
        out << "<circle cx=\"" << num(px(p.bpp)) << "\" cy=\"" << num(py(p.msssim))
            << "\" r=\"4\" fill=\"#1f77b4\"/>\n";
        out << "<text x=\"" << num(px(p.bpp) + 6) << "\" y=\"" << num(py(p.msssim) - 6)
            << "\" font-size=\"12\">" << num(p.bpp) << ", " << num(p.msssim) << "</text>\n";
    }
    out << "</svg>\n";
}

std::vector<AblationRow> ablate_displacements(const TrainConfig& base,
                                              const std::vector<DisplacementSet>& sets,
                                              const std::string& out_dir) {
    if (sets.empty()) throw EvalError("no displacement sets to ablate");
    std::vector<AblationRow> rows;
    for (size_t i = 0; i < sets.size(); ++i) {
        TrainConfig cfg = base;
        cfg.model.displacements = sets[i];
        cfg.model.displacements.canonicalize();
        if (cfg.eval_every <= 0) cfg.eval_every = cfg.steps;
        std::string dir = out_dir + "/set_" + std::to_string(i);
        TrainRunResult r = train_run<float>(cfg, dir);

        AblationRow row;
        row.label = cfg.model.displacements.describe();
        row.steps = r.steps_run;
        // Final objective terms come from the last log row.
        std::ifstream log(dir + "/train_log.csv");
        std::string line, last;
        std::getline(log, line);  // header
        while (std::getline(log, line))
            if (!line.empty()) last = line;
        if (!last.empty())
            std::sscanf(last.c_str(), "%*d,%lf,%lf,%lf,%lf", &row.loss, &row.d1, &row.d2, &row.bpp);
        row.eval_msssim = r.final_eval.msssim;
        rows.push_back(std::move(row));
    }
    return rows;
}

FrnAblationResult ablate_frn(const TrainConfig& base, const std::string& out_dir) {
    FrnAblationResult res;
    auto run = [&](bool recurrent, AblationRow& row, std::vector<double>& curve) {
        TrainConfig cfg = base;
        cfg.model.frn_recurrent = recurrent;
        if (cfg.eval_every <= 0) cfg.eval_every = cfg.steps;
        std::string dir = out_dir + (recurrent ? "/recurrent" : "/plain");
        TrainRunResult r = train_run<float>(cfg, dir);
        row.label = recurrent ? "lstm-unet" : "plain-unet";
        row.steps = r.steps_run;
        row.eval_msssim = r.final_eval.msssim;
        std::ifstream log(dir + "/train_log.csv");
        std::string line;
        std::getline(log, line);
        while (std::getline(log, line)) {
            if (line.empty()) continue;
            double loss = 0;
            std::sscanf(line.c_str(), "%*d,%lf,%lf,%lf,%lf", &loss, &row.d1, &row.d2, &row.bpp);
            row.loss = loss;
            curve.push_back(loss);
        }
    };
    run(true, res.recurrent, res.recurrent_curve);
    run(false, res.plain, res.plain_curve);
    return res;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "displacements,steps,loss,d1,d2,bpp,eval_msssim\n";
    for (const AblationRow& r : rows)
        out << '"' << r.label << "\"," << r.steps << ',' << num(r.loss) << ',' << num(r.d1) << ','
            << num(r.d2) << ',' << num(r.bpp) << ',' << num(r.eval_msssim) << '\n';
}

void write_frn_curves_csv(const FrnAblationResult& r, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "step,loss_lstm_unet,loss_plain_unet\n";
    size_t n = std::max(r.recurrent_curve.size(), r.plain_curve.size());
    for (size_t i = 0; i < n; ++i) {
        out << i + 1 << ',';
        if (i < r.recurrent_curve.size()) out << num(r.recurrent_curve[i]);
        out << ',';
        if (i < r.plain_curve.size()) out << num(r.plain_curve[i]);
        out << '\n';
    }
}

}  // namespace movi
