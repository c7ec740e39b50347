#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vistk/anno_io.hpp"
#include "vistk/errors.hpp"
#include "vistk/incoherence.hpp"
#include "vistk/metrics.hpp"
#include "vistk/overlay.hpp"
#include "vistk/refine.hpp"
#include "vistk/selfcorrect.hpp"

namespace {

using vistk::BandMode;

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        if (!text.empty() && text.back() != '\n')
            std::cout << "\n";
        return;
    }
    std::ofstream out(out_path);
    if (!out)
        throw vistk::IoError("cannot open " + out_path + " for writing");
    out << text;
    if (!text.empty() && text.back() != '\n')
        out << "\n";
}

BandMode parse_band_mode(const std::string& s) {
    if (s == "two_sided")
        return BandMode::two_sided;
    if (s == "inner_only")
        return BandMode::inner_only;
    throw CLI::ValidationError("--band-mode", "expected two_sided or inner_only");
}

std::vector<double> parse_threshold_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty())
            out.push_back(std::stod(item));
    return out;
}

/// Refiner specs: oracle:<gt.json>[:flip], ensemble:<gt.json>[:flip[:corr_len]],
/// constant:<p>, transformer:<weights>.
std::unique_ptr<vistk::Refiner> make_refiner(const std::string& spec, std::uint64_t seed) {
    const auto split = [](const std::string& s) {
        std::vector<std::string> parts;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ':'))
            parts.push_back(item);
        return parts;
    };
    const std::vector<std::string> parts = split(spec);
    if (parts.empty())
        throw vistk::Error("empty refiner spec");
    const std::string& kind = parts[0];
    if (kind == "oracle") {
        if (parts.size() < 2 || parts.size() > 3)
            throw vistk::Error("refiner spec: oracle:<gt.json>[:flip]");
        const double flip = parts.size() == 3 ? std::stod(parts[2]) : 0.0;
        return std::make_unique<vistk::OracleRefiner>(vistk::load_dataset_file(parts[1]), flip,
                                                      seed);
    }
    if (kind == "ensemble") {
        if (parts.size() < 2 || parts.size() > 4)
            throw vistk::Error("refiner spec: ensemble:<gt.json>[:flip[:corr_len]]");
        const double flip = parts.size() >= 3 ? std::stod(parts[2]) : 0.3;
        const int corr = parts.size() == 4 ? std::stoi(parts[3]) : 2;
        return std::make_unique<vistk::TemporalEnsembleOracleRefiner>(
            vistk::load_dataset_file(parts[1]), flip, corr, seed);
    }
    if (kind == "constant") {
        if (parts.size() != 2)
            throw vistk::Error("refiner spec: constant:<p>");
        return std::make_unique<vistk::ConstantRefiner>(std::stod(parts[1]));
    }
    if (kind == "transformer") {
        if (parts.size() != 2)
            throw vistk::Error("refiner spec: transformer:<weights>");
        return std::make_unique<vistk::TransformerRefiner>(vistk::RefinerWeights::load(parts[1]));
    }
    throw vistk::Error("unknown refiner kind " + kind);
}

int run(int argc, char** argv) {
    CLI::App app{"video instance mask toolkit"};
    app.require_subcommand(1);

    // evaluate
    auto* cmd_eval = app.add_subcommand("evaluate", "score predictions against ground truth");
    std::string eval_gt, eval_pred, eval_out, eval_format = "json", eval_band = "two_sided";
    std::string eval_thresholds;
    int eval_d = 0, eval_jobs = 1;
    cmd_eval->add_option("--gt", eval_gt, "ground-truth dataset")->required();
    cmd_eval->add_option("--pred", eval_pred, "predictions (document or bare array)")->required();
    cmd_eval->add_option("--boundary-d", eval_d, "boundary band half-width, 0 = auto");
    cmd_eval->add_option("--band-mode", eval_band, "two_sided or inner_only");
    cmd_eval->add_option("--thresholds", eval_thresholds, "comma-separated IoU thresholds");
    cmd_eval->add_option("--jobs", eval_jobs, "worker threads");
    cmd_eval->add_option("--format", eval_format, "json or table");
    cmd_eval->add_option("--out", eval_out, "output file, default stdout");

    // detect
    auto* cmd_detect = app.add_subcommand("detect", "incoherent-region quadtrees for one video");
    cmd_detect->alias("detect-incoherence");
    std::string det_input, det_out;
    int det_video = 0, det_instance = 0;
    cmd_detect->add_option("--input", det_input, "dataset")->required();
    cmd_detect->add_option("--video", det_video, "video id")->required();
    cmd_detect->add_option("--instance", det_instance, "restrict to one tracklet id");
    cmd_detect->add_option("--out", det_out, "output file, default stdout");

    // degrade
    auto* cmd_degrade = app.add_subcommand("degrade", "coarsen dataset masks");
    std::string deg_input, deg_out;
    vistk::DegradeParams deg_params;
    int deg_jobs = 1;
    cmd_degrade->add_option("--input", deg_input, "dataset")->required();
    cmd_degrade->add_option("--out", deg_out, "output file")->required();
    cmd_degrade->add_option("--stride", deg_params.stride, "keep every k-th contour vertex");
    cmd_degrade->add_option("--max-radius", deg_params.max_morph_radius,
                            "largest random morph radius");
    cmd_degrade->add_option("--dilate-prob", deg_params.dilate_prob,
                            "dilate probability, otherwise erode");
    cmd_degrade->add_flag("--halo", deg_params.halo_only, "replace masks by their dilation");
    cmd_degrade->add_option("--halo-radius", deg_params.halo_radius, "halo dilation radius");
    cmd_degrade->add_option("--seed", deg_params.seed, "random seed");
    cmd_degrade->add_option("--jobs", deg_jobs, "worker threads");

    // correct
    auto* cmd_correct = app.add_subcommand("correct", "one correction pass over a dataset");
    std::string cor_input, cor_out, cor_refiner;
    vistk::CorrectionConfig cor_cfg;
    std::uint64_t cor_seed = 0;
    cmd_correct->add_option("--input", cor_input, "coarse dataset")->required();
    cmd_correct->add_option("--out", cor_out, "output file")->required();
    cmd_correct->add_option("--refiner", cor_refiner, "oracle:<gt>[:flip] | ensemble:<gt>[:flip[:corr]] | constant:<p> | transformer:<weights>")
        ->required();
    cmd_correct->add_option("--clip-len", cor_cfg.clip_len, "frames per window, 0 = whole video");
    cmd_correct->add_option("--threshold", cor_cfg.confidence, "confidence threshold");
    cmd_correct->add_option("--region-dilation", cor_cfg.region_dilation,
                            "grow flagged regions by this radius");
    cmd_correct->add_option("--seed", cor_seed, "refiner seed");
    cmd_correct->add_option("--jobs", cor_cfg.jobs, "worker threads");

    // iterate
    auto* cmd_iter = app.add_subcommand("iterate", "repeated correction passes with scoring");
    std::string it_gt, it_input, it_refiner, it_out, it_format = "json", it_save_prefix;
    vistk::LoopConfig it_cfg;
    std::uint64_t it_seed = 0;
    cmd_iter->add_option("--gt", it_gt, "scoring ground truth")->required();
    cmd_iter->add_option("--input", it_input, "degraded dataset")->required();
    cmd_iter->add_option("--refiner", it_refiner, "refiner spec")->required();
    cmd_iter->add_option("--max-iters", it_cfg.max_iters, "iteration cap");
    cmd_iter->add_option("--epsilon", it_cfg.epsilon, "stop when the AP gain falls below this");
    cmd_iter->add_option("--clip-len", it_cfg.correction.clip_len, "frames per window");
    cmd_iter->add_option("--threshold", it_cfg.correction.confidence, "confidence threshold");
    cmd_iter->add_option("--region-dilation", it_cfg.correction.region_dilation,
                         "grow flagged regions by this radius");
    cmd_iter->add_option("--boundary-d", it_cfg.metric.boundary_d, "band half-width, 0 = auto");
    cmd_iter->add_option("--seed", it_seed, "refiner seed");
    cmd_iter->add_option("--jobs", it_cfg.correction.jobs, "worker threads");
    cmd_iter->add_option("--save-prefix", it_save_prefix,
                         "write <prefix>_iterN.json after each pass");
    cmd_iter->add_option("--format", it_format, "json or table");
    cmd_iter->add_option("--out", it_out, "output file, default stdout");

    // synth
    auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string syn_out;
    vistk::SynthParams syn_params;
    cmd_synth->add_option("--out", syn_out, "output file")->required();
    cmd_synth->add_option("--videos", syn_params.videos, "video count");
    cmd_synth->add_option("--frames", syn_params.length, "frames per video");
    cmd_synth->add_option("--width", syn_params.width, "frame width");
    cmd_synth->add_option("--height", syn_params.height, "frame height");
    cmd_synth->add_option("--min-instances", syn_params.min_instances, "fewest instances");
    cmd_synth->add_option("--max-instances", syn_params.max_instances, "most instances");
    cmd_synth->add_option("--seed", syn_params.seed, "random seed");

    // overlay
    auto* cmd_overlay = app.add_subcommand("overlay", "render per-frame PNG overlays");
    std::string ov_input, ov_dir, ov_band = "two_sided";
    int ov_video = 0, ov_d = 0;
    bool ov_no_cells = false;
    cmd_overlay->add_option("--input", ov_input, "dataset")->required();
    cmd_overlay->add_option("--video", ov_video, "video id")->required();
    cmd_overlay->add_option("--out-dir", ov_dir, "output directory")->required();
    cmd_overlay->add_option("--boundary-d", ov_d, "band half-width, 0 = auto");
    cmd_overlay->add_option("--band-mode", ov_band, "two_sided or inner_only");
    cmd_overlay->add_flag("--no-cells", ov_no_cells, "skip incoherent-cell outlines");

    // cliplen
    auto* cmd_clip = app.add_subcommand("cliplen", "correction quality versus window length");
    std::string cl_gt, cl_input, cl_refiner, cl_out, cl_format = "json", cl_lengths;
    vistk::ClipLengthConfig cl_cfg;
    std::uint64_t cl_seed = 0;
    cmd_clip->add_option("--gt", cl_gt, "scoring ground truth")->required();
    cmd_clip->add_option("--input", cl_input, "degraded dataset")->required();
    cmd_clip->add_option("--refiner", cl_refiner, "refiner spec")->required();
    cmd_clip->add_option("--lengths", cl_lengths, "comma-separated window lengths, 0 = all");
    cmd_clip->add_option("--threshold", cl_cfg.correction.confidence, "confidence threshold");
    cmd_clip->add_option("--region-dilation", cl_cfg.correction.region_dilation,
                         "grow flagged regions by this radius");
    cmd_clip->add_option("--seed", cl_seed, "refiner seed");
    cmd_clip->add_option("--jobs", cl_cfg.correction.jobs, "worker threads");
    cmd_clip->add_option("--format", cl_format, "json or table");
    cmd_clip->add_option("--out", cl_out, "output file, default stdout");

    // init-weights
    auto* cmd_init = app.add_subcommand("init-weights", "write freshly initialized weights");
    std::string iw_out;
    std::uint64_t iw_seed = 0;
    cmd_init->add_option("--out", iw_out, "output file")->required();
    cmd_init->add_option("--seed", iw_seed, "random seed");

    // attention
    auto* cmd_attn = app.add_subcommand("attention", "dump attention maps for one tracklet");
    std::string at_input, at_weights, at_out;
    int at_video = 0, at_instance = 0, at_topk = 5;
    cmd_attn->add_option("--input", at_input, "dataset")->required();
    cmd_attn->add_option("--video", at_video, "video id")->required();
    cmd_attn->add_option("--instance", at_instance, "tracklet id")->required();
    cmd_attn->add_option("--weights", at_weights, "weight file")->required();
    cmd_attn->add_option("--top-k", at_topk, "attended tokens per query");
    cmd_attn->add_option("--out", at_out, "output file, default stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (cmd_eval->parsed()) {
        vistk::MetricConfig cfg;
        cfg.boundary_d = eval_d;
        cfg.band_mode = parse_band_mode(eval_band);
        if (!eval_thresholds.empty())
            cfg.thresholds = parse_threshold_list(eval_thresholds);
        cfg.jobs = eval_jobs;
        const vistk::VideoDataset gt = vistk::load_dataset_file(eval_gt);
        const vistk::VideoDataset pred = vistk::load_results_file(eval_pred, gt);
        const vistk::EvalReport report = vistk::evaluate(gt, pred, cfg);
        if (eval_format == "table")
            emit(vistk::report_to_table(report), eval_out);
        else
            emit(vistk::report_to_json(report).dump(2), eval_out);
        return 0;
    }

    if (cmd_detect->parsed()) {
        const vistk::VideoDataset ds = vistk::load_dataset_file(det_input);
        const vistk::VideoMeta* video = ds.find_video(det_video);
        if (video == nullptr)
            throw vistk::DanglingReference("unknown video " + std::to_string(det_video));
        nlohmann::ordered_json out;
        out["video"] = det_video;
        out["tracklets"] = nlohmann::ordered_json::array();
        for (const vistk::Tracklet* t : ds.tracklets_of_video(det_video)) {
            if (det_instance != 0 && t->id != det_instance)
                continue;
            std::vector<vistk::BinaryMask> clip;
            for (int f = 0; f < video->length; ++f) {
                const bool present = f < static_cast<int>(t->frames.size()) &&
                                     t->frames[static_cast<std::size_t>(f)].has_value();
                clip.push_back(present ? *t->frames[static_cast<std::size_t>(f)]
                                       : vistk::BinaryMask(video->width, video->height));
            }
            nlohmann::ordered_json jt;
            jt["id"] = t->id;
            jt["quadtree"] = vistk::quadtree_to_json(vistk::detect_incoherence(clip));
            out["tracklets"].push_back(std::move(jt));
        }
        emit(out.dump(2), det_out);
        return 0;
    }

    if (cmd_degrade->parsed()) {
        const vistk::VideoDataset ds = vistk::load_dataset_file(deg_input);
        vistk::DegradeStats stats;
        const vistk::VideoDataset out = vistk::degrade_dataset(ds, deg_params, deg_jobs, &stats);
        vistk::save_dataset_file(out, deg_out);
        std::cerr << "degraded " << stats.frames << " frames, " << stats.degenerate_frames
                  << " left unchanged as degenerate\n";
        return 0;
    }

    if (cmd_correct->parsed()) {
        const vistk::VideoDataset ds = vistk::load_dataset_file(cor_input);
        const std::unique_ptr<vistk::Refiner> refiner = make_refiner(cor_refiner, cor_seed);
        vistk::CorrectionStats stats;
        const vistk::VideoDataset out = vistk::correction_pass(ds, *refiner, cor_cfg, &stats);
        vistk::save_dataset_file(out, cor_out);
        std::cerr << "offered " << stats.region_pixels << " pixels, changed "
                  << stats.changed_pixels << "\n";
        return 0;
    }

    if (cmd_iter->parsed()) {
        const vistk::VideoDataset gt = vistk::load_dataset_file(it_gt);
        const vistk::VideoDataset degraded = vistk::load_dataset_file(it_input);
        const std::unique_ptr<vistk::Refiner> refiner = make_refiner(it_refiner, it_seed);
        vistk::IterationSink sink;
        if (!it_save_prefix.empty())
            sink = [&it_save_prefix](int iter, const vistk::VideoDataset& ds) {
                vistk::save_dataset_file(ds,
                                         it_save_prefix + "_iter" + std::to_string(iter) + ".json");
            };
        const vistk::LoopHistory history = vistk::iterate(gt, degraded, *refiner, it_cfg, sink);
        if (it_format == "table")
            emit(vistk::history_to_table(history), it_out);
        else
            emit(vistk::history_to_json(history).dump(2), it_out);
        return 0;
    }

    if (cmd_synth->parsed()) {
        vistk::save_dataset_file(vistk::synthesize_dataset(syn_params), syn_out);
        return 0;
    }

    if (cmd_overlay->parsed()) {
        const vistk::VideoDataset ds = vistk::load_dataset_file(ov_input);
        vistk::OverlayOptions opts;
        opts.boundary_d = ov_d;
        opts.band_mode = parse_band_mode(ov_band);
        opts.quadtree_cells = !ov_no_cells;
        const int frames = vistk::write_video_overlays(ds, ov_video, ov_dir, opts);
        std::cerr << "wrote " << frames << " frames to " << ov_dir << "\n";
        return 0;
    }

    if (cmd_clip->parsed()) {
        const vistk::VideoDataset gt = vistk::load_dataset_file(cl_gt);
        const vistk::VideoDataset degraded = vistk::load_dataset_file(cl_input);
        const std::unique_ptr<vistk::Refiner> refiner = make_refiner(cl_refiner, cl_seed);
        if (!cl_lengths.empty()) {
            cl_cfg.lengths.clear();
            for (double v : parse_threshold_list(cl_lengths))
                cl_cfg.lengths.push_back(static_cast<int>(v));
        }
        const auto rows = vistk::clip_length_study(gt, degraded, *refiner, cl_cfg);
        if (cl_format == "table")
            emit(vistk::clip_length_to_table(rows), cl_out);
        else
            emit(vistk::clip_length_to_json(rows).dump(2), cl_out);
        return 0;
    }

    if (cmd_init->parsed()) {
        vistk::RefinerWeights::init(vistk::TransformerHyper{}, iw_seed).save(iw_out);
        return 0;
    }

    if (cmd_attn->parsed()) {
        const vistk::VideoDataset ds = vistk::load_dataset_file(at_input);
        const vistk::VideoMeta* video = ds.find_video(at_video);
        if (video == nullptr)
            throw vistk::DanglingReference("unknown video " + std::to_string(at_video));
        const vistk::Tracklet* target = nullptr;
        for (const vistk::Tracklet* t : ds.tracklets_of_video(at_video))
            if (t->id == at_instance)
                target = t;
        if (target == nullptr)
            throw vistk::DanglingReference("unknown tracklet " + std::to_string(at_instance));
        std::vector<vistk::BinaryMask> clip;
        for (int f = 0; f < video->length; ++f) {
            const bool present = f < static_cast<int>(target->frames.size()) &&
                                 target->frames[static_cast<std::size_t>(f)].has_value();
            clip.push_back(present ? *target->frames[static_cast<std::size_t>(f)]
                                   : vistk::BinaryMask(video->width, video->height));
        }
        const vistk::RefinerWeights weights = vistk::RefinerWeights::load(at_weights);
        const vistk::IncoherenceQuadtree qt = vistk::detect_incoherence(clip);
        const vistk::TokenSequence seq = vistk::group_sequence(qt, clip);
        vistk::AttentionCapture capture;
        vistk::refine_forward(seq, clip, weights, &capture);
        emit(vistk::attention_to_json(seq, capture, at_topk).dump(2), at_out);
        return 0;
    }

    return 2;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const vistk::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
