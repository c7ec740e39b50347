#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vistk/anno_io.hpp"
#include "vistk/metrics.hpp"
#include "vistk/refine.hpp"

namespace vistk {

struct SynthParams {
    int width = 320;
    int height = 180;
    int length = 5; // frames per video
    int videos = 10;
    int min_instances = 1;
    int max_instances = 3;
    double min_area = 0.02; // per-frame instance area bounds, fraction of frame
    double max_area = 0.30;
    std::uint64_t seed = 1;
};

/// Videos of smoothly moving soft-body blobs (metaball fields with linear
/// motion, rotation, and radius wobble). The category id equals the lobe
/// count. Instance parameters are rejection-sampled until every frame's
/// area lies inside [min_area, max_area]; after 64 tries a deterministic
/// disk stands in.
VideoDataset synthesize_dataset(const SynthParams& params);

struct DegradeParams {
    int stride = 6;           // keep every stride-th traced contour vertex
    int max_morph_radius = 3; // uniform in [0, max_morph_radius]
    double dilate_prob = 0.5; // otherwise erode
    bool halo_only = false;   // replace each mask by its halo_radius dilation
    int halo_radius = 5;
    std::uint64_t seed = 7;
};

struct DegradeStats {
    int frames = 0;
    int degenerate_frames = 0; // a traced component kept fewer than 3 vertices
};

/// Coarsen one mask: trace each 8-connected component's boundary, keep
/// every stride-th vertex, refill the polygon (even-odd scanline plus the
/// outline), then apply a seeded random dilation or erosion. A frame whose
/// component degenerates below 3 kept vertices passes through unchanged.
/// stride <= 1 is the identity.
BinaryMask degrade_mask(const BinaryMask& mask, const DegradeParams& params, int video_id,
                        int instance_id, int frame_t, bool* degenerate = nullptr);

/// degrade_mask over every present frame of every annotation. Seeding is
/// per (video, instance, frame), so results do not depend on jobs.
VideoDataset degrade_dataset(const VideoDataset& dataset, const DegradeParams& params,
                             int jobs = 1, DegradeStats* stats = nullptr);

struct CorrectionConfig {
    int clip_len = 0;         // frames per processing window; 0 = whole video
    double confidence = 0.65; // accept when max(p, 1-p) strictly exceeds this
    int region_dilation = 3;  // grow the flagged region before prediction
    int jobs = 1;
};

struct CorrectionStats {
    std::int64_t region_pixels = 0;  // candidates offered to the refiner
    std::int64_t changed_pixels = 0; // pixels whose value flipped
    std::int64_t total_pixels = 0;   // processed frames times frame size

    double changed_fraction() const {
        return total_pixels == 0
                   ? 0.0
                   : static_cast<double>(changed_pixels) / static_cast<double>(total_pixels);
    }
};

/// Overwrite candidate pixels with the refiner's decision wherever its
/// confidence strictly exceeds the threshold; everything else keeps the
/// coarse value.
struct CorrectionOutcome {
    std::vector<BinaryMask> frames;
    std::int64_t changed = 0;
};
CorrectionOutcome apply_corrections(const std::vector<BinaryMask>& coarse_clip,
                                    std::span<const FineCoord> coords,
                                    std::span<const double> probs, double confidence);

/// One pass over the dataset: per tracklet, per clip window, detect
/// incoherent regions, dilate them, query the refiner, apply confident
/// corrections. The refiner must be safe to call from several threads.
VideoDataset correction_pass(const VideoDataset& coarse, Refiner& refiner,
                             const CorrectionConfig& config, CorrectionStats* stats = nullptr);

struct LoopConfig {
    int max_iters = 4;
    double epsilon = 0.001; // stop when the boundary AP gain falls below this
    CorrectionConfig correction;
    MetricConfig metric;
};

struct LoopIteration {
    int iter = 0; // 0 is the uncorrected starting point
    double ap_boundary = 0.0;
    double ap_mask = 0.0;
    /// Same metrics against the refiner's own reference ground truth, when
    /// it exposes one.
    std::optional<double> reference_ap_boundary;
    double changed_fraction = 0.0;
    std::int64_t changed_pixels = 0;
};

struct LoopHistory {
    std::vector<LoopIteration> iterations;
    std::string stop_reason; // "saturated" or "max_iters"
};

using IterationSink = std::function<void(int iter, const VideoDataset& corrected)>;

/// Repeated correction passes over an evolving working copy, scored against
/// gt each iteration. Stops at max_iters or when the boundary AP gain drops
/// below epsilon.
LoopHistory iterate(const VideoDataset& gt, const VideoDataset& degraded, Refiner& refiner,
                    const LoopConfig& config, const IterationSink& sink = nullptr);

nlohmann::ordered_json history_to_json(const LoopHistory& history);
std::string history_to_table(const LoopHistory& history);

struct ClipLengthConfig {
    std::vector<int> lengths = {1, 5, 10, 0}; // 0 = whole video
    CorrectionConfig correction;
    MetricConfig metric;
};

struct ClipLengthRow {
    int length = 0; // 0 = whole video
    double ap_boundary = 0.0;
    double ap_mask = 0.0;
    double changed_fraction = 0.0;
};

/// One correction pass per window length, each scored against gt. Longer
/// windows give temporal refiners more context; the rows expose the trend.
std::vector<ClipLengthRow> clip_length_study(const VideoDataset& gt, const VideoDataset& degraded,
                                             Refiner& refiner, const ClipLengthConfig& config);

nlohmann::ordered_json clip_length_to_json(std::span<const ClipLengthRow> rows);
std::string clip_length_to_table(std::span<const ClipLengthRow> rows);

/// Oracle whose per-frame noise is block-constant over runs of corr_len
/// frames and whose answer for a pixel averages co-located noisy votes from
/// every clip frame with weight 0.5^|dt|. Longer clips average out more
/// noise blocks, so its accuracy grows with window length.
class TemporalEnsembleOracleRefiner : public Refiner {
public:
    TemporalEnsembleOracleRefiner(VideoDataset gt, double flip_prob, int corr_len,
                                  std::uint64_t seed);
    std::string name() const override { return "temporal-ensemble-oracle"; }
    std::vector<double> predict(const std::vector<BinaryMask>& coarse_clip, int video_id,
                                int instance_id, int clip_start,
                                std::span<const FineCoord> coords) override;
    const VideoDataset* reference_gt() const override { return &gt_; }

private:
    VideoDataset gt_;
    double flip_prob_;
    int corr_len_;
    std::uint64_t seed_;
};

} // namespace vistk
