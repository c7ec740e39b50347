#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vistk/anno_io.hpp"
#include "vistk/mask.hpp"

namespace vistk {

struct MetricConfig {
    /// Boundary band half-width in pixels. 0 resolves per video as
    /// ceil(0.02 * diagonal), clamped to at least 1.
    int boundary_d = 0;
    BandMode band_mode = BandMode::two_sided;
    /// IoU thresholds for the PR sweep. Empty selects 0.50:0.05:0.95.
    std::vector<double> thresholds;
    /// Detection budgets for average recall. Must be ascending.
    std::vector<int> max_dets = {1, 10};
    int jobs = 1;

    std::vector<double> resolved_thresholds() const;
};

int resolve_boundary_d(int width, int height);

struct TubeOverlap {
    std::int64_t inter = 0;
    std::int64_t uni = 0;
    double iou() const { return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni); }
};

/// Per-frame mask intersection and union summed over frames 1..T.
/// Frames outside a tracklet's populated range count as empty.
TubeOverlap tube_mask_overlap(const Tracklet& a, const Tracklet& b, const VideoMeta& video);
double tube_mask_iou(const Tracklet& a, const Tracklet& b, const VideoMeta& video);

/// Replace every frame mask by its intersection with the width-d band
/// around its own contour. Empty frames stay empty.
Tracklet banded_tracklet(const Tracklet& t, int d, BandMode mode);

/// Tube IoU of the banded tubes of a and b. d <= 0 resolves from the video
/// diagonal.
TubeOverlap tube_boundary_overlap(const Tracklet& a, const Tracklet& b, const VideoMeta& video,
                                  int d, BandMode mode);
double tube_boundary_iou(const Tracklet& a, const Tracklet& b, const VideoMeta& video, int d,
                         BandMode mode);

struct CategoryScore {
    int category_id = 0;
    int gt_count = 0;
    double ap = 0.0;
    double ap50 = 0.0;
    double ap75 = 0.0;
    std::vector<double> ap_per_threshold;
    std::vector<double> ar_at; // parallel to MetricConfig::max_dets
};

struct FamilyReport {
    double ap = 0.0;
    double ap50 = 0.0;
    double ap75 = 0.0;
    std::vector<double> ap_per_threshold;
    std::vector<double> ar_at;
    std::vector<CategoryScore> per_category;
};

struct EvalReport {
    FamilyReport mask;
    FamilyReport boundary;
    std::vector<double> thresholds;
    std::vector<int> max_dets;
    BandMode band_mode = BandMode::two_sided;
    int video_count = 0;
    int gt_tracklets = 0;
    int pred_tracklets = 0;
    bool no_gt = false; // no ground-truth tracklets anywhere; AP pinned to 0
    std::vector<int> categories_without_gt;
    std::map<int, int> boundary_d_per_video;
};

/// One matched pair or unmatched entry from the greedy assignment at a
/// single threshold, exposed for diagnostics.
struct MatchRecord {
    int video_id = 0;
    int category_id = 0;
    int pred_id = 0; // 0 when this row is an unmatched ground truth
    int gt_id = 0;   // 0 when the prediction stayed unmatched
    double iou = 0.0;
    double score = 0.0;
};

/// Greedy per-(video, category) assignment at one threshold: predictions in
/// score order (ties toward the lower id) each take the unmatched ground
/// truth with the highest IoU at or above the threshold.
std::vector<MatchRecord> match_tracklets(const VideoDataset& gt, const VideoDataset& pred,
                                         double threshold, const MetricConfig& config,
                                         bool boundary_family);

EvalReport evaluate(const VideoDataset& gt, const VideoDataset& pred, const MetricConfig& config);

nlohmann::ordered_json report_to_json(const EvalReport& report);
/// Fixed-width summary table, scores scaled by 100 with one decimal.
std::string report_to_table(const EvalReport& report);

} // namespace vistk
