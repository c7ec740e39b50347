#include "vistk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "vistk/errors.hpp"
#include "vistk/parallel.hpp"

namespace vistk {

namespace {

constexpr int kRecallSamples = 101; // recall grid 0.00, 0.01, ..., 1.00

const BinaryMask* frame_or_null(const Tracklet& t, int frame_index0) {
    if (frame_index0 < 0 || frame_index0 >= static_cast<int>(t.frames.size()))
        return nullptr;
    const auto& slot = t.frames[static_cast<std::size_t>(frame_index0)];
    return slot ? &*slot : nullptr;
}

/// Greedy assignment of score-ordered detections to ground truths.
/// Returns the matched gt index per detection, -1 when unmatched. Ties in
/// IoU keep the earliest ground truth in the given order.
std::vector<int> greedy_match(const std::vector<double>& ious, int n_dt, int n_gt,
                              double threshold) {
    std::vector<int> dtm(static_cast<std::size_t>(n_dt), -1);
    std::vector<char> gt_used(static_cast<std::size_t>(n_gt), 0);
    for (int d = 0; d < n_dt; ++d) {
        double best = -1.0;
        int best_g = -1;
        for (int g = 0; g < n_gt; ++g) {
            if (gt_used[static_cast<std::size_t>(g)])
                continue;
            const double v = ious[static_cast<std::size_t>(d) * n_gt + g];
            if (v >= threshold && v > best) {
                best = v;
                best_g = g;
            }
        }
        if (best_g >= 0) {
            gt_used[static_cast<std::size_t>(best_g)] = 1;
            dtm[static_cast<std::size_t>(d)] = best_g;
        }
    }
    return dtm;
}

struct Group {
    int video_id = 0;
    int category_id = 0;
    const VideoMeta* video = nullptr;
    int boundary_d = 1;
    std::vector<const Tracklet*> gts; // id ascending
    std::vector<const Tracklet*> dts; // score descending, id ascending
    std::vector<double> iou_mask;     // dts x gts, row-major
    std::vector<double> iou_boundary;
};

void sort_gts(std::vector<const Tracklet*>& gts) {
    std::sort(gts.begin(), gts.end(),
              [](const Tracklet* a, const Tracklet* b) { return a->id < b->id; });
}

void sort_dts(std::vector<const Tracklet*>& dts) {
    std::sort(dts.begin(), dts.end(), [](const Tracklet* a, const Tracklet* b) {
        if (a->score != b->score)
            return a->score > b->score;
        return a->id < b->id;
    });
}

/// Build one group per (video, category) pair that has any tracklet,
/// ordered by video id then category id. IoU matrices are left empty.
std::vector<Group> build_groups(const VideoDataset& gt, const VideoDataset& pred,
                                const MetricConfig& config) {
    std::vector<const VideoMeta*> videos;
    for (const auto& v : gt.videos)
        videos.push_back(&v);
    std::sort(videos.begin(), videos.end(),
              [](const VideoMeta* a, const VideoMeta* b) { return a->id < b->id; });

    for (const auto& t : pred.annotations)
        if (gt.find_video(t.video_id) == nullptr)
            throw DanglingReference("prediction " + std::to_string(t.id) +
                                    " references video " + std::to_string(t.video_id) +
                                    " absent from the ground truth");

    std::vector<Group> groups;
    for (const VideoMeta* video : videos) {
        std::map<int, Group> by_cat;
        for (const auto& t : gt.annotations)
            if (t.video_id == video->id)
                by_cat[t.category_id].gts.push_back(&t);
        for (const auto& t : pred.annotations)
            if (t.video_id == video->id)
                by_cat[t.category_id].dts.push_back(&t);
        for (auto& [cat, group] : by_cat) {
            group.video_id = video->id;
            group.category_id = cat;
            group.video = video;
            group.boundary_d = config.boundary_d > 0
                                   ? config.boundary_d
                                   : resolve_boundary_d(video->width, video->height);
            sort_gts(group.gts);
            sort_dts(group.dts);
            groups.push_back(std::move(group));
        }
    }
    return groups;
}

/// Fill both IoU matrices of every group. Banded tubes are computed once
/// per tracklet per video, shared across that video's categories.
void fill_iou_matrices(std::vector<Group>& groups, const MetricConfig& config) {
    std::vector<std::vector<Group*>> per_video;
    for (auto& g : groups) {
        if (per_video.empty() || per_video.back().front()->video_id != g.video_id)
            per_video.emplace_back();
        per_video.back().push_back(&g);
    }

    parallel_for(per_video.size(), config.jobs, [&](std::size_t vi) {
        std::map<const Tracklet*, Tracklet> banded;
        for (Group* g : per_video[vi]) {
            for (const Tracklet* t : g->gts)
                if (!banded.count(t))
                    banded.emplace(t, banded_tracklet(*t, g->boundary_d, config.band_mode));
            for (const Tracklet* t : g->dts)
                if (!banded.count(t))
                    banded.emplace(t, banded_tracklet(*t, g->boundary_d, config.band_mode));
        }
        for (Group* g : per_video[vi]) {
            const std::size_t nd = g->dts.size(), ng = g->gts.size();
            g->iou_mask.assign(nd * ng, 0.0);
            g->iou_boundary.assign(nd * ng, 0.0);
            for (std::size_t d = 0; d < nd; ++d) {
                for (std::size_t gi = 0; gi < ng; ++gi) {
                    g->iou_mask[d * ng + gi] =
                        tube_mask_overlap(*g->dts[d], *g->gts[gi], *g->video).iou();
                    g->iou_boundary[d * ng + gi] =
                        tube_mask_overlap(banded.at(g->dts[d]), banded.at(g->gts[gi]), *g->video)
                            .iou();
                }
            }
        }
    });
}

struct Detection {
    double score = 0.0;
    int video_id = 0;
    int id = 0;
    int video_rank = 0;              // position in the per-video score order
    std::vector<char> matched;       // per threshold
};

/// PR accumulation for one category and one family.
CategoryScore score_category(int category_id, const std::vector<const Group*>& groups,
                             bool boundary_family, const std::vector<double>& thresholds,
                             const std::vector<int>& max_dets) {
    CategoryScore out;
    out.category_id = category_id;

    int total_gt = 0;
    for (const Group* g : groups)
        total_gt += static_cast<int>(g->gts.size());
    out.gt_count = total_gt;
    out.ar_at.assign(max_dets.size(), 0.0);
    if (total_gt == 0)
        return out;

    std::vector<Detection> dets;
    for (const Group* g : groups) {
        const auto& ious = boundary_family ? g->iou_boundary : g->iou_mask;
        const int nd = static_cast<int>(g->dts.size());
        const int ng = static_cast<int>(g->gts.size());
        std::vector<std::vector<int>> dtm_per_thr;
        dtm_per_thr.reserve(thresholds.size());
        for (double thr : thresholds)
            dtm_per_thr.push_back(greedy_match(ious, nd, ng, thr));
        for (int d = 0; d < nd; ++d) {
            Detection det;
            det.score = g->dts[static_cast<std::size_t>(d)]->score;
            det.video_id = g->video_id;
            det.id = g->dts[static_cast<std::size_t>(d)]->id;
            det.video_rank = d;
            det.matched.resize(thresholds.size());
            for (std::size_t ti = 0; ti < thresholds.size(); ++ti)
                det.matched[ti] = dtm_per_thr[ti][static_cast<std::size_t>(d)] >= 0;
            dets.push_back(std::move(det));
        }
    }
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score)
            return a.score > b.score;
        if (a.video_id != b.video_id)
            return a.video_id < b.video_id;
        return a.id < b.id;
    });

    out.ap_per_threshold.assign(thresholds.size(), 0.0);
    std::vector<double>& ap_per_thr = out.ap_per_threshold;
    std::vector<double> recall_sum(max_dets.size(), 0.0);
    for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
        std::vector<double> precision(dets.size()), recall(dets.size());
        int tp = 0;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            tp += dets[i].matched[ti] ? 1 : 0;
            precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
            recall[i] = static_cast<double>(tp) / static_cast<double>(total_gt);
        }
        for (std::size_t i = dets.size(); i > 1; --i)
            precision[i - 2] = std::max(precision[i - 2], precision[i - 1]);

        double q_sum = 0.0;
        for (int r = 0; r < kRecallSamples; ++r) {
            const double thr_r = static_cast<double>(r) / (kRecallSamples - 1);
            const auto it = std::lower_bound(recall.begin(), recall.end(), thr_r);
            if (it != recall.end())
                q_sum += precision[static_cast<std::size_t>(it - recall.begin())];
        }
        ap_per_thr[ti] = q_sum / kRecallSamples;

        for (std::size_t ki = 0; ki < max_dets.size(); ++ki) {
            int matched = 0;
            for (const Detection& det : dets)
                if (det.video_rank < max_dets[ki] && det.matched[ti])
                    ++matched;
            recall_sum[ki] += static_cast<double>(matched) / static_cast<double>(total_gt);
        }
    }

    double ap_sum = 0.0;
    for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
        ap_sum += ap_per_thr[ti];
        if (std::abs(thresholds[ti] - 0.50) < 1e-9)
            out.ap50 = ap_per_thr[ti];
        if (std::abs(thresholds[ti] - 0.75) < 1e-9)
            out.ap75 = ap_per_thr[ti];
    }
    out.ap = ap_sum / static_cast<double>(thresholds.size());
    for (std::size_t ki = 0; ki < max_dets.size(); ++ki)
        out.ar_at[ki] = recall_sum[ki] / static_cast<double>(thresholds.size());
    return out;
}

FamilyReport score_family(const std::vector<Group>& groups, bool boundary_family,
                          const std::vector<double>& thresholds,
                          const std::vector<int>& max_dets) {
    std::map<int, std::vector<const Group*>> by_cat;
    for (const auto& g : groups)
        by_cat[g.category_id].push_back(&g);

    FamilyReport family;
    family.ap_per_threshold.assign(thresholds.size(), 0.0);
    family.ar_at.assign(max_dets.size(), 0.0);

    for (const auto& [cat, cat_groups] : by_cat) {
        CategoryScore score = score_category(cat, cat_groups, boundary_family, thresholds, max_dets);
        if (score.gt_count == 0)
            continue;
        family.per_category.push_back(std::move(score));
    }

    const std::size_t n = family.per_category.size();
    if (n == 0)
        return family;
    for (const auto& cat : family.per_category) {
        family.ap += cat.ap;
        family.ap50 += cat.ap50;
        family.ap75 += cat.ap75;
        for (std::size_t ki = 0; ki < max_dets.size(); ++ki)
            family.ar_at[ki] += cat.ar_at[ki];
        for (std::size_t ti = 0; ti < thresholds.size(); ++ti)
            family.ap_per_threshold[ti] += cat.ap_per_threshold[ti];
    }
    family.ap /= static_cast<double>(n);
    family.ap50 /= static_cast<double>(n);
    family.ap75 /= static_cast<double>(n);
    for (auto& v : family.ap_per_threshold)
        v /= static_cast<double>(n);
    for (auto& v : family.ar_at)
        v /= static_cast<double>(n);
    return family;
}

} // namespace

std::vector<double> MetricConfig::resolved_thresholds() const {
    if (!thresholds.empty()) {
        for (double t : thresholds)
            if (t <= 0.0 || t > 1.0)
                throw Error("IoU thresholds must lie in (0, 1]");
        return thresholds;
    }
    std::vector<double> out;
    for (int i = 0; i < 10; ++i)
        out.push_back(static_cast<double>(50 + 5 * i) / 100.0);
    return out;
}

int resolve_boundary_d(int width, int height) {
    if (width <= 0 || height <= 0)
        throw Error("boundary width needs positive frame dimensions");
    const double diagonal = std::sqrt(static_cast<double>(width) * width +
                                      static_cast<double>(height) * height);
    return std::max(1, static_cast<int>(std::ceil(0.02 * diagonal)));
}

TubeOverlap tube_mask_overlap(const Tracklet& a, const Tracklet& b, const VideoMeta& video) {
    TubeOverlap acc;
    for (int f = 0; f < video.length; ++f) {
        const BinaryMask* ma = frame_or_null(a, f);
        const BinaryMask* mb = frame_or_null(b, f);
        if (ma == nullptr && mb == nullptr)
            continue;
        if (ma == nullptr) {
            acc.uni += mb->area();
            continue;
        }
        if (mb == nullptr) {
            acc.uni += ma->area();
            continue;
        }
        if (ma->width() != video.width || ma->height() != video.height ||
            mb->width() != video.width || mb->height() != video.height)
            throw ResolutionMismatch("tracklet frame does not match video " +
                                     std::to_string(video.id));
        const MaskOverlap o = mask_overlap(*ma, *mb);
        acc.inter += o.inter;
        acc.uni += o.uni;
    }
    return acc;
}

double tube_mask_iou(const Tracklet& a, const Tracklet& b, const VideoMeta& video) {
    return tube_mask_overlap(a, b, video).iou();
}

Tracklet banded_tracklet(const Tracklet& t, int d, BandMode mode) {
    Tracklet out;
    out.id = t.id;
    out.video_id = t.video_id;
    out.category_id = t.category_id;
    out.score = t.score;
    out.frames.resize(t.frames.size());
    for (std::size_t f = 0; f < t.frames.size(); ++f) {
        if (!t.frames[f])
            continue;
        const BinaryMask& m = *t.frames[f];
        Raster keep = boundary_band(m, d, mode).band.to_raster();
        Raster src = m.to_raster();
        for (int i = 0; i < keep.width * keep.height; ++i)
            keep.data[static_cast<std::size_t>(i)] =
                keep.data[static_cast<std::size_t>(i)] && src.data[static_cast<std::size_t>(i)];
        out.frames[f] = BinaryMask::from_raster(keep);
    }
    return out;
}

TubeOverlap tube_boundary_overlap(const Tracklet& a, const Tracklet& b, const VideoMeta& video,
                                  int d, BandMode mode) {
    const int resolved = d > 0 ? d : resolve_boundary_d(video.width, video.height);
    return tube_mask_overlap(banded_tracklet(a, resolved, mode),
                             banded_tracklet(b, resolved, mode), video);
}

double tube_boundary_iou(const Tracklet& a, const Tracklet& b, const VideoMeta& video, int d,
                         BandMode mode) {
    return tube_boundary_overlap(a, b, video, d, mode).iou();
}

std::vector<MatchRecord> match_tracklets(const VideoDataset& gt, const VideoDataset& pred,
                                         double threshold, const MetricConfig& config,
                                         bool boundary_family) {
    std::vector<Group> groups = build_groups(gt, pred, config);
    fill_iou_matrices(groups, config);

    std::vector<MatchRecord> records;
    for (const Group& g : groups) {
        const auto& ious = boundary_family ? g.iou_boundary : g.iou_mask;
        const int nd = static_cast<int>(g.dts.size());
        const int ng = static_cast<int>(g.gts.size());
        const std::vector<int> dtm = greedy_match(ious, nd, ng, threshold);
        std::vector<char> gt_taken(static_cast<std::size_t>(ng), 0);
        for (int d = 0; d < nd; ++d) {
            MatchRecord rec;
            rec.video_id = g.video_id;
            rec.category_id = g.category_id;
            rec.pred_id = g.dts[static_cast<std::size_t>(d)]->id;
            rec.score = g.dts[static_cast<std::size_t>(d)]->score;
            const int gi = dtm[static_cast<std::size_t>(d)];
            if (gi >= 0) {
                rec.gt_id = g.gts[static_cast<std::size_t>(gi)]->id;
                rec.iou = ious[static_cast<std::size_t>(d) * ng + gi];
                gt_taken[static_cast<std::size_t>(gi)] = 1;
            }
            records.push_back(rec);
        }
        for (int gi = 0; gi < ng; ++gi) {
            if (gt_taken[static_cast<std::size_t>(gi)])
                continue;
            MatchRecord rec;
            rec.video_id = g.video_id;
            rec.category_id = g.category_id;
            rec.gt_id = g.gts[static_cast<std::size_t>(gi)]->id;
            records.push_back(rec);
        }
    }
    return records;
}

EvalReport evaluate(const VideoDataset& gt, const VideoDataset& pred, const MetricConfig& config) {
    EvalReport report;
    report.thresholds = config.resolved_thresholds();
    report.max_dets = config.max_dets;
    std::sort(report.max_dets.begin(), report.max_dets.end());
    report.band_mode = config.band_mode;
    report.video_count = static_cast<int>(gt.videos.size());
    report.gt_tracklets = static_cast<int>(gt.annotations.size());
    report.pred_tracklets = static_cast<int>(pred.annotations.size());

    std::vector<Group> groups = build_groups(gt, pred, config);
    for (const Group& g : groups)
        report.boundary_d_per_video.emplace(g.video_id, g.boundary_d);

    std::map<int, int> gt_per_cat;
    std::map<int, int> dt_per_cat;
    for (const Group& g : groups) {
        gt_per_cat[g.category_id] += static_cast<int>(g.gts.size());
        dt_per_cat[g.category_id] += static_cast<int>(g.dts.size());
    }
    for (const auto& [cat, n_dt] : dt_per_cat)
        if (n_dt > 0 && gt_per_cat[cat] == 0)
            report.categories_without_gt.push_back(cat);

    if (report.gt_tracklets == 0) {
        report.no_gt = true;
        report.mask.ap_per_threshold.assign(report.thresholds.size(), 0.0);
        report.mask.ar_at.assign(report.max_dets.size(), 0.0);
        report.boundary = report.mask;
        return report;
    }

    fill_iou_matrices(groups, config);
    report.mask = score_family(groups, false, report.thresholds, report.max_dets);
    report.boundary = score_family(groups, true, report.thresholds, report.max_dets);
    return report;
}

namespace {

nlohmann::ordered_json family_to_json(const FamilyReport& family, const std::vector<int>& max_dets) {
    nlohmann::ordered_json j;
    j["ap"] = family.ap;
    j["ap50"] = family.ap50;
    j["ap75"] = family.ap75;
    j["ap_per_threshold"] = family.ap_per_threshold;
    nlohmann::ordered_json ar = nlohmann::ordered_json::object();
    for (std::size_t ki = 0; ki < max_dets.size(); ++ki)
        ar[std::to_string(max_dets[ki])] = ki < family.ar_at.size() ? family.ar_at[ki] : 0.0;
    j["ar"] = std::move(ar);
    j["per_category"] = nlohmann::ordered_json::array();
    for (const auto& cat : family.per_category) {
        nlohmann::ordered_json jc;
        jc["category_id"] = cat.category_id;
        jc["gt_count"] = cat.gt_count;
        jc["ap"] = cat.ap;
        jc["ap50"] = cat.ap50;
        jc["ap75"] = cat.ap75;
        nlohmann::ordered_json car = nlohmann::ordered_json::object();
        for (std::size_t ki = 0; ki < max_dets.size(); ++ki)
            car[std::to_string(max_dets[ki])] = ki < cat.ar_at.size() ? cat.ar_at[ki] : 0.0;
        jc["ar"] = std::move(car);
        j["per_category"].push_back(std::move(jc));
    }
    return j;
}

std::string format_score(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << v * 100.0;
    return os.str();
}

} // namespace

nlohmann::ordered_json report_to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["thresholds"] = report.thresholds;
    j["max_dets"] = report.max_dets;
    j["band_mode"] = report.band_mode == BandMode::two_sided ? "two_sided" : "inner_only";
    j["videos"] = report.video_count;
    j["gt_tracklets"] = report.gt_tracklets;
    j["pred_tracklets"] = report.pred_tracklets;
    j["no_gt"] = report.no_gt;
    j["categories_without_gt"] = report.categories_without_gt;
    nlohmann::ordered_json dmap = nlohmann::ordered_json::object();
    for (const auto& [vid, d] : report.boundary_d_per_video)
        dmap[std::to_string(vid)] = d;
    j["boundary_d_per_video"] = std::move(dmap);
    j["boundary"] = family_to_json(report.boundary, report.max_dets);
    j["mask"] = family_to_json(report.mask, report.max_dets);
    return j;
}

std::string report_to_table(const EvalReport& report) {
    const double b_ar1 = report.boundary.ar_at.empty() ? 0.0 : report.boundary.ar_at.front();
    const double m_ar1 = report.mask.ar_at.empty() ? 0.0 : report.mask.ar_at.front();

    std::ostringstream os;
    os << std::left << std::setw(14) << "category";
    for (const char* col : {"AP^B", "AP^B_75", "AR^B_1", "AP^M", "AP^M_75", "AR^M_1"})
        os << std::right << std::setw(9) << col;
    os << "\n";

    auto row = [&os](const std::string& name, double bap, double bap75, double bar1, double map,
                     double map75, double mar1) {
        os << std::left << std::setw(14) << name;
        for (double v : {bap, bap75, bar1, map, map75, mar1})
            os << std::right << std::setw(9) << format_score(v);
        os << "\n";
    };
    row("all", report.boundary.ap, report.boundary.ap75, b_ar1, report.mask.ap, report.mask.ap75,
        m_ar1);
    for (std::size_t i = 0; i < report.boundary.per_category.size(); ++i) {
        const auto& b = report.boundary.per_category[i];
        const CategoryScore* m = nullptr;
        for (const auto& cat : report.mask.per_category)
            if (cat.category_id == b.category_id)
                m = &cat;
        row(std::to_string(b.category_id), b.ap, b.ap75, b.ar_at.empty() ? 0.0 : b.ar_at.front(),
            m ? m->ap : 0.0, m ? m->ap75 : 0.0, (m && !m->ar_at.empty()) ? m->ar_at.front() : 0.0);
    }
    if (report.no_gt)
        os << "no ground truth present; average precision pinned to 0\n";
    return os.str();
}

} // namespace vistk
