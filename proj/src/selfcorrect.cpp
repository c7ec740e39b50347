#include "vistk/selfcorrect.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <queue>
#include <sstream>

#include "vistk/errors.hpp"
#include "vistk/hashrand.hpp"
#include "vistk/incoherence.hpp"
#include "vistk/parallel.hpp"

namespace vistk {

namespace {

// Parameter tags for the per-(seed, video, instance, try) draw streams.
enum DrawTag : std::uint64_t {
    kTagInstanceCount = 1,
    kTagLobes = 2,
    kTagCenterRow = 3,
    kTagCenterCol = 4,
    kTagVelRow = 5,
    kTagVelCol = 6,
    kTagOmega = 7,
    kTagWobbleAmp = 8,
    kTagWobbleFreq = 9,
    kTagWobblePhase = 10,
    kTagBallAngle = 11, // + 4 * ball index
    kTagBallDist = 12,
    kTagBallRadius = 13,
    kTagMorphRadius = 101,
    kTagMorphOp = 102,
};

struct Ball {
    double off_row = 0.0;
    double off_col = 0.0;
    double radius = 0.0;
};

struct InstanceShape {
    int lobes = 1;
    double c_row = 0.0, c_col = 0.0;
    double v_row = 0.0, v_col = 0.0;
    double omega = 0.0;
    double wobble_amp = 0.0, wobble_freq = 0.0, wobble_phase = 0.0;
    std::vector<Ball> balls;
    bool fallback_disk = false;
};

double draw_unit(const SynthParams& p, int video, int instance, int attempt, std::uint64_t tag) {
    return hash_unit(hash_combine({p.seed, static_cast<std::uint64_t>(video),
                                   static_cast<std::uint64_t>(instance),
                                   static_cast<std::uint64_t>(attempt), tag}));
}

Raster rasterize_instance(const InstanceShape& shape, int width, int height, int t) {
    Raster out(width, height);
    if (shape.fallback_disk) {
        const double r2 = shape.balls[0].radius * shape.balls[0].radius;
        for (int row = 0; row < height; ++row)
            for (int col = 0; col < width; ++col) {
                const double dr = row - shape.c_row;
                const double dc = col - shape.c_col;
                if (dr * dr + dc * dc <= r2)
                    out.set(row, col, 1);
            }
        return out;
    }

    const double c_row = shape.c_row + t * shape.v_row;
    const double c_col = shape.c_col + t * shape.v_col;
    const double angle = shape.omega * t;
    const double cos_a = std::cos(angle), sin_a = std::sin(angle);
    const double scale =
        1.0 + shape.wobble_amp *
                  std::sin(2.0 * std::numbers::pi * (shape.wobble_phase + shape.wobble_freq * t));

    std::vector<double> pr(shape.balls.size()), pc(shape.balls.size()), r2(shape.balls.size());
    for (std::size_t k = 0; k < shape.balls.size(); ++k) {
        const Ball& b = shape.balls[k];
        pr[k] = c_row + b.off_row * cos_a - b.off_col * sin_a;
        pc[k] = c_col + b.off_row * sin_a + b.off_col * cos_a;
        const double r = b.radius * scale;
        r2[k] = r * r;
    }
    for (int row = 0; row < height; ++row) {
        for (int col = 0; col < width; ++col) {
            double field = 0.0;
            for (std::size_t k = 0; k < shape.balls.size(); ++k) {
                const double dr = row - pr[k];
                const double dc = col - pc[k];
                const double d2 = dr * dr + dc * dc;
                if (d2 == 0.0) {
                    field = 2.0;
                    break;
                }
                field += r2[k] / d2;
            }
            if (field >= 1.0)
                out.set(row, col, 1);
        }
    }
    return out;
}

InstanceShape sample_instance(const SynthParams& p, int video, int instance) {
    const double min_dim = static_cast<double>(std::min(p.width, p.height));
    constexpr int kMaxTries = 64;
    for (int attempt = 0; attempt < kMaxTries; ++attempt) {
        InstanceShape s;
        s.lobes = 1 + static_cast<int>(draw_unit(p, video, instance, attempt, kTagLobes) * 3.0);
        s.lobes = std::min(s.lobes, 3);
        s.c_row = (0.25 + 0.5 * draw_unit(p, video, instance, attempt, kTagCenterRow)) * p.height;
        s.c_col = (0.25 + 0.5 * draw_unit(p, video, instance, attempt, kTagCenterCol)) * p.width;
        s.v_row = (draw_unit(p, video, instance, attempt, kTagVelRow) - 0.5) * 6.0;
        s.v_col = (draw_unit(p, video, instance, attempt, kTagVelCol) - 0.5) * 6.0;
        s.omega = (draw_unit(p, video, instance, attempt, kTagOmega) - 0.5) * 0.4;
        s.wobble_amp = draw_unit(p, video, instance, attempt, kTagWobbleAmp) * 0.1;
        s.wobble_freq = 0.1 + draw_unit(p, video, instance, attempt, kTagWobbleFreq) * 0.2;
        s.wobble_phase = draw_unit(p, video, instance, attempt, kTagWobblePhase);
        for (int k = 0; k < s.lobes; ++k) {
            Ball b;
            const auto tag = [&](std::uint64_t base) {
                return base + 4ULL * static_cast<std::uint64_t>(k) * 100ULL;
            };
            const double theta =
                draw_unit(p, video, instance, attempt, tag(kTagBallAngle)) * 2.0 * std::numbers::pi;
            const double dist =
                draw_unit(p, video, instance, attempt, tag(kTagBallDist)) * 0.15 * min_dim;
            b.off_row = dist * std::sin(theta);
            b.off_col = dist * std::cos(theta);
            b.radius =
                (0.05 + 0.07 * draw_unit(p, video, instance, attempt, tag(kTagBallRadius))) *
                min_dim;
            s.balls.push_back(b);
        }

        const double lo = p.min_area * p.width * p.height;
        const double hi = p.max_area * p.width * p.height;
        bool ok = true;
        for (int t = 0; t < p.length && ok; ++t) {
            const Raster r = rasterize_instance(s, p.width, p.height, t);
            const double area = static_cast<double>(r.area());
            ok = area >= lo && area <= hi;
        }
        if (ok)
            return s;
    }

    InstanceShape s;
    s.fallback_disk = true;
    s.lobes = 1;
    s.c_row = p.height / 2.0;
    s.c_col = p.width / 2.0;
    const double mid = 0.5 * (p.min_area + p.max_area) * p.width * p.height;
    double radius = std::sqrt(mid / std::numbers::pi);
    radius = std::min(radius, 0.5 * std::min(p.width, p.height) - 2.0);
    s.balls.push_back(Ball{0.0, 0.0, radius});
    return s;
}

// Clockwise 8-neighborhood starting straight up.
constexpr int kMooreDr[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kMooreDc[8] = {0, 1, 1, 1, 0, -1, -1, -1};

/// Moore boundary trace of the component containing `start`, clockwise,
/// starting from its topmost-leftmost pixel with the backtrack to its left.
std::vector<std::array<int, 2>> moore_trace(const Raster& mask, int start_row, int start_col) {
    auto is_set = [&mask](int r, int c) {
        return mask.in_bounds(r, c) && mask.at(r, c) != 0;
    };
    std::vector<std::array<int, 2>> trace{{start_row, start_col}};

    int cur_r = start_row, cur_c = start_col;
    int back_dir = 6; // backtrack to the left of the start pixel
    // The walk is a deterministic function of (pixel, backtrack), so the
    // first repeated state closes the boundary cycle exactly. This also
    // covers thin components whose walk never re-enters the start from the
    // initial backtrack direction.
    std::vector<std::uint8_t> seen(mask.data.size(), 0);
    auto state = [&mask, &seen](int r, int c) -> std::uint8_t& {
        return seen[static_cast<std::size_t>(r) * mask.width + c];
    };
    state(cur_r, cur_c) |= static_cast<std::uint8_t>(1u << back_dir);
    const std::uint64_t guard =
        4ULL * static_cast<std::uint64_t>(mask.width) * static_cast<std::uint64_t>(mask.height) + 16;
    for (std::uint64_t step = 0; step < guard; ++step) {
        int found = -1;
        for (int i = 1; i <= 8; ++i) {
            const int dir = (back_dir + i) % 8;
            if (is_set(cur_r + kMooreDr[dir], cur_c + kMooreDc[dir])) {
                found = dir;
                break;
            }
        }
        if (found < 0)
            return trace; // isolated pixel
        const int next_r = cur_r + kMooreDr[found];
        const int next_c = cur_c + kMooreDc[found];
        // Backtrack for the next step points from the new pixel to the
        // neighbor probed just before the hit.
        const int before = (found + 7) % 8;
        const int new_back_r = cur_r + kMooreDr[before];
        const int new_back_c = cur_c + kMooreDc[before];
        int nb = 0;
        for (int dir = 0; dir < 8; ++dir) {
            if (next_r + kMooreDr[dir] == new_back_r && next_c + kMooreDc[dir] == new_back_c) {
                nb = dir;
                break;
            }
        }
        if (state(next_r, next_c) & (1u << nb))
            return trace;
        state(next_r, next_c) |= static_cast<std::uint8_t>(1u << nb);
        trace.push_back({next_r, next_c});
        cur_r = next_r;
        cur_c = next_c;
        back_dir = nb;
    }
    return trace;
}

void draw_line(Raster& out, int r0, int c0, int r1, int c1) {
    const int dr = std::abs(r1 - r0), dc = std::abs(c1 - c0);
    const int sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
    int err = (dc > dr ? dc : -dr) / 2;
    for (;;) {
        if (out.in_bounds(r0, c0))
            out.set(r0, c0, 1);
        if (r0 == r1 && c0 == c1)
            return;
        const int e = err;
        if (e > -dc) {
            err -= dr;
            c0 += sc;
        }
        if (e < dr) {
            err += dc;
            r0 += sr;
        }
    }
}

void fill_polygon(Raster& out, const std::vector<std::array<int, 2>>& poly) {
    const std::size_t m = poly.size();
    int row_min = poly[0][0], row_max = poly[0][0];
    for (const auto& v : poly) {
        row_min = std::min(row_min, v[0]);
        row_max = std::max(row_max, v[0]);
    }
    row_min = std::max(row_min, 0);
    row_max = std::min(row_max, out.height - 1);

    std::vector<double> xs;
    for (int row = row_min; row <= row_max; ++row) {
        xs.clear();
        for (std::size_t i = 0; i < m; ++i) {
            const auto& a = poly[i];
            const auto& b = poly[(i + 1) % m];
            if (a[0] == b[0])
                continue;
            const int ymin = std::min(a[0], b[0]);
            const int ymax = std::max(a[0], b[0]);
            if (row < ymin || row >= ymax)
                continue; // half-open rule keeps vertex crossings single
            const double t = static_cast<double>(row - a[0]) / static_cast<double>(b[0] - a[0]);
            xs.push_back(a[1] + t * (b[1] - a[1]));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
            const int lo = std::max(0, static_cast<int>(std::ceil(xs[i] - 1e-9)));
            const int hi = std::min(out.width - 1, static_cast<int>(std::floor(xs[i + 1] + 1e-9)));
            for (int col = lo; col <= hi; ++col)
                out.set(row, col, 1);
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        const auto& a = poly[i];
        const auto& b = poly[(i + 1) % m];
        draw_line(out, a[0], a[1], b[0], b[1]);
    }
}

/// Connected components under 8-adjacency; returns each component's
/// topmost-leftmost pixel in scan order.
std::vector<std::array<int, 2>> component_starts(const Raster& mask) {
    std::vector<char> seen(mask.data.size(), 0);
    std::vector<std::array<int, 2>> starts;
    std::queue<std::array<int, 2>> frontier;
    for (int r = 0; r < mask.height; ++r) {
        for (int c = 0; c < mask.width; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * mask.width + c;
            if (!mask.at(r, c) || seen[idx])
                continue;
            starts.push_back({r, c});
            seen[idx] = 1;
            frontier.push({r, c});
            while (!frontier.empty()) {
                const auto [cr, cc] = frontier.front();
                frontier.pop();
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int nr = cr + dr, nc = cc + dc;
                        if (!mask.in_bounds(nr, nc) || !mask.at(nr, nc))
                            continue;
                        const std::size_t nidx = static_cast<std::size_t>(nr) * mask.width + nc;
                        if (!seen[nidx]) {
                            seen[nidx] = 1;
                            frontier.push({nr, nc});
                        }
                    }
                }
            }
        }
    }
    return starts;
}

} // namespace

VideoDataset synthesize_dataset(const SynthParams& params) {
    if (params.videos <= 0 || params.length <= 0 || params.width <= 0 || params.height <= 0)
        throw EmptyInput("synthetic dataset needs positive counts and dimensions");
    if (params.min_instances < 1 || params.max_instances < params.min_instances)
        throw Error("instance bounds must satisfy 1 <= min <= max");

    VideoDataset ds;
    ds.categories = {{1, "1-lobe"}, {2, "2-lobe"}, {3, "3-lobe"}};
    int next_id = 1;
    for (int v = 1; v <= params.videos; ++v) {
        VideoMeta meta;
        meta.id = v;
        meta.width = params.width;
        meta.height = params.height;
        meta.length = params.length;
        ds.videos.push_back(meta);

        const int span = params.max_instances - params.min_instances + 1;
        const int count =
            params.min_instances +
            std::min(span - 1,
                     static_cast<int>(draw_unit(params, v, 0, 0, kTagInstanceCount) * span));
        for (int inst = 0; inst < count; ++inst) {
            const InstanceShape shape = sample_instance(params, v, inst + 1);
            Tracklet t;
            t.id = next_id++;
            t.video_id = v;
            t.category_id = shape.lobes;
            t.frames.resize(static_cast<std::size_t>(params.length));
            for (int f = 0; f < params.length; ++f)
                t.frames[static_cast<std::size_t>(f)] = BinaryMask::from_raster(
                    rasterize_instance(shape, params.width, params.height, f));
            ds.annotations.push_back(std::move(t));
        }
    }
    return ds;
}

BinaryMask degrade_mask(const BinaryMask& mask, const DegradeParams& params, int video_id,
                        int instance_id, int frame_t, bool* degenerate) {
    if (degenerate != nullptr)
        *degenerate = false;
    if (params.halo_only)
        return morph(mask, MorphOp::dilate, params.halo_radius);
    if (params.stride <= 1)
        return mask;

    const Raster src = mask.to_raster();
    std::vector<std::vector<std::array<int, 2>>> polygons;
    for (const auto& start : component_starts(src)) {
        const auto trace = moore_trace(src, start[0], start[1]);
        std::vector<std::array<int, 2>> kept;
        for (std::size_t i = 0; i < trace.size(); i += static_cast<std::size_t>(params.stride))
            kept.push_back(trace[i]);
        if (kept.size() < 3) {
            if (degenerate != nullptr)
                *degenerate = true;
            return mask;
        }
        polygons.push_back(std::move(kept));
    }

    Raster out(src.width, src.height);
    for (const auto& poly : polygons)
        fill_polygon(out, poly);

    const auto draw = [&](std::uint64_t tag) {
        return hash_unit(hash_combine({params.seed, static_cast<std::uint64_t>(video_id),
                                       static_cast<std::uint64_t>(instance_id),
                                       static_cast<std::uint64_t>(frame_t), tag}));
    };
    const int radius = std::min(
        params.max_morph_radius,
        static_cast<int>(draw(kTagMorphRadius) * (params.max_morph_radius + 1)));
    if (radius > 0) {
        const MorphOp op = draw(kTagMorphOp) < params.dilate_prob ? MorphOp::dilate : MorphOp::erode;
        out = morph_raster(out, op, radius);
    }
    return BinaryMask::from_raster(out);
}

VideoDataset degrade_dataset(const VideoDataset& dataset, const DegradeParams& params, int jobs,
                             DegradeStats* stats) {
    VideoDataset out = dataset;
    std::vector<DegradeStats> local(out.annotations.size());
    parallel_for(out.annotations.size(), jobs, [&](std::size_t i) {
        Tracklet& t = out.annotations[i];
        for (std::size_t f = 0; f < t.frames.size(); ++f) {
            if (!t.frames[f])
                continue;
            bool degenerate = false;
            t.frames[f] = degrade_mask(*t.frames[f], params, t.video_id, t.id,
                                       static_cast<int>(f), &degenerate);
            ++local[i].frames;
            if (degenerate)
                ++local[i].degenerate_frames;
        }
    });
    if (stats != nullptr) {
        for (const auto& s : local) {
            stats->frames += s.frames;
            stats->degenerate_frames += s.degenerate_frames;
        }
    }
    return out;
}

CorrectionOutcome apply_corrections(const std::vector<BinaryMask>& coarse_clip,
                                    std::span<const FineCoord> coords,
                                    std::span<const double> probs, double confidence) {
    if (coords.size() != probs.size())
        throw Error("coordinate and probability counts differ");
    std::vector<Raster> rasters;
    rasters.reserve(coarse_clip.size());
    for (const auto& m : coarse_clip)
        rasters.push_back(m.to_raster());

    CorrectionOutcome res;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const FineCoord& fc = coords[i];
        if (fc.t < 0 || fc.t >= static_cast<int>(rasters.size()) ||
            !rasters[static_cast<std::size_t>(fc.t)].in_bounds(fc.row, fc.col))
            throw CoordOutOfBounds("correction target outside the clip");
        const double p = probs[i];
        const double conf = std::max(p, 1.0 - p);
        if (conf <= confidence)
            continue;
        const std::uint8_t value = p > 0.5 ? 1 : 0;
        Raster& r = rasters[static_cast<std::size_t>(fc.t)];
        if (r.at(fc.row, fc.col) != value) {
            r.set(fc.row, fc.col, value);
            ++res.changed;
        }
    }
    for (const Raster& r : rasters)
        res.frames.push_back(BinaryMask::from_raster(r));
    return res;
}

VideoDataset correction_pass(const VideoDataset& coarse, Refiner& refiner,
                             const CorrectionConfig& config, CorrectionStats* stats) {
    VideoDataset out = coarse;
    std::vector<CorrectionStats> local(out.annotations.size());
    parallel_for(out.annotations.size(), config.jobs, [&](std::size_t idx) {
        Tracklet& t = out.annotations[idx];
        const VideoMeta* video = coarse.find_video(t.video_id);
        if (video == nullptr)
            throw DanglingReference("tracklet " + std::to_string(t.id) +
                                    " references unknown video " + std::to_string(t.video_id));
        const int T = video->length;
        if (static_cast<int>(t.frames.size()) < T)
            t.frames.resize(static_cast<std::size_t>(T));
        const int window = config.clip_len <= 0 ? T : config.clip_len;

        for (int start = 0; start < T; start += window) {
            const int len = std::min(window, T - start);
            std::vector<BinaryMask> clip;
            clip.reserve(static_cast<std::size_t>(len));
            for (int f = 0; f < len; ++f) {
                const auto& slot = t.frames[static_cast<std::size_t>(start + f)];
                clip.push_back(slot ? *slot : BinaryMask(video->width, video->height));
            }

            const IncoherenceQuadtree qt = detect_incoherence(clip);
            std::vector<FineCoord> coords;
            for (int f = 0; f < len; ++f) {
                BinaryMask region = frame_region(qt, f);
                if (config.region_dilation > 0)
                    region = morph(region, MorphOp::dilate, config.region_dilation);
                const Raster r = region.to_raster();
                for (int row = 0; row < r.height; ++row)
                    for (int col = 0; col < r.width; ++col)
                        if (r.at(row, col))
                            coords.push_back(FineCoord{f, row, col});
            }
            local[idx].region_pixels += static_cast<std::int64_t>(coords.size());
            if (coords.empty())
                continue;

            const std::vector<double> probs =
                refiner.predict(clip, t.video_id, t.id, start, coords);
            if (probs.size() != coords.size())
                throw Error("refiner answered " + std::to_string(probs.size()) +
                            " probabilities for " + std::to_string(coords.size()) + " pixels");
            CorrectionOutcome outcome =
                apply_corrections(clip, coords, probs, config.confidence);
            local[idx].changed_pixels += outcome.changed;
            for (int f = 0; f < len; ++f) {
                const bool was_present = t.frames[static_cast<std::size_t>(start + f)].has_value();
                BinaryMask& result = outcome.frames[static_cast<std::size_t>(f)];
                if (was_present || !result.none_set())
                    t.frames[static_cast<std::size_t>(start + f)] = std::move(result);
            }
        }
        local[idx].total_pixels += static_cast<std::int64_t>(T) * video->width * video->height;
    });
    if (stats != nullptr) {
        for (const auto& s : local) {
            stats->region_pixels += s.region_pixels;
            stats->changed_pixels += s.changed_pixels;
            stats->total_pixels += s.total_pixels;
        }
    }
    return out;
}

LoopHistory iterate(const VideoDataset& gt, const VideoDataset& degraded, Refiner& refiner,
                    const LoopConfig& config, const IterationSink& sink) {
    LoopHistory history;
    VideoDataset current = degraded;

    const auto record = [&](int iter, const CorrectionStats* cs) {
        LoopIteration it;
        it.iter = iter;
        const EvalReport r = evaluate(gt, current, config.metric);
        it.ap_boundary = r.boundary.ap;
        it.ap_mask = r.mask.ap;
        if (const VideoDataset* ref = refiner.reference_gt(); ref != nullptr) {
            try {
                it.reference_ap_boundary = evaluate(*ref, current, config.metric).boundary.ap;
            } catch (const DanglingReference&) {
                // reference does not cover these videos; leave unset
            }
        }
        if (cs != nullptr) {
            it.changed_fraction = cs->changed_fraction();
            it.changed_pixels = cs->changed_pixels;
        }
        history.iterations.push_back(it);
    };

    record(0, nullptr);
    history.stop_reason = "max_iters";
    for (int iter = 1; iter <= config.max_iters; ++iter) {
        CorrectionStats cs;
        current = correction_pass(current, refiner, config.correction, &cs);
        record(iter, &cs);
        if (sink)
            sink(iter, current);
        const double gain = history.iterations[static_cast<std::size_t>(iter)].ap_boundary -
                            history.iterations[static_cast<std::size_t>(iter - 1)].ap_boundary;
        if (gain < config.epsilon) {
            history.stop_reason = "saturated";
            break;
        }
    }
    return history;
}

nlohmann::ordered_json history_to_json(const LoopHistory& history) {
    nlohmann::ordered_json j;
    j["stop_reason"] = history.stop_reason;
    j["iterations"] = nlohmann::ordered_json::array();
    for (const auto& it : history.iterations) {
        nlohmann::ordered_json ji;
        ji["iter"] = it.iter;
        ji["ap_boundary"] = it.ap_boundary;
        ji["ap_mask"] = it.ap_mask;
        if (it.reference_ap_boundary)
            ji["reference_ap_boundary"] = *it.reference_ap_boundary;
        else
            ji["reference_ap_boundary"] = nullptr;
        ji["changed_fraction"] = it.changed_fraction;
        ji["changed_pixels"] = it.changed_pixels;
        j["iterations"].push_back(std::move(ji));
    }
    return j;
}

std::string history_to_table(const LoopHistory& history) {
    std::ostringstream os;
    os << std::left << std::setw(6) << "iter" << std::right << std::setw(9) << "AP^B"
       << std::setw(9) << "AP^M" << std::setw(12) << "ref AP^B" << std::setw(12) << "changed"
       << "\n";
    for (const auto& it : history.iterations) {
        os << std::left << std::setw(6) << it.iter << std::right << std::setw(9) << std::fixed
           << std::setprecision(1) << it.ap_boundary * 100.0 << std::setw(9)
           << it.ap_mask * 100.0;
        if (it.reference_ap_boundary)
            os << std::setw(12) << *it.reference_ap_boundary * 100.0;
        else
            os << std::setw(12) << "-";
        os << std::setw(12) << it.changed_pixels << "\n";
    }
    os << "stop: " << history.stop_reason << "\n";
    return os.str();
}

std::vector<ClipLengthRow> clip_length_study(const VideoDataset& gt, const VideoDataset& degraded,
                                             Refiner& refiner, const ClipLengthConfig& config) {
    std::vector<ClipLengthRow> rows;
    for (int length : config.lengths) {
        CorrectionConfig cc = config.correction;
        cc.clip_len = length;
        CorrectionStats cs;
        const VideoDataset corrected = correction_pass(degraded, refiner, cc, &cs);
        const EvalReport r = evaluate(gt, corrected, config.metric);
        ClipLengthRow row;
        row.length = length;
        row.ap_boundary = r.boundary.ap;
        row.ap_mask = r.mask.ap;
        row.changed_fraction = cs.changed_fraction();
        rows.push_back(row);
    }
    return rows;
}

nlohmann::ordered_json clip_length_to_json(std::span<const ClipLengthRow> rows) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
        nlohmann::ordered_json jr;
        jr["clip_len"] = row.length == 0 ? nlohmann::ordered_json("all")
                                         : nlohmann::ordered_json(row.length);
        jr["ap_boundary"] = row.ap_boundary;
        jr["ap_mask"] = row.ap_mask;
        jr["changed_fraction"] = row.changed_fraction;
        j.push_back(std::move(jr));
    }
    return j;
}

std::string clip_length_to_table(std::span<const ClipLengthRow> rows) {
    std::ostringstream os;
    os << std::left << std::setw(10) << "clip_len" << std::right << std::setw(9) << "AP^B"
       << std::setw(9) << "AP^M" << std::setw(12) << "changed%"
       << "\n";
    for (const auto& row : rows) {
        if (row.length == 0)
            os << std::left << std::setw(10) << "all";
        else
            os << std::left << std::setw(10) << row.length;
        os << std::right << std::fixed << std::setprecision(1) << std::setw(9)
           << row.ap_boundary * 100.0 << std::setw(9) << row.ap_mask * 100.0
           << std::setprecision(3) << std::setw(12) << row.changed_fraction * 100.0 << "\n";
    }
    return os.str();
}

TemporalEnsembleOracleRefiner::TemporalEnsembleOracleRefiner(VideoDataset gt, double flip_prob,
                                                             int corr_len, std::uint64_t seed)
    : gt_(std::move(gt)), flip_prob_(flip_prob), corr_len_(std::max(1, corr_len)), seed_(seed) {}

std::vector<double> TemporalEnsembleOracleRefiner::predict(
    const std::vector<BinaryMask>& coarse_clip, int video_id, int instance_id, int clip_start,
    std::span<const FineCoord> coords) {
    const Tracklet* truth = nullptr;
    for (const auto& t : gt_.annotations) {
        if (t.video_id == video_id && t.id == instance_id) {
            truth = &t;
            break;
        }
    }
    if (truth == nullptr)
        throw DanglingReference("no reference tracklet " + std::to_string(instance_id) +
                                " in video " + std::to_string(video_id));

    std::map<int, Raster> decoded;
    const auto truth_at = [&](int abs_t, int row, int col) -> int {
        if (abs_t < 0 || abs_t >= static_cast<int>(truth->frames.size()) ||
            !truth->frames[static_cast<std::size_t>(abs_t)])
            return 0;
        auto it = decoded.find(abs_t);
        if (it == decoded.end())
            it = decoded
                     .emplace(abs_t, truth->frames[static_cast<std::size_t>(abs_t)]->to_raster())
                     .first;
        return it->second.in_bounds(row, col) ? it->second.at(row, col) : 0;
    };

    const int T = static_cast<int>(coarse_clip.size());
    std::vector<double> probs;
    probs.reserve(coords.size());
    for (const FineCoord& fc : coords) {
        const int v = truth_at(clip_start + fc.t, fc.row, fc.col);
        double num = 0.0, den = 0.0;
        for (int t2 = 0; t2 < T; ++t2) {
            const double w = std::pow(0.5, std::abs(fc.t - t2));
            const std::uint64_t block =
                static_cast<std::uint64_t>((clip_start + t2) / corr_len_);
            const bool flip =
                hash_unit(hash_combine({seed_, static_cast<std::uint64_t>(video_id),
                                        static_cast<std::uint64_t>(instance_id), block,
                                        static_cast<std::uint64_t>(fc.row),
                                        static_cast<std::uint64_t>(fc.col)})) < flip_prob_;
            const int vote = flip ? 1 - v : v;
            num += w * vote;
            den += w;
        }
        probs.push_back(num / den);
    }
    return probs;
}

} // namespace vistk
