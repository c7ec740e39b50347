#include "vistk/incoherence.hpp"

#include "vistk/errors.hpp"

namespace vistk {

namespace {

int padded_extent(int n) {
    return (n + kPyramidPad - 1) / kPyramidPad * kPyramidPad;
}

/// Child block of cell (row, col) one level below is non-constant.
bool block_non_constant(const Raster& child_level, int row, int col) {
    const std::uint8_t v = child_level.at(2 * row, 2 * col);
    return child_level.at(2 * row, 2 * col + 1) != v ||
           child_level.at(2 * row + 1, 2 * col) != v ||
           child_level.at(2 * row + 1, 2 * col + 1) != v;
}

} // namespace

MaskPyramid build_pyramid(const BinaryMask& mask) {
    if (!mask.valid())
        throw EmptyInput("pyramid of an uninitialized mask");
    MaskPyramid p;
    p.orig_width = mask.width();
    p.orig_height = mask.height();
    const int pw = padded_extent(mask.width());
    const int ph = padded_extent(mask.height());
    p.pad_cols = pw - mask.width();
    p.pad_rows = ph - mask.height();

    const Raster src = mask.to_raster();
    Raster fine(pw, ph);
    for (int r = 0; r < mask.height(); ++r)
        for (int c = 0; c < mask.width(); ++c)
            fine.set(r, c, src.at(r, c));
    p.levels[0] = std::move(fine);
    for (int l = 1; l < kPyramidLevels; ++l)
        p.levels[l] = resample_raster(p.levels[l - 1], ResampleDir::down, 2);
    return p;
}

IncoherenceQuadtree detect_incoherence(std::span<const BinaryMask> clip) {
    if (clip.empty())
        throw EmptyClip("incoherence detection needs at least one frame");
    const int w = clip[0].width();
    const int h = clip[0].height();
    for (const auto& frame : clip)
        if (frame.width() != w || frame.height() != h)
            throw ResolutionMismatch("clip frames disagree on size");

    std::vector<MaskPyramid> pyramids;
    pyramids.reserve(clip.size());
    for (const auto& frame : clip)
        pyramids.push_back(build_pyramid(frame));

    IncoherenceQuadtree qt;
    qt.width = w;
    qt.height = h;
    qt.padded_width = pyramids[0].levels[0].width;
    qt.padded_height = pyramids[0].levels[0].height;
    qt.frames.resize(clip.size());

    const int top = kPyramidLevels - 1;
    for (std::size_t t = 0; t < clip.size(); ++t) {
        QuadtreeFrame& qf = qt.frames[t];
        for (int l = 1; l < kPyramidLevels; ++l)
            qf.flags[l] = Raster(pyramids[t].levels[l].width, pyramids[t].levels[l].height);

        const Raster& coarse = pyramids[t].levels[top];
        const Raster* prev = t > 0 ? &pyramids[t - 1].levels[top] : nullptr;
        const Raster* next = t + 1 < clip.size() ? &pyramids[t + 1].levels[top] : nullptr;
        for (int r = 0; r < coarse.height; ++r) {
            for (int c = 0; c < coarse.width; ++c) {
                const bool spatial = block_non_constant(pyramids[t].levels[top - 1], r, c);
                const bool temporal = (prev != nullptr && prev->at(r, c) != coarse.at(r, c)) ||
                                      (next != nullptr && next->at(r, c) != coarse.at(r, c));
                if (spatial)
                    ++qf.spatial_roots;
                if (temporal)
                    ++qf.temporal_roots;
                if (spatial || temporal)
                    qf.flags[top].set(r, c, 1);
            }
        }

        for (int l = top; l >= 2; --l) {
            const Raster& parent = qf.flags[l];
            Raster& child = qf.flags[l - 1];
            for (int r = 0; r < parent.height; ++r) {
                for (int c = 0; c < parent.width; ++c) {
                    if (!parent.at(r, c))
                        continue;
                    for (int dr = 0; dr < 2; ++dr)
                        for (int dc = 0; dc < 2; ++dc) {
                            const int cr = 2 * r + dr, cc = 2 * c + dc;
                            if (block_non_constant(pyramids[t].levels[l - 2], cr, cc))
                                child.set(cr, cc, 1);
                        }
                }
            }
        }
    }
    return qt;
}

std::vector<std::array<int, 2>> expand_to_fine(const IncoherenceQuadtree& qt, int t) {
    if (t < 0 || t >= static_cast<int>(qt.frames.size()))
        throw CoordOutOfBounds("frame index " + std::to_string(t));
    const Raster& l1 = qt.frames[static_cast<std::size_t>(t)].flags[1];
    std::vector<std::array<int, 2>> out;
    for (int r = 0; r < qt.height; ++r) {
        for (int c = 0; c < qt.width; ++c) {
            if (l1.at(r / 2, c / 2))
                out.push_back({r, c});
        }
    }
    return out;
}

BinaryMask frame_region(const IncoherenceQuadtree& qt, int t) {
    if (t < 0 || t >= static_cast<int>(qt.frames.size()))
        throw CoordOutOfBounds("frame index " + std::to_string(t));
    const Raster& l1 = qt.frames[static_cast<std::size_t>(t)].flags[1];
    Raster region(qt.width, qt.height);
    for (int r = 0; r < qt.height; ++r)
        for (int c = 0; c < qt.width; ++c)
            region.set(r, c, l1.at(r / 2, c / 2));
    return BinaryMask::from_raster(region);
}

double incoherence_fraction_frame(const IncoherenceQuadtree& qt, int t) {
    const double total = static_cast<double>(qt.width) * qt.height;
    return static_cast<double>(expand_to_fine(qt, t).size()) / total;
}

double incoherence_fraction(const IncoherenceQuadtree& qt) {
    if (qt.frames.empty())
        return 0.0;
    double sum = 0.0;
    for (int t = 0; t < static_cast<int>(qt.frames.size()); ++t)
        sum += incoherence_fraction_frame(qt, t);
    return sum / static_cast<double>(qt.frames.size());
}

nlohmann::ordered_json quadtree_to_json(const IncoherenceQuadtree& qt) {
    nlohmann::ordered_json j;
    j["width"] = qt.width;
    j["height"] = qt.height;
    j["padded_width"] = qt.padded_width;
    j["padded_height"] = qt.padded_height;
    j["frames"] = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < qt.frames.size(); ++t) {
        const QuadtreeFrame& qf = qt.frames[t];
        nlohmann::ordered_json jf;
        jf["frame"] = static_cast<int>(t) + 1;
        jf["spatial_roots"] = qf.spatial_roots;
        jf["temporal_roots"] = qf.temporal_roots;
        nlohmann::ordered_json levels = nlohmann::ordered_json::object();
        for (int l = kPyramidLevels - 1; l >= 1; --l) {
            nlohmann::ordered_json cells = nlohmann::ordered_json::array();
            const Raster& flags = qf.flags[l];
            for (int r = 0; r < flags.height; ++r)
                for (int c = 0; c < flags.width; ++c)
                    if (flags.at(r, c))
                        cells.push_back({r, c});
            levels[std::to_string(l)] = std::move(cells);
        }
        jf["levels"] = std::move(levels);
        jf["fine_pixels"] =
            static_cast<int>(expand_to_fine(qt, static_cast<int>(t)).size());
        jf["fraction"] = incoherence_fraction_frame(qt, static_cast<int>(t));
        j["frames"].push_back(std::move(jf));
    }
    return j;
}

} // namespace vistk
