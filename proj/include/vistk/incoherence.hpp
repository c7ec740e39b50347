#pragma once

#include <array>
#include <span>
#include <vector>

#include <json.hpp>

#include "vistk/mask.hpp"

namespace vistk {

/// Pyramid depth: L0 (fine) through L3 (coarsest, 8x8 pixel cells).
inline constexpr int kPyramidLevels = 4;
inline constexpr int kPyramidPad = 1 << (kPyramidLevels - 1);

/// Successively halved views of one frame mask. Level 0 is the input padded
/// bottom/right with background to multiples of 8; each coarser level is a
/// 2x2 majority pooling of the previous one, ties to foreground.
struct MaskPyramid {
    int orig_width = 0;
    int orig_height = 0;
    int pad_cols = 0;
    int pad_rows = 0;
    std::array<Raster, kPyramidLevels> levels;
};

MaskPyramid build_pyramid(const BinaryMask& mask);

/// Per-frame incoherent-cell flags. flags[l] (l in 1..3) lives on the
/// level-l grid of the padded frame; flags[0] is unused. A cell is flagged
/// when it lies under a flagged parent chain from the L3 roots and its own
/// child block one level below is non-constant.
struct QuadtreeFrame {
    std::array<Raster, kPyramidLevels> flags;
    int spatial_roots = 0;
    int temporal_roots = 0;
};

struct IncoherenceQuadtree {
    int width = 0;  // unpadded frame dims
    int height = 0;
    int padded_width = 0;
    int padded_height = 0;
    std::vector<QuadtreeFrame> frames;
};

/// Root cells at L3 are those whose L2 child block is non-constant (spatial)
/// or whose L3 value flips against an adjacent frame (temporal). Flags then
/// descend: a child cell is flagged only under a flagged parent and only
/// when spatially incoherent itself, down to L1.
IncoherenceQuadtree detect_incoherence(std::span<const BinaryMask> clip);

/// Fine pixels covered by flagged L1 cells of frame t (0-based), unpadded
/// coordinates only, row-major order.
std::vector<std::array<int, 2>> expand_to_fine(const IncoherenceQuadtree& qt, int t);

/// expand_to_fine as a mask over the unpadded frame.
BinaryMask frame_region(const IncoherenceQuadtree& qt, int t);

/// Flagged fine pixels divided by unpadded pixel count, per frame and
/// averaged over the clip.
double incoherence_fraction_frame(const IncoherenceQuadtree& qt, int t);
double incoherence_fraction(const IncoherenceQuadtree& qt);

nlohmann::ordered_json quadtree_to_json(const IncoherenceQuadtree& qt);

} // namespace vistk
