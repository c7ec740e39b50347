#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "vistk/anno_io.hpp"
#include "vistk/mask.hpp"

namespace vistk {

/// Minimal RGB8 PNG writer (color type 2, no interlace).
void write_png(const std::string& path, int width, int height, std::span<const std::uint8_t> rgb);

struct OverlayOptions {
    int boundary_d = 0; // 0 resolves from the video diagonal
    BandMode band_mode = BandMode::two_sided;
    bool quadtree_cells = true; // outline incoherent level-1 cells
};

/// One PNG per frame of the video: each tracklet's mask tinted by instance,
/// its boundary band saturated, and optionally the incoherent-cell outlines
/// of the per-tracklet quadtree. Returns the number of frames written.
int write_video_overlays(const VideoDataset& dataset, int video_id, const std::string& out_dir,
                         const OverlayOptions& options);

} // namespace vistk
