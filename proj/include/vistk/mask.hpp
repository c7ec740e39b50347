#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vistk/errors.hpp"

namespace vistk {

/// Dense working raster, row-major, one byte per pixel (0 or 1).
/// Used internally by the kernels; masks at rest are RLE (see BinaryMask).
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data; // width*height entries, row-major

    Raster() = default;
    Raster(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

    std::uint8_t at(int row, int col) const {
        return data[static_cast<std::size_t>(row) * width + col];
    }
    void set(int row, int col, std::uint8_t v) {
        data[static_cast<std::size_t>(row) * width + col] = v;
    }
    bool in_bounds(int row, int col) const {
        return row >= 0 && row < height && col >= 0 && col < width;
    }
    std::uint64_t area() const;
    bool operator==(const Raster&) const = default;
};

/// Column-major run-length encoding, first run counting zeros.
/// Scan order is down each column, left to right; canonical form has no
/// zero-length runs except possibly the leading zero-run.
std::vector<std::uint32_t> rle_encode(const Raster& raster);

/// Inverse of rle_encode. Throws CountsMismatch when the counts do not sum
/// to width*height. Accepts non-canonical counts (interior zero runs).
Raster rle_decode(std::span<const std::uint32_t> counts, int width, int height);

/// COCO compressed string codec (LEB128-style, 6 bits per char, ascii 48+,
/// runs delta-coded against counts[i-2] for i > 2).
std::string rle_to_coco_string(std::span<const std::uint32_t> counts);
std::vector<std::uint32_t> rle_from_coco_string(std::string_view s);

/// Single-frame, single-instance binary mask. Storage is canonical RLE;
/// dense rasters are materialized on demand. Copies are cheap for the
/// smooth masks this toolkit works with.
class BinaryMask {
public:
    BinaryMask() = default;
    /// All-background mask of the given size.
    BinaryMask(int width, int height);

    static BinaryMask from_raster(const Raster& raster);
    /// Validates the counts sum and canonicalizes interior zero runs.
    static BinaryMask from_rle(std::vector<std::uint32_t> counts, int width, int height);

    Raster to_raster() const;

    int width() const { return width_; }
    int height() const { return height_; }
    const std::vector<std::uint32_t>& counts() const { return counts_; }
    /// Number of set pixels.
    std::uint64_t area() const;
    bool none_set() const { return area() == 0; }
    bool valid() const { return width_ > 0 && height_ > 0; }

    bool operator==(const BinaryMask&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint32_t> counts_;
};

/// Intersection and union pixel counts from a two-pointer run walk.
/// Exact integers; used by the tube IoU machinery.
struct MaskOverlap {
    std::uint64_t inter = 0;
    std::uint64_t uni = 0;
};
MaskOverlap mask_overlap(const BinaryMask& a, const BinaryMask& b);

/// Sentinel squared distance for "no feature pixel anywhere".
inline constexpr std::int64_t kEdtInfinity = INT64_MAX / 4;

/// Exact squared Euclidean distance to the nearest set pixel of `features`,
/// per pixel, row-major. Two-pass (per-column scan then per-row lower
/// envelope of parabolas); results are exact integers, so downstream
/// thresholds are bit-reproducible.
std::vector<std::int64_t> squared_edt(const Raster& features);

/// Contour pixels: set pixels 4-adjacent to an unset pixel or to the image
/// border. Border-touching objects therefore keep a contour.
Raster contour_pixels(const Raster& mask);

enum class MorphOp { dilate, erode };

/// Morphology with the Euclidean disk of radius r (pixels at distance <= r)
/// as structuring element. Pixels outside the image count as background, so
/// erosion eats border-touching foreground. Radius 0 is the identity.
BinaryMask morph(const BinaryMask& mask, MorphOp op, int radius);
Raster morph_raster(const Raster& mask, MorphOp op, int radius);

enum class BandMode { two_sided, inner_only };

struct BoundaryBand {
    BinaryMask band;
    int d = 0;
    BandMode mode = BandMode::two_sided;
};

/// All pixels within Euclidean distance d of a contour pixel (two_sided),
/// optionally intersected with the mask (inner_only). Empty source mask
/// yields an empty band.
BoundaryBand boundary_band(const BinaryMask& mask, int d, BandMode mode);
Raster boundary_band_raster(const Raster& mask, int d, BandMode mode);

enum class ResampleDir { down, up };

/// Power-of-two pyramid resampling. Down: majority pooling per block, ties
/// resolved to foreground. Up: nearest-neighbor replication. Throws
/// IndivisibleShape when downsampling dimensions not divisible by factor.
BinaryMask resample(const BinaryMask& mask, ResampleDir dir, int factor);
Raster resample_raster(const Raster& mask, ResampleDir dir, int factor);

} // namespace vistk
