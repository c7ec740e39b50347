#include "vistk/mask.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace vistk {

std::uint64_t Raster::area() const {
    std::uint64_t a = 0;
    for (std::uint8_t v : data) a += v;
    return a;
}

std::vector<std::uint32_t> rle_encode(const Raster& raster) {
    std::vector<std::uint32_t> counts;
    std::uint32_t run = 0;
    std::uint8_t cur = 0;
    for (int c = 0; c < raster.width; ++c) {
        for (int r = 0; r < raster.height; ++r) {
            std::uint8_t v = raster.at(r, c) ? 1 : 0;
            if (v != cur) {
                counts.push_back(run);
                run = 0;
                cur = v;
            }
            ++run;
        }
    }
    counts.push_back(run);
    return counts;
}

Raster rle_decode(std::span<const std::uint32_t> counts, int width, int height) {
    const std::uint64_t total = static_cast<std::uint64_t>(width) * height;
    std::uint64_t sum = 0;
    for (std::uint32_t c : counts) sum += c;
    if (sum != total) {
        throw CountsMismatch("RLE counts sum to " + std::to_string(sum) + ", expected " +
                             std::to_string(total) + " for " + std::to_string(width) + "x" +
                             std::to_string(height));
    }
    Raster out(width, height);
    int row = 0, col = 0;
    std::uint8_t v = 0;
    for (std::uint32_t c : counts) {
        if (v) {
            for (std::uint32_t i = 0; i < c; ++i) {
                out.set(row, col, 1);
                if (++row == height) { row = 0; ++col; }
            }
        } else {
            row += static_cast<int>(c % static_cast<std::uint32_t>(height));
            col += static_cast<int>(c / static_cast<std::uint32_t>(height));
            if (row >= height) { row -= height; ++col; }
        }
        v = !v;
    }
    return out;
}

std::string rle_to_coco_string(std::span<const std::uint32_t> counts) {
    std::string s;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        long x = static_cast<long>(counts[i]);
        if (i > 2) x -= static_cast<long>(counts[i - 2]);
        bool more = true;
        while (more) {
            char c = x & 0x1f;
            x >>= 5;
            more = (c & 0x10) ? x != -1 : x != 0;
            if (more) c |= 0x20;
            c += 48;
            s.push_back(c);
        }
    }
    return s;
}

std::vector<std::uint32_t> rle_from_coco_string(std::string_view s) {
    std::vector<std::uint32_t> counts;
    std::size_t k = 0;
    while (k < s.size()) {
        long x = 0;
        int m = 0;
        bool more = true;
        while (more) {
            if (k >= s.size()) throw CountsMismatch("truncated COCO RLE string");
            char c = static_cast<char>(s[k] - 48);
            x |= static_cast<long>(c & 0x1f) << (5 * m);
            more = (c & 0x20) != 0;
            ++k;
            ++m;
            if (!more && (c & 0x10)) x |= -1L << (5 * m);
        }
        if (counts.size() > 2) x += static_cast<long>(counts[counts.size() - 2]);
        if (x < 0) throw CountsMismatch("negative run in COCO RLE string");
        counts.push_back(static_cast<std::uint32_t>(x));
    }
    return counts;
}

namespace {

// Fold zero-length interior runs so equal masks compare equal by counts.
std::vector<std::uint32_t> canonicalize_rle(std::span<const std::uint32_t> counts) {
    std::vector<std::uint32_t> out;
    out.reserve(counts.size());
    std::uint8_t v = 0;           // value of the run being appended next
    std::uint8_t out_v = 1;       // value of the run currently at out.back()
    for (std::uint32_t c : counts) {
        if (c > 0) {
            if (!out.empty() && out_v == v) {
                out.back() += c;
            } else if (out.empty() && v == 1) {
                out.push_back(0); // implicit leading zero-run
                out.push_back(c);
                out_v = 1;
            } else {
                out.push_back(c);
                out_v = v;
            }
        }
        v = !v;
    }
    if (out.empty()) out.push_back(0);
    return out;
}

} // namespace

BinaryMask::BinaryMask(int width, int height) : width_(width), height_(height) {
    counts_.push_back(static_cast<std::uint32_t>(static_cast<std::uint64_t>(width) * height));
}

BinaryMask BinaryMask::from_raster(const Raster& raster) {
    BinaryMask m;
    m.width_ = raster.width;
    m.height_ = raster.height;
    m.counts_ = rle_encode(raster);
    return m;
}

BinaryMask BinaryMask::from_rle(std::vector<std::uint32_t> counts, int width, int height) {
    const std::uint64_t total = static_cast<std::uint64_t>(width) * height;
    std::uint64_t sum = 0;
    for (std::uint32_t c : counts) sum += c;
    if (sum != total) {
        throw CountsMismatch("RLE counts sum to " + std::to_string(sum) + ", expected " +
                             std::to_string(total) + " for " + std::to_string(width) + "x" +
                             std::to_string(height));
    }
    BinaryMask m;
    m.width_ = width;
    m.height_ = height;
    m.counts_ = canonicalize_rle(counts);
    return m;
}

Raster BinaryMask::to_raster() const {
    return rle_decode(counts_, width_, height_);
}

std::uint64_t BinaryMask::area() const {
    std::uint64_t a = 0;
    for (std::size_t i = 1; i < counts_.size(); i += 2) a += counts_[i];
    return a;
}

MaskOverlap mask_overlap(const BinaryMask& a, const BinaryMask& b) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw ResolutionMismatch("mask_overlap: " + std::to_string(a.width()) + "x" +
                                 std::to_string(a.height()) + " vs " + std::to_string(b.width()) +
                                 "x" + std::to_string(b.height()));
    }
    const auto& ca = a.counts();
    const auto& cb = b.counts();
    MaskOverlap out;
    std::size_t ia = 0, ib = 0;
    std::uint64_t ra = ca.empty() ? 0 : ca[0];
    std::uint64_t rb = cb.empty() ? 0 : cb[0];
    bool va = false, vb = false;
    std::uint64_t remaining = static_cast<std::uint64_t>(a.width()) * a.height();
    while (remaining > 0) {
        while (ra == 0 && ia + 1 < ca.size()) { ra = ca[++ia]; va = (ia % 2) == 1; }
        while (rb == 0 && ib + 1 < cb.size()) { rb = cb[++ib]; vb = (ib % 2) == 1; }
        const std::uint64_t step = std::min({ra, rb, remaining});
        if (va && vb) out.inter += step;
        if (va || vb) out.uni += step;
        ra -= step;
        rb -= step;
        remaining -= step;
    }
    return out;
}

std::vector<std::int64_t> squared_edt(const Raster& features) {
    const int w = features.width;
    const int h = features.height;
    std::vector<std::int64_t> dist(static_cast<std::size_t>(w) * h, kEdtInfinity);

    // Pass 1: per column, squared distance to the nearest feature row.
    // Linear down/up scans give exact |dr|, squared afterwards.
    std::vector<std::int64_t> colrow(static_cast<std::size_t>(w) * h, kEdtInfinity);
    for (int c = 0; c < w; ++c) {
        std::int64_t last = kEdtInfinity; // distance in rows to nearest feature above
        for (int r = 0; r < h; ++r) {
            if (features.at(r, c)) last = 0;
            else if (last < kEdtInfinity) ++last;
            colrow[static_cast<std::size_t>(r) * w + c] = last;
        }
        last = kEdtInfinity;
        for (int r = h - 1; r >= 0; --r) {
            if (features.at(r, c)) last = 0;
            else if (last < kEdtInfinity) ++last;
            auto& v = colrow[static_cast<std::size_t>(r) * w + c];
            v = std::min(v, last);
        }
    }

    // Pass 2: per row, 1D lower envelope of the parabolas
    // (col - q)^2 + colrow[q]^2. Standard Felzenszwalb-Huttenlocher; the
    // envelope abscissae fit comfortably in double for any realistic frame,
    // and the sampled minima are evaluated in integer arithmetic.
    std::vector<int> hull(w);
    std::vector<double> boundary(w + 1);
    std::vector<std::int64_t> f(w);
    for (int r = 0; r < h; ++r) {
        int n = 0;
        for (int c = 0; c < w; ++c) {
            const std::int64_t g = colrow[static_cast<std::size_t>(r) * w + c];
            f[c] = (g >= kEdtInfinity) ? kEdtInfinity : g * g;
        }
        int k = -1;
        for (int q = 0; q < w; ++q) {
            if (f[q] >= kEdtInfinity) continue;
            double s = 0;
            while (k >= 0) {
                const int p = hull[k];
                s = (double(f[q] - f[p]) + double(q) * q - double(p) * p) / (2.0 * (q - p));
                if (s > boundary[k]) break;
                --k;
            }
            if (k < 0) {
                k = 0;
                hull[0] = q;
                boundary[0] = -1e18;
            } else {
                ++k;
                hull[k] = q;
                boundary[k] = s;
            }
            boundary[k + 1] = 1e18;
            n = k + 1;
        }
        if (n == 0) continue; // no feature in any column of this row's reach
        int j = 0;
        for (int c = 0; c < w; ++c) {
            while (j < n - 1 && boundary[j + 1] < c) ++j;
            const int q = hull[j];
            const std::int64_t dc = c - q;
            dist[static_cast<std::size_t>(r) * w + c] = dc * dc + f[q];
        }
    }
    return dist;
}

Raster contour_pixels(const Raster& mask) {
    const int w = mask.width;
    const int h = mask.height;
    Raster out(w, h);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (!mask.at(r, c)) continue;
            const bool edge = r == 0 || r == h - 1 || c == 0 || c == w - 1 ||
                              !mask.at(r - 1, c) || !mask.at(r + 1, c) ||
                              !mask.at(r, c - 1) || !mask.at(r, c + 1);
            if (edge) out.set(r, c, 1);
        }
    }
    return out;
}

Raster morph_raster(const Raster& mask, MorphOp op, int radius) {
    if (radius < 0) throw Error("morph: negative radius");
    if (radius == 0) return mask;
    const int w = mask.width;
    const int h = mask.height;
    const std::int64_t r2 = static_cast<std::int64_t>(radius) * radius;
    Raster out(w, h);
    if (op == MorphOp::dilate) {
        const auto dist = squared_edt(mask);
        for (std::size_t i = 0; i < dist.size(); ++i) out.data[i] = dist[i] <= r2 ? 1 : 0;
        return out;
    }
    // Erosion: survive only if every disk pixel is foreground. Out-of-image
    // counts as background, captured by a one-pixel background ring.
    Raster padded(w + 2, h + 2);
    for (int r = 0; r < h + 2; ++r)
        for (int c = 0; c < w + 2; ++c) {
            const bool inside = r >= 1 && r <= h && c >= 1 && c <= w;
            const bool fg = inside && mask.at(r - 1, c - 1);
            padded.set(r, c, fg ? 0 : 1); // feature set = background
        }
    const auto dist = squared_edt(padded);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (!mask.at(r, c)) continue;
            const std::int64_t d2 = dist[static_cast<std::size_t>(r + 1) * (w + 2) + (c + 1)];
            if (d2 > r2) out.set(r, c, 1);
        }
    return out;
}

BinaryMask morph(const BinaryMask& mask, MorphOp op, int radius) {
    if (radius == 0) return mask;
    return BinaryMask::from_raster(morph_raster(mask.to_raster(), op, radius));
}

Raster boundary_band_raster(const Raster& mask, int d, BandMode mode) {
    if (d < 0) throw Error("boundary_band: negative d");
    const Raster contour = contour_pixels(mask);
    Raster out(mask.width, mask.height);
    if (contour.area() == 0) return out;
    const auto dist = squared_edt(contour);
    const std::int64_t d2 = static_cast<std::int64_t>(d) * d;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        if (dist[i] > d2) continue;
        if (mode == BandMode::inner_only && !mask.data[i]) continue;
        out.data[i] = 1;
    }
    return out;
}

BoundaryBand boundary_band(const BinaryMask& mask, int d, BandMode mode) {
    BoundaryBand bb;
    bb.d = d;
    bb.mode = mode;
    bb.band = BinaryMask::from_raster(boundary_band_raster(mask.to_raster(), d, mode));
    return bb;
}

Raster resample_raster(const Raster& mask, ResampleDir dir, int factor) {
    if (factor < 1 || (factor & (factor - 1)) != 0) {
        throw Error("resample: factor must be a positive power of two");
    }
    if (factor == 1) return mask;
    if (dir == ResampleDir::down) {
        if (mask.width % factor != 0 || mask.height % factor != 0) {
            throw IndivisibleShape("resample down: " + std::to_string(mask.width) + "x" +
                                   std::to_string(mask.height) + " not divisible by " +
                                   std::to_string(factor));
        }
        const int ow = mask.width / factor;
        const int oh = mask.height / factor;
        const int block = factor * factor;
        Raster out(ow, oh);
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                int set = 0;
                for (int dr = 0; dr < factor; ++dr)
                    for (int dc = 0; dc < factor; ++dc)
                        set += mask.at(r * factor + dr, c * factor + dc) ? 1 : 0;
                out.set(r, c, 2 * set >= block ? 1 : 0); // tie -> foreground
            }
        return out;
    }
    const int ow = mask.width * factor;
    const int oh = mask.height * factor;
    Raster out(ow, oh);
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) out.set(r, c, mask.at(r / factor, c / factor));
    return out;
}

BinaryMask resample(const BinaryMask& mask, ResampleDir dir, int factor) {
    if (factor == 1) return mask;
    return BinaryMask::from_raster(resample_raster(mask.to_raster(), dir, factor));
}

} // namespace vistk
