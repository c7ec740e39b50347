#include "vistk/overlay.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

#include <zlib.h>

#include "vistk/errors.hpp"
#include "vistk/incoherence.hpp"
#include "vistk/metrics.hpp"

namespace vistk {

namespace {

void append_u32_be(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

void append_chunk(std::string& out, const char type[4], const std::string& body) {
    append_u32_be(out, static_cast<std::uint32_t>(body.size()));
    const std::size_t crc_start = out.size();
    out.append(type, 4);
    out += body;
    const auto crc = crc32(0, reinterpret_cast<const Bytef*>(out.data() + crc_start),
                           static_cast<uInt>(4 + body.size()));
    append_u32_be(out, static_cast<std::uint32_t>(crc));
}

struct Rgb {
    std::uint8_t r, g, b;
};

constexpr Rgb kPalette[8] = {
    {66, 135, 245},  {240, 101, 67}, {87, 200, 120}, {235, 195, 52},
    {170, 102, 204}, {72, 201, 176}, {231, 84, 128}, {149, 165, 166},
};

void blend(std::vector<std::uint8_t>& rgb, int width, int row, int col, Rgb color, double alpha) {
    const std::size_t base = (static_cast<std::size_t>(row) * width + col) * 3;
    rgb[base] = static_cast<std::uint8_t>(rgb[base] * (1.0 - alpha) + color.r * alpha);
    rgb[base + 1] = static_cast<std::uint8_t>(rgb[base + 1] * (1.0 - alpha) + color.g * alpha);
    rgb[base + 2] = static_cast<std::uint8_t>(rgb[base + 2] * (1.0 - alpha) + color.b * alpha);
}

} // namespace

void write_png(const std::string& path, int width, int height, std::span<const std::uint8_t> rgb) {
    if (width <= 0 || height <= 0)
        throw EmptyInput("png needs positive dimensions");
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
        throw ResolutionMismatch("pixel buffer does not match " + std::to_string(width) + "x" +
                                 std::to_string(height));

    std::string raw;
    raw.reserve(static_cast<std::size_t>(height) * (1 + static_cast<std::size_t>(width) * 3));
    for (int row = 0; row < height; ++row) {
        raw.push_back('\0'); // filter type none
        raw.append(reinterpret_cast<const char*>(rgb.data() + static_cast<std::size_t>(row) * width * 3),
                   static_cast<std::size_t>(width) * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::string compressed(bound, '\0');
    if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &bound,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  6) != Z_OK)
        throw IoError("png compression failed");
    compressed.resize(bound);

    std::string ihdr;
    append_u32_be(ihdr, static_cast<std::uint32_t>(width));
    append_u32_be(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(2); // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);

    std::string blob("\x89PNG\r\n\x1a\n", 8);
    append_chunk(blob, "IHDR", ihdr);
    append_chunk(blob, "IDAT", compressed);
    append_chunk(blob, "IEND", "");

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out)
        throw IoError("write failed for " + path);
}

int write_video_overlays(const VideoDataset& dataset, int video_id, const std::string& out_dir,
                         const OverlayOptions& options) {
    const VideoMeta* video = dataset.find_video(video_id);
    if (video == nullptr)
        throw DanglingReference("unknown video " + std::to_string(video_id));
    const auto tracklets = dataset.tracklets_of_video(video_id);
    const int d = options.boundary_d > 0 ? options.boundary_d
                                         : resolve_boundary_d(video->width, video->height);

    std::filesystem::create_directories(out_dir);

    // Per-tracklet quadtrees over the whole video.
    std::vector<IncoherenceQuadtree> quadtrees;
    if (options.quadtree_cells) {
        for (const Tracklet* t : tracklets) {
            std::vector<BinaryMask> clip;
            for (int f = 0; f < video->length; ++f) {
                const bool present = f < static_cast<int>(t->frames.size()) &&
                                     t->frames[static_cast<std::size_t>(f)].has_value();
                clip.push_back(present ? *t->frames[static_cast<std::size_t>(f)]
                                       : BinaryMask(video->width, video->height));
            }
            quadtrees.push_back(detect_incoherence(clip));
        }
    }

    for (int f = 0; f < video->length; ++f) {
        std::vector<std::uint8_t> rgb(static_cast<std::size_t>(video->width) * video->height * 3,
                                      24); // near-black canvas
        for (std::size_t ti = 0; ti < tracklets.size(); ++ti) {
            const Tracklet* t = tracklets[ti];
            if (f >= static_cast<int>(t->frames.size()) ||
                !t->frames[static_cast<std::size_t>(f)])
                continue;
            const BinaryMask& mask = *t->frames[static_cast<std::size_t>(f)];
            const Rgb color = kPalette[ti % 8];

            const Raster m = mask.to_raster();
            for (int row = 0; row < m.height; ++row)
                for (int col = 0; col < m.width; ++col)
                    if (m.at(row, col))
                        blend(rgb, video->width, row, col, color, 0.45);

            const Raster band = boundary_band_raster(m, d, options.band_mode);
            for (int row = 0; row < band.height; ++row)
                for (int col = 0; col < band.width; ++col)
                    if (band.at(row, col))
                        blend(rgb, video->width, row, col, color, 0.85);

            if (options.quadtree_cells) {
                const Raster& l1 = quadtrees[ti].frames[static_cast<std::size_t>(f)].flags[1];
                const Rgb white{235, 235, 235};
                for (int r = 0; r < l1.height; ++r) {
                    for (int c = 0; c < l1.width; ++c) {
                        if (!l1.at(r, c))
                            continue;
                        for (int dr = 0; dr < 2; ++dr) {
                            for (int dc = 0; dc < 2; ++dc) {
                                const int row = 2 * r + dr, col = 2 * c + dc;
                                if (row < video->height && col < video->width)
                                    blend(rgb, video->width, row, col, white, 0.35);
                            }
                        }
                    }
                }
            }
        }
        std::ostringstream name;
        name << out_dir << "/frame_" << std::setw(4) << std::setfill('0') << (f + 1) << ".png";
        write_png(name.str(), video->width, video->height, rgb);
    }
    return video->length;
}

} // namespace vistk
