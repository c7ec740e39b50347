#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vistk/mask.hpp"

namespace vistk {

struct VideoMeta {
    int id = 0;
    int width = 0;
    int height = 0;
    int length = 0; // frame count T
    std::vector<std::string> file_names;
};

/// One video instance: per-frame masks over the video's frame range.
/// Frame indices are 1-based at every interface; internally frames[i]
/// holds frame i+1. Absent frames are nullopt.
struct Tracklet {
    int id = 0;
    int video_id = 0;
    int category_id = 0;
    double score = 1.0; // 1.0 for ground truth
    std::vector<std::optional<BinaryMask>> frames;

    /// 1-based index of the first present mask, 0 when no frame is present.
    int first_frame() const;
    /// 1-based index of the last present mask, 0 when no frame is present.
    int last_frame() const;
    const std::optional<BinaryMask>& at_frame(int frame_1based) const;
};

struct VideoDataset {
    std::vector<VideoMeta> videos;
    std::vector<Tracklet> annotations;
    std::map<int, std::string> categories;

    const VideoMeta* find_video(int video_id) const;
    std::vector<const Tracklet*> tracklets_of_video(int video_id) const;
};

/// Parse a YTVIS-style annotation or result document. Result files carry a
/// per-annotation `score`; it defaults to 1.0 when missing, so one parser
/// covers both. Unknown fields are ignored.
VideoDataset parse_dataset(const nlohmann::json& document);

/// Inverse of parse_dataset up to mask equality. RLEs are emitted as
/// integer-list counts.
nlohmann::ordered_json write_dataset(const VideoDataset& dataset);

VideoDataset load_dataset_file(const std::string& path);
void save_dataset_file(const VideoDataset& dataset, const std::string& path);

/// Parse a prediction document. A full object is handled like parse_dataset;
/// a bare array is treated as an annotation list whose videos and categories
/// come from `reference` and whose missing ids are assigned by position.
VideoDataset parse_results(const nlohmann::json& document, const VideoDataset& reference);
VideoDataset load_results_file(const std::string& path, const VideoDataset& reference);

struct SplitResult {
    std::vector<int> train, val, test;
};

/// Seeded shuffle followed by a contiguous cut. val/test sizes are
/// round(n*ratio); the remainder goes to train, which reproduces the
/// 2238 -> 1678/280/280 split at ratios (0.75, 0.125, 0.125).
SplitResult split_dataset(std::span<const int> ids, std::array<double, 3> ratios,
                          std::uint64_t seed);

/// Restrict a dataset to the given video ids (order preserved from `ids`).
VideoDataset subset_dataset(const VideoDataset& dataset, std::span<const int> video_ids);

/// Concatenate datasets with disjoint video ids into one.
VideoDataset merge_datasets(std::span<const VideoDataset* const> parts);

} // namespace vistk
