#include "vistk/anno_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "vistk/errors.hpp"

namespace vistk {

namespace {

std::string path_join(const std::string& base, const std::string& key) {
    return base + "/" + key;
}

std::string path_join(const std::string& base, std::size_t index) {
    return base + "/" + std::to_string(index);
}

const nlohmann::json& require_field(const nlohmann::json& obj, const std::string& key,
                                    const std::string& path) {
    if (!obj.is_object())
        throw SchemaError("expected object at " + path);
    auto it = obj.find(key);
    if (it == obj.end())
        throw SchemaError("missing field " + path_join(path, key));
    return *it;
}

int require_int(const nlohmann::json& obj, const std::string& key, const std::string& path) {
    const auto& v = require_field(obj, key, path);
    if (!v.is_number_integer())
        throw SchemaError("expected integer at " + path_join(path, key));
    return v.get<int>();
}

BinaryMask parse_rle(const nlohmann::json& seg, const std::string& path) {
    const auto& size = require_field(seg, "size", path);
    if (!size.is_array() || size.size() != 2 || !size[0].is_number_integer() ||
        !size[1].is_number_integer())
        throw SchemaError("expected [height, width] at " + path_join(path, "size"));
    const int h = size[0].get<int>();
    const int w = size[1].get<int>();
    if (h <= 0 || w <= 0)
        throw SchemaError("non-positive size at " + path_join(path, "size"));

    const auto& counts = require_field(seg, "counts", path);
    std::vector<std::uint32_t> runs;
    if (counts.is_string()) {
        runs = rle_from_coco_string(counts.get<std::string>());
    } else if (counts.is_array()) {
        runs.reserve(counts.size());
        for (std::size_t i = 0; i < counts.size(); ++i) {
            if (!counts[i].is_number_integer() || counts[i].get<std::int64_t>() < 0)
                throw SchemaError("expected non-negative integer at " +
                                  path_join(path_join(path, "counts"), i));
            runs.push_back(counts[i].get<std::uint32_t>());
        }
    } else {
        throw SchemaError("expected string or integer list at " + path_join(path, "counts"));
    }

    try {
        return BinaryMask::from_rle(std::move(runs), w, h);
    } catch (const Error& e) {
        throw SchemaError(std::string(e.what()) + " at " + path_join(path, "counts"));
    }
}

Tracklet parse_annotation(const VideoDataset& ds, const nlohmann::json& obj,
                          const std::string& path, int fallback_id) {
    Tracklet t;
    t.id = obj.contains("id") ? require_int(obj, "id", path) : fallback_id;
    t.video_id = require_int(obj, "video_id", path);
    t.category_id = require_int(obj, "category_id", path);
    if (auto sit = obj.find("score"); sit != obj.end()) {
        if (!sit->is_number())
            throw SchemaError("expected number at " + path_join(path, "score"));
        t.score = sit->get<double>();
    }

    const VideoMeta* video = ds.find_video(t.video_id);
    if (video == nullptr)
        throw DanglingReference("unknown video " + std::to_string(t.video_id) + " at " +
                                path_join(path, "video_id"));
    if (!ds.categories.empty() && ds.categories.count(t.category_id) == 0)
        throw DanglingReference("unknown category " + std::to_string(t.category_id) + " at " +
                                path_join(path, "category_id"));

    const auto& segs = require_field(obj, "segmentations", path);
    if (!segs.is_array())
        throw SchemaError("expected array at " + path_join(path, "segmentations"));
    if (static_cast<int>(segs.size()) != video->length)
        throw SchemaError("segmentation count " + std::to_string(segs.size()) +
                          " does not match video length " + std::to_string(video->length) +
                          " at " + path_join(path, "segmentations"));
    t.frames.resize(segs.size());
    for (std::size_t f = 0; f < segs.size(); ++f) {
        if (segs[f].is_null())
            continue;
        const std::string seg_path = path_join(path_join(path, "segmentations"), f);
        BinaryMask mask = parse_rle(segs[f], seg_path);
        if (mask.width() != video->width || mask.height() != video->height)
            throw ResolutionMismatch(
                "mask " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
                " does not match video " + std::to_string(video->width) + "x" +
                std::to_string(video->height) + " at " + seg_path);
        t.frames[f] = std::move(mask);
    }
    return t;
}

} // namespace

int Tracklet::first_frame() const {
    for (std::size_t i = 0; i < frames.size(); ++i)
        if (frames[i])
            return static_cast<int>(i) + 1;
    return 0;
}

int Tracklet::last_frame() const {
    for (std::size_t i = frames.size(); i > 0; --i)
        if (frames[i - 1])
            return static_cast<int>(i);
    return 0;
}

const std::optional<BinaryMask>& Tracklet::at_frame(int frame_1based) const {
    if (frame_1based < 1 || frame_1based > static_cast<int>(frames.size()))
        throw CoordOutOfBounds("frame " + std::to_string(frame_1based) + " outside 1.." +
                               std::to_string(frames.size()));
    return frames[static_cast<std::size_t>(frame_1based - 1)];
}

const VideoMeta* VideoDataset::find_video(int video_id) const {
    for (const auto& v : videos)
        if (v.id == video_id)
            return &v;
    return nullptr;
}

std::vector<const Tracklet*> VideoDataset::tracklets_of_video(int video_id) const {
    std::vector<const Tracklet*> out;
    for (const auto& t : annotations)
        if (t.video_id == video_id)
            out.push_back(&t);
    return out;
}

VideoDataset parse_dataset(const nlohmann::json& document) {
    if (!document.is_object())
        throw SchemaError("expected object at document root");
    VideoDataset ds;

    const auto& videos = require_field(document, "videos", "");
    if (!videos.is_array())
        throw SchemaError("expected array at /videos");
    for (std::size_t i = 0; i < videos.size(); ++i) {
        const std::string path = path_join("/videos", i);
        VideoMeta meta;
        meta.id = require_int(videos[i], "id", path);
        meta.width = require_int(videos[i], "width", path);
        meta.height = require_int(videos[i], "height", path);
        meta.length = require_int(videos[i], "length", path);
        if (meta.width <= 0 || meta.height <= 0)
            throw SchemaError("non-positive dimensions at " + path);
        if (meta.length <= 0)
            throw SchemaError("non-positive length at " + path_join(path, "length"));
        if (auto it = videos[i].find("file_names"); it != videos[i].end() && it->is_array())
            for (const auto& name : *it)
                meta.file_names.push_back(name.get<std::string>());
        if (ds.find_video(meta.id) != nullptr)
            throw SchemaError("duplicate video id at " + path_join(path, "id"));
        ds.videos.push_back(std::move(meta));
    }

    if (auto it = document.find("categories"); it != document.end()) {
        if (!it->is_array())
            throw SchemaError("expected array at /categories");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string path = path_join("/categories", i);
            const int id = require_int((*it)[i], "id", path);
            std::string name;
            if (auto nit = (*it)[i].find("name"); nit != (*it)[i].end() && nit->is_string())
                name = nit->get<std::string>();
            ds.categories[id] = std::move(name);
        }
    }

    const auto& annos = require_field(document, "annotations", "");
    if (!annos.is_array())
        throw SchemaError("expected array at /annotations");
    for (std::size_t i = 0; i < annos.size(); ++i) {
        const std::string path = path_join("/annotations", i);
        if (!annos[i].contains("id"))
            throw SchemaError("missing field " + path_join(path, "id"));
        ds.annotations.push_back(
            parse_annotation(ds, annos[i], path, static_cast<int>(i) + 1));
    }

    return ds;
}

VideoDataset parse_results(const nlohmann::json& document, const VideoDataset& reference) {
    if (document.is_object())
        return parse_dataset(document);
    if (!document.is_array())
        throw SchemaError("expected object or array at document root");
    VideoDataset ds;
    ds.videos = reference.videos;
    ds.categories = reference.categories;
    for (std::size_t i = 0; i < document.size(); ++i) {
        const std::string path = path_join("", i);
        ds.annotations.push_back(
            parse_annotation(ds, document[i], path, static_cast<int>(i) + 1));
    }
    return ds;
}

VideoDataset load_results_file(const std::string& path, const VideoDataset& reference) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
    return parse_results(doc, reference);
}

nlohmann::ordered_json write_dataset(const VideoDataset& dataset) {
    nlohmann::ordered_json doc;
    doc["videos"] = nlohmann::ordered_json::array();
    for (const auto& v : dataset.videos) {
        nlohmann::ordered_json jv;
        jv["id"] = v.id;
        jv["width"] = v.width;
        jv["height"] = v.height;
        jv["length"] = v.length;
        if (!v.file_names.empty())
            jv["file_names"] = v.file_names;
        doc["videos"].push_back(std::move(jv));
    }
    doc["annotations"] = nlohmann::ordered_json::array();
    for (const auto& t : dataset.annotations) {
        nlohmann::ordered_json jt;
        jt["id"] = t.id;
        jt["video_id"] = t.video_id;
        jt["category_id"] = t.category_id;
        jt["score"] = t.score;
        jt["segmentations"] = nlohmann::ordered_json::array();
        for (const auto& frame : t.frames) {
            if (!frame) {
                jt["segmentations"].push_back(nullptr);
                continue;
            }
            nlohmann::ordered_json seg;
            seg["size"] = {frame->height(), frame->width()};
            seg["counts"] = frame->counts();
            jt["segmentations"].push_back(std::move(seg));
        }
        doc["annotations"].push_back(std::move(jt));
    }
    doc["categories"] = nlohmann::ordered_json::array();
    for (const auto& [id, name] : dataset.categories) {
        nlohmann::ordered_json jc;
        jc["id"] = id;
        jc["name"] = name;
        doc["categories"].push_back(std::move(jc));
    }
    return doc;
}

VideoDataset load_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
    return parse_dataset(doc);
}

void save_dataset_file(const VideoDataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    out << write_dataset(dataset).dump(2) << "\n";
    if (!out)
        throw IoError("write failed for " + path);
}

SplitResult split_dataset(std::span<const int> ids, std::array<double, 3> ratios,
                          std::uint64_t seed) {
    const std::size_t n = ids.size();
    if (n == 0)
        throw EmptyInput("no ids to split");
    for (double r : ratios)
        if (r < 0.0 || r > 1.0)
            throw Error("split ratios must lie in [0, 1]");

    const auto n_val = static_cast<std::size_t>(std::lround(static_cast<double>(n) * ratios[1]));
    const auto n_test = static_cast<std::size_t>(std::lround(static_cast<double>(n) * ratios[2]));
    if (n_val + n_test > n)
        throw Error("val and test ratios exceed the dataset");
    const std::size_t n_train = n - n_val - n_test;

    std::vector<int> order(ids.begin(), ids.end());
    std::mt19937_64 rng(seed);
    // Fisher-Yates with a modulo draw; std::shuffle is avoided because its
    // output is not pinned across standard library implementations.
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
        std::swap(order[i], order[j]);
    }

    SplitResult split;
    split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                     order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

VideoDataset subset_dataset(const VideoDataset& dataset, std::span<const int> video_ids) {
    VideoDataset out;
    out.categories = dataset.categories;
    std::set<int> wanted(video_ids.begin(), video_ids.end());
    for (int id : video_ids) {
        const VideoMeta* v = dataset.find_video(id);
        if (v == nullptr)
            throw DanglingReference("unknown video " + std::to_string(id));
        out.videos.push_back(*v);
    }
    for (const auto& t : dataset.annotations)
        if (wanted.count(t.video_id))
            out.annotations.push_back(t);
    return out;
}

VideoDataset merge_datasets(std::span<const VideoDataset* const> parts) {
    VideoDataset out;
    for (const VideoDataset* part : parts) {
        for (const auto& v : part->videos) {
            if (out.find_video(v.id) != nullptr)
                throw Error("duplicate video id " + std::to_string(v.id) + " across datasets");
            out.videos.push_back(v);
        }
        for (const auto& t : part->annotations)
            out.annotations.push_back(t);
        for (const auto& [id, name] : part->categories)
            out.categories.emplace(id, name);
    }
    return out;
}

} // namespace vistk
