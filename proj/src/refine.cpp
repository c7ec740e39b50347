#include "vistk/refine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <unordered_map>

#include "vistk/errors.hpp"
#include "vistk/hashrand.hpp"

namespace vistk {

namespace {

constexpr double kNormEps = 1e-5;

void check_finite(const Matrix& m, const char* where) {
    for (double v : m.data)
        if (!std::isfinite(v))
            throw NonFiniteActivation(std::string("non-finite value in ") + where);
}

/// y = x W^T + b, with W stored rows=out, cols=in.
Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y(x.rows, w.rows);
    for (int i = 0; i < x.rows; ++i) {
        for (int o = 0; o < w.rows; ++o) {
            double acc = b.at(0, o);
            for (int k = 0; k < x.cols; ++k)
                acc += x.at(i, k) * w.at(o, k);
            y.at(i, o) = acc;
        }
    }
    return y;
}

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta) {
    Matrix y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        double mean = 0.0;
        for (int k = 0; k < x.cols; ++k)
            mean += x.at(i, k);
        mean /= x.cols;
        double var = 0.0;
        for (int k = 0; k < x.cols; ++k) {
            const double d = x.at(i, k) - mean;
            var += d * d;
        }
        var /= x.cols;
        const double inv = 1.0 / std::sqrt(var + kNormEps);
        for (int k = 0; k < x.cols; ++k)
            y.at(i, k) = (x.at(i, k) - mean) * inv * gamma.at(0, k) + beta.at(0, k);
    }
    return y;
}

Matrix relu(Matrix x) {
    for (double& v : x.data)
        v = v > 0.0 ? v : 0.0;
    return x;
}

Matrix add(const Matrix& a, const Matrix& b) {
    Matrix y(a.rows, a.cols);
    for (std::size_t i = 0; i < y.data.size(); ++i)
        y.data[i] = a.data[i] + b.data[i];
    return y;
}

/// Multi-head scaled dot-product attention. Queries come from q_in, keys
/// and values from kv_in; attn_out, when given, receives one tokens x keys
/// matrix per head.
Matrix attention(const Matrix& q_in, const Matrix& kv_in, const RefinerWeights& weights,
                 const std::string& prefix, std::vector<Matrix>* attn_out) {
    const TransformerHyper& h = weights.hyper;
    const int dh = h.head_dim();
    const Matrix q = linear(q_in, weights.at(prefix + ".q.weight"), weights.at(prefix + ".q.bias"));
    const Matrix k = linear(kv_in, weights.at(prefix + ".k.weight"), weights.at(prefix + ".k.bias"));
    const Matrix v = linear(kv_in, weights.at(prefix + ".v.weight"), weights.at(prefix + ".v.bias"));

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix mixed(q.rows, h.hidden);
    for (int head = 0; head < h.heads; ++head) {
        const int off = head * dh;
        Matrix probs(q.rows, k.rows);
        for (int i = 0; i < q.rows; ++i) {
            double row_max = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < k.rows; ++j) {
                double s = 0.0;
                for (int d = 0; d < dh; ++d)
                    s += q.at(i, off + d) * k.at(j, off + d);
                probs.at(i, j) = s * scale;
                row_max = std::max(row_max, probs.at(i, j));
            }
            double denom = 0.0;
            for (int j = 0; j < k.rows; ++j) {
                probs.at(i, j) = std::exp(probs.at(i, j) - row_max);
                denom += probs.at(i, j);
            }
            for (int j = 0; j < k.rows; ++j)
                probs.at(i, j) /= denom;
            for (int d = 0; d < dh; ++d) {
                double acc = 0.0;
                for (int j = 0; j < k.rows; ++j)
                    acc += probs.at(i, j) * v.at(j, off + d);
                mixed.at(i, off + d) = acc;
            }
        }
        if (attn_out != nullptr)
            attn_out->push_back(std::move(probs));
    }
    return linear(mixed, weights.at(prefix + ".proj.weight"), weights.at(prefix + ".proj.bias"));
}

std::vector<std::pair<std::string, std::pair<int, int>>> shape_table(const TransformerHyper& h) {
    std::vector<std::pair<std::string, std::pair<int, int>>> table;
    auto add = [&table](std::string name, int r, int c) {
        table.emplace_back(std::move(name), std::make_pair(r, c));
    };
    add("lowlevel.conv1.weight", h.lowlevel_channels, h.lowlevel_in * 9);
    add("lowlevel.conv1.bias", 1, h.lowlevel_channels);
    add("lowlevel.conv2.weight", h.lowlevel_channels, h.lowlevel_channels * 9);
    add("lowlevel.conv2.bias", 1, h.lowlevel_channels);
    add("lowlevel.conv3.weight", h.lowlevel_channels, h.lowlevel_channels * 9);
    add("lowlevel.conv3.bias", 1, h.lowlevel_channels);
    add("encoder.weight", h.hidden, h.encoder_in());
    add("encoder.bias", 1, h.hidden);
    add("instance_queries", h.instance_queries, h.hidden);
    for (int l = 0; l < h.layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        add(p + "nal.norm1.gamma", 1, h.hidden);
        add(p + "nal.norm1.beta", 1, h.hidden);
        for (const char* n : {"q", "k", "v", "proj"}) {
            add(p + "nal.attn." + n + ".weight", h.hidden, h.hidden);
            add(p + "nal.attn." + n + ".bias", 1, h.hidden);
        }
        add(p + "nal.norm2.gamma", 1, h.hidden);
        add(p + "nal.norm2.beta", 1, h.hidden);
        add(p + "nal.ffn.w1", h.ffn, h.hidden);
        add(p + "nal.ffn.b1", 1, h.ffn);
        add(p + "nal.ffn.w2", h.hidden, h.ffn);
        add(p + "nal.ffn.b2", 1, h.hidden);
        add(p + "igl.norm.gamma", 1, h.hidden);
        add(p + "igl.norm.beta", 1, h.hidden);
        for (const char* n : {"q", "k", "v", "proj"}) {
            add(p + "igl.attn." + n + ".weight", h.hidden, h.hidden);
            add(p + "igl.attn." + n + ".bias", 1, h.hidden);
        }
    }
    add("final_norm.gamma", 1, h.hidden);
    add("final_norm.beta", 1, h.hidden);
    add("decoder.w1", h.decoder_hidden, h.hidden);
    add("decoder.b1", 1, h.decoder_hidden);
    add("decoder.node_head.weight", 1, h.decoder_hidden);
    add("decoder.node_head.bias", 1, 1);
    add("decoder.quad_head.weight", 4, h.decoder_hidden);
    add("decoder.quad_head.bias", 1, 4);
    return table;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::uint64_t fnv1a(const unsigned char* data, std::size_t n) {
    std::uint64_t h = 14695981039346656037ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ULL;
    }
    return h;
}

void append_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void append_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    append_u32(out, bits);
}

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float read_f32(const unsigned char* p) {
    const std::uint32_t bits = read_u32(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

/// Signed-distance input for the low-level stack: positive outside the
/// mask, negative inside, scaled by 1/8 and clamped to [-1, 1]. Covers the
/// padded grid so token centers index directly.
std::vector<double> sdt_input(const BinaryMask& mask, int padded_width, int padded_height) {
    const Raster src = mask.to_raster();
    Raster fg(padded_width, padded_height);
    Raster bg(padded_width, padded_height);
    for (int r = 0; r < padded_height; ++r) {
        for (int c = 0; c < padded_width; ++c) {
            const bool set = r < src.height && c < src.width && src.at(r, c) != 0;
            fg.set(r, c, set ? 1 : 0);
            bg.set(r, c, set ? 0 : 1);
        }
    }
    const std::vector<std::int64_t> to_fg = squared_edt(fg);
    const std::vector<std::int64_t> to_bg = squared_edt(bg);
    std::vector<double> out(static_cast<std::size_t>(padded_width) * padded_height);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const bool set = fg.data[i] != 0;
        const double dist = std::sqrt(static_cast<double>(set ? to_bg[i] : to_fg[i]));
        const double sd = set ? -dist : dist;
        out[i] = std::clamp(sd / 8.0, -1.0, 1.0);
    }
    return out;
}

/// Low-level embedding at one pixel: three 3x3 convolutions evaluated on
/// the minimal windows around (row, col), zero outside the image, ReLU
/// after the first two.
void lowlevel_at(const std::vector<double>& img, int width, int height, int row, int col,
                 const RefinerWeights& weights, double* out) {
    const int ch = weights.hyper.lowlevel_channels;
    const Matrix& w1 = weights.at("lowlevel.conv1.weight");
    const Matrix& b1 = weights.at("lowlevel.conv1.bias");
    const Matrix& w2 = weights.at("lowlevel.conv2.weight");
    const Matrix& b2 = weights.at("lowlevel.conv2.bias");
    const Matrix& w3 = weights.at("lowlevel.conv3.weight");
    const Matrix& b3 = weights.at("lowlevel.conv3.bias");

    auto sample = [&](int r, int c) -> double {
        if (r < 0 || r >= height || c < 0 || c >= width)
            return 0.0;
        return img[static_cast<std::size_t>(r) * width + c];
    };

    auto in_grid = [&](int r, int c) { return r >= 0 && r < height && c >= 0 && c < width; };

    // Each stage's feature map exists only on the image grid; positions the
    // window pokes past the border stay zero, exactly like evaluating the
    // zero-padded convolution over the whole grid and cropping.
    std::vector<double> c1(static_cast<std::size_t>(25) * ch, 0.0); // 5x5 window
    for (int dr = -2; dr <= 2; ++dr) {
        for (int dc = -2; dc <= 2; ++dc) {
            if (!in_grid(row + dr, col + dc))
                continue;
            const std::size_t base = static_cast<std::size_t>((dr + 2) * 5 + (dc + 2)) * ch;
            for (int o = 0; o < ch; ++o) {
                double acc = b1.at(0, o);
                for (int kr = 0; kr < 3; ++kr)
                    for (int kc = 0; kc < 3; ++kc)
                        acc += w1.at(o, kr * 3 + kc) *
                               sample(row + dr + kr - 1, col + dc + kc - 1);
                c1[base + o] = acc > 0.0 ? acc : 0.0;
            }
        }
    }
    std::vector<double> c2(static_cast<std::size_t>(9) * ch, 0.0); // 3x3 window
    for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
            if (!in_grid(row + dr, col + dc))
                continue;
            const std::size_t base = static_cast<std::size_t>((dr + 1) * 3 + (dc + 1)) * ch;
            for (int o = 0; o < ch; ++o) {
                double acc = b2.at(0, o);
                for (int i = 0; i < ch; ++i)
                    for (int kr = 0; kr < 3; ++kr)
                        for (int kc = 0; kc < 3; ++kc)
                            acc += w2.at(o, (i * 3 + kr) * 3 + kc) *
                                   c1[static_cast<std::size_t>((dr + kr + 1) * 5 + (dc + kc + 1)) *
                                          ch +
                                      i];
                c2[base + o] = acc > 0.0 ? acc : 0.0;
            }
        }
    }
    for (int o = 0; o < ch; ++o) {
        double acc = b3.at(0, o);
        for (int i = 0; i < ch; ++i)
            for (int kr = 0; kr < 3; ++kr)
                for (int kc = 0; kc < 3; ++kc)
                    acc += w3.at(o, (i * 3 + kr) * 3 + kc) *
                           c2[static_cast<std::size_t>(kr * 3 + kc) * ch + i];
        out[o] = acc;
    }
}

void sinusoidal(double value, int dims, double* out) {
    for (int k = 0; k < dims / 2; ++k) {
        const double freq = 1.0 / std::pow(10000.0, (2.0 * k) / dims);
        out[2 * k] = std::sin(value * freq);
        out[2 * k + 1] = std::cos(value * freq);
    }
}

} // namespace

TokenSequence group_sequence(const IncoherenceQuadtree& qt, std::span<const BinaryMask> clip) {
    if (qt.frames.size() != clip.size())
        throw ResolutionMismatch("quadtree and clip disagree on frame count");
    TokenSequence seq;
    seq.width = qt.width;
    seq.height = qt.height;
    seq.padded_width = qt.padded_width;
    seq.padded_height = qt.padded_height;
    seq.clip_len = static_cast<int>(clip.size());

    for (std::size_t t = 0; t < clip.size(); ++t) {
        const MaskPyramid pyr = build_pyramid(clip[t]);
        for (int level = 1; level < kPyramidLevels; ++level) {
            const Raster& flags = qt.frames[t].flags[level];
            const int cell = 1 << level;
            for (int r = 0; r < flags.height; ++r) {
                for (int c = 0; c < flags.width; ++c) {
                    if (!flags.at(r, c))
                        continue;
                    NodeToken tok;
                    tok.t = static_cast<int>(t);
                    tok.level = level;
                    tok.row = r;
                    tok.col = c;
                    const int cr = r * cell + cell / 2;
                    const int cc = c * cell + cell / 2;
                    tok.mask_center = pyr.levels[0].at(cr, cc);
                    double sum = 0.0;
                    for (int fr = r * cell; fr < (r + 1) * cell; ++fr)
                        for (int fc = c * cell; fc < (c + 1) * cell; ++fc)
                            sum += pyr.levels[0].at(fr, fc);
                    tok.mask_mean = sum / (cell * cell);
                    tok.mask_level = pyr.levels[level].at(r, c);
                    seq.tokens.push_back(tok);
                }
            }
        }
    }
    if (seq.tokens.empty())
        throw EmptyClip("no incoherent cells to refine");
    return seq;
}

const Matrix& RefinerWeights::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end())
        throw WeightShapeMismatch("missing tensor " + name);
    return it->second;
}

Matrix& RefinerWeights::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end())
        throw WeightShapeMismatch("missing tensor " + name);
    return it->second;
}

RefinerWeights RefinerWeights::init(const TransformerHyper& hyper, std::uint64_t seed) {
    RefinerWeights w;
    w.hyper = hyper;
    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
    // Uniform draws come straight from the generator words; the standard
    // distributions are not pinned across implementations.
    auto unit = [&rng]() { return static_cast<double>(rng() >> 8) * 0x1.0p-24; };
    for (const auto& [name, shape] : shape_table(hyper)) {
        Matrix m(shape.first, shape.second);
        if (ends_with(name, "gamma")) {
            std::fill(m.data.begin(), m.data.end(), 1.0);
        } else if (name.find("bias") != std::string::npos || ends_with(name, "beta") ||
                   ends_with(name, ".b1") || ends_with(name, ".b2")) {
            // zeros
        } else {
            const double limit = std::sqrt(6.0 / (shape.first + shape.second));
            for (double& v : m.data)
                v = static_cast<double>(static_cast<float>((2.0 * unit() - 1.0) * limit));
        }
        w.tensors_.emplace(name, std::move(m));
    }
    return w;
}

void RefinerWeights::validate() const {
    if (hyper.hidden <= 0 || hyper.heads <= 0 || hyper.hidden % hyper.heads != 0)
        throw WeightShapeMismatch("hidden size must divide evenly into heads");
    const auto table = shape_table(hyper);
    if (tensors_.size() != table.size())
        throw WeightShapeMismatch("tensor count " + std::to_string(tensors_.size()) +
                                  ", expected " + std::to_string(table.size()));
    for (const auto& [name, shape] : table) {
        auto it = tensors_.find(name);
        if (it == tensors_.end())
            throw WeightShapeMismatch("missing tensor " + name);
        if (it->second.rows != shape.first || it->second.cols != shape.second)
            throw WeightShapeMismatch(
                "tensor " + name + " is " + std::to_string(it->second.rows) + "x" +
                std::to_string(it->second.cols) + ", expected " + std::to_string(shape.first) +
                "x" + std::to_string(shape.second));
    }
}

void RefinerWeights::save(const std::string& path) const {
    validate();
    const auto table = shape_table(hyper);
    std::string payload;
    nlohmann::ordered_json tensor_list = nlohmann::ordered_json::array();
    for (const auto& [name, shape] : table) {
        nlohmann::ordered_json jt;
        jt["name"] = name;
        jt["rows"] = shape.first;
        jt["cols"] = shape.second;
        jt["offset"] = payload.size();
        tensor_list.push_back(std::move(jt));
        for (double v : tensors_.at(name).data)
            append_f32(payload, static_cast<float>(v));
    }

    nlohmann::ordered_json header;
    header["version"] = 1;
    header["hyper"] = {{"hidden", hyper.hidden},
                       {"heads", hyper.heads},
                       {"layers", hyper.layers},
                       {"ffn", hyper.ffn},
                       {"lowlevel_channels", hyper.lowlevel_channels},
                       {"lowlevel_in", hyper.lowlevel_in},
                       {"posenc_per_coord", hyper.posenc_per_coord},
                       {"instance_queries", hyper.instance_queries},
                       {"decoder_hidden", hyper.decoder_hidden}};
    header["tensors"] = std::move(tensor_list);
    header["checksum"] = std::to_string(
        fnv1a(reinterpret_cast<const unsigned char*>(payload.data()), payload.size()));
    const std::string header_str = header.dump();

    std::string blob = "VMTW";
    append_u32(blob, 1);
    append_u32(blob, static_cast<std::uint32_t>(header_str.size()));
    blob += header_str;
    blob += payload;

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out)
        throw IoError("write failed for " + path);
}

RefinerWeights RefinerWeights::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (blob.size() < 12 || blob.compare(0, 4, "VMTW") != 0)
        throw SchemaError(path + ": not a weight file");
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
    const std::uint32_t version = read_u32(bytes + 4);
    if (version != 1)
        throw SchemaError(path + ": unsupported weight version " + std::to_string(version));
    const std::uint32_t header_len = read_u32(bytes + 8);
    if (blob.size() < 12 + static_cast<std::size_t>(header_len))
        throw SchemaError(path + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(blob.substr(12, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path + ": bad header: " + e.what());
    }

    RefinerWeights w;
    try {
        const auto& jh = header.at("hyper");
        w.hyper.hidden = jh.at("hidden").get<int>();
        w.hyper.heads = jh.at("heads").get<int>();
        w.hyper.layers = jh.at("layers").get<int>();
        w.hyper.ffn = jh.at("ffn").get<int>();
        w.hyper.lowlevel_channels = jh.at("lowlevel_channels").get<int>();
        w.hyper.lowlevel_in = jh.at("lowlevel_in").get<int>();
        w.hyper.posenc_per_coord = jh.at("posenc_per_coord").get<int>();
        w.hyper.instance_queries = jh.at("instance_queries").get<int>();
        w.hyper.decoder_hidden = jh.at("decoder_hidden").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path + ": bad hyperparameters: " + e.what());
    }

    const std::size_t payload_off = 12 + header_len;
    const std::size_t payload_len = blob.size() - payload_off;
    const std::uint64_t sum = fnv1a(bytes + payload_off, payload_len);
    if (header.value("checksum", "") != std::to_string(sum))
        throw SchemaError(path + ": payload checksum mismatch");

    for (const auto& jt : header.at("tensors")) {
        const std::string name = jt.at("name").get<std::string>();
        const int rows = jt.at("rows").get<int>();
        const int cols = jt.at("cols").get<int>();
        const std::size_t offset = jt.at("offset").get<std::size_t>();
        const std::size_t n = static_cast<std::size_t>(rows) * cols;
        if (offset + n * 4 > payload_len)
            throw SchemaError(path + ": tensor " + name + " overruns the payload");
        Matrix m(rows, cols);
        for (std::size_t i = 0; i < n; ++i)
            m.data[i] = read_f32(bytes + payload_off + offset + i * 4);
        w.tensors_.emplace(name, std::move(m));
    }
    w.validate();
    return w;
}

Matrix encode_nodes(const TokenSequence& seq, std::span<const BinaryMask> clip,
                    const RefinerWeights& weights) {
    const TransformerHyper& h = weights.hyper;
    std::vector<std::vector<double>> sdt(clip.size());
    for (const NodeToken& tok : seq.tokens)
        if (sdt[static_cast<std::size_t>(tok.t)].empty())
            sdt[static_cast<std::size_t>(tok.t)] =
                sdt_input(clip[static_cast<std::size_t>(tok.t)], seq.padded_width,
                          seq.padded_height);

    Matrix input(static_cast<int>(seq.tokens.size()), h.encoder_in());
    std::vector<double> low(static_cast<std::size_t>(h.lowlevel_channels));
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        const NodeToken& tok = seq.tokens[i];
        int k = 0;
        input.at(static_cast<int>(i), k++) = tok.mask_center;
        input.at(static_cast<int>(i), k++) = tok.mask_mean;
        input.at(static_cast<int>(i), k++) = tok.mask_level;

        const int cell = 1 << tok.level;
        lowlevel_at(sdt[static_cast<std::size_t>(tok.t)], seq.padded_width, seq.padded_height,
                    tok.row * cell + cell / 2, tok.col * cell + cell / 2, weights, low.data());
        for (int c = 0; c < h.lowlevel_channels; ++c)
            input.at(static_cast<int>(i), k++) = low[static_cast<std::size_t>(c)];

        std::vector<double> pe(static_cast<std::size_t>(h.posenc_per_coord));
        for (double coord : {static_cast<double>(tok.t), static_cast<double>(tok.level),
                             static_cast<double>(tok.row * cell), static_cast<double>(tok.col * cell)}) {
            sinusoidal(coord, h.posenc_per_coord, pe.data());
            for (int c = 0; c < h.posenc_per_coord; ++c)
                input.at(static_cast<int>(i), k++) = pe[static_cast<std::size_t>(c)];
        }
    }
    Matrix x = linear(input, weights.at("encoder.weight"), weights.at("encoder.bias"));
    check_finite(x, "node encoder");
    return x;
}

Matrix nal_forward(const Matrix& x, const RefinerWeights& weights, int layer,
                   std::vector<Matrix>* attn_out) {
    const std::string p = "layers." + std::to_string(layer) + ".nal";
    const Matrix normed = layer_norm(x, weights.at(p + ".norm1.gamma"), weights.at(p + ".norm1.beta"));
    const Matrix attended = attention(normed, normed, weights, p + ".attn", attn_out);
    const Matrix x1 = add(x, attended);
    check_finite(x1, "node attention");

    const Matrix normed2 =
        layer_norm(x1, weights.at(p + ".norm2.gamma"), weights.at(p + ".norm2.beta"));
    const Matrix f1 = relu(linear(normed2, weights.at(p + ".ffn.w1"), weights.at(p + ".ffn.b1")));
    const Matrix f2 = linear(f1, weights.at(p + ".ffn.w2"), weights.at(p + ".ffn.b2"));
    const Matrix x2 = add(x1, f2);
    check_finite(x2, "node feed-forward");
    return x2;
}

Matrix igl_forward(const Matrix& x, const RefinerWeights& weights, int layer,
                   std::vector<Matrix>* attn_out) {
    const std::string p = "layers." + std::to_string(layer) + ".igl";
    const Matrix normed = layer_norm(x, weights.at(p + ".norm.gamma"), weights.at(p + ".norm.beta"));
    const Matrix attended =
        attention(normed, weights.at("instance_queries"), weights, p + ".attn", attn_out);
    const Matrix y = add(x, attended);
    check_finite(y, "instance-guided attention");
    return y;
}

std::vector<NodePrediction> decode_pixels(const Matrix& hidden, const RefinerWeights& weights) {
    const Matrix trunk = relu(linear(hidden, weights.at("decoder.w1"), weights.at("decoder.b1")));
    const Matrix node = linear(trunk, weights.at("decoder.node_head.weight"),
                               weights.at("decoder.node_head.bias"));
    const Matrix quad = linear(trunk, weights.at("decoder.quad_head.weight"),
                               weights.at("decoder.quad_head.bias"));
    check_finite(node, "pixel decoder");
    check_finite(quad, "pixel decoder");
    std::vector<NodePrediction> out(static_cast<std::size_t>(hidden.rows));
    for (int i = 0; i < hidden.rows; ++i) {
        out[static_cast<std::size_t>(i)].node_logit = node.at(i, 0);
        for (int q = 0; q < 4; ++q)
            out[static_cast<std::size_t>(i)].quad_logits[static_cast<std::size_t>(q)] =
                quad.at(i, q);
    }
    return out;
}

std::vector<NodePrediction> refine_forward(const TokenSequence& seq,
                                           std::span<const BinaryMask> clip,
                                           const RefinerWeights& weights,
                                           AttentionCapture* capture) {
    weights.validate();
    Matrix x = encode_nodes(seq, clip, weights);
    for (int l = 0; l < weights.hyper.layers; ++l) {
        std::vector<Matrix>* nal_slot = nullptr;
        std::vector<Matrix>* igl_slot = nullptr;
        if (capture != nullptr) {
            capture->nal.emplace_back();
            capture->igl.emplace_back();
            nal_slot = &capture->nal.back();
            igl_slot = &capture->igl.back();
        }
        x = nal_forward(x, weights, l, nal_slot);
        x = igl_forward(x, weights, l, igl_slot);
    }
    x = layer_norm(x, weights.at("final_norm.gamma"), weights.at("final_norm.beta"));
    check_finite(x, "final norm");
    return decode_pixels(x, weights);
}

nlohmann::ordered_json attention_to_json(const TokenSequence& seq, const AttentionCapture& capture,
                                         int top_k) {
    auto token_json = [&seq](int index) {
        const NodeToken& tok = seq.tokens[static_cast<std::size_t>(index)];
        nlohmann::ordered_json j;
        j["t"] = tok.t;
        j["level"] = tok.level;
        j["row"] = tok.row;
        j["col"] = tok.col;
        return j;
    };

    nlohmann::ordered_json out;
    out["tokens"] = static_cast<int>(seq.tokens.size());
    out["layers"] = nlohmann::ordered_json::array();
    for (std::size_t l = 0; l < capture.nal.size(); ++l) {
        nlohmann::ordered_json jl;
        jl["layer"] = static_cast<int>(l);
        jl["self"] = nlohmann::ordered_json::array();
        const auto& heads = capture.nal[l];
        const int n = heads.empty() ? 0 : heads.front().rows;
        for (int i = 0; i < n; ++i) {
            std::vector<std::pair<double, int>> mean;
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (const Matrix& head : heads)
                    acc += head.at(i, j);
                mean.emplace_back(acc / static_cast<double>(heads.size()), j);
            }
            std::sort(mean.begin(), mean.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first)
                    return a.first > b.first;
                return a.second < b.second;
            });
            nlohmann::ordered_json ji;
            ji["token"] = token_json(i);
            ji["top"] = nlohmann::ordered_json::array();
            for (int k = 0; k < top_k && k < static_cast<int>(mean.size()); ++k) {
                nlohmann::ordered_json jt = token_json(mean[static_cast<std::size_t>(k)].second);
                jt["weight"] = mean[static_cast<std::size_t>(k)].first;
                ji["top"].push_back(std::move(jt));
            }
            jl["self"].push_back(std::move(ji));
        }
        if (l < capture.igl.size() && !capture.igl[l].empty()) {
            jl["instance"] = nlohmann::ordered_json::array();
            const auto& iheads = capture.igl[l];
            const int nq = iheads.front().cols;
            for (int i = 0; i < iheads.front().rows; ++i) {
                nlohmann::ordered_json ji;
                ji["token"] = token_json(i);
                std::vector<double> weights_row;
                for (int q = 0; q < nq; ++q) {
                    double acc = 0.0;
                    for (const Matrix& head : iheads)
                        acc += head.at(i, q);
                    weights_row.push_back(acc / static_cast<double>(iheads.size()));
                }
                ji["weights"] = weights_row;
                jl["instance"].push_back(std::move(ji));
            }
        }
        out["layers"].push_back(std::move(jl));
    }
    return out;
}

OracleRefiner::OracleRefiner(VideoDataset gt, double flip_prob, std::uint64_t seed)
    : gt_(std::move(gt)), flip_prob_(flip_prob), seed_(seed) {}

std::string OracleRefiner::name() const {
    return "oracle";
}

std::vector<double> OracleRefiner::predict(const std::vector<BinaryMask>&, int video_id,
                                           int instance_id, int clip_start,
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
    std::vector<double> probs;
    probs.reserve(coords.size());
    for (const FineCoord& coord : coords) {
        const int abs_t = clip_start + coord.t;
        int value = 0;
        if (abs_t >= 0 && abs_t < static_cast<int>(truth->frames.size()) &&
            truth->frames[static_cast<std::size_t>(abs_t)]) {
            auto it = decoded.find(abs_t);
            if (it == decoded.end())
                it = decoded
                         .emplace(abs_t,
                                  truth->frames[static_cast<std::size_t>(abs_t)]->to_raster())
                         .first;
            if (it->second.in_bounds(coord.row, coord.col))
                value = it->second.at(coord.row, coord.col);
        }
        double p = value ? 1.0 : 0.0;
        if (flip_prob_ > 0.0) {
            const std::uint64_t h = hash_combine(
                {seed_, static_cast<std::uint64_t>(video_id), static_cast<std::uint64_t>(instance_id),
                 static_cast<std::uint64_t>(abs_t), static_cast<std::uint64_t>(coord.row),
                 static_cast<std::uint64_t>(coord.col)});
            if (hash_unit(h) < flip_prob_)
                p = 1.0 - p;
        }
        probs.push_back(p);
    }
    return probs;
}

TransformerRefiner::TransformerRefiner(RefinerWeights weights) : weights_(std::move(weights)) {
    weights_.validate();
}

std::vector<double> TransformerRefiner::predict(const std::vector<BinaryMask>& coarse_clip, int,
                                                int, int, std::span<const FineCoord> coords) {
    std::vector<double> probs(coords.size(), 0.5);
    const IncoherenceQuadtree qt = detect_incoherence(coarse_clip);
    TokenSequence seq;
    try {
        seq = group_sequence(qt, coarse_clip);
    } catch (const EmptyClip&) {
        return probs; // fully coherent clip: no opinion anywhere
    }
    const std::vector<NodePrediction> preds = refine_forward(seq, coarse_clip, weights_);

    std::unordered_map<std::int64_t, double> fine;
    const auto key = [&qt](int t, int r, int c) {
        return (static_cast<std::int64_t>(t) * qt.height + r) * qt.width + c;
    };
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        const NodeToken& tok = seq.tokens[i];
        if (tok.level != 1)
            continue;
        for (int dr = 0; dr < 2; ++dr) {
            for (int dc = 0; dc < 2; ++dc) {
                const int r = 2 * tok.row + dr;
                const int c = 2 * tok.col + dc;
                if (r >= qt.height || c >= qt.width)
                    continue;
                const double logit = preds[i].quad_logits[static_cast<std::size_t>(dr * 2 + dc)];
                fine[key(tok.t, r, c)] = 1.0 / (1.0 + std::exp(-logit));
            }
        }
    }
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const auto it = fine.find(key(coords[i].t, coords[i].row, coords[i].col));
        if (it != fine.end())
            probs[i] = it->second;
    }
    return probs;
}

} // namespace vistk
