#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vistk/anno_io.hpp"
#include "vistk/incoherence.hpp"
#include "vistk/mask.hpp"

namespace vistk {

/// Dense row-major matrix of doubles. Vectors are stored as 1 x n.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

/// One quadtree cell lifted to a transformer token. Coordinates live on the
/// padded grid of the cell's level; mask context samples the frame pyramid.
struct NodeToken {
    int t = 0;     // 0-based frame within the clip
    int level = 0; // 1..3
    int row = 0;
    int col = 0;
    double mask_center = 0.0; // fine value at the cell's center pixel
    double mask_mean = 0.0;   // mean fine value over the cell footprint
    double mask_level = 0.0;  // pyramid value at (level, row, col)
};

struct TokenSequence {
    int width = 0; // unpadded frame dims
    int height = 0;
    int padded_width = 0;
    int padded_height = 0;
    int clip_len = 0;
    std::vector<NodeToken> tokens; // (t, level, row, col) lexicographic
};

/// Flagged cells of all levels across the clip, ordered lexicographically
/// by (t, level, row, col). Throws EmptyClip when nothing is flagged.
TokenSequence group_sequence(const IncoherenceQuadtree& qt, std::span<const BinaryMask> clip);

struct TransformerHyper {
    int hidden = 64;
    int heads = 4;
    int layers = 3;
    int ffn = 256;
    int lowlevel_channels = 8;
    int lowlevel_in = 1; // signed-distance field of the coarse mask
    int posenc_per_coord = 8;
    int instance_queries = 4;
    int decoder_hidden = 32;

    int head_dim() const { return hidden / heads; }
    /// Mask context (3) + low-level embedding + positional encoding.
    int encoder_in() const { return 3 + lowlevel_channels + 4 * posenc_per_coord; }

    bool operator==(const TransformerHyper&) const = default;
};

/// Named parameter store. Weight values round-trip through f32, and
/// initialization itself rounds through f32, so a freshly initialized model
/// and its saved copy compute identically.
class RefinerWeights {
public:
    TransformerHyper hyper;

    const Matrix& at(const std::string& name) const;
    Matrix& at(const std::string& name);
    const std::map<std::string, Matrix>& tensors() const { return tensors_; }

    /// Seeded Xavier-uniform init for weights, zeros for biases, ones for
    /// norm gains. The same seed yields the same parameters on every
    /// platform.
    static RefinerWeights init(const TransformerHyper& hyper, std::uint64_t seed);

    /// Binary container: magic "VMTW", version, JSON header (hyperparameters,
    /// tensor table, payload checksum), then raw little-endian f32 payload.
    void save(const std::string& path) const;
    static RefinerWeights load(const std::string& path);

    /// Throws WeightShapeMismatch when a tensor is missing, unexpected, or
    /// misshapen for the stored hyperparameters.
    void validate() const;

private:
    std::map<std::string, Matrix> tensors_;
};

/// Per-layer, per-head attention weights captured during a forward pass.
/// nal[layer][head] is tokens x tokens; igl[layer][head] is tokens x queries.
struct AttentionCapture {
    std::vector<std::vector<Matrix>> nal;
    std::vector<std::vector<Matrix>> igl;
};

/// Token embeddings: mask context, low-level embedding sampled at the cell
/// center, and sinusoidal position encoding, through the input projection.
Matrix encode_nodes(const TokenSequence& seq, std::span<const BinaryMask> clip,
                    const RefinerWeights& weights);

/// Pre-norm self-attention plus feed-forward over all tokens of the clip.
Matrix nal_forward(const Matrix& x, const RefinerWeights& weights, int layer,
                   std::vector<Matrix>* attn_out = nullptr);

/// Pre-norm cross-attention from tokens to the learned instance queries.
/// Queries are read-only; no feed-forward follows.
Matrix igl_forward(const Matrix& x, const RefinerWeights& weights, int layer,
                   std::vector<Matrix>* attn_out = nullptr);

struct NodePrediction {
    double node_logit = 0.0;
    /// Fine logits for the 2x2 pixel block of a level-1 cell, row-major.
    std::array<double, 4> quad_logits{};
};

/// Shared decoder trunk with a per-node head and a per-quadrant head.
std::vector<NodePrediction> decode_pixels(const Matrix& hidden, const RefinerWeights& weights);

/// Full stack: encode, layers x (NAL then IGL), final norm, decode.
/// Throws NonFiniteActivation if any intermediate value leaves the finite
/// range.
std::vector<NodePrediction> refine_forward(const TokenSequence& seq,
                                           std::span<const BinaryMask> clip,
                                           const RefinerWeights& weights,
                                           AttentionCapture* capture = nullptr);

/// Strongest attended tokens per query token, averaged over heads.
nlohmann::ordered_json attention_to_json(const TokenSequence& seq, const AttentionCapture& capture,
                                         int top_k);

/// One fine pixel to re-decide: 0-based frame within the clip, unpadded
/// pixel coordinates.
struct FineCoord {
    int t = 0;
    int row = 0;
    int col = 0;
};

/// Sources of per-pixel foreground probabilities for the correction loop.
class Refiner {
public:
    virtual ~Refiner() = default;
    virtual std::string name() const = 0;
    /// Probabilities aligned with coords. clip_start is the 0-based offset
    /// of the clip within its video, so per-pixel decisions stay stable
    /// across clip decompositions.
    virtual std::vector<double> predict(const std::vector<BinaryMask>& coarse_clip, int video_id,
                                        int instance_id, int clip_start,
                                        std::span<const FineCoord> coords) = 0;
    /// Ground truth this refiner consults, when it has one. Lets the loop
    /// report training-side metrics.
    virtual const VideoDataset* reference_gt() const { return nullptr; }
};

/// Consults ground truth and answers with hard 0/1 probabilities, each
/// flipped with probability flip_prob by a per-pixel hash of (seed, video,
/// instance, absolute frame, row, col).
class OracleRefiner : public Refiner {
public:
    OracleRefiner(VideoDataset gt, double flip_prob, std::uint64_t seed);
    std::string name() const override;
    std::vector<double> predict(const std::vector<BinaryMask>& coarse_clip, int video_id,
                                int instance_id, int clip_start,
                                std::span<const FineCoord> coords) override;
    const VideoDataset* reference_gt() const override { return &gt_; }

private:
    VideoDataset gt_;
    double flip_prob_;
    std::uint64_t seed_;
};

/// Answers the same probability everywhere. Exercises the confidence
/// threshold of the correction rule.
class ConstantRefiner : public Refiner {
public:
    explicit ConstantRefiner(double p) : p_(p) {}
    std::string name() const override { return "constant"; }
    std::vector<double> predict(const std::vector<BinaryMask>&, int, int, int,
                                std::span<const FineCoord> coords) override {
        return std::vector<double>(coords.size(), p_);
    }

private:
    double p_;
};

/// Runs the transformer over the clip's own incoherence tokens and reads
/// fine probabilities from the quadrant head of level-1 cells. Pixels
/// outside every flagged cell get 0.5, which the confidence rule discards.
class TransformerRefiner : public Refiner {
public:
    explicit TransformerRefiner(RefinerWeights weights);
    std::string name() const override { return "transformer"; }
    std::vector<double> predict(const std::vector<BinaryMask>& coarse_clip, int video_id,
                                int instance_id, int clip_start,
                                std::span<const FineCoord> coords) override;

private:
    RefinerWeights weights_;
};

} // namespace vistk
