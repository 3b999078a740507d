#pragma once

// Mask-aware encoder mapping a partial image to token-label logits at the
// token-grid cells that survive the alpha downsampling rule.

#include "plural/vq.hpp"

#include <span>

namespace plural {

struct EncoderConfig {
    int image_size = 64;
    int codebook_size = 64;
    std::vector<int> channels{32, 64, 128};  // one per downsampling stage
    int blocks_per_stage = 2;
    float alpha = 0.5f;
    ConvKind kind = ConvKind::Restrictive;  // Plain for the ablation

    int stages() const { return static_cast<int>(channels.size()); }
    int grid_size() const { return image_size >> stages(); }
    void validate() const;
};

struct EncoderOutput {
    Tensor logits;                     // [N,K,h,w]
    std::vector<MaskPyramid> pyramids;  // per image; token_mask() is M-hat
};

class RestrictiveEncoder {
public:
    RestrictiveEncoder(const EncoderConfig& config, std::uint64_t seed);

    const EncoderConfig& config() const { return config_; }
    // images [N,3,H,W] (multiplied by the masks internally), one mask per image.
    EncoderOutput forward(const Tensor& images, std::span<const MaskGrid> masks) const;

    nn::ParamList params() const;
    nn::ParamList checkpoint_entries() const;  // params plus "encoder/meta"
    void load(const TensorMap& source);

private:
    EncoderConfig config_;
    MaskedConv conv_in_;
    std::vector<std::vector<ResBlock>> stages_;
    std::vector<SpatialAttention> stage_attention_;  // undefined entries skipped
    std::vector<bool> has_attention_;
    ResBlock bottom_;
    SpatialAttention bottom_attention_;
    nn::LayerNorm head_norm_;
    MaskedConv head_;
};

// Single-image form: logits [K,h,w] plus the pyramid.
std::pair<Tensor, MaskPyramid> encode_partial(const RestrictiveEncoder& encoder, const Tensor& image,
                                              const MaskGrid& mask);

// Mean negative log-likelihood over cells where the token mask is visible.
// Returns 0 (with a warning) when no cell is visible.
Tensor encoder_loss(const Tensor& logits, std::span<const TokenGrid> targets,
                    std::span<const MaskGrid> token_masks);

// Per-cell argmax labels of [N,K,h,w] logits.
std::vector<TokenGrid> argmax_grids(const Tensor& logits, int mask_label);

// Cells of the token grid that are visible in M-hat but whose pixel block
// contains at least one masked pixel.
std::vector<int> boundary_cells(const MaskGrid& pixel_mask, const MaskGrid& token_mask);

struct EncoderMetrics {
    double loss = 0.0;                // mean NLL over visible cells
    double accuracy = 0.0;            // argmax accuracy over visible cells
    double boundary_accuracy = 0.0;   // over boundary cells only
    std::int64_t visible_cells = 0;
    std::int64_t boundary_cells = 0;
};

// targets[i] belongs to images[i]; masks likewise.
EncoderMetrics evaluate_encoder(const RestrictiveEncoder& encoder, const ImageSet& images,
                                std::span<const TokenGrid> targets, std::span<const MaskGrid> masks,
                                int batch = 16);
// Same metrics restricted to caller-chosen token cells (one grid per image),
// e.g. the cells two alpha settings both keep. Cells the encoder itself drops
// score their logits as produced (zero for the restrictive head).
EncoderMetrics evaluate_encoder(const RestrictiveEncoder& encoder, const ImageSet& images,
                                std::span<const TokenGrid> targets, std::span<const MaskGrid> masks,
                                std::span<const MaskGrid> cells, int batch = 16);

// Training masks are drawn half small-random, half large-random.
struct EncoderTrainConfig {
    int steps = 2000;
    int batch = 8;
    float lr = 1e-3f;
    int log_every = 100;
    std::uint64_t seed = 2;
    StrokeParams strokes;
};

struct EncoderReport {
    std::vector<double> window_loss;
    std::vector<double> window_accuracy;
    double final_window_loss = 0.0;
};

EncoderReport train_encoder(RestrictiveEncoder& encoder, const ImageSet& data, std::span<const TokenGrid> targets,
                            const EncoderTrainConfig& config);

// Random training mask for sample `index` of stream `seed`.
MaskGrid training_mask(std::uint64_t seed, std::uint64_t index, int extent, const StrokeParams& strokes);

}  // namespace plural
