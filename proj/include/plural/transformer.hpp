#pragma once

// Bidirectional transformer over token grids. Input cells are embedded by
// looking up the (frozen) codebook row, or a learned MASK row, and projecting
// to the model width; a learned positional table is added.

#include "plural/vq.hpp"

namespace plural {

// Anything that maps a token grid to per-cell logits [h*w, K].
class TokenPredictor {
public:
    virtual ~TokenPredictor() = default;
    virtual Tensor predict(const TokenGrid& grid) const = 0;
    virtual int codebook_size() const = 0;
};

struct TransformerConfig {
    int grid_size = 8;
    int codebook_size = 64;
    int n_z = 32;
    int dim = 128;
    int layers = 4;
    int heads = 4;
    int mlp_ratio = 4;
    float dropout = 0.1f;  // attention and embedding dropout during training
    bool causal = false;   // ablation only

    int cells() const { return grid_size * grid_size; }
    void validate() const;
};

class BidirectionalTransformer : public TokenPredictor {
public:
    BidirectionalTransformer(const TransformerConfig& config, const Codebook& codebook, std::uint64_t seed);

    const TransformerConfig& config() const { return config_; }
    // [N, h*w, K]. With a rng, dropout is active; without one it is off.
    Tensor forward(std::span<const TokenGrid> grids, Rng* dropout_rng = nullptr) const;
    // Inference: no grad, no dropout.
    Tensor predict(const TokenGrid& grid) const override;
    int codebook_size() const override { return config_.codebook_size; }

    const Tensor& mask_embedding() const { return mask_row_; }
    const Codebook& codebook() const { return codebook_; }

    nn::ParamList params() const;              // trainable only
    nn::ParamList checkpoint_entries() const;  // plus metadata and the frozen codebook
    void load(const TensorMap& source);

private:
    struct Block {
        nn::LayerNorm norm1, norm2;
        nn::Linear q, k, v, proj, fc1, fc2;
    };
    TransformerConfig config_;
    Codebook codebook_;  // frozen copy
    Tensor mask_row_;    // [n_z]
    nn::Linear embed_;
    Tensor positions_;  // [h*w, dim]
    std::vector<Block> blocks_;
    nn::LayerNorm final_norm_;
    nn::Linear head_;
};

// Mean NLL over the MASK cells of each input grid. Returns 0 (with a
// warning) when no cell is masked.
Tensor transformer_loss(const Tensor& logits, std::span<const TokenGrid> targets,
                        std::span<const TokenGrid> inputs);

// Training mask ratio r ~ U[min_ratio, max_ratio].
double sample_mask_ratio(Rng& rng, double min_ratio, double max_ratio);

// Masks ceil(ratio * cells) cells of target. Uniform picks cells uniformly;
// block fills a random rectangle first.
TokenGrid mask_tokens(const TokenGrid& target, double ratio, Rng& rng, bool block = false);

struct TransformerTrainConfig {
    int steps = 3000;
    int batch = 16;
    float lr = 5e-4f;
    double min_ratio = 0.15, max_ratio = 0.75;
    bool block_masking = false;
    bool fixed_masks = false;  // one mask per target, drawn once (overfit checks)
    int log_every = 100;
    std::uint64_t seed = 3;
};

struct TransformerReport {
    std::vector<double> window_loss;
    std::vector<double> ratios;  // every sampled mask ratio
};

// The masked inputs used when fixed_masks is set, one per target.
std::vector<TokenGrid> fixed_mask_inputs(std::span<const TokenGrid> targets, const TransformerTrainConfig& config);

TransformerReport train_transformer(BidirectionalTransformer& model, std::span<const TokenGrid> targets,
                                    const TransformerTrainConfig& config);

// Eval-mode masked-token NLL averaged over the given pairs.
double evaluate_transformer(const BidirectionalTransformer& model, std::span<const TokenGrid> inputs,
                            std::span<const TokenGrid> targets);

}  // namespace plural
