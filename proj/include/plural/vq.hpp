#pragma once

// Discrete codebook, token grids and the vector-quantized autoencoder whose
// encoder supplies ground-truth labels for the later stages.

#include "plural/blocks.hpp"
#include "plural/checkpoint.hpp"
#include "plural/data.hpp"

#include <string>
#include <vector>

namespace plural {

struct Codebook {
    Tensor embeddings;  // [K, n_z]

    int size() const { return static_cast<int>(embeddings.size(0)); }
    int dim() const { return static_cast<int>(embeddings.size(1)); }
    int mask_label() const { return size(); }
};

class TokenGrid {
public:
    TokenGrid() = default;
    TokenGrid(int h, int w, int mask_label, int fill);
    TokenGrid(int h, int w, int mask_label, std::vector<int> labels);

    int height() const { return h_; }
    int width() const { return w_; }
    int cells() const { return h_ * w_; }
    int mask_label() const { return mask_; }
    int label(int i) const { return labels_[static_cast<std::size_t>(i)]; }
    int at(int y, int x) const { return label(y * w_ + x); }
    void set(int i, int label);
    bool is_mask(int i) const { return label(i) == mask_; }
    const std::vector<int>& labels() const { return labels_; }

    std::vector<int> visible_cells() const;
    std::vector<int> missing_cells() const;
    int missing_count() const;

    // "h w" header then one row per line, MASK written as M.
    std::string to_text() const;
    static TokenGrid from_text(const std::string& text, int mask_label);

    bool operator==(const TokenGrid&) const = default;

private:
    int h_ = 0, w_ = 0, mask_ = 0;
    std::vector<int> labels_;
};

// Nearest codebook row per cell; ties go to the lowest index.
TokenGrid quantize(const Tensor& features, const Codebook& codebook);             // [n_z,h,w]
std::vector<TokenGrid> quantize_batch(const Tensor& features, const Codebook& codebook);  // [N,n_z,h,w]
std::vector<int> nearest_codes(std::span<const float> vectors, int dim, const Codebook& codebook);

// Differentiable w.r.t. the codebook (and mask_embedding, if given). MASK
// labels require mask_embedding ([n_z]).
Tensor lookup(const TokenGrid& grid, const Codebook& codebook, const Tensor& mask_embedding = {});
Tensor lookup_batch(std::span<const TokenGrid> grids, const Codebook& codebook,
                    const Tensor& mask_embedding = {});

struct VqConfig {
    int image_size = 64;
    int stages = 3;
    int codebook_size = 64;
    int n_z = 32;
    std::vector<int> channels{32, 64, 64};  // one per stage, finest first

    int grid_size() const { return image_size >> stages; }
    void validate() const;
};

class VqAutoencoder {
public:
    VqAutoencoder(const VqConfig& config, std::uint64_t seed);

    const VqConfig& config() const { return config_; }
    Tensor encode(const Tensor& images) const;  // [N,3,H,W] -> [N,n_z,h,w] before quantization
    Tensor decode(const Tensor& z) const;       // [N,n_z,h,w] -> [N,3,H,W] in [-1,1]

    nn::ParamList encoder_params() const;
    nn::ParamList decoder_params() const;
    nn::ParamList params() const;  // encoder, decoder, codebook, metadata excluded

    nn::ParamList checkpoint_entries() const;  // params plus "vq/meta"
    void load(const TensorMap& source);

    Codebook codebook;

private:
    VqConfig config_;
    nn::Conv2d enc_in_;
    std::vector<nn::Conv2d> enc_stages_;
    ResBlock enc_mid_;
    nn::Conv2d enc_out_;
    nn::Conv2d dec_in_;
    ResBlock dec_mid_;
    std::vector<nn::Conv2d> dec_stages_;
    nn::Conv2d dec_out_;
};

struct VqForward {
    Tensor reconstruction;
    Tensor loss, recon_loss, codebook_loss, commitment_loss;
    std::vector<int> labels;  // N*h*w, row-major per image
};

VqForward vq_forward(const VqAutoencoder& model, const Tensor& images, float commitment = 0.25f);

struct VqTrainConfig {
    int steps = 2000;
    int batch = 8;
    float lr = 1e-3f;
    float commitment = 0.25f;
    int log_every = 100;
    std::uint64_t seed = 1;
};

struct VqReport {
    std::vector<double> window_mse;  // mean reconstruction MSE per log window
    double final_mse = 0.0;          // full pass over the training set
    double usage = 0.0;              // fraction of codes used on the training set
};

// Codebook rows are initialised from encoder outputs of the first batch.
VqReport train_vq(VqAutoencoder& model, const ImageSet& data, const VqTrainConfig& config);

TokenGrid encode_full(const Tensor& image, const VqAutoencoder& model);  // [3,H,W]
std::vector<TokenGrid> encode_full_batch(const Tensor& images, const VqAutoencoder& model);

// Mean squared error of decode(lookup(quantize(encode(x)))) over the set.
double reconstruction_mse(const VqAutoencoder& model, const ImageSet& data, int batch = 16);

}  // namespace plural
