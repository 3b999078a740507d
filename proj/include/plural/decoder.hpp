#pragma once

// Third stage: partial-convolution feature encoder, token/feature fusion,
// generator and discriminator, with the adversarial training objective.

#include "plural/encoder.hpp"

#include <span>

namespace plural {

struct DecoderConfig {
    int image_size = 64;
    int stages = 3;
    int n_z = 32;
    float alpha = 0.5f;                          // for M-hat
    std::vector<int> prt_channels{32, 64, 64};   // E_prt, one per stage
    std::vector<int> gen_channels{32, 64, 64};   // G, one per stage (finest first)
    std::vector<int> disc_channels{32, 64, 64, 64};
    float disc_leak = 0.2f;  // 1 makes D linear in its input

    int grid_size() const { return image_size >> stages; }
    void validate() const;
};

class PartialEncoder {
public:
    PartialEncoder() = default;
    PartialEncoder(const DecoderConfig& config, Rng& rng);
    // images [N,3,H,W] (masked internally) -> [N,n_z,h,w]
    Tensor forward(const Tensor& images, std::span<const MaskGrid> masks) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

private:
    MaskedConv in_;
    std::vector<MaskedConv> stages_;
    MaskedConv out_;
};

class Generator {
public:
    Generator() = default;
    Generator(const DecoderConfig& config, Rng& rng);
    Tensor forward(const Tensor& features) const;  // [N,n_z,h,w] -> [N,3,H,W] in [-1,1]
    void collect(const std::string& prefix, nn::ParamList& out) const;

private:
    nn::Conv2d in_;
    ResBlock mid_;
    std::vector<nn::Conv2d> stages_;
    nn::Conv2d out_;
};

class Discriminator {
public:
    Discriminator() = default;
    Discriminator(const std::vector<int>& channels, int image_size, float leak, Rng& rng);
    Tensor forward(const Tensor& images) const;  // [N,3,H,W] -> logits [N,1]
    void collect(const std::string& prefix, nn::ParamList& out) const;

private:
    std::vector<nn::Conv2d> convs_;
    nn::Linear head_;
    float leak_ = 0.2f;
};

class ComposerNet {
public:
    ComposerNet(const DecoderConfig& config, std::uint64_t seed);
    const DecoderConfig& config() const { return config_; }

    PartialEncoder prt;
    Generator gen;
    Discriminator disc;

    nn::ParamList generator_params() const;  // E_prt and G ("decoder/")
    nn::ParamList disc_params() const;       // "disc/"
    nn::ParamList checkpoint_entries() const;
    void load(const TensorMap& source);

private:
    DecoderConfig config_;
};

// (1 - M)(Z + P)/2 + M P, per cell. z and partial [N,n_z,h,w] or [n_z,h,w].
Tensor compose(const Tensor& z, const Tensor& partial, std::span<const MaskGrid> token_masks);
Tensor compose(const Tensor& z, const Tensor& partial, const MaskGrid& token_mask);

// G(compose(Z, E_prt(X_M), M-hat)). images [N,3,H,W], one mask and one Z per image.
Tensor decode(const ComposerNet& nets, const Tensor& images, std::span<const MaskGrid> masks, const Tensor& z);

struct DecoderLosses {
    Tensor l_g;       // -E[log sigmoid(D(x_hat))]
    Tensor l_d;       // -E[log sigmoid(D(x))] - E[log(1 - sigmoid(D(x_hat)))]
    double r1 = 0.0;  // E ||grad_x D(x)||^2 (value only; see r1_penalty)
    Tensor l_p;       // L1(x, x_hat) + MSE(E_VQ(x), E_VQ(x_hat))
    Tensor l_decode;  // l_g + w_r1 * r1 + w_p * l_p
};

struct LossWeights {
    float r1 = 0.1f;
    float perceptual = 0.1f;
};

// x_hat keeps its graph so l_g / l_p backpropagate into the generator; l_d
// sees a detached x_hat.
DecoderLosses decoder_losses(const Tensor& x, const Tensor& x_hat, const Discriminator& disc,
                             const VqAutoencoder& vq, const LossWeights& weights = {});

// Per-sample input gradients of D at x, and R1 = mean squared norm.
struct R1Result {
    double value = 0.0;
    std::vector<float> input_grad;  // same layout as x
};
R1Result r1_penalty(const Discriminator& disc, const Tensor& x);

// Adds scale * grad_theta R1 to the discriminator's parameter grads using a
// central finite difference of parameter gradients along v = grad_x D:
//   grad_theta R1 ~= (2/B) [grad_theta sum D(x + eps v) - grad_theta sum D(x - eps v)] / (2 eps)
// with eps chosen so that eps * v has RMS `step`. Returns the R1 value.
double accumulate_r1_grad(const Discriminator& disc, const Tensor& x, float scale, float step = 1e-2f);

struct DecoderTrainConfig {
    int steps = 1500;
    int batch = 8;
    float lr = 2e-4f;
    float disc_lr = 2e-4f;
    LossWeights weights;
    int r1_interval = 4;  // lazy regularization
    int log_every = 100;
    std::uint64_t seed = 4;
    StrokeParams strokes;
};

struct DecoderReport {
    std::vector<double> window_masked_mse;
    std::vector<double> window_visible_mse;
    std::vector<double> window_disc_accuracy;
    std::vector<double> window_l_g, window_l_d, window_r1;
};

DecoderReport train_decoder(ComposerNet& nets, VqAutoencoder& vq, const ImageSet& data,
                            const DecoderTrainConfig& config);

// Training-time Z: codebook rows of the quantized E_VQ labels.
Tensor quantized_features(const VqAutoencoder& vq, const Tensor& images);

struct DecoderMetrics {
    double masked_mse = 0.0, visible_mse = 0.0;
};
// Reconstruction error decoding ground-truth codes, split by pixel mask.
DecoderMetrics evaluate_decoder(const ComposerNet& nets, const VqAutoencoder& vq, const ImageSet& images,
                                std::span<const MaskGrid> masks, int batch = 16);

}  // namespace plural
