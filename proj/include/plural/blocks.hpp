#pragma once

// Convolutional building blocks shared by the VQ autoencoder, the restrictive
// encoder and the composition decoder. A block carries its batch of masks
// alongside the features so mask-aware convolutions can be swapped in.

#include "plural/mask.hpp"
#include "plural/nn.hpp"

#include <vector>

namespace plural {

enum class ConvKind { Plain, Partial, Restrictive };

struct MaskedFeatures {
    Tensor x;                     // [N,C,H,W]
    std::vector<MaskGrid> masks;  // one per batch item at the current resolution
};

class MaskedConv {
public:
    MaskedConv() = default;
    MaskedConv(int in_ch, int out_ch, int kernel, ConvKind kind, float alpha, Rng& rng);
    // Plain and Restrictive leave the masks untouched; Partial updates them.
    MaskedFeatures forward(const MaskedFeatures& in) const;
    void collect(const std::string& prefix, nn::ParamList& out) const { conv_.collect(prefix, out); }

private:
    nn::Conv2d conv_;
    ConvKind kind_ = ConvKind::Plain;
    float alpha_ = 0.5f;
};

// Pre-activation residual block: LN -> SiLU -> conv1 -> LN -> SiLU -> conv2,
// plus a 1x1 skip when the channel count changes.
class ResBlock {
public:
    ResBlock() = default;
    ResBlock(int in_ch, int out_ch, ConvKind kind, float alpha, Rng& rng);
    MaskedFeatures forward(const MaskedFeatures& in) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

private:
    nn::LayerNorm norm1_, norm2_;
    MaskedConv conv1_, conv2_;
    MaskedConv skip_;
    bool has_skip_ = false;
};

// Single-head spatial self-attention with a residual connection. For masked
// kinds, hidden positions are excluded as keys.
class SpatialAttention {
public:
    SpatialAttention() = default;
    SpatialAttention(int channels, ConvKind kind, Rng& rng);
    MaskedFeatures forward(const MaskedFeatures& in) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

private:
    nn::LayerNorm norm_;
    nn::Linear q_, k_, v_, proj_;
    ConvKind kind_ = ConvKind::Plain;
};

// 2x feature downsampling. Masked kinds average only visible pixels and
// update the mask: Restrictive by the alpha rule, Partial by "any visible".
MaskedFeatures downsample(const MaskedFeatures& in, ConvKind kind, float alpha);

}  // namespace plural
