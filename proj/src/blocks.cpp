#include "plural/blocks.hpp"

#include "plural/errors.hpp"

#include <cmath>

namespace plural {

MaskedConv::MaskedConv(int in_ch, int out_ch, int kernel, ConvKind kind, float alpha, Rng& rng)
    : conv_(in_ch, out_ch, kernel, 1, rng, true), kind_(kind), alpha_(alpha) {}

MaskedFeatures MaskedConv::forward(const MaskedFeatures& in) const {
    if (kind_ == ConvKind::Plain) return {conv_.forward(in.x), in.masks};
    // Masked kinds divide by the visible count. The stored weight keeps the
    // plain-conv scale and is multiplied by k^2 here, so a full window matches a
    // plain conv and optimizer steps move the output at the same rate.
    const auto k = conv_.weight.size(2);
    const Tensor w = ops::mul_scalar(conv_.weight, static_cast<float>(k * k));
    switch (kind_) {
        case ConvKind::Plain: break;
        case ConvKind::Restrictive: return {restrictive_conv(in.x, in.masks, w, conv_.bias, alpha_), in.masks};
        case ConvKind::Partial: {
            auto out = partial_conv(in.x, in.masks, w, conv_.bias, 1, conv_.padding);
            return {out.features, std::move(out.masks)};
        }
    }
    throw std::logic_error("unhandled conv kind");
}

ResBlock::ResBlock(int in_ch, int out_ch, ConvKind kind, float alpha, Rng& rng)
    : norm1_(in_ch, nn::LayerNorm::Axis::Channels),
      norm2_(out_ch, nn::LayerNorm::Axis::Channels),
      conv1_(in_ch, out_ch, 3, kind, alpha, rng),
      conv2_(out_ch, out_ch, 3, kind, alpha, rng),
      has_skip_(in_ch != out_ch) {
    if (has_skip_) skip_ = MaskedConv(in_ch, out_ch, 1, kind, alpha, rng);
}

MaskedFeatures ResBlock::forward(const MaskedFeatures& in) const {
    MaskedFeatures h{ops::silu(norm1_.forward(in.x)), in.masks};
    h = conv1_.forward(h);
    h.x = ops::silu(norm2_.forward(h.x));
    h = conv2_.forward(h);
    const Tensor skip = has_skip_ ? skip_.forward(in).x : in.x;
    return {ops::add(skip, h.x), std::move(h.masks)};
}

void ResBlock::collect(const std::string& prefix, nn::ParamList& out) const {
    norm1_.collect(prefix + ".norm1", out);
    conv1_.collect(prefix + ".conv1", out);
    norm2_.collect(prefix + ".norm2", out);
    conv2_.collect(prefix + ".conv2", out);
    if (has_skip_) skip_.collect(prefix + ".skip", out);
}

SpatialAttention::SpatialAttention(int channels, ConvKind kind, Rng& rng)
    : norm_(channels, nn::LayerNorm::Axis::Last),
      q_(channels, channels, rng),
      k_(channels, channels, rng),
      v_(channels, channels, rng),
      proj_(channels, channels, rng),
      kind_(kind) {}

MaskedFeatures SpatialAttention::forward(const MaskedFeatures& in) const {
    const auto n = in.x.size(0), c = in.x.size(1), h = in.x.size(2), w = in.x.size(3);
    const std::int64_t l = h * w;
    const Tensor seq = norm_.forward(ops::reshape(ops::permute(in.x, {0, 2, 3, 1}), {n, l, c}));
    auto heads = [&](const nn::Linear& lin) { return ops::reshape(lin.forward(seq), {n, 1, l, c}); };
    ops::AttentionOptions opt;
    if (kind_ != ConvKind::Plain) {
        std::vector<float> bias;
        bias.reserve(static_cast<std::size_t>(n * l));
        for (const auto& m : in.masks)
            for (auto v : m.values()) bias.push_back(v ? 0.0f : -1e9f);
        opt.key_bias = Tensor::from({n, 1, 1, l}, std::move(bias));
    }
    const Tensor att = ops::attention(heads(q_), heads(k_), heads(v_), opt);
    const Tensor out = proj_.forward(ops::reshape(att, {n, l, c}));
    const Tensor back = ops::permute(ops::reshape(out, {n, h, w, c}), {0, 3, 1, 2});
    return {ops::add(in.x, back), in.masks};
}

void SpatialAttention::collect(const std::string& prefix, nn::ParamList& out) const {
    norm_.collect(prefix + ".norm", out);
    q_.collect(prefix + ".q", out);
    k_.collect(prefix + ".k", out);
    v_.collect(prefix + ".v", out);
    proj_.collect(prefix + ".proj", out);
}

MaskedFeatures downsample(const MaskedFeatures& in, ConvKind kind, float alpha) {
    if (kind == ConvKind::Plain) return {ops::avg_pool2d(in.x, 2), [&] {
                                             std::vector<MaskGrid> m;
                                             for (const auto& g : in.masks) m.push_back(downsample_mask(g, alpha, 2));
                                             return m;
                                         }()};
    const float rule = kind == ConvKind::Restrictive ? alpha : 0.25f;
    const Tensor pooled = ops::avg_pool2d(ops::mul(in.x, mask_tensor(in.masks)), 2);
    std::vector<MaskGrid> next;
    std::vector<float> scale;
    for (const auto& g : in.masks) {
        const auto counts = window_counts(g, 2, 2, 0);
        MaskGrid m = downsample_mask(g, rule, 2);
        for (std::size_t i = 0; i < counts.size(); ++i) {
            const bool on = m.at(static_cast<int>(i) / m.width(), static_cast<int>(i) % m.width());
            scale.push_back(on ? 4.0f / static_cast<float>(counts[i]) : 0.0f);
        }
        next.push_back(std::move(m));
    }
    const Shape s{pooled.size(0), 1, pooled.size(2), pooled.size(3)};
    return {ops::mul(pooled, Tensor::from(s, std::move(scale))), std::move(next)};
}

}  // namespace plural
