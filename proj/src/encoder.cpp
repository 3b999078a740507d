#include "plural/encoder.hpp"

#include "plural/errors.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace plural {

void EncoderConfig::validate() const {
    if (channels.empty()) throw ConfigError("encoder needs at least one stage");
    if (image_size % (1 << stages()) != 0)
        throw ConfigError(fmt::format("image extent {} not divisible by 2^{}", image_size, stages()));
    if (!(alpha > 0.0f && alpha <= 1.0f)) throw ConfigError(fmt::format("alpha {} outside (0, 1]", alpha));
    if (blocks_per_stage < 1) throw ConfigError("encoder needs at least one block per stage");
}

RestrictiveEncoder::RestrictiveEncoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(derive_seed(seed, 0xE4C));
    const auto& ch = config_.channels;
    const auto kind = config_.kind;
    const float a = config_.alpha;
    conv_in_ = MaskedConv(3, ch[0], 3, kind, a, rng);
    for (int s = 0; s < config_.stages(); ++s) {
        std::vector<ResBlock> blocks;
        for (int b = 0; b < config_.blocks_per_stage; ++b)
            blocks.emplace_back(b == 0 ? (s ? ch[s - 1] : ch[0]) : ch[s], ch[s], kind, a, rng);
        stages_.push_back(std::move(blocks));
        // Attention at the two coarsest resolutions: the last stage and the bottom.
        const bool attend = s == config_.stages() - 1;
        has_attention_.push_back(attend);
        stage_attention_.push_back(attend ? SpatialAttention(ch[s], kind, rng) : SpatialAttention());
    }
    bottom_ = ResBlock(ch.back(), ch.back(), kind, a, rng);
    bottom_attention_ = SpatialAttention(ch.back(), kind, rng);
    head_norm_ = nn::LayerNorm(ch.back(), nn::LayerNorm::Axis::Channels);
    head_ = MaskedConv(ch.back(), config_.codebook_size, 1, kind, a, rng);
}

EncoderOutput RestrictiveEncoder::forward(const Tensor& images, std::span<const MaskGrid> masks) const {
    const int extent = config_.image_size;
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != extent || images.size(3) != extent)
        throw ShapeError(fmt::format("encoder expects [N,3,{0},{0}], got {1}", extent, to_string(images.shape())));
    if (static_cast<std::int64_t>(masks.size()) != images.size(0))
        throw ShapeError(fmt::format("{} masks for a batch of {}", masks.size(), images.size(0)));
    for (const auto& m : masks)
        if (m.height() != extent || m.width() != extent)
            throw ShapeError(fmt::format("mask is {}x{}, image is {}x{}", m.width(), m.height(), extent, extent));

    const std::vector<MaskGrid> mask_vec(masks.begin(), masks.end());
    MaskedFeatures h{ops::mul(images, mask_tensor(masks)), mask_vec};
    h = conv_in_.forward(h);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        for (const auto& block : stages_[s]) h = block.forward(h);
        if (has_attention_[s]) h = stage_attention_[s].forward(h);
        h = downsample(h, config_.kind, config_.alpha);
    }
    h = bottom_.forward(h);
    h = bottom_attention_.forward(h);
    h.x = ops::silu(head_norm_.forward(h.x));
    EncoderOutput out;
    out.logits = head_.forward(h).x;
    for (const auto& m : masks) out.pyramids.push_back(build_pyramid(m, config_.alpha, config_.stages()));
    return out;
}

nn::ParamList RestrictiveEncoder::params() const {
    nn::ParamList p;
    conv_in_.collect("encoder/in", p);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        for (std::size_t b = 0; b < stages_[s].size(); ++b) stages_[s][b].collect(fmt::format("encoder/stage{}.block{}", s, b), p);
        if (has_attention_[s]) stage_attention_[s].collect(fmt::format("encoder/stage{}.attn", s), p);
    }
    bottom_.collect("encoder/bottom", p);
    bottom_attention_.collect("encoder/bottom.attn", p);
    head_norm_.collect("encoder/head.norm", p);
    head_.collect("encoder/head", p);
    return p;
}

nn::ParamList RestrictiveEncoder::checkpoint_entries() const {
    nn::ParamList p{{"encoder/meta", meta_tensor({config_.image_size, config_.stages(), config_.codebook_size})}};
    for (auto& e : params()) p.push_back(std::move(e));
    return p;
}

void RestrictiveEncoder::load(const TensorMap& source) {
    check_meta(source, "encoder/meta", {config_.image_size, config_.stages(), config_.codebook_size},
               {"image extent", "stage count", "codebook size K"});
    load_params(source, params());
}

std::pair<Tensor, MaskPyramid> encode_partial(const RestrictiveEncoder& encoder, const Tensor& image,
                                              const MaskGrid& mask) {
    if (image.dim() != 3) throw ShapeError("encode_partial expects [3,H,W], got " + to_string(image.shape()));
    EncoderOutput out = encoder.forward(ops::reshape(image, {1, 3, image.size(1), image.size(2)}), std::span(&mask, 1));
    const Tensor& l = out.logits;
    return {ops::reshape(l, {l.size(1), l.size(2), l.size(3)}), std::move(out.pyramids.front())};
}

Tensor encoder_loss(const Tensor& logits, std::span<const TokenGrid> targets, std::span<const MaskGrid> token_masks) {
    if (logits.dim() != 4) throw ShapeError("encoder_loss expects [N,K,h,w] logits, got " + to_string(logits.shape()));
    const auto n = logits.size(0), k = logits.size(1), h = logits.size(2), w = logits.size(3);
    if (static_cast<std::int64_t>(targets.size()) != n || static_cast<std::int64_t>(token_masks.size()) != n)
        throw ShapeError("encoder_loss needs one target grid and one token mask per image");
    std::vector<int> labels;
    std::vector<float> weights;
    for (std::int64_t b = 0; b < n; ++b) {
        const auto& t = targets[static_cast<std::size_t>(b)];
        const auto& m = token_masks[static_cast<std::size_t>(b)];
        if (t.height() != h || t.width() != w || m.height() != h || m.width() != w)
            throw ShapeError(fmt::format("logit grid {}x{} differs from target/mask extents", h, w));
        for (int i = 0; i < t.cells(); ++i) {
            const bool on = m.values()[static_cast<std::size_t>(i)] != 0;
            if (on && t.is_mask(i)) throw ShapeError("target grid has MASK at a visible cell");
            labels.push_back(on ? t.label(i) : 0);
            weights.push_back(on ? 1.0f : 0.0f);
        }
    }
    if (std::all_of(weights.begin(), weights.end(), [](float v) { return v == 0.0f; }))
        spdlog::warn("encoder loss: no visible token cell, returning 0");
    const Tensor rows = ops::reshape(ops::permute(logits, {0, 2, 3, 1}), {n * h * w, k});
    return ops::cross_entropy(rows, labels, weights);
}

std::vector<TokenGrid> argmax_grids(const Tensor& logits, int mask_label) {
    const auto n = logits.size(0), k = logits.size(1), h = logits.size(2), w = logits.size(3);
    const auto d = logits.data();
    std::vector<TokenGrid> out;
    for (std::int64_t b = 0; b < n; ++b) {
        std::vector<int> labels(static_cast<std::size_t>(h * w));
        for (std::int64_t p = 0; p < h * w; ++p) {
            int arg = 0;
            float best = -INFINITY;
            for (std::int64_t c = 0; c < k; ++c) {
                const float v = d[static_cast<std::size_t>((b * k + c) * h * w + p)];
                if (v > best) {
                    best = v;
                    arg = static_cast<int>(c);
                }
            }
            labels[static_cast<std::size_t>(p)] = arg;
        }
        out.emplace_back(static_cast<int>(h), static_cast<int>(w), mask_label, std::move(labels));
    }
    return out;
}

std::vector<int> boundary_cells(const MaskGrid& pixel_mask, const MaskGrid& token_mask) {
    const int sy = pixel_mask.height() / token_mask.height(), sx = pixel_mask.width() / token_mask.width();
    std::vector<int> out;
    for (int y = 0; y < token_mask.height(); ++y)
        for (int x = 0; x < token_mask.width(); ++x) {
            if (!token_mask.at(y, x)) continue;
            bool touched = false;
            for (int py = y * sy; py < (y + 1) * sy && !touched; ++py)
                for (int px = x * sx; px < (x + 1) * sx; ++px)
                    if (!pixel_mask.at(py, px)) {
                        touched = true;
                        break;
                    }
            if (touched) out.push_back(y * token_mask.width() + x);
        }
    return out;
}

EncoderMetrics evaluate_encoder(const RestrictiveEncoder& encoder, const ImageSet& images,
                                std::span<const TokenGrid> targets, std::span<const MaskGrid> masks, int batch) {
    return evaluate_encoder(encoder, images, targets, masks, {}, batch);
}

EncoderMetrics evaluate_encoder(const RestrictiveEncoder& encoder, const ImageSet& images,
                                std::span<const TokenGrid> targets, std::span<const MaskGrid> masks,
                                std::span<const MaskGrid> cell_sets, int batch) {
    if (targets.size() != images.size() || masks.size() != images.size() || (!cell_sets.empty() && cell_sets.size() != images.size()))
        throw ShapeError("evaluate_encoder needs one target, mask and cell set per image");
    NoGradGuard ng;
    EncoderMetrics m;
    double nll = 0.0;
    std::int64_t correct = 0, boundary_correct = 0;
    for (std::size_t first = 0; first < images.size(); first += static_cast<std::size_t>(batch)) {
        const std::size_t last = std::min(images.size(), first + static_cast<std::size_t>(batch));
        std::vector<int> idx;
        for (std::size_t i = first; i < last; ++i) idx.push_back(static_cast<int>(i));
        const auto out = encoder.forward(images.batch(idx), masks.subspan(first, last - first));
        const Tensor logp = ops::log_softmax(ops::permute(out.logits, {0, 2, 3, 1}));
        const auto lp = logp.data();
        const auto k = out.logits.size(1);
        const auto cells = out.logits.size(2) * out.logits.size(3);
        const auto pred = argmax_grids(out.logits, encoder.config().codebook_size);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const auto& target = targets[first + b];
            const auto& tm = cell_sets.empty() ? out.pyramids[b].token_mask() : cell_sets[first + b];
            if (tm.height() * tm.width() != target.cells()) throw ShapeError("cell set does not match the token grid");
            for (int i = 0; i < target.cells(); ++i) {
                if (!tm.values()[static_cast<std::size_t>(i)]) continue;
                ++m.visible_cells;
                nll -= lp[static_cast<std::size_t>((static_cast<std::int64_t>(b) * cells + i) * k + target.label(i))];
                correct += pred[b].label(i) == target.label(i);
            }
            for (int i : boundary_cells(masks[first + b], out.pyramids[b].token_mask())) {
                if (!tm.values()[static_cast<std::size_t>(i)]) continue;
                ++m.boundary_cells;
                boundary_correct += pred[b].label(i) == target.label(i);
            }
        }
    }
    if (m.visible_cells) {
        m.loss = nll / static_cast<double>(m.visible_cells);
        m.accuracy = static_cast<double>(correct) / static_cast<double>(m.visible_cells);
    }
    if (m.boundary_cells) m.boundary_accuracy = static_cast<double>(boundary_correct) / static_cast<double>(m.boundary_cells);
    return m;
}

MaskGrid training_mask(std::uint64_t seed, std::uint64_t index, int extent, const StrokeParams& strokes) {
    const std::uint64_t s = derive_seed(seed, {0x3A5C, index});
    const MaskSpec spec{(s & 1) ? MaskKind::LargeRandom : MaskKind::SmallRandom, 0.8};
    return generate_mask(spec, extent, extent, s >> 1, strokes);
}

EncoderReport train_encoder(RestrictiveEncoder& encoder, const ImageSet& data, std::span<const TokenGrid> targets,
                            const EncoderTrainConfig& config) {
    if (data.size() < static_cast<std::size_t>(config.batch))
        throw ConfigError(fmt::format("encoder training needs at least {} images, got {}", config.batch, data.size()));
    if (targets.size() != data.size()) throw ShapeError("one target grid per training image required");
    Rng rng(derive_seed(config.seed, 0xE7));
    nn::Adam adam(encoder.params(), {config.lr, 0.9f, 0.99f, 1e-8f});
    EncoderReport report;
    double loss_sum = 0.0, hits = 0.0, seen = 0.0;
    int in_window = 0;
    const int extent = encoder.config().image_size;
    for (int step = 0; step < config.steps; ++step) {
        adam.set_lr(nn::cosine_lr(config.lr, step, config.steps));
        const auto idx = draw_batch(rng, data.size(), config.batch);
        std::vector<MaskGrid> masks;
        std::vector<TokenGrid> batch_targets;
        for (int b = 0; b < config.batch; ++b) {
            masks.push_back(training_mask(config.seed, static_cast<std::uint64_t>(step) * config.batch + b, extent,
                                          config.strokes));
            batch_targets.push_back(targets[static_cast<std::size_t>(idx[static_cast<std::size_t>(b)])]);
        }
        const auto out = encoder.forward(data.batch(idx), masks);
        std::vector<MaskGrid> token_masks;
        for (const auto& p : out.pyramids) token_masks.push_back(p.token_mask());
        const Tensor loss = encoder_loss(out.logits, batch_targets, token_masks);
        adam.zero_grad();
        loss.backward();
        adam.step();
        if (!std::isfinite(loss.item())) throw NumericalError(fmt::format("encoder loss is {} at step {}", loss.item(), step));
        loss_sum += loss.item();
        const auto pred = argmax_grids(out.logits, encoder.config().codebook_size);
        for (std::size_t b = 0; b < pred.size(); ++b)
            for (int i = 0; i < pred[b].cells(); ++i)
                if (token_masks[b].values()[static_cast<std::size_t>(i)]) {
                    seen += 1.0;
                    hits += pred[b].label(i) == batch_targets[b].label(i);
                }
        if (++in_window == config.log_every || step + 1 == config.steps) {
            report.window_loss.push_back(loss_sum / in_window);
            report.window_accuracy.push_back(seen > 0 ? hits / seen : 0.0);
            spdlog::info("encoder step {:5d} loss {:.4f} visible acc {:.3f}", step + 1, report.window_loss.back(),
                         report.window_accuracy.back());
            loss_sum = hits = seen = 0.0;
            in_window = 0;
        }
    }
    report.final_window_loss = report.window_loss.empty() ? 0.0 : report.window_loss.back();
    return report;
}

}  // namespace plural
