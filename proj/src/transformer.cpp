#include "plural/transformer.hpp"

#include "plural/errors.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace plural {

void TransformerConfig::validate() const {
    if (grid_size < 1 || codebook_size < 2 || n_z < 1) throw ConfigError("transformer grid/codebook extents invalid");
    if (dim < 1 || heads < 1 || dim % heads != 0)
        throw ConfigError(fmt::format("transformer width {} not divisible by {} heads", dim, heads));
    if (layers < 0 || mlp_ratio < 1) throw ConfigError("transformer layers/mlp ratio invalid");
    if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("transformer dropout outside [0, 1)");
}

BidirectionalTransformer::BidirectionalTransformer(const TransformerConfig& config, const Codebook& codebook,
                                                   std::uint64_t seed)
    : config_(config) {
    config_.validate();
    if (codebook.size() != config_.codebook_size || codebook.dim() != config_.n_z)
        throw ShapeError(fmt::format("codebook is [{}, {}] but the transformer expects [{}, {}]", codebook.size(),
                                     codebook.dim(), config_.codebook_size, config_.n_z));
    codebook_.embeddings = codebook.embeddings.detach();
    Rng rng(derive_seed(seed, 0x7F));
    mask_row_ = Tensor::zeros({config_.n_z}, true);
    nn::init_normal(mask_row_, 0.02f, rng);
    const int d = config_.dim;
    embed_ = nn::Linear(config_.n_z, d, rng, true, 1.0f / std::sqrt(static_cast<float>(config_.n_z)));
    positions_ = Tensor::zeros({config_.cells(), d}, true);
    nn::init_normal(positions_, 0.02f, rng);
    for (int l = 0; l < config_.layers; ++l) {
        Block b;
        b.norm1 = nn::LayerNorm(d, nn::LayerNorm::Axis::Last);
        b.norm2 = nn::LayerNorm(d, nn::LayerNorm::Axis::Last);
        b.q = nn::Linear(d, d, rng);
        b.k = nn::Linear(d, d, rng);
        b.v = nn::Linear(d, d, rng);
        b.proj = nn::Linear(d, d, rng);
        b.fc1 = nn::Linear(d, d * config_.mlp_ratio, rng);
        b.fc2 = nn::Linear(d * config_.mlp_ratio, d, rng);
        blocks_.push_back(std::move(b));
    }
    final_norm_ = nn::LayerNorm(d, nn::LayerNorm::Axis::Last);
    head_ = nn::Linear(d, config_.codebook_size, rng, true, 0.0f);
}

Tensor BidirectionalTransformer::forward(std::span<const TokenGrid> grids, Rng* dropout_rng) const {
    if (grids.empty()) throw ShapeError("transformer forward on an empty batch");
    for (const auto& g : grids)
        if (g.height() != config_.grid_size || g.width() != config_.grid_size)
            throw ShapeError(fmt::format("token grid {}x{} does not match the {}x{} positional table", g.height(),
                                         g.width(), config_.grid_size, config_.grid_size));
    const auto n = static_cast<std::int64_t>(grids.size());
    const std::int64_t l = config_.cells(), d = config_.dim, h = config_.heads, dh = d / h;
    const bool train = dropout_rng != nullptr && config_.dropout > 0.0f;

    const Tensor z = lookup_batch(grids, codebook_, mask_row_);  // [N,n_z,h,w]
    const Tensor rows = ops::reshape(ops::permute(z, {0, 2, 3, 1}), {n, l, config_.n_z});
    Tensor x = ops::add(embed_.forward(rows), positions_);
    if (train) x = ops::dropout(x, config_.dropout, *dropout_rng);

    ops::AttentionOptions opt;
    opt.causal = config_.causal;
    if (train) {
        opt.dropout = config_.dropout;
        opt.rng = dropout_rng;
    }
    auto split = [&](const Tensor& t) { return ops::permute(ops::reshape(t, {n, l, h, dh}), {0, 2, 1, 3}); };
    for (const auto& b : blocks_) {
        const Tensor a = b.norm1.forward(x);
        const Tensor att = ops::attention(split(b.q.forward(a)), split(b.k.forward(a)), split(b.v.forward(a)), opt);
        x = ops::add(x, b.proj.forward(ops::reshape(ops::permute(att, {0, 2, 1, 3}), {n, l, d})));
        const Tensor m = b.fc2.forward(ops::gelu(b.fc1.forward(b.norm2.forward(x))));
        x = ops::add(x, m);
    }
    return head_.forward(final_norm_.forward(x));
}

Tensor BidirectionalTransformer::predict(const TokenGrid& grid) const {
    NoGradGuard ng;
    const Tensor out = forward(std::span(&grid, 1));
    return ops::reshape(out, {out.size(1), out.size(2)});
}

nn::ParamList BidirectionalTransformer::params() const {
    nn::ParamList p{{"transformer/mask_row", mask_row_}};
    embed_.collect("transformer/embed", p);
    p.push_back({"transformer/positions", positions_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto pre = fmt::format("transformer/block{}", i);
        const auto& b = blocks_[i];
        b.norm1.collect(pre + ".norm1", p);
        b.q.collect(pre + ".q", p);
        b.k.collect(pre + ".k", p);
        b.v.collect(pre + ".v", p);
        b.proj.collect(pre + ".proj", p);
        b.norm2.collect(pre + ".norm2", p);
        b.fc1.collect(pre + ".fc1", p);
        b.fc2.collect(pre + ".fc2", p);
    }
    final_norm_.collect("transformer/final_norm", p);
    head_.collect("transformer/head", p);
    return p;
}

nn::ParamList BidirectionalTransformer::checkpoint_entries() const {
    nn::ParamList p{{"transformer/meta", meta_tensor({config_.grid_size, config_.codebook_size, config_.n_z, config_.dim,
                                                       config_.layers, config_.heads, config_.mlp_ratio})},
                    {"transformer/codebook", codebook_.embeddings}};
    for (auto& e : params()) p.push_back(std::move(e));
    return p;
}

void BidirectionalTransformer::load(const TensorMap& source) {
    check_meta(source, "transformer/meta",
               {config_.grid_size, config_.codebook_size, config_.n_z, config_.dim, config_.layers, config_.heads,
                config_.mlp_ratio},
               {"grid extent", "codebook size K", "n_z", "width", "layer count", "head count", "mlp ratio"});
    load_params(source, {{"transformer/codebook", codebook_.embeddings}});
    load_params(source, params());
}

Tensor transformer_loss(const Tensor& logits, std::span<const TokenGrid> targets, std::span<const TokenGrid> inputs) {
    if (logits.dim() != 3) throw ShapeError("transformer_loss expects [N,L,K] logits, got " + to_string(logits.shape()));
    const auto n = logits.size(0), l = logits.size(1), k = logits.size(2);
    if (static_cast<std::int64_t>(targets.size()) != n || static_cast<std::int64_t>(inputs.size()) != n)
        throw ShapeError("transformer_loss needs one target and one input grid per row block");
    std::vector<int> labels;
    std::vector<float> weights;
    for (std::int64_t b = 0; b < n; ++b) {
        const auto& t = targets[static_cast<std::size_t>(b)];
        const auto& in = inputs[static_cast<std::size_t>(b)];
        if (t.cells() != l || in.cells() != l) throw ShapeError("grid cells differ from logit rows");
        for (int i = 0; i < l; ++i) {
            const bool missing = in.is_mask(i);
            if (missing && t.is_mask(i)) throw ShapeError("target grid has MASK at a missing cell");
            labels.push_back(missing ? t.label(i) : 0);
            weights.push_back(missing ? 1.0f : 0.0f);
        }
    }
    if (std::all_of(weights.begin(), weights.end(), [](float v) { return v == 0.0f; }))
        spdlog::warn("transformer loss: no MASK cell, returning 0");
    return ops::cross_entropy(ops::reshape(logits, {n * l, k}), labels, weights);
}

double sample_mask_ratio(Rng& rng, double min_ratio, double max_ratio) {
    return min_ratio + (max_ratio - min_ratio) * uniform01(rng);
}

TokenGrid mask_tokens(const TokenGrid& target, double ratio, Rng& rng, bool block) {
    const int cells = target.cells();
    const int count = std::min(cells, static_cast<int>(std::ceil(ratio * cells - 1e-9)));
    TokenGrid out = target;
    std::vector<int> order;
    if (block) {
        const int w = target.width(), h = target.height();
        const int bw = std::min(w, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count)))));
        const int bh = std::min(h, bw > 0 ? (count + bw - 1) / bw : 0);
        const int y0 = static_cast<int>(uniform01(rng) * (h - bh + 1));
        const int x0 = static_cast<int>(uniform01(rng) * (w - bw + 1));
        for (int y = y0; y < y0 + bh; ++y)
            for (int x = x0; x < x0 + bw; ++x) order.push_back(y * w + x);
    }
    std::vector<int> rest;
    for (int i = 0; i < cells; ++i)
        if (std::find(order.begin(), order.end(), i) == order.end()) rest.push_back(i);
    for (std::size_t i = 0; i + 1 < rest.size(); ++i) {
        const auto j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(rest.size() - i));
        std::swap(rest[i], rest[j]);
    }
    order.insert(order.end(), rest.begin(), rest.end());
    for (int i = 0; i < count; ++i) out.set(order[static_cast<std::size_t>(i)], target.mask_label());
    return out;
}

std::vector<TokenGrid> fixed_mask_inputs(std::span<const TokenGrid> targets, const TransformerTrainConfig& config) {
    std::vector<TokenGrid> out;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        Rng r(derive_seed(config.seed, {0xF1, i}));
        const double ratio = sample_mask_ratio(r, config.min_ratio, config.max_ratio);
        out.push_back(mask_tokens(targets[i], ratio, r, config.block_masking));
    }
    return out;
}

TransformerReport train_transformer(BidirectionalTransformer& model, std::span<const TokenGrid> targets,
                                    const TransformerTrainConfig& config) {
    if (targets.empty()) throw ConfigError("transformer training needs at least one target grid");
    if (!(0.0 <= config.min_ratio && config.min_ratio <= config.max_ratio && config.max_ratio <= 1.0))
        throw ConfigError("mask ratio bounds must satisfy 0 <= min <= max <= 1");
    Rng rng(derive_seed(config.seed, 0x7A));
    Rng dropout_rng(derive_seed(config.seed, 0xD0));
    const std::vector<TokenGrid> fixed = config.fixed_masks ? fixed_mask_inputs(targets, config) : std::vector<TokenGrid>{};
    nn::Adam adam(model.params(), {config.lr, 0.9f, 0.99f, 1e-8f});
    TransformerReport report;
    double sum = 0.0;
    int in_window = 0;
    for (int step = 0; step < config.steps; ++step) {
        adam.set_lr(nn::cosine_lr(config.lr, step, config.steps));
        const auto idx = draw_batch(rng, targets.size(), config.batch);
        std::vector<TokenGrid> inputs, batch_targets;
        for (int i : idx) {
            const auto& t = targets[static_cast<std::size_t>(i)];
            batch_targets.push_back(t);
            if (config.fixed_masks) {
                inputs.push_back(fixed[static_cast<std::size_t>(i)]);
            } else {
                const double ratio = sample_mask_ratio(rng, config.min_ratio, config.max_ratio);
                report.ratios.push_back(ratio);
                inputs.push_back(mask_tokens(t, ratio, rng, config.block_masking));
            }
        }
        const Tensor loss = transformer_loss(model.forward(inputs, &dropout_rng), batch_targets, inputs);
        adam.zero_grad();
        loss.backward();
        adam.step();
        if (!std::isfinite(loss.item()))
            throw NumericalError(fmt::format("transformer loss is {} at step {}", loss.item(), step));
        sum += loss.item();
        if (++in_window == config.log_every || step + 1 == config.steps) {
            report.window_loss.push_back(sum / in_window);
            spdlog::info("transformer step {:5d} loss {:.4f}", step + 1, report.window_loss.back());
            sum = 0.0;
            in_window = 0;
        }
    }
    return report;
}

double evaluate_transformer(const BidirectionalTransformer& model, std::span<const TokenGrid> inputs,
                            std::span<const TokenGrid> targets) {
    NoGradGuard ng;
    double total = 0.0;
    std::size_t missing = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor logits = model.predict(inputs[i]);
        const Tensor logp = ops::log_softmax(logits);
        const auto lp = logp.data();
        const auto k = static_cast<std::size_t>(logits.size(1));
        for (int c : inputs[i].missing_cells()) {
            total -= lp[static_cast<std::size_t>(c) * k + static_cast<std::size_t>(targets[i].label(c))];
            ++missing;
        }
    }
    return missing ? total / static_cast<double>(missing) : 0.0;
}

}  // namespace plural
