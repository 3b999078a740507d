#include "plural/vq.hpp"

#include "plural/errors.hpp"
#include "plural/kernels.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

namespace plural {

TokenGrid::TokenGrid(int h, int w, int mask_label, int fill)
    : h_(h), w_(w), mask_(mask_label), labels_(static_cast<std::size_t>(h) * w, fill) {}

TokenGrid::TokenGrid(int h, int w, int mask_label, std::vector<int> labels)
    : h_(h), w_(w), mask_(mask_label), labels_(std::move(labels)) {
    if (labels_.size() != static_cast<std::size_t>(h) * w)
        throw ShapeError(fmt::format("token grid {}x{} given {} labels", h, w, labels_.size()));
    for (int l : labels_)
        if (l < 0 || l > mask_) throw ShapeError(fmt::format("label {} outside [0, {}]", l, mask_));
}

void TokenGrid::set(int i, int label) {
    if (label < 0 || label > mask_) throw ShapeError(fmt::format("label {} outside [0, {}]", label, mask_));
    labels_[static_cast<std::size_t>(i)] = label;
}

std::vector<int> TokenGrid::visible_cells() const {
    std::vector<int> out;
    for (int i = 0; i < cells(); ++i)
        if (!is_mask(i)) out.push_back(i);
    return out;
}

std::vector<int> TokenGrid::missing_cells() const {
    std::vector<int> out;
    for (int i = 0; i < cells(); ++i)
        if (is_mask(i)) out.push_back(i);
    return out;
}

int TokenGrid::missing_count() const {
    return static_cast<int>(std::count(labels_.begin(), labels_.end(), mask_));
}

std::string TokenGrid::to_text() const {
    std::string out = fmt::format("{} {}\n", h_, w_);
    for (int y = 0; y < h_; ++y) {
        for (int x = 0; x < w_; ++x) {
            if (x) out += ' ';
            out += is_mask(y * w_ + x) ? std::string("M") : std::to_string(at(y, x));
        }
        out += '\n';
    }
    return out;
}

TokenGrid TokenGrid::from_text(const std::string& text, int mask_label) {
    std::istringstream in(text);
    int h = 0, w = 0;
    if (!(in >> h >> w) || h <= 0 || w <= 0) throw ShapeError("token grid text lacks a valid 'h w' header");
    std::vector<int> labels;
    std::string tok;
    while (in >> tok) {
        if (tok == "M") {
            labels.push_back(mask_label);
        } else {
            std::size_t used = 0;
            const int v = std::stoi(tok, &used);
            if (used != tok.size() || v < 0 || v >= mask_label)
                throw ShapeError("bad token label '" + tok + "'");
            labels.push_back(v);
        }
    }
    return TokenGrid(h, w, mask_label, std::move(labels));
}

std::vector<int> nearest_codes(std::span<const float> vectors, int dim, const Codebook& codebook) {
    if (codebook.dim() != dim)
        throw ShapeError(fmt::format("feature channels {} differ from codebook n_z {}", dim, codebook.dim()));
    const auto rows = vectors.size() / static_cast<std::size_t>(dim);
    const auto table = codebook.embeddings.data();
    std::vector<int> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* v = vectors.data() + r * static_cast<std::size_t>(dim);
        float best = INFINITY;
        int arg = 0;
        for (int k = 0; k < codebook.size(); ++k) {
            const float d = kernels::sqdist(v, table.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim));
            if (d < best) {
                best = d;
                arg = k;
            }
        }
        out[r] = arg;
    }
    return out;
}

namespace {

// [N,C,h,w] -> channel-last rows [N*h*w, C].
std::vector<float> to_rows(const Tensor& features) {
    const auto n = features.size(0), c = features.size(1), hw = features.size(2) * features.size(3);
    const auto d = features.data();
    std::vector<float> rows(static_cast<std::size_t>(n * hw * c));
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t p = 0; p < hw; ++p)
                rows[static_cast<std::size_t>((b * hw + p) * c + ch)] = d[static_cast<std::size_t>((b * c + ch) * hw + p)];
    return rows;
}

}  // namespace

std::vector<TokenGrid> quantize_batch(const Tensor& features, const Codebook& codebook) {
    if (features.dim() != 4) throw ShapeError("quantize_batch expects [N,n_z,h,w], got " + to_string(features.shape()));
    const int c = static_cast<int>(features.size(1));
    const auto labels = nearest_codes(to_rows(features), c, codebook);
    const int h = static_cast<int>(features.size(2)), w = static_cast<int>(features.size(3));
    std::vector<TokenGrid> out;
    for (std::int64_t b = 0; b < features.size(0); ++b) {
        const auto first = labels.begin() + static_cast<std::ptrdiff_t>(b * h * w);
        out.emplace_back(h, w, codebook.mask_label(), std::vector<int>(first, first + h * w));
    }
    return out;
}

TokenGrid quantize(const Tensor& features, const Codebook& codebook) {
    if (features.dim() != 3) throw ShapeError("quantize expects [n_z,h,w], got " + to_string(features.shape()));
    return quantize_batch(ops::reshape(features, {1, features.size(0), features.size(1), features.size(2)}), codebook)
        .front();
}

Tensor lookup_batch(std::span<const TokenGrid> grids, const Codebook& codebook, const Tensor& mask_embedding) {
    if (grids.empty()) throw ShapeError("lookup of an empty batch");
    const int h = grids.front().height(), w = grids.front().width();
    std::vector<int> indices;
    bool any_mask = false;
    for (const auto& g : grids) {
        if (g.height() != h || g.width() != w) throw ShapeError("token grids in a batch must share extents");
        if (g.mask_label() != codebook.mask_label())
            throw ShapeError(fmt::format("grid MASK label {} but codebook has K={}", g.mask_label(), codebook.size()));
        for (int l : g.labels()) {
            any_mask = any_mask || l == codebook.mask_label();
            indices.push_back(l);
        }
    }
    Tensor table = codebook.embeddings;
    if (any_mask) {
        if (!mask_embedding.defined()) throw ShapeError("MASK label in lookup without a mask embedding");
        table = ops::concat({table, ops::reshape(mask_embedding, {1, codebook.dim()})}, 0);
    }
    const auto n = static_cast<std::int64_t>(grids.size());
    const Tensor rows = ops::embedding(table, indices);
    return ops::permute(ops::reshape(rows, {n, h, w, codebook.dim()}), {0, 3, 1, 2});
}

Tensor lookup(const TokenGrid& grid, const Codebook& codebook, const Tensor& mask_embedding) {
    const Tensor z = lookup_batch(std::span(&grid, 1), codebook, mask_embedding);
    return ops::reshape(z, {z.size(1), z.size(2), z.size(3)});
}

void VqConfig::validate() const {
    if (stages < 1) throw ConfigError("vq stages must be >= 1");
    if (static_cast<int>(channels.size()) != stages)
        throw ConfigError(fmt::format("vq channel list has {} entries for {} stages", channels.size(), stages));
    if (image_size % (1 << stages) != 0)
        throw ConfigError(fmt::format("image extent {} not divisible by 2^{}", image_size, stages));
    if (codebook_size < 2 || n_z < 1) throw ConfigError("codebook needs K >= 2 and n_z >= 1");
}

VqAutoencoder::VqAutoencoder(const VqConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(derive_seed(seed, 0x560));
    const auto& ch = config_.channels;
    enc_in_ = nn::Conv2d(3, ch[0], 3, 1, rng);
    for (int s = 0; s < config_.stages; ++s) enc_stages_.emplace_back(s ? ch[s - 1] : ch[0], ch[s], 3, 1, rng);
    enc_mid_ = ResBlock(ch.back(), ch.back(), ConvKind::Plain, 1.0f, rng);
    enc_out_ = nn::Conv2d(ch.back(), config_.n_z, 1, 1, rng);
    dec_in_ = nn::Conv2d(config_.n_z, ch.back(), 3, 1, rng);
    dec_mid_ = ResBlock(ch.back(), ch.back(), ConvKind::Plain, 1.0f, rng);
    for (int s = config_.stages - 1; s >= 0; --s) dec_stages_.emplace_back(ch[s], s ? ch[s - 1] : ch[0], 3, 1, rng);
    dec_out_ = nn::Conv2d(ch[0], 3, 3, 1, rng);
    codebook.embeddings = Tensor::zeros({config_.codebook_size, config_.n_z}, true);
    nn::init_normal(codebook.embeddings, 1.0f / static_cast<float>(config_.codebook_size), rng);
}

Tensor VqAutoencoder::encode(const Tensor& images) const {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != config_.image_size ||
        images.size(3) != config_.image_size)
        throw ShapeError(fmt::format("VQ encoder expects [N,3,{0},{0}], got {1}", config_.image_size,
                                     to_string(images.shape())));
    Tensor h = ops::silu(enc_in_.forward(images));
    for (const auto& conv : enc_stages_) h = ops::avg_pool2d(ops::silu(conv.forward(h)), 2);
    h = enc_mid_.forward({h, {}}).x;
    return enc_out_.forward(ops::silu(h));
}

Tensor VqAutoencoder::decode(const Tensor& z) const {
    Tensor h = dec_in_.forward(z);
    h = dec_mid_.forward({h, {}}).x;
    for (const auto& conv : dec_stages_) h = ops::silu(conv.forward(ops::upsample_nearest2d(h, 2)));
    return ops::tanh(dec_out_.forward(h));
}

nn::ParamList VqAutoencoder::encoder_params() const {
    nn::ParamList p;
    enc_in_.collect("vq/enc.in", p);
    for (std::size_t s = 0; s < enc_stages_.size(); ++s) enc_stages_[s].collect(fmt::format("vq/enc.stage{}", s), p);
    enc_mid_.collect("vq/enc.mid", p);
    enc_out_.collect("vq/enc.out", p);
    return p;
}

nn::ParamList VqAutoencoder::decoder_params() const {
    nn::ParamList p;
    dec_in_.collect("vq/dec.in", p);
    dec_mid_.collect("vq/dec.mid", p);
    for (std::size_t s = 0; s < dec_stages_.size(); ++s) dec_stages_[s].collect(fmt::format("vq/dec.stage{}", s), p);
    dec_out_.collect("vq/dec.out", p);
    return p;
}

nn::ParamList VqAutoencoder::params() const {
    nn::ParamList p = encoder_params();
    for (auto& e : decoder_params()) p.push_back(std::move(e));
    p.push_back({"vq/codebook", codebook.embeddings});
    return p;
}

nn::ParamList VqAutoencoder::checkpoint_entries() const {
    nn::ParamList p{{"vq/meta", meta_tensor({config_.image_size, config_.stages, config_.codebook_size, config_.n_z})}};
    for (auto& e : params()) p.push_back(std::move(e));
    return p;
}

void VqAutoencoder::load(const TensorMap& source) {
    check_meta(source, "vq/meta", {config_.image_size, config_.stages, config_.codebook_size, config_.n_z},
               {"image extent", "stage count", "codebook size K", "n_z"});
    load_params(source, params());
}

VqForward vq_forward(const VqAutoencoder& model, const Tensor& images, float commitment) {
    const Tensor z_e = model.encode(images);
    const auto n = z_e.size(0), c = z_e.size(1), h = z_e.size(2), w = z_e.size(3);
    const Tensor flat = ops::reshape(ops::permute(z_e, {0, 2, 3, 1}), {n * h * w, c});
    VqForward out;
    out.labels = nearest_codes(flat.data(), static_cast<int>(c), model.codebook);
    const Tensor z_q = ops::embedding(model.codebook.embeddings, out.labels);
    out.codebook_loss = ops::mse(z_q, flat.detach());
    out.commitment_loss = ops::mse(flat, z_q.detach());
    // Straight-through: forward value z_q, gradient passes to z_e unchanged.
    std::vector<float> shift(flat.data().begin(), flat.data().end());
    const auto q = z_q.data();
    for (std::size_t i = 0; i < shift.size(); ++i) shift[i] = q[i] - shift[i];
    const Tensor st = ops::add(flat, Tensor::from(flat.shape(), std::move(shift)));
    const Tensor z = ops::permute(ops::reshape(st, {n, h, w, c}), {0, 3, 1, 2});
    out.reconstruction = model.decode(z);
    out.recon_loss = ops::mse(out.reconstruction, images);
    out.loss = ops::add(ops::add(out.recon_loss, out.codebook_loss), ops::mul_scalar(out.commitment_loss, commitment));
    return out;
}

namespace {

void init_codebook(VqAutoencoder& model, const Tensor& images, Rng& rng) {
    NoGradGuard ng;
    const Tensor z_e = model.encode(images);
    const int c = static_cast<int>(z_e.size(1));
    const auto rows = to_rows(z_e);
    const auto count = rows.size() / static_cast<std::size_t>(c);
    auto table = Tensor(model.codebook.embeddings).mutable_data();
    std::normal_distribution<float> jitter(0.0f, 1e-3f);
    for (int k = 0; k < model.codebook.size(); ++k) {
        const auto r = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(count));
        for (int j = 0; j < c; ++j)
            table[static_cast<std::size_t>(k * c + j)] = rows[r * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)] + jitter(rng);
    }
}

}  // namespace

VqReport train_vq(VqAutoencoder& model, const ImageSet& data, const VqTrainConfig& config) {
    if (data.size() < static_cast<std::size_t>(config.batch))
        throw ConfigError(fmt::format("VQ training needs at least {} images, got {}", config.batch, data.size()));
    Rng rng(derive_seed(config.seed, 0x7A1));
    init_codebook(model, data.batch(draw_batch(rng, data.size(), config.batch)), rng);
    nn::Adam adam(model.params(), {config.lr, 0.9f, 0.99f, 1e-8f});
    VqReport report;
    double window = 0.0;
    int in_window = 0;
    for (int step = 0; step < config.steps; ++step) {
        adam.set_lr(nn::cosine_lr(config.lr, step, config.steps));
        const Tensor x = data.batch(draw_batch(rng, data.size(), config.batch));
        const VqForward f = vq_forward(model, x, config.commitment);
        adam.zero_grad();
        f.loss.backward();
        adam.step();
        window += f.recon_loss.item();
        if (++in_window == config.log_every || step + 1 == config.steps) {
            report.window_mse.push_back(window / in_window);
            spdlog::info("vq step {:5d} recon mse {:.5f}", step + 1, report.window_mse.back());
            window = 0.0;
            in_window = 0;
        }
    }
    NoGradGuard ng;
    std::set<int> used;
    double sq = 0.0;
    std::size_t total = 0;
    for (std::size_t first = 0; first < data.size(); first += 16) {
        std::vector<int> idx;
        for (std::size_t i = first; i < std::min(data.size(), first + 16); ++i) idx.push_back(static_cast<int>(i));
        const Tensor x = data.batch(idx);
        const VqForward f = vq_forward(model, x, config.commitment);
        used.insert(f.labels.begin(), f.labels.end());
        sq += static_cast<double>(f.recon_loss.item()) * static_cast<double>(x.numel());
        total += static_cast<std::size_t>(x.numel());
    }
    report.final_mse = sq / static_cast<double>(total);
    report.usage = static_cast<double>(used.size()) / model.codebook.size();
    spdlog::info("vq final recon mse {:.5f}, codebook usage {:.1f}%", report.final_mse, 100.0 * report.usage);
    return report;
}

std::vector<TokenGrid> encode_full_batch(const Tensor& images, const VqAutoencoder& model) {
    NoGradGuard ng;
    return quantize_batch(model.encode(images), model.codebook);
}

TokenGrid encode_full(const Tensor& image, const VqAutoencoder& model) {
    return encode_full_batch(ops::reshape(image, {1, image.size(0), image.size(1), image.size(2)}), model).front();
}

double reconstruction_mse(const VqAutoencoder& model, const ImageSet& data, int batch) {
    NoGradGuard ng;
    double sq = 0.0;
    std::size_t total = 0;
    for (std::size_t first = 0; first < data.size(); first += static_cast<std::size_t>(batch)) {
        std::vector<int> idx;
        for (std::size_t i = first; i < std::min(data.size(), first + static_cast<std::size_t>(batch)); ++i)
            idx.push_back(static_cast<int>(i));
        const Tensor x = data.batch(idx);
        const VqForward f = vq_forward(model, x);
        sq += static_cast<double>(f.recon_loss.item()) * static_cast<double>(x.numel());
        total += static_cast<std::size_t>(x.numel());
    }
    return sq / static_cast<double>(total);
}

}  // namespace plural
