#include "plural/decoder.hpp"

#include "plural/errors.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>

namespace plural {

void DecoderConfig::validate() const {
    if (stages < 1 || image_size % (1 << stages) != 0)
        throw ConfigError(fmt::format("image extent {} not divisible by 2^{}", image_size, stages));
    if (static_cast<int>(prt_channels.size()) != stages || static_cast<int>(gen_channels.size()) != stages)
        throw ConfigError("decoder channel lists need one entry per stage");
    if (disc_channels.empty() || image_size >> disc_channels.size() < 1)
        throw ConfigError("discriminator has more stages than the image extent allows");
    if (!(alpha > 0.0f && alpha <= 1.0f)) throw ConfigError(fmt::format("alpha {} outside (0, 1]", alpha));
}

PartialEncoder::PartialEncoder(const DecoderConfig& config, Rng& rng) {
    const auto& ch = config.prt_channels;
    in_ = MaskedConv(3, ch[0], 3, ConvKind::Partial, 1.0f, rng);
    for (int s = 0; s < config.stages; ++s) stages_.emplace_back(s ? ch[s - 1] : ch[0], ch[s], 3, ConvKind::Partial, 1.0f, rng);
    out_ = MaskedConv(ch.back(), config.n_z, 1, ConvKind::Partial, 1.0f, rng);
}

Tensor PartialEncoder::forward(const Tensor& images, std::span<const MaskGrid> masks) const {
    MaskedFeatures h{ops::mul(images, mask_tensor(masks)), {masks.begin(), masks.end()}};
    h = in_.forward(h);
    h.x = ops::silu(h.x);
    for (const auto& conv : stages_) {
        h = conv.forward(downsample(h, ConvKind::Partial, 1.0f));
        h.x = ops::silu(h.x);
    }
    return out_.forward(h).x;
}

void PartialEncoder::collect(const std::string& prefix, nn::ParamList& out) const {
    in_.collect(prefix + ".in", out);
    for (std::size_t s = 0; s < stages_.size(); ++s) stages_[s].collect(fmt::format("{}.stage{}", prefix, s), out);
    out_.collect(prefix + ".out", out);
}

Generator::Generator(const DecoderConfig& config, Rng& rng) {
    const auto& ch = config.gen_channels;
    in_ = nn::Conv2d(config.n_z, ch.back(), 3, 1, rng);
    mid_ = ResBlock(ch.back(), ch.back(), ConvKind::Plain, 1.0f, rng);
    for (int s = config.stages - 1; s >= 0; --s) stages_.emplace_back(ch[s], s ? ch[s - 1] : ch[0], 3, 1, rng);
    out_ = nn::Conv2d(ch[0], 3, 3, 1, rng);
}

Tensor Generator::forward(const Tensor& features) const {
    Tensor h = mid_.forward({in_.forward(features), {}}).x;
    for (const auto& conv : stages_) h = ops::silu(conv.forward(ops::upsample_nearest2d(h, 2)));
    return ops::tanh(out_.forward(h));
}

void Generator::collect(const std::string& prefix, nn::ParamList& out) const {
    in_.collect(prefix + ".in", out);
    mid_.collect(prefix + ".mid", out);
    for (std::size_t s = 0; s < stages_.size(); ++s) stages_[s].collect(fmt::format("{}.stage{}", prefix, s), out);
    out_.collect(prefix + ".out", out);
}

Discriminator::Discriminator(const std::vector<int>& channels, int image_size, float leak, Rng& rng) : leak_(leak) {
    int in = 3;
    for (int c : channels) {
        convs_.emplace_back(in, c, 3, 2, rng);
        in = c;
    }
    const int side = image_size >> channels.size();
    head_ = nn::Linear(in * side * side, 1, rng, true, 1.0f / std::sqrt(static_cast<float>(in * side * side)));
}

Tensor Discriminator::forward(const Tensor& images) const {
    Tensor h = images;
    for (const auto& conv : convs_) h = ops::leaky_relu(conv.forward(h), leak_);
    return head_.forward(ops::reshape(h, {h.size(0), h.numel() / h.size(0)}));
}

void Discriminator::collect(const std::string& prefix, nn::ParamList& out) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(fmt::format("{}.conv{}", prefix, i), out);
    head_.collect(prefix + ".head", out);
}

ComposerNet::ComposerNet(const DecoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(derive_seed(seed, 0xDEC));
    prt = PartialEncoder(config_, rng);
    gen = Generator(config_, rng);
    disc = Discriminator(config_.disc_channels, config_.image_size, config_.disc_leak, rng);
}

nn::ParamList ComposerNet::generator_params() const {
    nn::ParamList p;
    prt.collect("decoder/prt", p);
    gen.collect("decoder/gen", p);
    return p;
}

nn::ParamList ComposerNet::disc_params() const {
    nn::ParamList p;
    disc.collect("disc", p);
    return p;
}

nn::ParamList ComposerNet::checkpoint_entries() const {
    nn::ParamList p{{"decoder/meta", meta_tensor({config_.image_size, config_.stages, config_.n_z})}};
    for (auto& e : generator_params()) p.push_back(std::move(e));
    for (auto& e : disc_params()) p.push_back(std::move(e));
    return p;
}

void ComposerNet::load(const TensorMap& source) {
    check_meta(source, "decoder/meta", {config_.image_size, config_.stages, config_.n_z},
               {"image extent", "stage count", "n_z"});
    load_params(source, generator_params());
    load_params(source, disc_params());
}

Tensor compose(const Tensor& z, const Tensor& partial, std::span<const MaskGrid> token_masks) {
    if (z.shape() != partial.shape())
        throw ShapeError("compose extents differ: Z " + to_string(z.shape()) + " vs partial " + to_string(partial.shape()));
    if (z.dim() == 3) {
        if (token_masks.size() != 1) throw ShapeError("single-image compose needs one token mask");
        const Shape s4{1, z.size(0), z.size(1), z.size(2)};
        return ops::reshape(compose(ops::reshape(z, s4), ops::reshape(partial, s4), token_masks), z.shape());
    }
    if (z.dim() != 4 || static_cast<std::int64_t>(token_masks.size()) != z.size(0))
        throw ShapeError("compose needs [N,n_z,h,w] features and one token mask per image");
    for (const auto& m : token_masks)
        if (m.height() != z.size(2) || m.width() != z.size(3))
            throw ShapeError(fmt::format("token mask {}x{} vs feature grid {}x{}", m.height(), m.width(), z.size(2), z.size(3)));
    const Tensor m = mask_tensor(token_masks);
    const Tensor hole = ops::add_scalar(ops::neg(m), 1.0f);
    const Tensor h1 = ops::mul(hole, ops::mul_scalar(ops::add(z, partial), 0.5f));
    return ops::add(h1, ops::mul(m, partial));
}

Tensor compose(const Tensor& z, const Tensor& partial, const MaskGrid& token_mask) {
    return compose(z, partial, std::span(&token_mask, 1));
}

Tensor decode(const ComposerNet& nets, const Tensor& images, std::span<const MaskGrid> masks, const Tensor& z) {
    const auto& cfg = nets.config();
    if (images.dim() != 4 || images.size(2) != cfg.image_size || images.size(3) != cfg.image_size)
        throw ShapeError(fmt::format("decoder expects [N,3,{0},{0}] images, got {1}", cfg.image_size, to_string(images.shape())));
    std::vector<MaskGrid> token_masks;
    for (const auto& m : masks) token_masks.push_back(build_pyramid(m, cfg.alpha, cfg.stages).token_mask());
    const Tensor partial = nets.prt.forward(images, masks);
    return nets.gen.forward(compose(z, partial, token_masks));
}

R1Result r1_penalty(const Discriminator& disc, const Tensor& x) {
    nn::ParamList params;
    disc.collect("disc", params);
    nn::set_requires_grad(params, false);
    R1Result r;
    {
        const Tensor leaf = x.detach().set_requires_grad(true);
        ops::sum(disc.forward(leaf)).backward();
        r.input_grad.assign(leaf.grad().begin(), leaf.grad().end());
    }
    nn::set_requires_grad(params, true);
    double sq = 0.0;
    for (float g : r.input_grad) sq += static_cast<double>(g) * g;
    r.value = sq / static_cast<double>(x.size(0));
    return r;
}

double accumulate_r1_grad(const Discriminator& disc, const Tensor& x, float scale, float step) {
    const R1Result r = r1_penalty(disc, x);
    double ms = 0.0;
    for (float g : r.input_grad) ms += static_cast<double>(g) * g;
    ms /= static_cast<double>(r.input_grad.size());
    if (ms == 0.0) return r.value;
    const double eps = step / std::sqrt(ms);
    std::vector<float> plus(x.data().begin(), x.data().end()), minus = plus;
    for (std::size_t i = 0; i < plus.size(); ++i) {
        plus[i] += static_cast<float>(eps * r.input_grad[i]);
        minus[i] -= static_cast<float>(eps * r.input_grad[i]);
    }
    const double coeff = static_cast<double>(scale) * (2.0 / static_cast<double>(x.size(0))) / (2.0 * eps);
    const Tensor up = ops::sum(disc.forward(Tensor::from(x.shape(), std::move(plus))));
    const Tensor down = ops::sum(disc.forward(Tensor::from(x.shape(), std::move(minus))));
    ops::mul_scalar(ops::sub(up, down), static_cast<float>(coeff)).backward();
    return r.value;
}

namespace {

Tensor perceptual(const Tensor& x, const Tensor& x_hat, const VqAutoencoder& vq) {
    Tensor target;
    {
        NoGradGuard ng;
        target = vq.encode(x);
    }
    return ops::add(ops::l1(x_hat, x), ops::mse(vq.encode(x_hat), target));
}

// Restores requires_grad on scope exit.
class FrozenParams {
public:
    explicit FrozenParams(nn::ParamList params) : params_(std::move(params)) { nn::set_requires_grad(params_, false); }
    ~FrozenParams() { nn::set_requires_grad(params_, true); }
    FrozenParams(const FrozenParams&) = delete;
    FrozenParams& operator=(const FrozenParams&) = delete;

private:
    nn::ParamList params_;
};

struct SplitMse {
    double masked = 0.0, visible = 0.0;
    std::int64_t masked_n = 0, visible_n = 0;
};

void accumulate_split(SplitMse& acc, const Tensor& x, const Tensor& x_hat, std::span<const MaskGrid> masks) {
    const auto hw = static_cast<std::size_t>(x.size(2) * x.size(3));
    const auto a = x.data(), b = x_hat.data();
    for (std::size_t n = 0; n < masks.size(); ++n) {
        const auto m = masks[n].values();
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < hw; ++p) {
                const std::size_t i = (n * 3 + c) * hw + p;
                const double d = static_cast<double>(a[i]) - b[i];
                if (m[p]) {
                    acc.visible += d * d;
                    ++acc.visible_n;
                } else {
                    acc.masked += d * d;
                    ++acc.masked_n;
                }
            }
    }
}

}  // namespace

DecoderLosses decoder_losses(const Tensor& x, const Tensor& x_hat, const Discriminator& disc, const VqAutoencoder& vq,
                             const LossWeights& weights) {
    DecoderLosses l;
    l.l_g = ops::mean(ops::softplus(ops::neg(disc.forward(x_hat))));
    l.l_d = ops::add(ops::mean(ops::softplus(ops::neg(disc.forward(x)))),
                     ops::mean(ops::softplus(disc.forward(x_hat.detach()))));
    l.r1 = r1_penalty(disc, x).value;
    l.l_p = perceptual(x, x_hat, vq);
    l.l_decode = ops::add(ops::add_scalar(l.l_g, weights.r1 * static_cast<float>(l.r1)),
                          ops::mul_scalar(l.l_p, weights.perceptual));
    return l;
}

Tensor quantized_features(const VqAutoencoder& vq, const Tensor& images) {
    NoGradGuard ng;
    const auto grids = encode_full_batch(images, vq);
    return lookup_batch(grids, vq.codebook).detach();
}

DecoderReport train_decoder(ComposerNet& nets, VqAutoencoder& vq, const ImageSet& data,
                            const DecoderTrainConfig& config) {
    if (data.size() < static_cast<std::size_t>(config.batch))
        throw ConfigError(fmt::format("decoder training needs at least {} images, got {}", config.batch, data.size()));
    if (config.r1_interval < 1) throw ConfigError("r1 interval must be >= 1");
    FrozenParams frozen(vq.params());
    Rng rng(derive_seed(config.seed, 0xDE));
    nn::Adam adam_g(nets.generator_params(), {config.lr, 0.5f, 0.99f, 1e-8f});
    nn::Adam adam_d(nets.disc_params(), {config.disc_lr, 0.5f, 0.99f, 1e-8f});
    const int extent = nets.config().image_size;
    DecoderReport report;
    SplitMse split;
    double acc = 0.0, lg = 0.0, ld = 0.0, r1 = 0.0;
    int in_window = 0, r1_count = 0;
    for (int step = 0; step < config.steps; ++step) {
        const auto idx = draw_batch(rng, data.size(), config.batch);
        std::vector<MaskGrid> masks;
        for (int b = 0; b < config.batch; ++b)
            masks.push_back(training_mask(config.seed, static_cast<std::uint64_t>(step) * config.batch + b, extent,
                                          config.strokes));
        const Tensor x = data.batch(idx);
        const Tensor z = quantized_features(vq, x);
        const Tensor x_hat = decode(nets, x, masks, z);

        adam_d.zero_grad();
        const Tensor d_real = nets.disc.forward(x);
        const Tensor d_fake = nets.disc.forward(x_hat.detach());
        const Tensor l_d = ops::add(ops::mean(ops::softplus(ops::neg(d_real))), ops::mean(ops::softplus(d_fake)));
        l_d.backward();
        if (step % config.r1_interval == 0) {
            r1 += accumulate_r1_grad(nets.disc, x, config.weights.r1 * static_cast<float>(config.r1_interval));
            ++r1_count;
        }
        adam_d.step();

        adam_g.zero_grad();
        const Tensor l_g = ops::mean(ops::softplus(ops::neg(nets.disc.forward(x_hat))));
        const Tensor loss = ops::add(l_g, ops::mul_scalar(perceptual(x, x_hat, vq), config.weights.perceptual));
        loss.backward();
        adam_g.step();
        if (!std::isfinite(loss.item()) || !std::isfinite(l_d.item()))
            throw NumericalError(fmt::format("decoder losses non-finite at step {} (L_G {}, L_D {})", step, l_g.item(), l_d.item()));

        accumulate_split(split, x, x_hat, masks);
        int right = 0;
        for (float v : d_real.data()) right += v > 0.0f;
        for (float v : d_fake.data()) right += v < 0.0f;
        acc += static_cast<double>(right) / (2.0 * config.batch);
        lg += l_g.item();
        ld += l_d.item();
        if (++in_window == config.log_every || step + 1 == config.steps) {
            report.window_masked_mse.push_back(split.masked_n ? split.masked / static_cast<double>(split.masked_n) : 0.0);
            report.window_visible_mse.push_back(split.visible_n ? split.visible / static_cast<double>(split.visible_n) : 0.0);
            report.window_disc_accuracy.push_back(acc / in_window);
            report.window_l_g.push_back(lg / in_window);
            report.window_l_d.push_back(ld / in_window);
            report.window_r1.push_back(r1_count ? r1 / r1_count : 0.0);
            spdlog::info("decoder step {:5d} masked mse {:.4f} visible mse {:.4f} L_G {:.3f} L_D {:.3f} R1 {:.3f} D acc {:.2f}",
                         step + 1, report.window_masked_mse.back(), report.window_visible_mse.back(),
                         report.window_l_g.back(), report.window_l_d.back(), report.window_r1.back(),
                         report.window_disc_accuracy.back());
            split = {};
            acc = lg = ld = r1 = 0.0;
            in_window = r1_count = 0;
        }
    }
    return report;
}

DecoderMetrics evaluate_decoder(const ComposerNet& nets, const VqAutoencoder& vq, const ImageSet& images,
                                std::span<const MaskGrid> masks, int batch) {
    NoGradGuard ng;
    SplitMse split;
    for (std::size_t first = 0; first < images.size(); first += static_cast<std::size_t>(batch)) {
        const std::size_t last = std::min(images.size(), first + static_cast<std::size_t>(batch));
        std::vector<int> idx;
        for (std::size_t i = first; i < last; ++i) idx.push_back(static_cast<int>(i));
        const Tensor x = images.batch(idx);
        const auto m = masks.subspan(first, last - first);
        accumulate_split(split, x, decode(nets, x, m, quantized_features(vq, x)), m);
    }
    DecoderMetrics out;
    if (split.masked_n) out.masked_mse = split.masked / static_cast<double>(split.masked_n);
    if (split.visible_n) out.visible_mse = split.visible / static_cast<double>(split.visible_n);
    return out;
}

}  // namespace plural
