#include "plural/pipeline.hpp"

#include "plural/errors.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace plural {

namespace {

using Json = nlohmann::ordered_json;

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    T v{};
    const auto* end = text.data() + text.size();
    const auto r = std::from_chars(text.data(), end, v);
    if (r.ec != std::errc() || r.ptr != end)
        throw ConfigError(fmt::format("bad value '{}' for {}", text, key));
    return v;
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
void parse_into(std::string_view key, std::string_view text, T& out) {
    if constexpr (std::is_same_v<T, std::string>) {
        out = std::string(text);
    } else if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1") out = true;
        else if (text == "false" || text == "0") out = false;
        else throw ConfigError(fmt::format("bad value '{}' for {} (want true/false)", text, key));
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
        std::vector<int> v;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const auto comma = std::min(text.find(',', pos), text.size());
            v.push_back(parse_number<int>(key, trim(text.substr(pos, comma - pos))));
            pos = comma + 1;
        }
        out = std::move(v);
    } else {
        out = parse_number<T>(key, text);
    }
}

template <class T>
std::string format_value(const T& v) {
    if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
    else if constexpr (std::is_same_v<T, std::vector<int>>) return fmt::format("{}", fmt::join(v, ","));
    else return fmt::format("{}", v);
}

struct Field {
    std::string key;
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, std::string_view)> set;
};

template <class Access>
Field make_field(const char* key, Access access) {
    return {key, [access](const PipelineConfig& c) { return format_value(access(const_cast<PipelineConfig&>(c))); },
            [access, key](PipelineConfig& c, std::string_view text) { parse_into(key, text, access(c)); }};
}

#define PLURAL_FIELD(key, member) make_field(key, [](PipelineConfig& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
    static const std::vector<Field> f{
        PLURAL_FIELD("dataset", dataset),
        PLURAL_FIELD("dataset_count", dataset_count),
        PLURAL_FIELD("image_size", image_size),
        PLURAL_FIELD("data_seed", data_seed),
        PLURAL_FIELD("stages", stages),
        PLURAL_FIELD("codebook_size", codebook_size),
        PLURAL_FIELD("n_z", n_z),
        PLURAL_FIELD("alpha", alpha),
        PLURAL_FIELD("vq_channels", vq_channels),
        PLURAL_FIELD("vq_steps", vq_steps),
        PLURAL_FIELD("vq_batch", vq_batch),
        PLURAL_FIELD("vq_lr", vq_lr),
        PLURAL_FIELD("vq_seed", vq_seed),
        PLURAL_FIELD("encoder_kind", encoder_kind),
        PLURAL_FIELD("encoder_channels", encoder_channels),
        PLURAL_FIELD("encoder_blocks", encoder_blocks),
        PLURAL_FIELD("encoder_steps", encoder_steps),
        PLURAL_FIELD("encoder_batch", encoder_batch),
        PLURAL_FIELD("encoder_lr", encoder_lr),
        PLURAL_FIELD("encoder_seed", encoder_seed),
        PLURAL_FIELD("transformer_dim", transformer_dim),
        PLURAL_FIELD("transformer_layers", transformer_layers),
        PLURAL_FIELD("transformer_heads", transformer_heads),
        PLURAL_FIELD("transformer_dropout", transformer_dropout),
        PLURAL_FIELD("transformer_block_masking", transformer_block_masking),
        PLURAL_FIELD("transformer_steps", transformer_steps),
        PLURAL_FIELD("transformer_batch", transformer_batch),
        PLURAL_FIELD("transformer_lr", transformer_lr),
        PLURAL_FIELD("transformer_seed", transformer_seed),
        PLURAL_FIELD("decoder_prt_channels", decoder_prt_channels),
        PLURAL_FIELD("decoder_gen_channels", decoder_gen_channels),
        PLURAL_FIELD("decoder_disc_channels", decoder_disc_channels),
        PLURAL_FIELD("decoder_steps", decoder_steps),
        PLURAL_FIELD("decoder_batch", decoder_batch),
        PLURAL_FIELD("decoder_lr", decoder_lr),
        PLURAL_FIELD("decoder_disc_lr", decoder_disc_lr),
        PLURAL_FIELD("r1_weight", r1_weight),
        PLURAL_FIELD("perceptual_weight", perceptual_weight),
        PLURAL_FIELD("r1_interval", r1_interval),
        PLURAL_FIELD("decoder_seed", decoder_seed),
        PLURAL_FIELD("sample_steps", sample_steps),
        PLURAL_FIELD("temperature", temperature),
        PLURAL_FIELD("anneal", anneal),
        PLURAL_FIELD("sample_seed", sample_seed),
        PLURAL_FIELD("eval_images", eval_images),
        PLURAL_FIELD("eval_samples", eval_samples),
        PLURAL_FIELD("eval_mask", eval_mask),
        PLURAL_FIELD("eval_seed", eval_seed),
        PLURAL_FIELD("stroke_min_vertices", strokes.min_vertices),
        PLURAL_FIELD("stroke_max_vertices", strokes.max_vertices),
        PLURAL_FIELD("stroke_min_step", strokes.min_step),
        PLURAL_FIELD("stroke_max_step", strokes.max_step),
        PLURAL_FIELD("stroke_min_radius", strokes.min_radius),
        PLURAL_FIELD("stroke_max_radius", strokes.max_radius),
        PLURAL_FIELD("rect_probability", strokes.rect_probability),
        PLURAL_FIELD("rect_min", strokes.min_rect),
        PLURAL_FIELD("rect_max", strokes.max_rect),
        PLURAL_FIELD("log_every", log_every),
        PLURAL_FIELD("work_dir", work_dir),
    };
    return f;
}

#undef PLURAL_FIELD

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

void check_channels(const std::vector<int>& ch, std::size_t want, const char* key) {
    require(ch.size() == want, fmt::format("{} needs {} entries, got {}", key, want, ch.size()));
    for (int c : ch) require(c > 0, fmt::format("{} entries must be positive", key));
}

ConvKind parse_kind(const std::string& s) {
    if (s == "restrictive") return ConvKind::Restrictive;
    if (s == "plain") return ConvKind::Plain;
    if (s == "partial") return ConvKind::Partial;
    throw ConfigError("encoder_kind must be restrictive, partial or plain, got '" + s + "'");
}

}  // namespace

void PipelineConfig::validate() const {
    parse_dataset_kind(dataset);
    parse_kind(encoder_kind);
    parse_mask_spec(eval_mask);
    require(dataset_count >= 1, "dataset_count must be at least 1");
    require(stages >= 1 && image_size > 0 && image_size % (1 << stages) == 0,
            fmt::format("image_size {} not divisible by 2^{}", image_size, stages));
    require(alpha > 0.0f && alpha <= 1.0f, fmt::format("alpha {} outside (0, 1]", alpha));
    require(codebook_size >= 2 && n_z >= 1, "codebook_size must be >= 2 and n_z >= 1");
    check_channels(vq_channels, static_cast<std::size_t>(stages), "vq_channels");
    check_channels(encoder_channels, static_cast<std::size_t>(stages), "encoder_channels");
    check_channels(decoder_prt_channels, static_cast<std::size_t>(stages), "decoder_prt_channels");
    check_channels(decoder_gen_channels, static_cast<std::size_t>(stages), "decoder_gen_channels");
    require(!decoder_disc_channels.empty() && (image_size >> decoder_disc_channels.size()) >= 1,
            "decoder_disc_channels: too many stride-2 layers for the image size");
    require(transformer_dim % transformer_heads == 0, "transformer_dim must be divisible by transformer_heads");
    require(transformer_dropout >= 0.0f && transformer_dropout < 1.0f, "transformer_dropout outside [0, 1)");
    for (int s : {vq_steps, encoder_steps, transformer_steps, decoder_steps}) require(s >= 0, "step counts must be >= 0");
    for (int b : {vq_batch, encoder_batch, transformer_batch, decoder_batch}) require(b >= 1, "batch sizes must be >= 1");
    require(encoder_blocks >= 1, "encoder_blocks must be >= 1");
    require(r1_interval >= 1, "r1_interval must be >= 1");
    require(sample_steps >= 1, "sample_steps must be >= 1");
    require(temperature > 0.0, "temperature must be positive");
    require(anneal > 0.0 && anneal <= 1.0, "anneal must lie in (0, 1]");
    require(eval_images >= 1, "eval_images must be >= 1");
    require(eval_samples >= 2, "eval_samples must be >= 2 for diversity");
    require(log_every >= 1, "log_every must be >= 1");
    require(strokes.min_vertices >= 1 && strokes.min_vertices <= strokes.max_vertices, "stroke vertex range invalid");
    require(strokes.min_step > 0 && strokes.min_step <= strokes.max_step, "stroke step range invalid");
    require(strokes.min_radius > 0 && strokes.min_radius <= strokes.max_radius, "stroke radius range invalid");
    require(strokes.rect_probability >= 0 && strokes.rect_probability <= 1, "rect_probability outside [0, 1]");
    require(strokes.min_rect > 0 && strokes.min_rect <= strokes.max_rect && strokes.max_rect <= 1, "rect range invalid");
}

VqConfig PipelineConfig::vq_config() const {
    VqConfig c;
    c.image_size = image_size;
    c.stages = stages;
    c.codebook_size = codebook_size;
    c.n_z = n_z;
    c.channels = vq_channels;
    return c;
}

EncoderConfig PipelineConfig::encoder_config() const {
    EncoderConfig c;
    c.image_size = image_size;
    c.codebook_size = codebook_size;
    c.channels = encoder_channels;
    c.blocks_per_stage = encoder_blocks;
    c.alpha = alpha;
    c.kind = parse_kind(encoder_kind);
    return c;
}

TransformerConfig PipelineConfig::transformer_config() const {
    TransformerConfig c;
    c.grid_size = image_size >> stages;
    c.codebook_size = codebook_size;
    c.n_z = n_z;
    c.dim = transformer_dim;
    c.layers = transformer_layers;
    c.heads = transformer_heads;
    c.dropout = transformer_dropout;
    return c;
}

DecoderConfig PipelineConfig::decoder_config() const {
    DecoderConfig c;
    c.image_size = image_size;
    c.stages = stages;
    c.n_z = n_z;
    c.alpha = alpha;
    c.prt_channels = decoder_prt_channels;
    c.gen_channels = decoder_gen_channels;
    c.disc_channels = decoder_disc_channels;
    return c;
}

VqTrainConfig PipelineConfig::vq_train() const {
    VqTrainConfig c;
    c.steps = vq_steps;
    c.batch = vq_batch;
    c.lr = vq_lr;
    c.log_every = log_every;
    c.seed = vq_seed;
    return c;
}

EncoderTrainConfig PipelineConfig::encoder_train() const {
    EncoderTrainConfig c;
    c.steps = encoder_steps;
    c.batch = encoder_batch;
    c.lr = encoder_lr;
    c.log_every = log_every;
    c.seed = encoder_seed;
    c.strokes = strokes;
    return c;
}

TransformerTrainConfig PipelineConfig::transformer_train() const {
    TransformerTrainConfig c;
    c.steps = transformer_steps;
    c.batch = transformer_batch;
    c.lr = transformer_lr;
    c.block_masking = transformer_block_masking;
    c.log_every = log_every;
    c.seed = transformer_seed;
    return c;
}

DecoderTrainConfig PipelineConfig::decoder_train() const {
    DecoderTrainConfig c;
    c.steps = decoder_steps;
    c.batch = decoder_batch;
    c.lr = decoder_lr;
    c.disc_lr = decoder_disc_lr;
    c.weights = {r1_weight, perceptual_weight};
    c.r1_interval = r1_interval;
    c.log_every = log_every;
    c.seed = decoder_seed;
    c.strokes = strokes;
    return c;
}

MaskSpec PipelineConfig::eval_mask_spec() const { return parse_mask_spec(eval_mask); }

std::filesystem::path PipelineConfig::checkpoint_path(std::string_view stage) const {
    return std::filesystem::path(work_dir) / (std::string(stage) + ".mgrd");
}

void apply_setting(PipelineConfig& config, std::string_view key, std::string_view value) {
    for (const auto& f : fields())
        if (f.key == key) {
            f.set(config, trim(value));
            return;
        }
    throw ConfigError(fmt::format("unknown config key '{}'", key));
}

void apply_config_text(PipelineConfig& config, std::string_view text) {
    std::size_t pos = 0;
    int line_no = 0;
    while (pos < text.size()) {
        const auto nl = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(fmt::format("config line {}: expected key=value", line_no));
        apply_setting(config, trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    PipelineConfig c;
    apply_config_text(c, ss.str());
    return c;
}

std::string to_text(const PipelineConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += f.key + "=" + f.get(config) + "\n";
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
    return h;
}

std::uint64_t config_hash(const PipelineConfig& config) { return fnv1a(to_text(config)); }

std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return fnv1a(ss.str());
}

std::string hex(std::uint64_t value) { return fmt::format("{:016x}", value); }

ImageSet training_images(const PipelineConfig& config) {
    return make_dataset(parse_dataset_kind(config.dataset), config.dataset_count, config.image_size, config.data_seed)
        .images();
}

ImageSet eval_images(const PipelineConfig& config) {
    return make_dataset(parse_dataset_kind(config.dataset), config.eval_images, config.image_size,
                        derive_seed(config.eval_seed, 0xE1A1))
        .images();
}

std::vector<TokenGrid> vq_targets(const ImageSet& images, const VqAutoencoder& vq) {
    NoGradGuard ng;
    std::vector<TokenGrid> out;
    for (std::size_t first = 0; first < images.size(); first += 32) {
        std::vector<int> idx;
        for (std::size_t i = first; i < std::min(images.size(), first + 32); ++i) idx.push_back(static_cast<int>(i));
        for (auto& g : encode_full_batch(images.batch(idx), vq)) out.push_back(std::move(g));
    }
    return out;
}

Models load_models(const PipelineConfig& config) {
    config.validate();
    auto read = [&](std::string_view stage) {
        const auto path = config.checkpoint_path(stage);
        if (!std::filesystem::exists(path)) throw CheckpointError(fmt::format("missing {} checkpoint {}", stage, path.string()));
        return read_checkpoint(path);
    };
    VqAutoencoder vq(config.vq_config(), config.vq_seed);
    vq.load(read("vq"));
    RestrictiveEncoder encoder(config.encoder_config(), config.encoder_seed);
    encoder.load(read("encoder"));
    BidirectionalTransformer transformer(config.transformer_config(), vq.codebook, config.transformer_seed);
    transformer.load(read("transformer"));
    ComposerNet decoder(config.decoder_config(), config.decoder_seed);
    decoder.load(read("decoder"));
    // The transformer keeps its own frozen codebook copy; a VQ retrained after
    // the transformer would silently disagree with it.
    const auto a = vq.codebook.embeddings.data(), b = transformer.codebook().embeddings.data();
    if (!std::equal(a.begin(), a.end(), b.begin(), b.end()))
        throw CheckpointError("transformer codebook differs from the VQ codebook; retrain the transformer");
    return {std::move(vq), std::move(encoder), std::move(transformer), std::move(decoder)};
}

SamplerSettings sampler_settings(const PipelineConfig& config) {
    return {config.sample_steps, config.temperature, config.anneal};
}

TokenGrid initial_grid(const RestrictiveEncoder& encoder, const Tensor& image, const MaskGrid& mask) {
    NoGradGuard ng;
    const auto [logits, pyramid] = encode_partial(encoder, image, mask);
    const Tensor batched = ops::reshape(logits, {1, logits.size(0), logits.size(1), logits.size(2)});
    TokenGrid grid = argmax_grids(batched, encoder.config().codebook_size).front();
    const auto& tm = pyramid.token_mask();
    for (int i = 0; i < grid.cells(); ++i)
        if (!tm.values()[static_cast<std::size_t>(i)]) grid.set(i, grid.mask_label());
    return grid;
}

Completion complete(const Models& models, const Tensor& image, const MaskGrid& mask, const TokenGrid& initial,
                    const SamplerSettings& settings, std::uint64_t seed) {
    NoGradGuard ng;
    const SampleSchedule schedule =
        make_schedule(initial.missing_count(), settings.steps, settings.temperature, settings.anneal);
    Completion c;
    c.grid = initial.missing_count() ? sample_all(initial, models.transformer, schedule, seed) : initial;
    const Tensor z = lookup(c.grid, models.vq.codebook);
    const Tensor out = decode(models.decoder, ops::reshape(image, {1, 3, image.size(1), image.size(2)}),
                              std::span(&mask, 1), ops::reshape(z, {1, z.size(0), z.size(1), z.size(2)}));
    c.image = ops::reshape(out, {3, image.size(1), image.size(2)});
    for (float v : c.image.data())
        if (!std::isfinite(v)) throw NumericalError("decoder produced a non-finite pixel");
    return c;
}

InpaintResult inpaint(const Models& models, const Tensor& image, const MaskGrid& mask, const SamplerSettings& settings,
                      int n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw ConfigError("n_samples must be at least 1");
    InpaintResult r;
    r.initial = initial_grid(models.encoder, image, mask);
    for (int j = 0; j < n_samples; ++j) {
        r.seeds.push_back(derive_seed(seed, static_cast<std::uint64_t>(j)));
        r.samples.push_back(complete(models, image, mask, r.initial, settings, r.seeds.back()));
    }
    return r;
}

MaskGrid masked_cells(const MaskGrid& pixel_mask, int grid_height, int grid_width) {
    const int sy = pixel_mask.height() / grid_height, sx = pixel_mask.width() / grid_width;
    if (sy * grid_height != pixel_mask.height() || sx * grid_width != pixel_mask.width())
        throw ShapeError("grid does not tile the mask");
    MaskGrid cells(grid_height, grid_width, false);
    for (int y = 0; y < pixel_mask.height(); ++y)
        for (int x = 0; x < pixel_mask.width(); ++x)
            if (!pixel_mask.at(y, x)) cells.set(y / sy, x / sx, true);
    return cells;
}

double feature_distance(const Tensor& a, const Tensor& b, const MaskGrid& cells) {
    if (a.shape() != b.shape() || a.dim() != 3 || a.size(1) != cells.height() || a.size(2) != cells.width())
        throw ShapeError(fmt::format("feature_distance: {} vs {} over {}x{} cells", to_string(a.shape()),
                                     to_string(b.shape()), cells.height(), cells.width()));
    const auto hw = static_cast<std::size_t>(cells.height() * cells.width());
    const auto pa = a.data(), pb = b.data();
    double sum = 0.0;
    std::int64_t n = 0;
    for (std::int64_t c = 0; c < a.size(0); ++c)
        for (std::size_t i = 0; i < hw; ++i) {
            if (!cells.values()[i]) continue;
            const double d = static_cast<double>(pa[static_cast<std::size_t>(c) * hw + i]) - pb[static_cast<std::size_t>(c) * hw + i];
            sum += d * d;
            ++n;
        }
    return n ? std::sqrt(sum / static_cast<double>(n)) : 0.0;
}

double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    if (a.empty() || b.empty()) throw ShapeError("frechet_distance needs non-empty sets");
    const auto dim = static_cast<Eigen::Index>(a.front().size());
    auto fit = [dim](const std::vector<std::vector<double>>& rows, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), dim);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (static_cast<Eigen::Index>(rows[r].size()) != dim) throw ShapeError("frechet_distance: ragged rows");
            for (Eigen::Index c = 0; c < dim; ++c) m(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
        }
        mean = m.colwise().mean().transpose();
        const Eigen::MatrixXd centered = m.rowwise() - mean.transpose();
        cov = centered.transpose() * centered / std::max<double>(1.0, static_cast<double>(rows.size()) - 1.0);
    };
    Eigen::VectorXd mu1, mu2;
    Eigen::MatrixXd s1, s2;
    fit(a, mu1, s1);
    fit(b, mu2, s2);
    // tr sqrt(S1 S2) = tr sqrt(S1^1/2 S2 S1^1/2), which is symmetric PSD.
    auto psd_sqrt = [](const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        return Eigen::MatrixXd(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    };
    const Eigen::MatrixXd r1 = psd_sqrt(s1);
    const Eigen::MatrixXd inner = r1 * s2 * r1;
    const double cross = psd_sqrt(0.5 * (inner + inner.transpose())).trace();
    const double d = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * cross;
    return std::max(0.0, d);
}

EvalReport evaluate(const Models& models, const ImageSet& images, const MaskSpec& spec, int n_samples,
                    const SamplerSettings& settings, std::uint64_t seed, const StrokeParams& strokes) {
    if (n_samples < 2) throw ConfigError(fmt::format("diversity needs at least 2 samples per image, got {}", n_samples));
    if (images.size() == 0) throw ConfigError("evaluation set is empty");
    NoGradGuard ng;
    EvalReport report;
    report.mask = to_string(spec);
    report.settings = settings;
    report.samples_per_image = n_samples;
    std::vector<std::vector<double>> real_feats, fake_feats;
    auto pooled = [](const Tensor& f) {
        const auto c = f.size(0), hw = f.size(1) * f.size(2);
        std::vector<double> v(static_cast<std::size_t>(c), 0.0);
        for (std::int64_t i = 0; i < c; ++i)
            for (std::int64_t j = 0; j < hw; ++j) v[static_cast<std::size_t>(i)] += f.data()[static_cast<std::size_t>(i * hw + j)];
        for (auto& x : v) x /= static_cast<double>(hw);
        return v;
    };
    auto features = [&](const Tensor& img) {
        const Tensor f = models.vq.encode(ops::reshape(img, {1, 3, img.size(1), img.size(2)}));
        return ops::reshape(f, {f.size(1), f.size(2), f.size(3)});
    };
    double masked_sum = 0.0, visible_sum = 0.0;
    std::int64_t masked_n = 0, visible_n = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Tensor& x = images.images[i];
        const int h = static_cast<int>(x.size(1)), w = static_cast<int>(x.size(2));
        const MaskGrid mask = generate_mask(spec, h, w, derive_seed(seed, {0x4D, i}), strokes);
        const TokenGrid init = initial_grid(models.encoder, x, mask);
        const Tensor real = features(x);
        real_feats.push_back(pooled(real));
        const MaskGrid cells = masked_cells(mask, static_cast<int>(real.size(1)), static_cast<int>(real.size(2)));
        EvalEntry e;
        e.image = static_cast<int>(i);
        std::vector<Tensor> sample_feats;
        double em = 0.0, ev = 0.0;
        std::int64_t emn = 0, evn = 0;
        for (int j = 0; j < n_samples; ++j) {
            e.seeds.push_back(derive_seed(seed, {i, static_cast<std::uint64_t>(j)}));
            const Completion c = complete(models, x, mask, init, settings, e.seeds.back());
            const auto out = c.image.data(), ref = x.data();
            for (int ch = 0; ch < 3; ++ch)
                for (int p = 0; p < h * w; ++p) {
                    const auto k = static_cast<std::size_t>(ch * h * w + p);
                    const double d = static_cast<double>(out[k]) - ref[k];
                    if (mask.values()[static_cast<std::size_t>(p)]) {
                        ev += d * d;
                        ++evn;
                    } else {
                        em += d * d;
                        ++emn;
                    }
                }
            sample_feats.push_back(features(c.image));
            fake_feats.push_back(pooled(sample_feats.back()));
        }
        masked_sum += em;
        masked_n += emn;
        visible_sum += ev;
        visible_n += evn;
        e.masked_mse = emn ? em / static_cast<double>(emn) : 0.0;
        e.visible_mse = evn ? ev / static_cast<double>(evn) : 0.0;
        double pair_sum = 0.0;
        int pairs = 0;
        for (int a = 0; a < n_samples; ++a)
            for (int b = a + 1; b < n_samples; ++b, ++pairs)
                pair_sum += feature_distance(sample_feats[static_cast<std::size_t>(a)], sample_feats[static_cast<std::size_t>(b)], cells);
        e.diversity = pair_sum / pairs;
        report.entries.push_back(std::move(e));
    }
    report.masked_mse = masked_n ? masked_sum / static_cast<double>(masked_n) : 0.0;
    report.visible_mse = visible_n ? visible_sum / static_cast<double>(visible_n) : 0.0;
    report.fid_proxy = frechet_distance(real_feats, fake_feats);
    double mean = 0.0;
    for (const auto& e : report.entries) mean += e.diversity;
    mean /= static_cast<double>(report.entries.size());
    double var = 0.0;
    for (const auto& e : report.entries) var += (e.diversity - mean) * (e.diversity - mean);
    report.diversity_mean = mean;
    report.diversity_std = std::sqrt(var / static_cast<double>(report.entries.size()));
    return report;
}

namespace {

Json eval_json(const EvalReport& r) {
    Json j;
    j["distance"] = EvalReport::distance;
    j["mask"] = r.mask;
    j["sampler"] = {{"steps", r.settings.steps}, {"temperature", r.settings.temperature}, {"anneal", r.settings.anneal}};
    j["samples_per_image"] = r.samples_per_image;
    j["masked_mse"] = r.masked_mse;
    j["visible_mse"] = r.visible_mse;
    j["fid_proxy"] = r.fid_proxy;
    j["diversity"] = {{"mean", r.diversity_mean}, {"std", r.diversity_std}};
    Json entries = Json::array();
    for (const auto& e : r.entries) {
        Json seeds = Json::array();
        for (auto s : e.seeds) seeds.push_back(hex(s));
        entries.push_back({{"image", e.image}, {"seeds", seeds}, {"masked_mse", e.masked_mse},
                           {"visible_mse", e.visible_mse}, {"diversity", e.diversity}});
    }
    j["entries"] = entries;
    return j;
}

}  // namespace

std::string to_json(const EvalReport& report) { return eval_json(report).dump(2); }

AblationAxis parse_ablation_axis(std::string_view text) {
    if (text == "alpha") return AblationAxis::Alpha;
    if (text == "temperature") return AblationAxis::Temperature;
    if (text == "anneal") return AblationAxis::Anneal;
    throw ConfigError(fmt::format("unknown ablation axis '{}' (alpha, temperature, anneal)", text));
}

std::string to_string(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::Alpha: return "alpha";
        case AblationAxis::Temperature: return "temperature";
        case AblationAxis::Anneal: return "anneal";
    }
    return "?";
}

AblationReport run_ablation(AblationAxis axis, std::span<const double> values, const PipelineConfig& base,
                            const Models& models, const ImageSet& train, const ImageSet& held_out) {
    if (values.empty()) throw ConfigError("ablation needs at least one value");
    AblationReport report;
    report.axis = axis;
    if (axis != AblationAxis::Alpha) {
        for (double v : values) {
            PipelineConfig c = base;
            (axis == AblationAxis::Temperature ? c.temperature : c.anneal) = v;
            c.validate();
            spdlog::info("ablation {}={}", to_string(axis), v);
            AblationRow row;
            row.value = v;
            row.eval = evaluate(models, held_out, c.eval_mask_spec(), c.eval_samples, sampler_settings(c), c.eval_seed,
                                c.strokes);
            report.rows.push_back(std::move(row));
        }
        return report;
    }

    const std::vector<TokenGrid> train_targets = vq_targets(train, models.vq);
    const std::vector<TokenGrid> held_targets = vq_targets(held_out, models.vq);
    std::vector<MaskGrid> masks;
    for (std::size_t i = 0; i < held_out.size(); ++i)
        masks.push_back(training_mask(base.eval_seed, i, base.image_size, base.strokes));

    std::vector<RestrictiveEncoder> encoders;
    std::vector<MaskGrid> common;
    for (double v : values) {
        PipelineConfig c = base;
        c.alpha = static_cast<float>(v);
        c.validate();
        spdlog::info("ablation alpha={}", v);
        RestrictiveEncoder enc(c.encoder_config(), c.encoder_seed);
        train_encoder(enc, train, train_targets, c.encoder_train());
        for (std::size_t i = 0; i < masks.size(); ++i) {
            const MaskGrid tm = build_pyramid(masks[i], c.alpha, c.stages).token_mask();
            if (common.size() <= i) {
                common.push_back(tm);
                continue;
            }
            for (int y = 0; y < tm.height(); ++y)
                for (int x = 0; x < tm.width(); ++x) common[i].set(y, x, common[i].at(y, x) && tm.at(y, x));
        }
        AblationRow row;
        row.value = v;
        row.encoder = evaluate_encoder(enc, held_out, held_targets, masks);
        report.rows.push_back(std::move(row));
        encoders.push_back(std::move(enc));
    }
    for (std::size_t r = 0; r < encoders.size(); ++r)
        report.rows[r].common_loss = evaluate_encoder(encoders[r], held_out, held_targets, masks, common).loss;
    return report;
}

std::string to_json(const AblationReport& report) {
    Json j;
    j["axis"] = to_string(report.axis);
    Json rows = Json::array();
    for (const auto& r : report.rows) {
        Json row{{"value", r.value}};
        if (r.encoder)
            row["encoder"] = {{"loss", r.encoder->loss}, {"accuracy", r.encoder->accuracy},
                              {"boundary_accuracy", r.encoder->boundary_accuracy},
                              {"visible_cells", r.encoder->visible_cells}, {"boundary_cells", r.encoder->boundary_cells}};
        if (r.common_loss) row["common_cell_loss"] = *r.common_loss;
        if (r.eval) row["eval"] = eval_json(*r.eval);
        rows.push_back(row);
    }
    j["rows"] = rows;
    return j.dump(2);
}

}  // namespace plural
