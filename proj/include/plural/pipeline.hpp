#pragma once
// End-to-end orchestration: configuration, stage training, inference,
// evaluation and ablations.
#include "plural/decoder.hpp"
#include "plural/encoder.hpp"
#include "plural/sampler.hpp"
#include "plural/transformer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace plural {

// Flat key=value configuration. Keys and defaults are listed in docs/config.md;
// `to_text` prints every key in a fixed order and is what config_hash hashes.
struct PipelineConfig {
    // data
    std::string dataset = "mixed";
    int dataset_count = 500;
    int image_size = 64;
    std::uint64_t data_seed = 7;

    // shared model shape
    int stages = 3;
    int codebook_size = 64;
    int n_z = 32;
    float alpha = 0.5f;

    std::vector<int> vq_channels{32, 64, 64};
    int vq_steps = 2000, vq_batch = 8;
    float vq_lr = 1e-3f;
    std::uint64_t vq_seed = 1;

    std::string encoder_kind = "restrictive";
    std::vector<int> encoder_channels{32, 64, 128};
    int encoder_blocks = 2;
    int encoder_steps = 2000, encoder_batch = 8;
    float encoder_lr = 1e-3f;
    std::uint64_t encoder_seed = 2;

    int transformer_dim = 128, transformer_layers = 4, transformer_heads = 4;
    float transformer_dropout = 0.1f;
    bool transformer_block_masking = false;
    int transformer_steps = 3000, transformer_batch = 16;
    float transformer_lr = 5e-4f;
    std::uint64_t transformer_seed = 3;

    std::vector<int> decoder_prt_channels{32, 64, 64};
    std::vector<int> decoder_gen_channels{32, 64, 64};
    std::vector<int> decoder_disc_channels{32, 64, 64, 64};
    int decoder_steps = 1500, decoder_batch = 8;
    float decoder_lr = 2e-4f, decoder_disc_lr = 2e-4f;
    float r1_weight = 0.1f, perceptual_weight = 0.1f;
    int r1_interval = 4;
    std::uint64_t decoder_seed = 4;

    // sampler
    int sample_steps = 5;
    double temperature = 1.0;
    double anneal = 0.9;
    std::uint64_t sample_seed = 5;

    // evaluation
    int eval_images = 64, eval_samples = 8;
    std::string eval_mask = "box80";
    std::uint64_t eval_seed = 6;

    StrokeParams strokes;
    int log_every = 100;
    std::string work_dir = "run";

    void validate() const;

    VqConfig vq_config() const;
    EncoderConfig encoder_config() const;
    TransformerConfig transformer_config() const;
    DecoderConfig decoder_config() const;
    VqTrainConfig vq_train() const;
    EncoderTrainConfig encoder_train() const;
    TransformerTrainConfig transformer_train() const;
    DecoderTrainConfig decoder_train() const;
    MaskSpec eval_mask_spec() const;

    std::filesystem::path checkpoint_path(std::string_view stage) const;  // vq, encoder, transformer, decoder
};

// Unknown keys and malformed values throw ConfigError.
void apply_setting(PipelineConfig& config, std::string_view key, std::string_view value);
// "key=value" lines; '#' starts a comment; blank lines ignored.
void apply_config_text(PipelineConfig& config, std::string_view text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string to_text(const PipelineConfig& config);
std::vector<std::string> config_keys();

std::uint64_t fnv1a(std::string_view bytes);
std::uint64_t config_hash(const PipelineConfig& config);
std::uint64_t file_hash(const std::filesystem::path& path);
std::string hex(std::uint64_t value);

// Training corpus and the held-out evaluation corpus, each from its own seed.
ImageSet training_images(const PipelineConfig& config);
ImageSet eval_images(const PipelineConfig& config);

// E_VQ token labels of every image, encoded in batches without grad.
std::vector<TokenGrid> vq_targets(const ImageSet& images, const VqAutoencoder& vq);

struct Models {
    VqAutoencoder vq;
    RestrictiveEncoder encoder;
    BidirectionalTransformer transformer;
    ComposerNet decoder;
};
// Reads the four stage checkpoints; CheckpointError names the offending one.
Models load_models(const PipelineConfig& config);

struct SamplerSettings {
    int steps = 5;
    double temperature = 1.0;
    double anneal = 0.9;
};
SamplerSettings sampler_settings(const PipelineConfig& config);

// Encoder argmax at the cells M-hat keeps, MASK everywhere else.
TokenGrid initial_grid(const RestrictiveEncoder& encoder, const Tensor& image, const MaskGrid& mask);

struct Completion {
    TokenGrid grid;  // fully sampled
    Tensor image;    // [3,H,W]
};
Completion complete(const Models& models, const Tensor& image, const MaskGrid& mask, const TokenGrid& initial,
                    const SamplerSettings& settings, std::uint64_t seed);

struct InpaintResult {
    TokenGrid initial;
    std::vector<std::uint64_t> seeds;
    std::vector<Completion> samples;
};
// Sample j uses derive_seed(seed, j).
InpaintResult inpaint(const Models& models, const Tensor& image, const MaskGrid& mask, const SamplerSettings& settings,
                      int n_samples, std::uint64_t seed);

// Cells whose pixel block contains a masked pixel.
MaskGrid masked_cells(const MaskGrid& pixel_mask, int grid_height, int grid_width);
// RMS difference of E_VQ features over the given cells (0 when none).
double feature_distance(const Tensor& features_a, const Tensor& features_b, const MaskGrid& cells);
// Frechet distance between Gaussian fits of two sets of row vectors.
double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

struct EvalEntry {
    int image = 0;
    std::vector<std::uint64_t> seeds;
    double masked_mse = 0.0, visible_mse = 0.0;
    double diversity = 0.0;  // mean pairwise feature distance among this image's samples
};

struct EvalReport {
    static constexpr const char* distance = "rms L2 of VQ-encoder features over cells touching the hole (LPIPS substitute)";
    std::string mask;
    SamplerSettings settings;
    int samples_per_image = 0;
    double masked_mse = 0.0, visible_mse = 0.0;
    double fid_proxy = 0.0;
    double diversity_mean = 0.0, diversity_std = 0.0;
    std::vector<EvalEntry> entries;
};

// Mask i is generate_mask(spec, derive_seed(seed, {0x4D, i})); sample j of
// image i uses derive_seed(seed, {i, j}). n_samples < 2 throws ConfigError.
EvalReport evaluate(const Models& models, const ImageSet& images, const MaskSpec& spec, int n_samples,
                    const SamplerSettings& settings, std::uint64_t seed, const StrokeParams& strokes = {});
std::string to_json(const EvalReport& report);

enum class AblationAxis { Alpha, Temperature, Anneal };
AblationAxis parse_ablation_axis(std::string_view text);
std::string to_string(AblationAxis axis);

struct AblationRow {
    double value = 0.0;
    std::optional<EncoderMetrics> encoder;         // alpha axis
    std::optional<double> common_loss;             // alpha axis: NLL over cells every value keeps
    std::optional<EvalReport> eval;                // temperature and anneal axes
};

struct AblationReport {
    AblationAxis axis = AblationAxis::Alpha;
    std::vector<AblationRow> rows;
};

// Alpha retrains the encoder once per value (same seed, same data) and scores
// it on held-out images under random masks; temperature and anneal re-sample
// the loaded pipeline.
AblationReport run_ablation(AblationAxis axis, std::span<const double> values, const PipelineConfig& base,
                            const Models& models, const ImageSet& train, const ImageSet& held_out);
std::string to_json(const AblationReport& report);

}  // namespace plural
