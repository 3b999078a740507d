// Command-line front end. Exit codes: 0 ok, 2 config error, 3 checkpoint
// mismatch, 4 numerical failure, 1 anything else (I/O).
#include "plural/errors.hpp"
#include "plural/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <fstream>
#include <map>

using namespace plural;
namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;  // --<config key> values
    std::string data_dir;
};

PipelineConfig resolve(const Common& c) {
    PipelineConfig cfg = c.config_path.empty() ? PipelineConfig{} : load_config(c.config_path);
    for (const auto& [k, v] : c.flags)
        if (!v.empty()) apply_setting(cfg, k, v);
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Config hash, seeds and checkpoint hashes: enough to reproduce the run.
void write_manifest(const PipelineConfig& cfg, const std::string& command, const std::vector<std::string>& argv,
                    const Json& seeds, const std::vector<fs::path>& outputs) {
    Json m;
    m["command"] = command;
    m["argv"] = argv;
    m["config_hash"] = hex(config_hash(cfg));
    m["config"] = to_text(cfg);
    m["seeds"] = seeds;
    Json ck = Json::object();
    for (const char* stage : {"vq", "encoder", "transformer", "decoder"}) {
        const fs::path p = cfg.checkpoint_path(stage);
        if (fs::exists(p)) ck[stage] = {{"path", p.string()}, {"fnv1a", hex(file_hash(p))}};
    }
    m["checkpoints"] = ck;
    Json outs = Json::array();
    for (const auto& p : outputs)
        if (fs::is_regular_file(p)) outs.push_back({{"path", p.string()}, {"fnv1a", hex(file_hash(p))}});
    m["outputs"] = outs;
    write_text(fs::path(cfg.work_dir) / (command + ".manifest.json"), m.dump(2) + "\n");
}

ImageSet load_training(const PipelineConfig& cfg, const Common& c) {
    if (c.data_dir.empty()) return training_images(cfg);
    ImageSet s = read_image_dir(c.data_dir);
    if (s.height != cfg.image_size || s.width != cfg.image_size)
        throw ConfigError(fmt::format("images in {} are {}x{}, config wants {}", c.data_dir, s.width, s.height, cfg.image_size));
    return s;
}

VqAutoencoder load_vq(const PipelineConfig& cfg) {
    const fs::path p = cfg.checkpoint_path("vq");
    if (!fs::exists(p)) throw CheckpointError("missing vq checkpoint " + p.string() + "; run train-vq first");
    VqAutoencoder vq(cfg.vq_config(), cfg.vq_seed);
    vq.load(read_checkpoint(p));
    return vq;
}

void save(const PipelineConfig& cfg, std::string_view stage, const nn::ParamList& entries) {
    fs::create_directories(cfg.work_dir);
    write_checkpoint(cfg.checkpoint_path(stage), entries);
    spdlog::info("wrote {}", cfg.checkpoint_path(stage).string());
}

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> v;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = std::min(text.find(',', pos), text.size());
        const std::string item = text.substr(pos, comma - pos);
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw ConfigError("bad ablation value '" + item + "'");
        }
        pos = comma + 1;
    }
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pluralistic inpainting: synthetic data, three-stage training, sampling and evaluation"};
    app.require_subcommand(1);
    Common common;
    const std::vector<std::string> args(argv, argv + argc);

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "key=value config file")->check(CLI::ExistingFile);
        sub->add_option("--set", common.sets, "override, key=value (repeatable)");
        for (const auto& key : config_keys())
            if (key != "temperature" && key != "anneal") sub->add_option("--" + key, common.flags[key], "config override");
    };
    auto add_sampler = [&](CLI::App* sub) {
        sub->add_option("--steps", common.flags["sample_steps"], "sampling steps k (default 5)");
        sub->add_option("--temperature", common.flags["temperature"], "starting temperature t0 (default 1.0)");
        sub->add_option("--anneal", common.flags["anneal"], "annealing factor s (default 0.9)");
    };

    std::string out_dir, image_path, mask_path, out_path, mask_kind = "box80", axis, values;
    int count = 16, samples = 3;
    std::uint64_t seed = 0;

    auto* make_ds = app.add_subcommand("make-dataset", "write the synthetic corpus as PPM files");
    add_common(make_ds);
    make_ds->add_option("--out", out_dir, "output directory")->required();

    auto* make_masks = app.add_subcommand("make-masks", "write masks as PGM files (255 visible, 0 hole)");
    add_common(make_masks);
    make_masks->add_option("--out", out_dir, "output directory")->required();
    make_masks->add_option("--kind", mask_kind, "small-random, large-random, box80 or custom-box:<frac>");
    make_masks->add_option("--count", count, "number of masks")->check(CLI::PositiveNumber);
    make_masks->add_option("--seed", seed, "mask seed")->required();

    auto* train_vq_cmd = app.add_subcommand("train-vq", "train the VQ autoencoder and codebook");
    auto* train_enc_cmd = app.add_subcommand("train-encoder", "train the restrictive encoder against VQ labels");
    auto* train_tr_cmd = app.add_subcommand("train-transformer", "train the bidirectional transformer");
    auto* train_dec_cmd = app.add_subcommand("train-decoder", "train the composition decoder");
    for (auto* sub : {train_vq_cmd, train_enc_cmd, train_tr_cmd, train_dec_cmd}) {
        add_common(sub);
        sub->add_option("--data", common.data_dir, "directory of PPM training images (default: synthetic corpus)");
    }

    auto* inpaint_cmd = app.add_subcommand("inpaint", "complete one image under one mask");
    add_common(inpaint_cmd);
    add_sampler(inpaint_cmd);
    inpaint_cmd->add_option("--image", image_path, "input PPM")->required()->check(CLI::ExistingFile);
    inpaint_cmd->add_option("--mask", mask_path, "mask PGM")->required()->check(CLI::ExistingFile);
    inpaint_cmd->add_option("--out", out_dir, "output directory")->required();
    inpaint_cmd->add_option("--samples", samples, "number of completions")->check(CLI::PositiveNumber);
    inpaint_cmd->add_option("--seed", seed, "sampling seed")->required();

    auto* eval_cmd = app.add_subcommand("eval", "reconstruction error, FID proxy and diversity on held-out images");
    add_common(eval_cmd);
    add_sampler(eval_cmd);
    eval_cmd->add_option("--out", out_path, "report JSON path");

    auto* ablate_cmd = app.add_subcommand("ablate", "sweep one axis: alpha, temperature or anneal");
    add_common(ablate_cmd);
    add_sampler(ablate_cmd);
    ablate_cmd->add_option("--axis", axis, "alpha, temperature or anneal")->required();
    ablate_cmd->add_option("--values", values, "comma-separated values")->required();
    ablate_cmd->add_option("--out", out_path, "report JSON path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const PipelineConfig cfg = resolve(common);
        auto* sub = app.get_subcommands().front();
        const std::string cmd = sub->get_name();
        Json seeds = Json::object();
        std::vector<fs::path> outputs;

        if (sub == make_ds) {
            const Corpus corpus = make_dataset(parse_dataset_kind(cfg.dataset), cfg.dataset_count, cfg.image_size, cfg.data_seed);
            write_corpus(out_dir, corpus);
            for (std::size_t i = 0; i < corpus.raw.size(); ++i) outputs.push_back(fs::path(out_dir) / fmt::format("img_{:05d}.ppm", i));
            seeds["data_seed"] = cfg.data_seed;
            fmt::print("wrote {} images to {}\n", corpus.raw.size(), out_dir);
        } else if (sub == make_masks) {
            const MaskSpec spec = parse_mask_spec(mask_kind);
            fs::create_directories(out_dir);
            for (int i = 0; i < count; ++i) {
                const fs::path p = fs::path(out_dir) / fmt::format("mask_{:05d}.pgm", i);
                write_mask_pgm(p, generate_mask(spec, cfg.image_size, cfg.image_size,
                                                derive_seed(seed, static_cast<std::uint64_t>(i)), cfg.strokes));
                outputs.push_back(p);
            }
            seeds["mask_seed"] = seed;
            fmt::print("wrote {} {} masks to {}\n", count, to_string(spec), out_dir);
        } else if (sub == train_vq_cmd) {
            const ImageSet data = load_training(cfg, common);
            VqAutoencoder vq(cfg.vq_config(), cfg.vq_seed);
            const VqReport r = train_vq(vq, data, cfg.vq_train());
            save(cfg, "vq", vq.checkpoint_entries());
            seeds["vq_seed"] = cfg.vq_seed;
            fmt::print("vq reconstruction mse {:.5f}, codebook usage {:.1f}%\n", r.final_mse, 100.0 * r.usage);
        } else if (sub == train_enc_cmd) {
            const ImageSet data = load_training(cfg, common);
            const VqAutoencoder vq = load_vq(cfg);
            RestrictiveEncoder enc(cfg.encoder_config(), cfg.encoder_seed);
            train_encoder(enc, data, vq_targets(data, vq), cfg.encoder_train());
            save(cfg, "encoder", enc.checkpoint_entries());
            const ImageSet held = eval_images(cfg);
            std::vector<MaskGrid> masks;
            for (std::size_t i = 0; i < held.size(); ++i) masks.push_back(training_mask(cfg.eval_seed, i, cfg.image_size, cfg.strokes));
            const EncoderMetrics m = evaluate_encoder(enc, held, vq_targets(held, vq), masks);
            seeds["encoder_seed"] = cfg.encoder_seed;
            fmt::print("held-out encoder loss {:.4f}, visible accuracy {:.3f}, boundary accuracy {:.3f} (chance {:.3f})\n",
                       m.loss, m.accuracy, m.boundary_accuracy, 1.0 / cfg.codebook_size);
        } else if (sub == train_tr_cmd) {
            const ImageSet data = load_training(cfg, common);
            const VqAutoencoder vq = load_vq(cfg);
            BidirectionalTransformer tr(cfg.transformer_config(), vq.codebook, cfg.transformer_seed);
            const auto r = train_transformer(tr, vq_targets(data, vq), cfg.transformer_train());
            save(cfg, "transformer", tr.checkpoint_entries());
            seeds["transformer_seed"] = cfg.transformer_seed;
            if (!r.window_loss.empty()) fmt::print("transformer final window loss {:.4f}\n", r.window_loss.back());
        } else if (sub == train_dec_cmd) {
            const ImageSet data = load_training(cfg, common);
            VqAutoencoder vq = load_vq(cfg);
            ComposerNet nets(cfg.decoder_config(), cfg.decoder_seed);
            const auto r = train_decoder(nets, vq, data, cfg.decoder_train());
            save(cfg, "decoder", nets.checkpoint_entries());
            seeds["decoder_seed"] = cfg.decoder_seed;
            if (!r.window_masked_mse.empty())
                fmt::print("decoder masked mse {:.4f} (first window {:.4f})\n", r.window_masked_mse.back(), r.window_masked_mse.front());
        } else if (sub == inpaint_cmd) {
            const Models models = load_models(cfg);
            const Tensor image = to_tensor(read_netpbm(image_path));
            const MaskGrid mask = read_mask_pgm(mask_path);
            if (image.size(1) != cfg.image_size || image.size(2) != cfg.image_size || mask.height() != cfg.image_size ||
                mask.width() != cfg.image_size)
                throw ConfigError(fmt::format("image {}x{} and mask {}x{} must both be {}x{}", image.size(2), image.size(1),
                                              mask.width(), mask.height(), cfg.image_size, cfg.image_size));
            const InpaintResult r = inpaint(models, image, mask, sampler_settings(cfg), samples, seed);
            const fs::path dir(out_dir);
            write_text(dir / "grid_initial.txt", r.initial.to_text());
            outputs.push_back(dir / "grid_initial.txt");
            for (std::size_t j = 0; j < r.samples.size(); ++j) {
                const fs::path img = dir / fmt::format("sample_{:02d}.ppm", j), grid = dir / fmt::format("grid_{:02d}.txt", j);
                write_netpbm(img, to_raw(r.samples[j].image));
                write_text(grid, r.samples[j].grid.to_text());
                outputs.push_back(img);
                outputs.push_back(grid);
            }
            seeds["seed"] = seed;
            Json derived = Json::array();
            for (auto s : r.seeds) derived.push_back(hex(s));
            seeds["sample_seeds"] = derived;
            fmt::print("{} samples, {} of {} cells sampled, written to {}\n", r.samples.size(), r.initial.missing_count(),
                       r.initial.cells(), out_dir);
        } else if (sub == eval_cmd) {
            const Models models = load_models(cfg);
            const EvalReport r = evaluate(models, eval_images(cfg), cfg.eval_mask_spec(), cfg.eval_samples,
                                          sampler_settings(cfg), cfg.eval_seed, cfg.strokes);
            const std::string text = to_json(r) + "\n";
            if (!out_path.empty()) {
                write_text(out_path, text);
                outputs.push_back(out_path);
            }
            seeds["eval_seed"] = cfg.eval_seed;
            fmt::print("distance: {}\nmasked mse {:.5f}  visible mse {:.5f}  fid proxy {:.4f}  diversity {:.4f} +- {:.4f}\n",
                       EvalReport::distance, r.masked_mse, r.visible_mse, r.fid_proxy, r.diversity_mean, r.diversity_std);
        } else if (sub == ablate_cmd) {
            const AblationAxis ax = parse_ablation_axis(axis);
            const std::vector<double> vals = parse_values(values);
            const Models models = load_models(cfg);
            const AblationReport r = run_ablation(ax, vals, cfg, models,
                                                  ax == AblationAxis::Alpha ? load_training(cfg, common) : ImageSet{},
                                                  eval_images(cfg));
            const std::string text = to_json(r) + "\n";
            if (!out_path.empty()) {
                write_text(out_path, text);
                outputs.push_back(out_path);
            }
            seeds["eval_seed"] = cfg.eval_seed;
            seeds["encoder_seed"] = cfg.encoder_seed;
            for (const auto& row : r.rows) {
                if (row.encoder)
                    fmt::print("{}={:<6} loss {:.4f}  common-cell loss {:.4f}  accuracy {:.3f}  boundary {:.3f}\n", axis, row.value,
                               row.encoder->loss, row.common_loss.value_or(0.0), row.encoder->accuracy, row.encoder->boundary_accuracy);
                if (row.eval)
                    fmt::print("{}={:<6} masked mse {:.5f}  fid proxy {:.4f}  diversity {:.4f} +- {:.4f}\n", axis, row.value,
                               row.eval->masked_mse, row.eval->fid_proxy, row.eval->diversity_mean, row.eval->diversity_std);
            }
        }
        write_manifest(cfg, cmd, args, seeds, outputs);
        return 0;
    } catch (const ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return 2;
    } catch (const CheckpointError& e) {
        spdlog::error("checkpoint error: {}", e.what());
        return 3;
    } catch (const NumericalError& e) {
        spdlog::error("numerical failure: {}", e.what());
        return 4;
    } catch (const ShapeError& e) {
        spdlog::error("shape error: {}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
}
