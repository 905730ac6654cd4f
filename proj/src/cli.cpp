#include "sedsr/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "sedsr/checkpoint.hpp"
#include "sedsr/data.hpp"
#include "sedsr/evaluation.hpp"
#include "sedsr/image_io.hpp"
#include "sedsr/training.hpp"

namespace sedsr {

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o, const std::string& out_help) {
    cmd->add_option("--config", o.config, "key = value config file");
    cmd->add_option("--set", o.sets, "override a config key (key=value), repeatable");
    cmd->add_option("--out", o.out, out_help);
}

Config load_config(const CommonOptions& o) {
    Config cfg = o.config.empty() ? Config{} : Config::load(o.config);
    for (const auto& s : o.sets) cfg.apply_override(s);
    return cfg;
}

TrainConfig train_config(const CommonOptions& o) {
    Config cfg = load_config(o);
    if (!o.out.empty()) cfg.set("train.out", o.out);
    return TrainConfig::from_config(cfg);
}

std::vector<fs::path> png_inputs(const fs::path& input) {
    std::vector<fs::path> files;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input))
            if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
    } else if (fs::exists(input)) {
        files.push_back(input);
    }
    if (files.empty()) throw ConfigError("no PNG input at " + input.string());
    return files;
}

int run_infer(const std::string& checkpoint, const std::string& input, const std::string& out) {
    auto g = load_generator_checkpoint(checkpoint);
    fs::create_directories(out);
    for (const auto& f : png_inputs(input)) {
        auto lr = read_png(f).unsqueeze(0);
        auto sr = g->infer(lr);
        const auto dst = fs::path(out) / f.filename();
        write_png(dst, sr[0]);
        std::cout << f.string() << " -> " << dst.string() << " (" << sr.size(2) << "x" << sr.size(3) << ")\n";
    }
    return exit_ok;
}

int run_eval(const CommonOptions& o, const std::string& checkpoint) {
    const auto cfg = train_config(o);
    std::string tag;
    auto g = load_generator_checkpoint(checkpoint, &tag);
    const bool synthetic = cfg.data.root.empty();
    const auto dataset = synthetic ? PairedDataset::synthetic(cfg.eval_seed, cfg.eval_images, cfg.eval_hr_size)
                                   : PairedDataset::from_directory(cfg.data.root);
    MetricAdapters adapters;
    if (!cfg.lpips_cmd.empty()) adapters.lpips = std::make_shared<CommandFullReferenceAdapter>("lpips", cfg.lpips_cmd);
    if (!cfg.niqe_cmd.empty()) adapters.niqe = std::make_shared<CommandNoReferenceAdapter>("niqe", cfg.niqe_cmd);
    const auto dataset_id =
        synthetic ? "synthetic(seed=" + std::to_string(cfg.eval_seed) + ")" : cfg.data.root.string();
    auto report = evaluate_generator(*g, dataset, MetricConvention{}, adapters, dataset_id,
                                     checkpoint + " [" + tag + "]");
    const fs::path dst = o.out.empty() ? fs::path("report.txt") : fs::path(o.out);
    report.write(dst);
    std::cout << report.to_text();
    std::cout << "report written to " << dst.string() << "\n";
    return exit_ok;
}

int run_features(const std::string& checkpoint, const std::string& input, const std::string& tap,
                 const std::string& out) {
    auto [disc, cfg] = load_discriminator_checkpoint(checkpoint);
    std::shared_ptr<SemanticExtractor> extractor;
    if (is_semantic(cfg.discriminator.family)) extractor = build_extractor(cfg);
    std::vector<torch::Tensor> images, semantics;
    std::vector<std::string> labels;
    for (const auto& f : png_inputs(input)) {
        auto img = center_crop_to_multiple(read_png(f).unsqueeze(0));
        if (cfg.discriminator.family == DiscriminatorFamily::vgg_sed ||
            cfg.discriminator.family == DiscriminatorFamily::vgg_vanilla) {
            const auto s = cfg.discriminator.image_size;
            if (img.size(2) < s || img.size(3) < s) throw ShapeError(f.string() + " is smaller than the VGG input");
            img = img.narrow(2, (img.size(2) - s) / 2, s).narrow(3, (img.size(3) - s) / 2, s);
        }
        if (extractor) semantics.push_back(extractor->extract(img).data);
        images.push_back(img);
        labels.push_back(f.stem().string());
    }
    const auto m = export_discriminator_features(*disc, images, semantics, tap, labels);
    write_feature_matrix(m, out);
    std::cout << m.rows.size(0) << " x " << m.rows.size(1) << " features written to " << out << ".txt\n";
    return exit_ok;
}

} // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"Semantic-aware discriminator super-resolution toolkit"};
    app.require_subcommand(1);
    app.footer("Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.\n"
               "SED_SR_CACHE names a directory searched for backbone weights (clip_rn50.pt, resnet50.pt, vgg19.pt).");

    CommonOptions pre, train, eval, ablate;
    std::string resume_pre, resume_train, eval_ckpt, infer_ckpt, infer_in, infer_out, feat_ckpt, feat_in, feat_tap,
        feat_out, axis;

    auto* c_pre = app.add_subcommand("pretrain", "L1 (PSNR-oriented) generator pretraining");
    add_common(c_pre, pre, "run directory (train.out)");
    c_pre->add_option("--resume", resume_pre, "pretrain_state.pt to resume from");

    auto* c_train = app.add_subcommand("train", "GAN training");
    add_common(c_train, train, "run directory (train.out)");
    c_train->add_option("--resume", resume_train, "train_state.pt to resume from");

    auto* c_eval = app.add_subcommand("eval", "PSNR/SSIM (+ adapter metrics) report for a generator");
    add_common(c_eval, eval, "report file (default report.txt)");
    c_eval->add_option("--checkpoint", eval_ckpt, "generator.pt or psnr.pt")->required();

    auto* c_infer = app.add_subcommand("infer", "x4 super-resolve PNG files with a generator checkpoint");
    c_infer->add_option("--checkpoint", infer_ckpt, "generator checkpoint")->required();
    c_infer->add_option("--input", infer_in, "PNG file or directory")->required();
    c_infer->add_option("--out", infer_out, "output directory")->required();

    auto* c_feat = app.add_subcommand("features", "export pooled discriminator activations");
    c_feat->add_option("--checkpoint", feat_ckpt, "discriminator.pt")->required();
    c_feat->add_option("--input", feat_in, "PNG file or directory")->required();
    c_feat->add_option("--tap", feat_tap, "activation name (e.g. sefb1, bn1)")->required();
    c_feat->add_option("--out", feat_out, "output stem; writes <stem>.txt and <stem>.labels.txt")->required();

    auto* c_ablate = app.add_subcommand("ablate", "sweep one axis, one run directory per setting");
    add_common(c_ablate, ablate, "root directory for the runs");
    c_ablate->add_option("--axis", axis, "extractor.layer | sefb.fusion_mode | extractor.kind")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config_error;
    }

    try {
        if (c_pre->parsed()) {
            const auto res = pretrain_psnr(train_config(pre), resume_pre);
            std::cout << "psnr checkpoint: " << res.generator_checkpoint.string() << "\n";
        } else if (c_train->parsed()) {
            const auto res = run_experiment(train_config(train), resume_train);
            std::cout << "generator checkpoint: " << res.generator_checkpoint.string() << "\n";
        } else if (c_eval->parsed()) {
            return run_eval(eval, eval_ckpt);
        } else if (c_infer->parsed()) {
            return run_infer(infer_ckpt, infer_in, infer_out);
        } else if (c_feat->parsed()) {
            return run_features(feat_ckpt, feat_in, feat_tap, feat_out);
        } else if (c_ablate->parsed()) {
            const fs::path root = ablate.out.empty() ? fs::path("runs/ablation") : fs::path(ablate.out);
            const auto dirs = run_ablation(load_config(ablate), axis, root);
            std::cout << dirs.size() << " runs; summary in " << (root / "ablation.csv").string() << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return exit_config_error;
    } catch (const InvalidSpecError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return exit_config_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_runtime_error;
    }
    return exit_ok;
}

int cli_main(const std::vector<std::string>& args) {
    std::vector<std::string> storage = args;
    storage.insert(storage.begin(), "sedsr");
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    argv.push_back(nullptr);
    return cli_main(static_cast<int>(storage.size()), argv.data());
}

} // namespace sedsr
