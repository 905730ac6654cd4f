#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sedsr/config.hpp"
#include "sedsr/data.hpp"
#include "sedsr/discriminators.hpp"
#include "sedsr/extractor.hpp"
#include "sedsr/generators.hpp"
#include "sedsr/losses.hpp"

namespace sedsr {

struct TrainConfig {
    uint64_t seed = 0;

    ExtractorSpec extractor = ExtractorSpec::make(BackboneKind::vision_language_rn50, 3);
    std::string extractor_weights;  // empty -> cache lookup, then seeded

    GeneratorSpec generator{};
    DiscriminatorSpec discriminator{};

    LossWeights loss{};
    GanFormulation formulation = GanFormulation::standard_bce;
    std::string perceptual = "vgg";  // vgg | extractor | none
    int perceptual_depth = 2;        // extractor stages used when perceptual = extractor
    std::string vgg_weights;

    DatasetSpec data{};
    int workers = 1;

    int64_t iterations = 300000;
    int64_t pretrain_iterations = 1000000;
    int64_t batch_size = 8;
    double lr = 1e-4;
    double lr_d = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    int d_steps = 1;
    std::vector<int64_t> lr_milestones;  // empty -> constant rate
    double lr_gamma = 0.5;
    int64_t log_interval = 100;
    int64_t checkpoint_interval = 5000;
    std::string init = "scratch";  // scratch | psnr
    std::string psnr_checkpoint;
    std::filesystem::path out_dir = "runs/default";

    // Held-out synthetic images scored after a run.
    int64_t eval_images = 4;
    int64_t eval_hr_size = 64;
    uint64_t eval_seed = 1234;
    std::string lpips_cmd;
    std::string niqe_cmd;

    /// Full-size defaults (batch 8, 256 px patches, 23-block RRDB, RN50 semantics).
    static TrainConfig full();
    /// Minutes on one CPU core: 4-block RRDB, 32 px patches, toy extractor, 8 synthetic images.
    static TrainConfig desk();
    /// `preset` (full | desk, default desk) picks the base; other keys override it.
    static TrainConfig from_config(const Config& config);
    static const std::vector<std::string>& known_keys();

    /// Round-trippable key/value form of every setting.
    Config to_config() const;
    void validate() const;

    bool needs_extractor() const;
};

/// Locates a weight file: an existing explicit path wins, then `$SED_SR_CACHE/<explicit>`,
/// then `$SED_SR_CACHE/<default_name>`. Empty result means none was found.
std::filesystem::path resolve_weight_file(const std::string& explicit_path, const std::string& default_name);

std::shared_ptr<SemanticExtractor> build_extractor(const TrainConfig& config);
std::shared_ptr<FeatureAdapter> build_perceptual(const TrainConfig& config,
                                                 std::shared_ptr<const SemanticExtractor> extractor);

struct StepRecord {
    int64_t step = 0;
    double l_pixel = 0.0;
    double l_perceptual = 0.0;
    double l_adv_g = 0.0;
    double l_d = 0.0;
    double grad_norm_g = 0.0;
    double grad_norm_d = 0.0;
    // Largest gradient magnitude that reached the other network during each update.
    double leak_into_g_during_d = 0.0;
    double leak_into_d_during_g = 0.0;
    int64_t extractor_calls = 0;
};

/// CSV with columns step,l_pixel,l_perceptual,l_adv_g,l_d,grad_norm_g,grad_norm_d,
/// values printed with 17 significant digits.
class LossLog {
public:
    explicit LossLog(const std::filesystem::path& path, bool append = false);
    void write(const StepRecord& r);

private:
    std::ofstream out_;
};

/// Owns G, D, their optimizers and the step counter.
class Trainer {
public:
    explicit Trainer(TrainConfig config, std::shared_ptr<SemanticExtractor> extractor = nullptr);

    /// One D update (d_steps times) on detached G output, then one G update with D frozen.
    StepRecord train_step(const Batch& batch);
    /// Generator-only update: L1, plus the perceptual term when requested.
    StepRecord pretrain_step(const Batch& batch, bool with_perceptual = false);

    int64_t step() const { return step_; }
    const TrainConfig& config() const { return config_; }
    Generator& generator() { return generator_; }
    DiscriminatorImpl& discriminator() { return *discriminator_; }
    std::shared_ptr<DiscriminatorImpl> discriminator_ptr() { return discriminator_; }
    std::shared_ptr<SemanticExtractor> extractor() { return extractor_; }
    torch::optim::Adam& generator_optimizer() { return *opt_g_; }
    torch::optim::Adam& discriminator_optimizer() { return *opt_d_; }

    /// Weights, optimizer moments, step counter and the torch generator state.
    void save_state(const std::filesystem::path& path);
    void load_state(const std::filesystem::path& path);
    void save_generator(const std::filesystem::path& path, const std::string& tag);
    void save_discriminator(const std::filesystem::path& path);
    /// Loads generator weights from a `psnr` checkpoint (optimizer state is not touched).
    void init_generator_from(const std::filesystem::path& path);

    /// Where divergence diagnostics go; defaults to the config's out_dir.
    void set_diagnostic_dir(std::filesystem::path dir) { diag_dir_ = std::move(dir); }

private:
    void apply_lr_schedule();
    [[noreturn]] void diverged(const StepRecord& partial, const std::string& what);

    TrainConfig config_;
    std::shared_ptr<SemanticExtractor> extractor_;
    std::shared_ptr<FeatureAdapter> perceptual_;
    Generator generator_{nullptr};
    std::shared_ptr<DiscriminatorImpl> discriminator_;
    std::unique_ptr<torch::optim::Adam> opt_g_;
    std::unique_ptr<torch::optim::Adam> opt_d_;
    int64_t step_ = 0;
    std::filesystem::path diag_dir_;
};

/// Reads a generator checkpoint. Semantic generators get the extractor recorded in the
/// checkpoint (resolved through the weight cache, seeded otherwise).
Generator load_generator_checkpoint(const std::filesystem::path& path, std::string* tag = nullptr);

/// Rebuilds the discriminator and its training config from a checkpoint.
std::pair<std::shared_ptr<DiscriminatorImpl>, TrainConfig> load_discriminator_checkpoint(
    const std::filesystem::path& path);

struct ExperimentResult {
    std::filesystem::path out_dir;
    std::vector<StepRecord> log;
    std::filesystem::path generator_checkpoint;
    double eval_psnr = 0.0;  // aggregate over the held-out synthetic images
    double eval_ssim = 0.0;
};

/// L1 pretraining for `pretrain_iterations` steps. Writes psnr.pt (tag `psnr`),
/// pretrain_loss.csv and pretrain_state.pt to out_dir.
ExperimentResult pretrain_psnr(const TrainConfig& config, const std::filesystem::path& resume = {});

/// GAN training for `iterations` steps. Writes generator.pt, discriminator.pt,
/// train_state.pt, loss.csv, config.txt and metrics.txt to out_dir.
ExperimentResult run_experiment(const TrainConfig& config, const std::filesystem::path& resume = {});

/// Overrides applied for each run of an ablation axis.
std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> ablation_runs(
    const std::string& axis);

/// Runs every setting of `axis` (extractor.layer | sefb.fusion_mode | extractor.kind) in its own
/// directory under `out_root` and writes `<out_root>/ablation.csv`. Returns the run dirs.
std::vector<std::filesystem::path> run_ablation(const Config& base, const std::string& axis,
                                                const std::filesystem::path& out_root);

} // namespace sedsr
