#include "sedsr/training.hpp"

#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "sedsr/checkpoint.hpp"
#include "sedsr/evaluation.hpp"
#include "sedsr/rng.hpp"

namespace sedsr {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
    TrainConfig c;
    c.extractor = ExtractorSpec::make(BackboneKind::toy, 3);
    c.generator = GeneratorSpec::tiny();
    c.discriminator.family = DiscriminatorFamily::patch_sed;
    c.discriminator.base_channels = 32;
    c.perceptual = "extractor";
    c.perceptual_depth = 2;
    c.data.synthetic_seed = 7;
    c.data.n_images = 8;
    c.data.hr_size = 64;
    c.data.patch_size = 32;
    c.discriminator.image_size = c.data.patch_size;
    c.iterations = 500;
    c.pretrain_iterations = 300;
    c.batch_size = 4;
    c.log_interval = 50;
    c.checkpoint_interval = 250;
    c.out_dir = "runs/desk";
    return c;
}

const std::vector<std::string>& TrainConfig::known_keys() {
    static const std::vector<std::string> keys{
        "preset", "seed",
        "extractor.kind", "extractor.layer", "extractor.weights_path",
        "gen.blocks", "gen.feature_channels", "gen.growth_channels", "gen.residual_scale", "gen.upsample",
        "gen.sefb_blocks",
        "sefb.heads", "sefb.embed_dim", "sefb.groupnorm_groups",
        "disc.family", "disc.base_channels", "sefb.fusion_mode", "disc.spectral_norm", "disc.sefb_stages",
        "loss.lambda_pixel", "loss.lambda_p", "loss.lambda_a", "loss.gan_mode", "loss.perceptual",
        "loss.perceptual_depth", "loss.vgg_weights",
        "data.root", "data.synthetic_seed", "data.n_images", "data.hr_size", "data.patch_size", "data.augment",
        "data.workers",
        "train.iterations", "train.pretrain_iterations", "train.batch_size", "train.lr", "train.lr_d",
        "train.beta1", "train.beta2", "train.d_steps", "train.lr_milestones", "train.lr_gamma",
        "train.log_interval", "train.checkpoint_interval", "train.init", "train.psnr_checkpoint", "train.out",
        "eval.n_images", "eval.hr_size", "eval.seed", "eval.lpips_cmd", "eval.niqe_cmd"};
    return keys;
}

TrainConfig TrainConfig::from_config(const Config& cfg) {
    cfg.reject_unknown(known_keys());
    const auto preset = cfg.get_string("preset", "desk");
    TrainConfig c;
    if (preset == "desk") c = desk();
    else if (preset == "full") c = full();
    else throw ConfigError("preset must be desk or full, got `" + preset + "`");

    c.seed = static_cast<uint64_t>(cfg.get_int("seed", static_cast<int64_t>(c.seed)));

    const auto kind = parse_backbone_kind(cfg.get_string("extractor.kind", to_config_string(c.extractor.backbone_kind)));
    const int layer = static_cast<int>(cfg.get_int("extractor.layer", c.extractor.layer_index));
    c.extractor = ExtractorSpec::make(kind, layer);
    c.extractor_weights = cfg.get_string("extractor.weights_path", c.extractor_weights);

    auto& g = c.generator;
    g.num_rrdb_blocks = static_cast<int>(cfg.get_int("gen.blocks", g.num_rrdb_blocks));
    g.feature_channels = cfg.get_int("gen.feature_channels", g.feature_channels);
    g.growth_channels = cfg.get_int("gen.growth_channels", g.growth_channels);
    g.residual_scale = cfg.get_double("gen.residual_scale", g.residual_scale);
    g.upsample = parse_upsample_mode(cfg.get_string("gen.upsample", to_string(g.upsample)));
    if (cfg.contains("gen.sefb_blocks")) {
        g.sefb_block_indices.clear();
        for (auto i : cfg.get_int_list("gen.sefb_blocks", {})) g.sefb_block_indices.insert(static_cast<int>(i));
    }

    SefbOptions sefb;
    sefb.num_heads = cfg.get_int("sefb.heads", c.discriminator.sefb.num_heads);
    sefb.embed_dim = cfg.get_int("sefb.embed_dim", 0);
    sefb.groupnorm_groups = cfg.get_int("sefb.groupnorm_groups", c.discriminator.sefb.groupnorm_groups);

    auto& d = c.discriminator;
    d.family = parse_discriminator_family(cfg.get_string("disc.family", to_string(d.family)));
    d.base_channels = cfg.get_int("disc.base_channels", d.base_channels);
    d.fusion_mode = parse_fusion_mode(cfg.get_string("sefb.fusion_mode", to_string(d.fusion_mode)));
    d.spectral_norm = cfg.get_bool("disc.spectral_norm", d.spectral_norm);
    d.sefb_stages = static_cast<int>(cfg.get_int("disc.sefb_stages", d.sefb_stages));

    auto& l = c.loss;
    l.lambda_pixel = cfg.get_double("loss.lambda_pixel", l.lambda_pixel);
    l.lambda_perceptual = cfg.get_double("loss.lambda_p", l.lambda_perceptual);
    l.lambda_adversarial = cfg.get_double("loss.lambda_a", l.lambda_adversarial);
    c.formulation = parse_gan_formulation(cfg.get_string("loss.gan_mode", to_string(c.formulation)));
    c.perceptual = cfg.get_string("loss.perceptual", c.perceptual);
    c.perceptual_depth = static_cast<int>(cfg.get_int("loss.perceptual_depth", c.perceptual_depth));
    c.vgg_weights = cfg.get_string("loss.vgg_weights", c.vgg_weights);

    c.data.root = cfg.get_string("data.root", c.data.root.string());
    c.data.synthetic_seed = static_cast<uint64_t>(cfg.get_int("data.synthetic_seed", static_cast<int64_t>(c.data.synthetic_seed)));
    c.data.n_images = cfg.get_int("data.n_images", c.data.n_images);
    c.data.hr_size = cfg.get_int("data.hr_size", c.data.hr_size);
    c.data.patch_size = cfg.get_int("data.patch_size", c.data.patch_size);
    c.data.augment = cfg.get_bool("data.augment", c.data.augment);
    c.workers = static_cast<int>(cfg.get_int("data.workers", c.workers));

    c.iterations = cfg.get_int("train.iterations", c.iterations);
    c.pretrain_iterations = cfg.get_int("train.pretrain_iterations", c.pretrain_iterations);
    c.batch_size = cfg.get_int("train.batch_size", c.batch_size);
    c.lr = cfg.get_double("train.lr", c.lr);
    c.lr_d = cfg.get_double("train.lr_d", cfg.contains("train.lr") ? c.lr : c.lr_d);
    c.beta1 = cfg.get_double("train.beta1", c.beta1);
    c.beta2 = cfg.get_double("train.beta2", c.beta2);
    c.d_steps = static_cast<int>(cfg.get_int("train.d_steps", c.d_steps));
    c.lr_milestones = cfg.get_int_list("train.lr_milestones", c.lr_milestones);
    c.lr_gamma = cfg.get_double("train.lr_gamma", c.lr_gamma);
    c.log_interval = cfg.get_int("train.log_interval", c.log_interval);
    c.checkpoint_interval = cfg.get_int("train.checkpoint_interval", c.checkpoint_interval);
    c.init = cfg.get_string("train.init", c.init);
    c.psnr_checkpoint = cfg.get_string("train.psnr_checkpoint", c.psnr_checkpoint);
    c.out_dir = cfg.get_string("train.out", c.out_dir.string());

    c.eval_images = cfg.get_int("eval.n_images", c.eval_images);
    c.eval_hr_size = cfg.get_int("eval.hr_size", c.eval_hr_size);
    c.eval_seed = static_cast<uint64_t>(cfg.get_int("eval.seed", static_cast<int64_t>(c.eval_seed)));
    c.lpips_cmd = cfg.get_string("eval.lpips_cmd", c.lpips_cmd);
    c.niqe_cmd = cfg.get_string("eval.niqe_cmd", c.niqe_cmd);

    // Derived widths.
    sefb.semantic_channels = stage_channels(c.extractor.layer_index);
    d.sefb = sefb;
    d.image_size = c.data.patch_size;
    g.sefb = sefb;

    try {
        c.validate();
    } catch (const InvalidSpecError& e) {
        throw ConfigError(e.what());
    }
    return c;
}

Config TrainConfig::to_config() const {
    Config cfg;
    auto num = [](double v) {
        std::ostringstream os;
        os << std::setprecision(17) << v;
        return os.str();
    };
    auto list = [](const auto& xs) {
        std::string s;
        for (auto x : xs) s += (s.empty() ? "" : ",") + std::to_string(x);
        return s;
    };
    cfg.set("seed", std::to_string(seed));
    cfg.set("extractor.kind", to_config_string(extractor.backbone_kind));
    cfg.set("extractor.layer", std::to_string(extractor.layer_index));
    cfg.set("extractor.weights_path", extractor_weights);
    cfg.set("gen.blocks", std::to_string(generator.num_rrdb_blocks));
    cfg.set("gen.feature_channels", std::to_string(generator.feature_channels));
    cfg.set("gen.growth_channels", std::to_string(generator.growth_channels));
    cfg.set("gen.residual_scale", num(generator.residual_scale));
    cfg.set("gen.upsample", to_string(generator.upsample));
    cfg.set("gen.sefb_blocks", list(generator.sefb_block_indices));
    cfg.set("sefb.heads", std::to_string(discriminator.sefb.num_heads));
    cfg.set("sefb.embed_dim", std::to_string(discriminator.sefb.embed_dim));
    cfg.set("sefb.groupnorm_groups", std::to_string(discriminator.sefb.groupnorm_groups));
    cfg.set("disc.family", to_string(discriminator.family));
    cfg.set("disc.base_channels", std::to_string(discriminator.base_channels));
    cfg.set("sefb.fusion_mode", to_string(discriminator.fusion_mode));
    cfg.set("disc.spectral_norm", discriminator.spectral_norm ? "true" : "false");
    cfg.set("disc.sefb_stages", std::to_string(discriminator.sefb_stages));
    cfg.set("loss.lambda_pixel", num(loss.lambda_pixel));
    cfg.set("loss.lambda_p", num(loss.lambda_perceptual));
    cfg.set("loss.lambda_a", num(loss.lambda_adversarial));
    cfg.set("loss.gan_mode", to_string(formulation));
    cfg.set("loss.perceptual", perceptual);
    cfg.set("loss.perceptual_depth", std::to_string(perceptual_depth));
    cfg.set("loss.vgg_weights", vgg_weights);
    cfg.set("data.root", data.root.string());
    cfg.set("data.synthetic_seed", std::to_string(data.synthetic_seed));
    cfg.set("data.n_images", std::to_string(data.n_images));
    cfg.set("data.hr_size", std::to_string(data.hr_size));
    cfg.set("data.patch_size", std::to_string(data.patch_size));
    cfg.set("data.augment", data.augment ? "true" : "false");
    cfg.set("data.workers", std::to_string(workers));
    cfg.set("train.iterations", std::to_string(iterations));
    cfg.set("train.pretrain_iterations", std::to_string(pretrain_iterations));
    cfg.set("train.batch_size", std::to_string(batch_size));
    cfg.set("train.lr", num(lr));
    cfg.set("train.lr_d", num(lr_d));
    cfg.set("train.beta1", num(beta1));
    cfg.set("train.beta2", num(beta2));
    cfg.set("train.d_steps", std::to_string(d_steps));
    cfg.set("train.lr_milestones", list(lr_milestones));
    cfg.set("train.lr_gamma", num(lr_gamma));
    cfg.set("train.log_interval", std::to_string(log_interval));
    cfg.set("train.checkpoint_interval", std::to_string(checkpoint_interval));
    cfg.set("train.init", init);
    cfg.set("train.psnr_checkpoint", psnr_checkpoint);
    cfg.set("train.out", out_dir.string());
    cfg.set("eval.n_images", std::to_string(eval_images));
    cfg.set("eval.hr_size", std::to_string(eval_hr_size));
    cfg.set("eval.seed", std::to_string(eval_seed));
    cfg.set("eval.lpips_cmd", lpips_cmd);
    cfg.set("eval.niqe_cmd", niqe_cmd);
    return cfg;
}

void TrainConfig::validate() const {
    extractor.validate();
    generator.validate();
    discriminator.validate();
    loss.validate();
    data.validate();
    if (iterations <= 0) throw InvalidSpecError("train.iterations must be positive");
    if (pretrain_iterations < 0) throw InvalidSpecError("train.pretrain_iterations must be >= 0");
    if (!(lr > 0)) throw InvalidSpecError("train.lr must be positive");
    if (!(lr_d >= 0)) throw InvalidSpecError("train.lr_d must be >= 0");
    if (batch_size <= 0) throw InvalidSpecError("train.batch_size must be positive");
    if (d_steps < 1) throw InvalidSpecError("train.d_steps must be >= 1");
    if (workers < 1) throw InvalidSpecError("data.workers must be >= 1");
    if (init != "scratch" && init != "psnr") throw InvalidSpecError("train.init must be scratch or psnr");
    if (perceptual != "vgg" && perceptual != "extractor" && perceptual != "none")
        throw InvalidSpecError("loss.perceptual must be vgg, extractor or none");
    if (perceptual == "none" && loss.lambda_perceptual != 0.0)
        throw InvalidSpecError("loss.perceptual = none requires loss.lambda_p = 0");
    if (perceptual_depth < 1 || perceptual_depth > kNumStages)
        throw InvalidSpecError("loss.perceptual_depth must be in 1..4");
    if (discriminator.image_size != data.patch_size)
        throw InvalidSpecError("discriminator input size must equal data.patch_size");
    if (eval_images < 0 || eval_hr_size % 32 != 0 || eval_hr_size <= 8)
        throw InvalidSpecError("eval.hr_size must be a multiple of 32");
}

bool TrainConfig::needs_extractor() const {
    return is_semantic(discriminator.family) || perceptual == "extractor" || !generator.sefb_block_indices.empty();
}

fs::path resolve_weight_file(const std::string& explicit_path, const std::string& default_name) {
    const char* cache = std::getenv("SED_SR_CACHE");
    if (!explicit_path.empty()) {
        if (fs::exists(explicit_path)) return explicit_path;
        if (cache && fs::exists(fs::path(cache) / explicit_path)) return fs::path(cache) / explicit_path;
        throw ConfigError("weight file not found: " + explicit_path);
    }
    if (cache && fs::exists(fs::path(cache) / default_name)) return fs::path(cache) / default_name;
    return {};
}

std::shared_ptr<SemanticExtractor> build_extractor(const TrainConfig& config) {
    const auto kind = config.extractor.backbone_kind;
    const auto weights = resolve_weight_file(config.extractor_weights, to_config_string(kind) + ".pt");
    if (weights.empty() && kind != BackboneKind::toy)
        std::cerr << "note: no " << to_config_string(kind) << " weights found; using seeded initialization\n";
    return make_extractor(config.extractor, weights, derive_seed(config.seed, {0xE47}));
}

std::shared_ptr<FeatureAdapter> build_perceptual(const TrainConfig& config,
                                                 std::shared_ptr<const SemanticExtractor> extractor) {
    if (config.perceptual == "none") return nullptr;
    if (config.perceptual == "extractor") {
        if (!extractor) throw ConfigError("loss.perceptual = extractor needs an extractor");
        return std::make_shared<ExtractorFeatureAdapter>(std::move(extractor), config.perceptual_depth);
    }
    const auto weights = resolve_weight_file(config.vgg_weights, "vgg19.pt");
    if (weights.empty()) std::cerr << "note: no vgg19 weights found; using seeded initialization\n";
    return std::make_shared<VggFeatureAdapter>(weights, std::vector<int>{34}, derive_seed(config.seed, {0x766}));
}

// ---------------------------------------------------------------------------
// Loss log
// ---------------------------------------------------------------------------

LossLog::LossLog(const fs::path& path, bool append) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const bool fresh = !append || !fs::exists(path);
    out_.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out_) throw IoError("cannot open loss log " + path.string());
    out_ << std::setprecision(17);
    if (fresh) out_ << "step,l_pixel,l_perceptual,l_adv_g,l_d,grad_norm_g,grad_norm_d\n";
}

void LossLog::write(const StepRecord& r) {
    out_ << r.step << "," << r.l_pixel << "," << r.l_perceptual << "," << r.l_adv_g << "," << r.l_d << ","
         << r.grad_norm_g << "," << r.grad_norm_d << "\n";
    out_.flush();
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

void set_requires_grad(torch::nn::Module& m, bool on) {
    for (auto& p : m.parameters()) p.set_requires_grad(on);
}

double grad_norm(const std::vector<torch::Tensor>& params) {
    double sq = 0.0;
    for (const auto& p : params)
        if (p.grad().defined()) sq += p.grad().to(torch::kDouble).pow(2).sum().item<double>();
    return std::sqrt(sq);
}

double max_abs_grad(const std::vector<torch::Tensor>& params) {
    double m = 0.0;
    for (const auto& p : params)
        if (p.grad().defined() && p.grad().numel() > 0) m = std::max(m, p.grad().abs().max().item<double>());
    return m;
}

void require_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) throw NumericalError("non-finite " + what);
}

torch::optim::AdamOptions adam(double lr, const TrainConfig& c) {
    return torch::optim::AdamOptions(lr).betas({c.beta1, c.beta2});
}

} // namespace

Trainer::Trainer(TrainConfig config, std::shared_ptr<SemanticExtractor> extractor)
    : config_(std::move(config)), extractor_(std::move(extractor)) {
    config_.validate();
    seed_torch(config_.seed);
    if (!extractor_ && config_.needs_extractor()) extractor_ = build_extractor(config_);
    perceptual_ = build_perceptual(config_, extractor_);
    generator_ = Generator(config_.generator, config_.generator.sefb_block_indices.empty() ? nullptr : extractor_);
    discriminator_ = make_discriminator(config_.discriminator);
    opt_g_ = std::make_unique<torch::optim::Adam>(generator_->parameters(), adam(config_.lr, config_));
    opt_d_ = std::make_unique<torch::optim::Adam>(discriminator_->parameters(), adam(config_.lr_d, config_));
    diag_dir_ = config_.out_dir;
}

void Trainer::apply_lr_schedule() {
    int k = 0;
    for (auto m : config_.lr_milestones) k += (step_ >= m) ? 1 : 0;
    const double factor = std::pow(config_.lr_gamma, k);
    for (auto& group : opt_g_->param_groups())
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(config_.lr * factor);
    for (auto& group : opt_d_->param_groups())
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(config_.lr_d * factor);
}

void Trainer::diverged(const StepRecord& r, const std::string& what) {
    fs::create_directories(diag_dir_);
    const auto path = diag_dir_ / ("divergence_step" + std::to_string(r.step) + ".txt");
    std::ofstream out(path);
    out << std::setprecision(17) << "step: " << r.step << "\nreason: " << what << "\nl_pixel: " << r.l_pixel
        << "\nl_perceptual: " << r.l_perceptual << "\nl_adv_g: " << r.l_adv_g << "\nl_d: " << r.l_d
        << "\ngrad_norm_g: " << r.grad_norm_g << "\ngrad_norm_d: " << r.grad_norm_d << "\n";
    throw NumericalError("training diverged at step " + std::to_string(r.step) + " (" + what +
                         "); diagnostics in " + path.string());
}

StepRecord Trainer::train_step(const Batch& batch) {
    StepRecord r;
    r.step = step_ + 1;
    try {
        apply_lr_schedule();
        generator_->train();
        discriminator_->train();
        const int64_t calls_before = extractor_ ? extractor_->calls() : 0;

        torch::Tensor semantics;
        if (is_semantic(config_.discriminator.family)) semantics = extractor_->extract(batch.hr).data;

        opt_g_->zero_grad();
        auto sr = generator_->forward(batch.lr);

        set_requires_grad(*discriminator_, true);
        for (int k = 0; k < config_.d_steps; ++k) {
            opt_d_->zero_grad();
            auto real = discriminator_->forward(batch.hr, semantics).logits;
            auto fake = discriminator_->forward(sr.detach(), semantics).logits;
            auto l_d = discriminator_loss(real, fake, config_.formulation);
            r.l_d = l_d.item<double>();
            require_finite(r.l_d, "discriminator loss");
            l_d.backward();
            r.grad_norm_d = grad_norm(discriminator_->parameters());
            require_finite(r.grad_norm_d, "discriminator gradient");
            r.leak_into_g_during_d = std::max(r.leak_into_g_during_d, max_abs_grad(generator_->parameters()));
            opt_d_->step();
        }

        set_requires_grad(*discriminator_, false);
        opt_d_->zero_grad();
        auto fake = discriminator_->forward(sr, semantics).logits;
        torch::Tensor real;
        if (config_.formulation == GanFormulation::literal_paper) {
            torch::NoGradGuard no_grad;
            real = discriminator_->forward(batch.hr, semantics).logits;
        }
        auto gl = generator_total_loss(sr, batch.hr, fake, config_.loss, perceptual_.get(), config_.formulation, real);
        r.l_pixel = gl.pixel.item<double>();
        r.l_perceptual = gl.perceptual.item<double>();
        r.l_adv_g = gl.adversarial.item<double>();
        require_finite(r.l_pixel, "pixel loss");
        require_finite(r.l_perceptual, "perceptual loss");
        require_finite(r.l_adv_g, "adversarial loss");
        gl.total.backward();
        r.grad_norm_g = grad_norm(generator_->parameters());
        require_finite(r.grad_norm_g, "generator gradient");
        r.leak_into_d_during_g = max_abs_grad(discriminator_->parameters());
        opt_g_->step();
        set_requires_grad(*discriminator_, true);

        r.extractor_calls = extractor_ ? extractor_->calls() - calls_before : 0;
    } catch (const NumericalError& e) {
        set_requires_grad(*discriminator_, true);
        diverged(r, e.what());
    }
    ++step_;
    return r;
}

StepRecord Trainer::pretrain_step(const Batch& batch, bool with_perceptual) {
    StepRecord r;
    r.step = step_ + 1;
    try {
        apply_lr_schedule();
        generator_->train();
        opt_g_->zero_grad();
        auto sr = generator_->forward(batch.lr);
        torch::Tensor total;
        if (with_perceptual) {
            LossWeights w = config_.loss;
            w.lambda_adversarial = 0.0;
            auto gl = generator_total_loss(sr, batch.hr, torch::Tensor(), w, perceptual_.get());
            r.l_perceptual = gl.perceptual.item<double>();
            r.l_pixel = gl.pixel.item<double>();
            total = gl.total;
        } else {
            total = pixel_loss(sr, batch.hr);
            r.l_pixel = total.item<double>();
        }
        require_finite(r.l_pixel, "pixel loss");
        require_finite(r.l_perceptual, "perceptual loss");
        total.backward();
        r.grad_norm_g = grad_norm(generator_->parameters());
        require_finite(r.grad_norm_g, "generator gradient");
        opt_g_->step();
    } catch (const NumericalError& e) {
        diverged(r, e.what());
    }
    ++step_;
    return r;
}

namespace {

torch::Tensor rng_state() {
    auto gen = at::detail::getDefaultCPUGenerator();
    std::lock_guard<std::mutex> lock(gen.mutex());
    return gen.get_state();
}

void set_rng_state(const torch::Tensor& state) {
    auto gen = at::detail::getDefaultCPUGenerator();
    std::lock_guard<std::mutex> lock(gen.mutex());
    gen.set_state(state);
}

} // namespace

void Trainer::save_state(const fs::path& path) {
    CheckpointWriter w({{"kind", "train_state"},
                        {"step", std::to_string(step_)},
                        {"config", config_.to_config().to_string()}});
    w.add_module("generator", *generator_);
    w.add_module("discriminator", *discriminator_);
    torch::serialize::OutputArchive og, od;
    opt_g_->save(og);
    opt_d_->save(od);
    w.archive().write("opt_g", og);
    w.archive().write("opt_d", od);
    w.add_tensor("step", torch::tensor(step_, torch::kLong));
    w.add_tensor("torch_rng", rng_state());
    w.save(path);
}

void Trainer::load_state(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("resume state not found: " + path.string());
    CheckpointReader r(path, WeightRole::train_state);
    r.load_module("generator", *generator_);
    r.load_module("discriminator", *discriminator_);
    torch::serialize::InputArchive og, od;
    if (!r.archive().try_read("opt_g", og) || !r.archive().try_read("opt_d", od))
        throw IoError("train state " + path.string() + " lacks optimizer state");
    opt_g_->load(og);
    opt_d_->load(od);
    step_ = r.read_tensor("step").item<int64_t>();
    set_rng_state(r.read_tensor("torch_rng"));
}

void Trainer::save_generator(const fs::path& path, const std::string& tag) {
    CheckpointWriter w({{"kind", "generator"},
                        {"tag", tag},
                        {"step", std::to_string(step_)},
                        {"gen_spec", config_.generator.serialize()},
                        {"extractor_kind", to_config_string(config_.extractor.backbone_kind)},
                        {"extractor_layer", std::to_string(config_.extractor.layer_index)},
                        {"extractor_weights", config_.extractor_weights},
                        {"seed", std::to_string(config_.seed)}});
    w.add_module("generator", *generator_);
    w.save(path);
}

void Trainer::save_discriminator(const fs::path& path) {
    CheckpointWriter w({{"kind", "discriminator"},
                        {"step", std::to_string(step_)},
                        {"family", to_string(config_.discriminator.family)},
                        {"config", config_.to_config().to_string()}});
    w.add_module("discriminator", *discriminator_);
    w.save(path);
}

void Trainer::init_generator_from(const fs::path& path) {
    if (path.empty() || !fs::exists(path))
        throw ConfigError("train.init = psnr but no psnr checkpoint at `" + path.string() + "`");
    CheckpointReader r(path, WeightRole::generator);
    if (r.meta("tag") != "psnr") throw ConfigError(path.string() + " is not tagged psnr");
    if (r.meta("gen_spec") != config_.generator.serialize())
        throw ConfigError("psnr checkpoint generator differs from the configured one");
    r.load_module("generator", *generator_);
}

Generator load_generator_checkpoint(const fs::path& path, std::string* tag) {
    if (!fs::exists(path)) throw ConfigError("generator checkpoint not found: " + path.string());
    CheckpointReader r(path, WeightRole::generator);
    const auto spec = GeneratorSpec::parse(r.meta("gen_spec"));
    std::shared_ptr<SemanticExtractor> extractor;
    if (!spec.sefb_block_indices.empty()) {
        TrainConfig c = TrainConfig::desk();
        c.extractor = ExtractorSpec::make(parse_backbone_kind(r.meta("extractor_kind")),
                                          std::stoi(r.meta("extractor_layer")));
        c.extractor_weights = r.meta("extractor_weights");
        c.seed = std::stoull(r.meta("seed"));
        extractor = build_extractor(c);
    }
    Generator g(spec, extractor);
    r.load_module("generator", *g);
    g->eval();
    if (tag) *tag = r.meta("tag");
    return g;
}

std::pair<std::shared_ptr<DiscriminatorImpl>, TrainConfig> load_discriminator_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("discriminator checkpoint not found: " + path.string());
    CheckpointReader r(path, WeightRole::discriminator);
    auto cfg = TrainConfig::from_config(Config::parse(r.meta("config"), path.string()));
    auto d = make_discriminator(cfg.discriminator);
    r.load_module("discriminator", *d);
    return {d, cfg};
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

namespace {

void print_record(const char* phase, const StepRecord& r) {
    std::cout << phase << " step " << r.step << " l_pixel " << r.l_pixel << " l_perceptual " << r.l_perceptual
              << " l_adv_g " << r.l_adv_g << " l_d " << r.l_d << "\n";
}

MetricAdapters adapters_from(const TrainConfig& c) {
    MetricAdapters a;
    if (!c.lpips_cmd.empty()) a.lpips = std::make_shared<CommandFullReferenceAdapter>("lpips", c.lpips_cmd);
    if (!c.niqe_cmd.empty()) a.niqe = std::make_shared<CommandNoReferenceAdapter>("niqe", c.niqe_cmd);
    return a;
}

} // namespace

ExperimentResult pretrain_psnr(const TrainConfig& config, const fs::path& resume) {
    fs::create_directories(config.out_dir);
    Trainer t(config);
    if (!resume.empty()) t.load_state(resume);
    const auto dataset = PairedDataset::from_spec(config.data);
    BatchLoader loader(dataset, derive_seed(config.seed, {1}), config.batch_size, config.data.patch_size,
                       config.data.augment, config.workers);
    ExperimentResult res;
    res.out_dir = config.out_dir;
    LossLog log(config.out_dir / "pretrain_loss.csv", !resume.empty());
    while (t.step() < config.pretrain_iterations) {
        auto rec = t.pretrain_step(loader.batch(t.step()));
        log.write(rec);
        res.log.push_back(rec);
        if (config.log_interval > 0 && rec.step % config.log_interval == 0) print_record("pretrain", rec);
        if (config.checkpoint_interval > 0 && rec.step % config.checkpoint_interval == 0)
            t.save_state(config.out_dir / "pretrain_state.pt");
    }
    t.save_state(config.out_dir / "pretrain_state.pt");
    res.generator_checkpoint = config.out_dir / "psnr.pt";
    t.save_generator(res.generator_checkpoint, "psnr");
    return res;
}

ExperimentResult run_experiment(const TrainConfig& config, const fs::path& resume) {
    if (resume.empty() && config.init == "psnr" &&
        (config.psnr_checkpoint.empty() || !fs::exists(config.psnr_checkpoint)))
        throw ConfigError("train.init = psnr but no psnr checkpoint at `" + config.psnr_checkpoint + "`");
    fs::create_directories(config.out_dir);
    {
        std::ofstream out(config.out_dir / "config.txt");
        out << config.to_config().to_string();
    }
    Trainer t(config);
    if (!resume.empty()) t.load_state(resume);
    else if (config.init == "psnr") t.init_generator_from(config.psnr_checkpoint);

    const auto dataset = PairedDataset::from_spec(config.data);
    BatchLoader loader(dataset, derive_seed(config.seed, {2}), config.batch_size, config.data.patch_size,
                       config.data.augment, config.workers);
    ExperimentResult res;
    res.out_dir = config.out_dir;
    LossLog log(config.out_dir / "loss.csv", !resume.empty());
    while (t.step() < config.iterations) {
        auto rec = t.train_step(loader.batch(t.step()));
        log.write(rec);
        res.log.push_back(rec);
        if (config.log_interval > 0 && rec.step % config.log_interval == 0) print_record("gan", rec);
        if (config.checkpoint_interval > 0 && rec.step % config.checkpoint_interval == 0)
            t.save_state(config.out_dir / "train_state.pt");
    }
    t.save_state(config.out_dir / "train_state.pt");
    res.generator_checkpoint = config.out_dir / "generator.pt";
    t.save_generator(res.generator_checkpoint, "gan");
    t.save_discriminator(config.out_dir / "discriminator.pt");

    if (config.eval_images > 0) {
        const auto eval_set = PairedDataset::synthetic(config.eval_seed, config.eval_images, config.eval_hr_size);
        auto report = evaluate_generator(*t.generator(), eval_set, MetricConvention{}, adapters_from(config),
                                         "synthetic(seed=" + std::to_string(config.eval_seed) + ")",
                                         res.generator_checkpoint.string());
        report.write(config.out_dir / "metrics.txt");
        const auto agg = report.aggregate();
        res.eval_psnr = agg.at("psnr").value_or(0.0);
        res.eval_ssim = agg.at("ssim").value_or(0.0);
    }
    return res;
}

std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> ablation_runs(
    const std::string& axis) {
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> runs;
    if (axis == "extractor.layer") {
        for (int l = 1; l <= kNumStages; ++l)
            runs.push_back({"layer" + std::to_string(l), {{"extractor.layer", std::to_string(l)}}});
    } else if (axis == "sefb.fusion_mode") {
        for (const char* m : {"sefb", "concat", "channel_attention", "spatial_attention"})
            runs.push_back({std::string("fusion_") + m, {{"sefb.fusion_mode", m}}});
    } else if (axis == "extractor.kind") {
        for (const char* k : {"clip_rn50", "resnet50"})
            runs.push_back({std::string("extractor_") + k, {{"extractor.kind", k}, {"extractor.weights_path", ""}}});
    } else {
        throw ConfigError("unknown ablation axis `" + axis + "` (extractor.layer, sefb.fusion_mode, extractor.kind)");
    }
    return runs;
}

std::vector<fs::path> run_ablation(const Config& base, const std::string& axis, const fs::path& out_root) {
    const auto runs = ablation_runs(axis);
    fs::create_directories(out_root);
    std::ofstream summary(out_root / "ablation.csv");
    summary << std::setprecision(17) << "run,axis,value,l_pixel,l_adv_g,l_d,psnr,ssim,dir\n";
    std::vector<fs::path> dirs;
    for (const auto& [name, overrides] : runs) {
        Config c = base;
        for (const auto& [k, v] : overrides) c.set(k, v);
        c.set("train.out", (out_root / name).string());
        const auto cfg = TrainConfig::from_config(c);
        std::cout << "ablation run " << name << "\n";
        const auto res = run_experiment(cfg);
        const auto& last = res.log.back();
        summary << name << "," << axis << "," << overrides.front().second << "," << last.l_pixel << ","
                << last.l_adv_g << "," << last.l_d << "," << res.eval_psnr << "," << res.eval_ssim << ","
                << res.out_dir.string() << "\n";
        summary.flush();
        dirs.push_back(res.out_dir);
    }
    return dirs;
}

} // namespace sedsr
