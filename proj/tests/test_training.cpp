#include <doctest.h>

#include <fstream>
#include <sstream>

#include <torch/torch.h>

#include "sedsr/checkpoint.hpp"
#include "sedsr/training.hpp"
#include "test_util.hpp"

using namespace sedsr;

namespace {

/// Smallest sensible configuration: one 16-channel RRDB, 8-channel patch SeD.
TrainConfig quick(const std::filesystem::path& out) {
    auto c = TrainConfig::desk();
    c.generator.num_rrdb_blocks = 1;
    c.generator.feature_channels = 16;
    c.generator.growth_channels = 8;
    c.discriminator.base_channels = 8;
    c.discriminator.sefb.num_heads = 2;
    c.discriminator.sefb.semantic_channels = stage_channels(c.extractor.layer_index);
    c.discriminator.image_size = c.data.patch_size;
    c.batch_size = 2;
    c.iterations = 4;
    c.pretrain_iterations = 4;
    c.log_interval = 0;
    c.checkpoint_interval = 0;
    c.eval_images = 1;
    c.eval_hr_size = 32;
    c.out_dir = out;
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Batch fixed_batch(const TrainConfig& c, int64_t step = 0) {
    static const auto ds = PairedDataset::synthetic(7, 4, 64);
    return BatchLoader(ds, 99, c.batch_size, c.data.patch_size, true).batch(step);
}

} // namespace

TEST_SUITE("training") {

TEST_CASE("config keys and presets") {
    Config cfg;
    cfg.set("train.iterations", "12");
    cfg.set("disc.family", "unet_vanilla");
    auto t = TrainConfig::from_config(cfg);
    CHECK(t.iterations == 12);
    CHECK(t.discriminator.family == DiscriminatorFamily::unet_vanilla);
    CHECK(t.generator.num_rrdb_blocks == 4);
    cfg.set("train.bogus", "1");
    CHECK_THROWS_AS(TrainConfig::from_config(cfg), ConfigError);
    Config bad;
    bad.set("train.iterations", "0");
    CHECK_THROWS_AS(TrainConfig::from_config(bad), ConfigError);
    Config full;
    full.set("preset", "full");
    full.set("extractor.weights_path", "");
    CHECK(TrainConfig::from_config(full).generator.num_rrdb_blocks == 23);
}

TEST_CASE("config round trip") {
    auto c = TrainConfig::desk();
    c.lr_milestones = {100, 200};
    c.formulation = GanFormulation::literal_paper;
    auto back = TrainConfig::from_config(c.to_config());
    CHECK(back.to_config().to_string() == c.to_config().to_string());
    CHECK(back.lr_milestones == c.lr_milestones);
}

TEST_CASE("zero pretraining iterations save the initialization") {
    testutil::TempDir dir("init");
    auto c = quick(dir.path());
    c.pretrain_iterations = 0;
    auto res = pretrain_psnr(c);
    Trainer fresh(c);
    std::string tag;
    auto g = load_generator_checkpoint(res.generator_checkpoint, &tag);
    CHECK(tag == "psnr");
    CHECK(states_equal(snapshot_state(*g), snapshot_state(*fresh.generator())));
}

TEST_CASE("resume is bitwise identical") {
    testutil::TempDir a("resume_a"), b("resume_b");
    auto ca = quick(a.path());
    ca.iterations = 4;
    ca.eval_images = 0;
    run_experiment(ca);

    auto cb = quick(b.path());
    cb.iterations = 2;
    cb.eval_images = 0;
    run_experiment(cb);
    cb.iterations = 4;
    run_experiment(cb, b / "train_state.pt");

    auto ga = load_generator_checkpoint(a / "generator.pt");
    auto gb = load_generator_checkpoint(b / "generator.pt");
    CHECK(states_equal(snapshot_state(*ga), snapshot_state(*gb)));
    CHECK(slurp(a / "loss.csv") == slurp(b / "loss.csv"));
}

TEST_CASE("zero adversarial weight and frozen D reduce to content training") {
    testutil::TempDir dir("decouple");
    auto c = quick(dir.path());
    c.loss.lambda_adversarial = 0.0;
    c.lr_d = 0.0;
    Trainer gan(c), plain(c);
    for (int s = 0; s < 3; ++s) {
        auto batch = fixed_batch(c, s);
        auto r1 = gan.train_step(batch);
        auto r2 = plain.pretrain_step(batch, true);
        CHECK(r1.l_pixel == r2.l_pixel);
        CHECK(r1.l_perceptual == r2.l_perceptual);
    }
    CHECK(states_equal(snapshot_state(*gan.generator()), snapshot_state(*plain.generator())));
}

TEST_CASE("extractor stays frozen") {
    testutil::TempDir dir("frozen");
    auto c = quick(dir.path());
    Trainer t(c);
    std::vector<torch::Tensor> before;
    for (auto& p : t.extractor()->parameters()) before.push_back(p.clone());
    for (int s = 0; s < 10; ++s) t.train_step(fixed_batch(c, s));
    auto after = t.extractor()->parameters();
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(torch::equal(before[i], after[i]));
    CHECK(t.step() == 10);
}

TEST_CASE("gradient flow partition and a single extraction per step") {
    testutil::TempDir dir("partition");
    auto c = quick(dir.path());
    Trainer t(c);
    t.discriminator().probe_semantics(true);
    auto batch = fixed_batch(c);
    auto r = t.train_step(batch);
    CHECK(r.leak_into_g_during_d == 0.0);
    CHECK(r.leak_into_d_during_g == 0.0);
    CHECK(r.grad_norm_g > 0.0);
    CHECK(r.grad_norm_d > 0.0);
    CHECK(r.extractor_calls == 1);
    const auto& seen = t.discriminator().semantic_inputs();
    REQUIRE(seen.size() == 3);
    CHECK(seen[0] == seen[1]);
    CHECK(seen[1] == seen[2]);
}

TEST_CASE("semantics come from the HR image") {
    testutil::TempDir dir("hr_input");
    auto c = quick(dir.path());
    c.perceptual = "none";
    c.loss.lambda_perceptual = 0.0;
    Trainer t(c);
    auto batch = fixed_batch(c);
    auto r = t.train_step(batch);
    CHECK(r.extractor_calls == 1);
    CHECK(torch::equal(t.extractor()->last_input(), batch.hr));
}

TEST_CASE("state round trip keeps weights and optimizer moments") {
    testutil::TempDir dir("state");
    auto c = quick(dir.path());
    Trainer a(c);
    for (int s = 0; s < 2; ++s) a.train_step(fixed_batch(c, s));
    a.save_state(dir / "s.pt");
    Trainer b(c);
    b.load_state(dir / "s.pt");
    CHECK(b.step() == 2);
    CHECK(states_equal(snapshot_state(*a.generator()), snapshot_state(*b.generator())));
    CHECK(states_equal(snapshot_state(a.discriminator()), snapshot_state(b.discriminator())));
    auto moments = [](torch::optim::Adam& opt) {
        std::vector<torch::Tensor> out;
        for (auto& group : opt.param_groups())
            for (auto& p : group.params()) {
                auto it = opt.state().find(p.unsafeGetTensorImpl());
                if (it == opt.state().end()) continue;
                auto& st = static_cast<torch::optim::AdamParamState&>(*it->second);
                out.push_back(st.exp_avg());
                out.push_back(st.exp_avg_sq());
            }
        return out;
    };
    auto ma = moments(a.generator_optimizer()), mb = moments(b.generator_optimizer());
    CHECK(!ma.empty());
    CHECK(states_equal(ma, mb));
    CHECK(states_equal(moments(a.discriminator_optimizer()), moments(b.discriminator_optimizer())));
    auto batch = fixed_batch(c, 5);
    auto ra = a.train_step(batch), rb = b.train_step(batch);
    CHECK(ra.l_d == rb.l_d);
    CHECK(ra.grad_norm_g == rb.grad_norm_g);
}

TEST_CASE("psnr initialization") {
    testutil::TempDir dir("psnr_init");
    auto c = quick(dir.path());
    c.init = "psnr";
    c.psnr_checkpoint = (dir / "missing.pt").string();
    CHECK_THROWS_AS(run_experiment(c), ConfigError);

    auto pc = quick(dir / "pre");
    pc.pretrain_iterations = 2;
    auto pre = pretrain_psnr(pc);
    c.psnr_checkpoint = pre.generator_checkpoint.string();
    c.iterations = 1;
    c.eval_images = 0;
    c.out_dir = dir / "gan";
    Trainer t(c);
    t.init_generator_from(pre.generator_checkpoint);
    auto g = load_generator_checkpoint(pre.generator_checkpoint);
    CHECK(states_equal(snapshot_state(*g), snapshot_state(*t.generator())));
    CHECK_NOTHROW(run_experiment(c));
    // A gan checkpoint is not a valid starting point.
    CHECK_THROWS_AS(t.init_generator_from(dir / "gan/generator.pt"), ConfigError);
}

TEST_CASE("same config twice gives the same loss log") {
    testutil::TempDir a("det_a"), b("det_b");
    auto ca = quick(a.path()), cb = quick(b.path());
    ca.eval_images = cb.eval_images = 0;
    run_experiment(ca);
    run_experiment(cb);
    const auto la = slurp(a / "loss.csv");
    CHECK(la.rfind("step,l_pixel,l_perceptual,l_adv_g,l_d,grad_norm_g,grad_norm_d\n", 0) == 0);
    CHECK(la == slurp(b / "loss.csv"));
}

TEST_CASE("experiment artifacts") {
    testutil::TempDir dir("artifacts");
    auto c = quick(dir.path());
    auto res = run_experiment(c);
    for (const char* f : {"generator.pt", "discriminator.pt", "train_state.pt", "loss.csv", "config.txt", "metrics.txt"})
        CHECK(std::filesystem::exists(dir / f));
    CHECK(res.log.size() == 4);
    CHECK(res.eval_psnr > 0.0);
    CHECK(slurp(dir / "metrics.txt").find("lpips: unavailable") != std::string::npos);
    auto [d, cfg] = load_discriminator_checkpoint(dir / "discriminator.pt");
    CHECK(d->spec().family == DiscriminatorFamily::patch_sed);
    CHECK(cfg.iterations == 4);
}

TEST_CASE("divergence writes a diagnostic record") {
    testutil::TempDir dir("diverge");
    auto c = quick(dir.path());
    Trainer t(c);
    auto batch = fixed_batch(c);
    batch.hr[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(t.train_step(batch), NumericalError);
    CHECK(std::filesystem::exists(dir / "divergence_step1.txt"));
}

TEST_CASE("ablation axes") {
    CHECK(ablation_runs("extractor.layer").size() == 4);
    CHECK(ablation_runs("sefb.fusion_mode").size() == 4);
    CHECK(ablation_runs("extractor.kind").size() == 2);
    CHECK_THROWS_AS(ablation_runs("gen.blocks"), ConfigError);

    testutil::TempDir dir("ablation");
    auto base = quick(dir.path()).to_config();
    base.set("train.iterations", "1");
    base.set("eval.n_images", "0");
    auto dirs = run_ablation(base, "extractor.layer", dir / "layers");
    REQUIRE(dirs.size() == 4);
    std::set<std::filesystem::path> distinct(dirs.begin(), dirs.end());
    CHECK(distinct.size() == 4);
    for (auto& d : dirs) CHECK(std::filesystem::exists(d / "generator.pt"));
    CHECK(std::filesystem::exists(dir / "layers/ablation.csv"));
}

}
