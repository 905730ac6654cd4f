// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <torch/torch.h>

#include "oracles.hpp"
#include "sedsr/attention.hpp"
#include "sedsr/checkpoint.hpp"
#include "sedsr/cli.hpp"
#include "sedsr/data.hpp"
#include "sedsr/discriminators.hpp"
#include "sedsr/extractor.hpp"
#include "sedsr/generators.hpp"
#include "sedsr/image_io.hpp"
#include "sedsr/losses.hpp"
#include "sedsr/metrics.hpp"
#include "sedsr/rng.hpp"
#include "sedsr/sefb.hpp"
#include "sedsr/training.hpp"
#include "test_util.hpp"

using namespace sedsr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double limit_s;  // 0 -> no runtime bound
    std::function<Outcome()> run;
};

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(4) << v;
    return os.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Tiny but complete GAN setup used where the criterion does not name a scale.
TrainConfig tiny_config(const fs::path& out) {
    auto c = TrainConfig::desk();
    c.generator.num_rrdb_blocks = 1;
    c.generator.feature_channels = 16;
    c.generator.growth_channels = 8;
    c.discriminator.base_channels = 8;
    c.discriminator.sefb.num_heads = 2;
    c.batch_size = 2;
    c.iterations = 10;
    c.log_interval = 0;
    c.checkpoint_interval = 0;
    c.eval_images = 0;
    c.out_dir = out;
    return c;
}

Outcome attention_oracle() {
    RandomStream rng(2024);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const int64_t b = rng.between(1, 2), nq = rng.between(1, 16), nk = rng.between(1, 16);
        const int64_t heads = rng.between(1, 4), d = heads * rng.between(1, 16 / heads);
        torch::manual_seed(1000 + i);
        auto q = torch::randn({b, nq, d}), k = torch::randn({b, nk, d}), v = torch::randn({b, nk, d});
        auto got = multi_head_attention(q, k, v, heads).to(torch::kDouble);
        auto ref = oracle::attention(q, k, v, heads);
        const double rel = (got - ref).abs().max().item<double>() / std::max(ref.abs().max().item<double>(), 1e-12);
        worst = std::max(worst, rel);
    }
    return {worst < 1e-5, "200 cases, worst relative error " + fmt(worst)};
}

Outcome sefb_gradcheck() {
    torch::manual_seed(5);
    SefbOptions o;
    o.image_channels = 4;
    o.semantic_channels = 4;
    o.embed_dim = 4;
    o.num_heads = 2;
    o.groupnorm_groups = 2;
    Sefb block(o);
    block->to(torch::kDouble);
    auto f = torch::randn({1, 4, 3, 3}, torch::kDouble);
    auto s = torch::randn({1, 4, 2, 2}, torch::kDouble);
    auto w = torch::randn({1, 4, 3, 3}, torch::kDouble);
    auto objective = [&] { return (block->forward(f, s) * w).sum(); };

    std::vector<std::pair<std::string, torch::Tensor>> targets{{"features", f}, {"semantics", s}};
    for (auto& p : block->named_parameters()) targets.emplace_back(p.key(), p.value());
    f.set_requires_grad(true);
    s.set_requires_grad(true);
    block->zero_grad();
    objective().backward();

    const double h = 1e-4;
    double worst = 0.0;
    std::string worst_name;
    int64_t checked = 0;
    torch::NoGradGuard ng;
    for (auto& [name, t] : targets) {
        auto analytic = t.grad().clone();
        auto numeric = torch::zeros_like(t);
        auto flat = t.view(-1);
        for (int64_t i = 0; i < flat.numel(); ++i) {
            const double keep = flat[i].item<double>();
            flat[i] = keep + h;
            const double up = objective().item<double>();
            flat[i] = keep - h;
            const double down = objective().item<double>();
            flat[i] = keep;
            numeric.view(-1)[i] = (up - down) / (2 * h);
            ++checked;
        }
        const double scale = std::max({analytic.abs().max().item<double>(), numeric.abs().max().item<double>(), 1e-8});
        const double rel = (analytic - numeric).abs().max().item<double>() / scale;
        if (rel > worst) {
            worst = rel;
            worst_name = name;
        }
    }
    return {worst < 1e-3, std::to_string(checked) + " entries over " + std::to_string(targets.size()) +
                              " tensors, worst relative error " + fmt(worst) + " (" + worst_name + ")"};
}

Outcome shape_laws() {
    RandomStream rng(77);
    int checks = 0;
    auto fail = [&](const std::string& what) { return Outcome{false, what + " after " + std::to_string(checks) + " checks"}; };
    for (int layer = 1; layer <= 4; ++layer) {
        SemanticExtractor ext(ExtractorSpec::make(BackboneKind::toy, layer), SeededWeightProvider(1));
        for (int i = 0; i < 3; ++i) {
            const int64_t h = 32 * rng.between(1, 4), w = 32 * rng.between(1, 4);
            const int64_t f = 4 << (layer - 1);
            auto m = ext.extract(torch::rand({1, 3, h, w}));
            if (m.height() != h / f || m.width() != w / f || m.channels() != stage_channels(layer))
                return fail("extractor layer " + std::to_string(layer));
            ++checks;
        }
    }
    auto disc = [](DiscriminatorFamily fam, int64_t size) {
        DiscriminatorSpec s;
        s.family = fam;
        s.base_channels = 8;
        s.sefb.num_heads = 2;
        s.image_size = size;
        return make_discriminator(s);
    };
    for (int i = 0; i < 4; ++i) {
        const int64_t b = rng.between(1, 2), h = 16 * rng.between(2, 6), w = 16 * rng.between(2, 6);
        auto x = torch::rand({b, 3, h, w});
        auto s = torch::randn({b, 1024, std::max<int64_t>(h / 16, 1), std::max<int64_t>(w / 16, 1)});
        if (disc(DiscriminatorFamily::patch_sed, 256)->forward(x, s).logits.sizes() != torch::IntArrayRef{b, 1, h / 8, w / 8})
            return fail("patch map");
        ++checks;
        if (disc(DiscriminatorFamily::unet_sed, 256)->forward(x, s).logits.sizes() != torch::IntArrayRef{b, 1, h, w})
            return fail("pixel map");
        ++checks;
        const int64_t side = 32 * rng.between(1, 2);
        auto vgg = disc(DiscriminatorFamily::vgg_sed, side);
        vgg->eval();
        auto v = vgg->forward(torch::rand({b, 3, side, side}),
                                                                 torch::randn({b, 1024, side / 16, side / 16}));
        if (v.logits.sizes() != torch::IntArrayRef{b, 1}) return fail("image logit");
        ++checks;
        GeneratorSpec g;
        g.num_rrdb_blocks = 1;
        g.feature_channels = 8;
        g.growth_channels = 4;
        Generator gen(g);
        const int64_t lh = rng.between(3, 20), lw = rng.between(3, 20);
        if (gen->forward(torch::rand({b, 3, lh, lw})).sizes() != torch::IntArrayRef{b, 3, 4 * lh, 4 * lw})
            return fail("generator x4");
        ++checks;
    }
    return {true, std::to_string(checks) + " random shape checks"};
}

Outcome loss_fixed_points() {
    auto z = torch::zeros({2, 1, 4, 4});
    const double d0 = discriminator_loss(z, z, GanFormulation::standard_bce).item<double>();
    const double g0 = adversarial_loss_g(z, GanFormulation::standard_bce).item<double>();
    auto big = torch::full({2, 1, 4, 4}, 40.0);
    const double dp = discriminator_loss(big, -big, GanFormulation::standard_bce).item<double>();
    const double gp = adversarial_loss_g(big, GanFormulation::standard_bce).item<double>();
    IdentityFeatureAdapter id;
    LossWeights w{1.0, 1.0, 5e-3};
    auto sr = torch::rand({1, 3, 8, 8}), hr = torch::rand({1, 3, 8, 8}), logits = torch::randn({1, 1, 1, 1});
    auto gl = generator_total_loss(sr, hr, logits, w, &id);
    auto recomputed = pixel_loss(sr, hr) * 1.0 + perceptual_loss(sr, hr, &id) * 1.0 +
                      adversarial_loss_g(logits, GanFormulation::standard_bce) * 5e-3;
    const bool exact = gl.total.item<float>() == recomputed.item<float>();
    const bool ok = std::abs(d0 - 2 * std::log(2.0)) < 1e-6 && std::abs(g0 - std::log(2.0)) < 1e-6 && dp < 1e-6 &&
                    gp < 1e-6 && exact;
    return {ok, "L_D(0,0)=" + fmt(d0) + " L_adv(0)=" + fmt(g0) + " perfect: " + fmt(dp) + "/" + fmt(gp) +
                    (exact ? ", composition exact" : ", composition differs")};
}

Outcome conditioning_contract() {
    testutil::TempDir dir("acc_cond");
    auto c = tiny_config(dir.path());
    Trainer t(c);
    std::vector<torch::Tensor> before;
    for (auto& p : t.extractor()->parameters()) before.push_back(p.clone());
    const auto ds = PairedDataset::from_spec(c.data);
    BatchLoader loader(ds, 3, c.batch_size, c.data.patch_size, true);
    t.discriminator().probe_semantics(true);
    for (int step = 0; step < 10; ++step) {
        t.discriminator().clear_probe();
        auto batch = loader.batch(step);
        auto r = t.train_step(batch);
        if (r.extractor_calls != 1) return {false, "step " + std::to_string(step) + ": extractor called " + std::to_string(r.extractor_calls) + " times"};
        if (!torch::equal(t.extractor()->last_input(), batch.hr)) return {false, "semantics not taken from I_h"};
        const auto& seen = t.discriminator().semantic_inputs();
        if (seen.size() != 3 || seen[0] != seen[1] || seen[1] != seen[2]) return {false, "branches saw different S_h"};
        if (r.leak_into_g_during_d != 0.0 || r.leak_into_d_during_g != 0.0) return {false, "gradient leaked across networks"};
    }
    auto after = t.extractor()->parameters();
    for (std::size_t i = 0; i < before.size(); ++i) {
        if (after[i].grad().defined() && after[i].grad().abs().max().item<double>() != 0.0)
            return {false, "extractor parameter received gradient"};
        if (!torch::equal(before[i], after[i])) return {false, "extractor weights changed"};
    }
    return {true, "10 steps: one extraction from I_h per step, shared by 3 D passes, extractor bitwise frozen"};
}

Outcome training_smoke() {
    testutil::TempDir dir("acc_smoke");
    auto c = TrainConfig::desk();
    c.out_dir = dir / "pretrain";
    c.log_interval = 0;
    c.eval_images = 0;
    const auto ds = PairedDataset::from_spec(c.data);
    const auto probe = BatchLoader(ds, derive_seed(c.seed, {1}), c.batch_size, c.data.patch_size, true).batch(0);

    Trainer init(c);
    double initial;
    {
        torch::NoGradGuard ng;
        init.generator()->train();
        initial = pixel_loss(init.generator()->forward(probe.lr), probe.hr).item<double>();
    }
    auto pre = pretrain_psnr(c);
    auto g = load_generator_checkpoint(pre.generator_checkpoint);
    double final_l1;
    {
        torch::NoGradGuard ng;
        g->train();
        final_l1 = pixel_loss(g->forward(probe.lr), probe.hr).item<double>();
    }
    const double first_logged = pre.log.front().l_pixel, last_logged = pre.log.back().l_pixel;

    auto gc = c;
    gc.out_dir = dir / "gan";
    gc.init = "psnr";
    gc.psnr_checkpoint = pre.generator_checkpoint.string();
    auto gan = run_experiment(gc);
    bool finite = gan.log.size() == static_cast<std::size_t>(c.iterations);
    for (const auto& r : gan.log)
        for (double v : {r.l_pixel, r.l_perceptual, r.l_adv_g, r.l_d, r.grad_norm_g, r.grad_norm_d})
            finite = finite && std::isfinite(v);
    const bool ok = final_l1 < 0.5 * initial && finite;
    return {ok, "pretrain " + std::to_string(pre.log.size()) + " steps: L1 " + fmt(initial) + " -> " + fmt(final_l1) +
                    " (logged " + fmt(first_logged) + " -> " + fmt(last_logged) + "); GAN " +
                    std::to_string(gan.log.size()) + " steps " + (finite ? "all finite" : "NON-FINITE")};
}

Outcome inference_independence() {
    testutil::TempDir dir("acc_infer");
    auto sed = tiny_config(dir / "sed");
    sed.iterations = 2;
    auto van = sed;
    van.out_dir = dir / "vanilla";
    van.discriminator.family = DiscriminatorFamily::patch_vanilla;
    run_experiment(sed);
    run_experiment(van);
    const auto ps = count_parameters(*load_generator_checkpoint(dir / "sed/generator.pt"));
    const auto pv = count_parameters(*load_generator_checkpoint(dir / "vanilla/generator.pt"));

    fs::create_directories(dir / "in");
    write_png(dir / "in/img.png", torch::rand({3, 48, 40}));
    clear_weight_access_log();
    const int code = cli_main({"infer", "--checkpoint", (dir / "sed/generator.pt").string(), "--input",
                               (dir / "in").string(), "--out", (dir / "out").string()});
    bool only_generator = true;
    const auto log = weight_access_log();
    for (const auto& a : log) only_generator = only_generator && a.role == WeightRole::generator;
    const bool produced = fs::exists(dir / "out/img.png") &&
                          read_png(dir / "out/img.png").sizes() == torch::IntArrayRef{3, 192, 160};
    const bool ok = code == exit_ok && produced && !log.empty() && only_generator && ps == pv;
    return {ok, "infer exit " + std::to_string(code) + ", " + std::to_string(log.size()) + " weight file(s) read, " +
                    (only_generator ? "all generator" : "NOT only generator") + "; G params SeD " +
                    std::to_string(ps) + " vs vanilla " + std::to_string(pv)};
}

Outcome metric_oracles() {
    double worst_psnr = 0.0, worst_ssim = 0.0;
    for (int i = 0; i < 20; ++i) {
        torch::manual_seed(500 + i);
        const int64_t h = 20 + 4 * (i % 5), w = 20 + 4 * ((i / 5) % 4);
        auto hr = quantize_8bit(torch::rand({3, h, w}, torch::kDouble));
        auto sr = quantize_8bit((hr + 0.08 * torch::randn_like(hr)).clamp(0, 1));
        worst_psnr = std::max(worst_psnr, std::abs(psnr(sr, hr) - oracle::psnr_y(sr, hr, 4)));
        worst_ssim = std::max(worst_ssim, std::abs(ssim(sr, hr) - oracle::ssim_y(sr, hr, 4)));
    }
    return {worst_psnr < 1e-9 && worst_ssim < 1e-9,
            "20 pairs, worst |dPSNR| " + fmt(worst_psnr) + " dB, worst |dSSIM| " + fmt(worst_ssim)};
}

Outcome ablation_harness() {
    testutil::TempDir dir("acc_ablate");
    auto base = TrainConfig::desk().to_config();
    base.set("train.iterations", "5");
    base.set("train.log_interval", "0");
    base.set("train.checkpoint_interval", "0");
    base.set("eval.n_images", "2");
    std::set<fs::path> dirs;
    std::string counts;
    for (const char* axis : {"extractor.layer", "sefb.fusion_mode", "extractor.kind"}) {
        auto out = run_ablation(base, axis, dir / axis);
        counts += (counts.empty() ? "" : "+") + std::to_string(out.size());
        for (auto& d : out) {
            if (!fs::exists(d / "generator.pt") || !fs::exists(d / "metrics.txt")) return {false, d.string() + " incomplete"};
            dirs.insert(d);
        }
        if (!fs::exists(dir / axis / "ablation.csv")) return {false, std::string(axis) + ": no summary"};
    }
    return {dirs.size() == 10 && counts == "4+4+2", counts + " runs, " + std::to_string(dirs.size()) + " distinct dirs"};
}

Outcome determinism() {
    testutil::TempDir a("acc_det_a"), b("acc_det_b");
    auto ca = TrainConfig::desk();
    ca.iterations = 20;
    ca.log_interval = 0;
    ca.eval_images = 0;
    auto cb = ca;
    ca.out_dir = a.path();
    cb.out_dir = b.path();
    run_experiment(ca);
    run_experiment(cb);
    const auto la = slurp(a / "loss.csv"), lb = slurp(b / "loss.csv");
    const bool ok = la == lb && std::count(la.begin(), la.end(), '\n') == 21;
    return {ok, "two 20-step desk runs, loss.csv " + std::string(la == lb ? "identical" : "differs")};
}

} // namespace

int main() {
    at::set_num_threads(1);
    const std::vector<Criterion> criteria{
        {1, "attention matches brute-force oracle", 10, attention_oracle},
        {2, "SeFB gradient check", 60, sefb_gradcheck},
        {3, "shape laws", 30, shape_laws},
        {4, "loss fixed points", 0, loss_fixed_points},
        {5, "conditioning contract", 0, conditioning_contract},
        {6, "training smoke (300 pretrain + 500 GAN steps, desk preset)", 600, training_smoke},
        {7, "inference independence", 0, inference_independence},
        {8, "metric oracles", 0, metric_oracles},
        {9, "ablation harness", 0, ablation_harness},
        {10, "determinism", 0, determinism},
    };
    int failed = 0;
    std::vector<std::string> lines;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.limit_s > 0 && secs > c.limit_s) {
            o.pass = false;
            o.detail += "; over the " + fmt(c.limit_s) + " s budget";
        }
        std::ostringstream line;
        line << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " (" << std::fixed
             << std::setprecision(1) << secs << " s)";
        std::cout << line.str() << std::endl;
        lines.push_back(line.str());
        failed += o.pass ? 0 : 1;
    }
    std::cout << "\n== acceptance summary ==\n";
    for (const auto& l : lines) std::cout << l << "\n";
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
    return failed == 0 ? 0 : 1;
}
