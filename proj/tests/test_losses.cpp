#include <doctest.h>

#include <cmath>
#include <limits>

#include <torch/torch.h>

#include "oracles.hpp"
#include "sedsr/losses.hpp"

using namespace sedsr;

namespace {

const double ln2 = std::log(2.0);

double num(const torch::Tensor& t) { return t.item<double>(); }

/// Two taps: the image and its 2x2 average pool.
class PoolAdapter final : public FeatureAdapter {
public:
    std::vector<torch::Tensor> taps(const torch::Tensor& image) const override {
        return {image, torch::nn::functional::avg_pool2d(image, torch::nn::functional::AvgPool2dFuncOptions(2))};
    }
    std::string name() const override { return "pool"; }
};

/// Central differences of a scalar function of one double tensor.
torch::Tensor numeric_grad(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x,
                           double eps = 1e-6) {
    auto g = torch::zeros_like(x);
    auto flat = x.view(-1);
    auto gflat = g.view(-1);
    for (int64_t i = 0; i < flat.numel(); ++i) {
        const double keep = flat[i].item<double>();
        flat[i] = keep + eps;
        const double up = num(f(x));
        flat[i] = keep - eps;
        const double down = num(f(x));
        flat[i] = keep;
        gflat[i] = (up - down) / (2 * eps);
    }
    return g;
}

torch::Tensor analytic_grad(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x) {
    auto leaf = x.clone().requires_grad_(true);
    f(leaf).backward();
    return leaf.grad();
}

} // namespace

TEST_SUITE("losses") {

TEST_CASE("pixel loss") {
    auto a = torch::rand({2, 3, 8, 8});
    CHECK(num(pixel_loss(a, a)) == 0.0);
    CHECK(num(pixel_loss(torch::zeros({1, 3, 4, 4}), torch::ones({1, 3, 4, 4}))) == doctest::Approx(1.0));
    auto b = torch::rand({2, 3, 8, 8});
    double ref = 0;
    auto va = oracle::to_vec(a), vb = oracle::to_vec(b);
    for (std::size_t i = 0; i < va.size(); ++i) ref += std::abs(va[i] - vb[i]);
    ref /= static_cast<double>(va.size());
    CHECK(std::abs(num(pixel_loss(a, b)) - ref) < 1e-7);
    CHECK(num(pixel_loss(a, b)) == doctest::Approx(num(pixel_loss(b, a))));
}

TEST_CASE("perceptual loss with the identity adapter equals the pixel loss") {
    IdentityFeatureAdapter id;
    auto a = torch::rand({1, 3, 8, 8}), b = torch::rand({1, 3, 8, 8});
    CHECK(num(perceptual_loss(a, b, &id)) == doctest::Approx(num(pixel_loss(a, b))).epsilon(1e-7));
    CHECK_THROWS_AS(perceptual_loss(a, b, nullptr), ConfigError);
}

TEST_CASE("perceptual loss sums over taps") {
    PoolAdapter pool;
    auto a = torch::rand({1, 3, 8, 8}), b = torch::rand({1, 3, 8, 8});
    auto pa = torch::nn::functional::avg_pool2d(a, torch::nn::functional::AvgPool2dFuncOptions(2));
    auto pb = torch::nn::functional::avg_pool2d(b, torch::nn::functional::AvgPool2dFuncOptions(2));
    const double ref = num((a - b).abs().mean()) + num((pa - pb).abs().mean());
    CHECK(num(perceptual_loss(a, b, &pool)) == doctest::Approx(ref).epsilon(1e-6));
}

TEST_CASE("perceptual target carries no gradient") {
    IdentityFeatureAdapter id;
    auto a = torch::rand({1, 3, 4, 4}).requires_grad_(true);
    auto b = torch::rand({1, 3, 4, 4}).requires_grad_(true);
    perceptual_loss(a, b, &id).backward();
    CHECK(a.grad().defined());
    CHECK_FALSE(b.grad().defined());
}

TEST_CASE("fixed points at zero logits") {
    auto z = torch::zeros({2, 1, 4, 4});
    CHECK(num(discriminator_loss(z, z, GanFormulation::standard_bce)) == doctest::Approx(2 * ln2).epsilon(1e-6));
    CHECK(num(adversarial_loss_g(z, GanFormulation::standard_bce)) == doctest::Approx(ln2).epsilon(1e-6));
}

TEST_CASE("extremes drive the losses to zero") {
    auto big = torch::full({4, 1}, 30.0);
    CHECK(num(discriminator_loss(big, -big, GanFormulation::standard_bce)) < 1e-6);
    CHECK(num(adversarial_loss_g(big, GanFormulation::standard_bce)) < 1e-6);
}

TEST_CASE("bce matches the oracle") {
    auto real = torch::tensor({-3.0, -0.5, 0.0, 0.7, 4.0});
    auto fake = torch::tensor({2.0, -1.5, 0.3, 0.0, -6.0});
    double d = 0, g = 0;
    for (int i = 0; i < 5; ++i) {
        d += oracle::bce_logit(real[i].item<double>(), 1) + oracle::bce_logit(fake[i].item<double>(), 0);
        g += oracle::bce_logit(fake[i].item<double>(), 1);
    }
    CHECK(std::abs(num(discriminator_loss(real, fake, GanFormulation::standard_bce)) - d / 5) < 1e-6);
    CHECK(std::abs(num(adversarial_loss_g(fake, GanFormulation::standard_bce)) - g / 5) < 1e-6);
}

TEST_CASE("adversarial gradient pushes fake logits up") {
    auto x = torch::tensor({-2.0, 0.0, 1.5}).requires_grad_(true);
    adversarial_loss_g(x, GanFormulation::standard_bce).backward();
    CHECK((x.grad() < 0).all().item<bool>());
}

TEST_CASE("adversarial loss is decreasing in the fake logit") {
    double prev = std::numeric_limits<double>::infinity();
    for (double v = -8; v <= 8; v += 0.5) {
        const double cur = num(adversarial_loss_g(torch::full({1}, v), GanFormulation::standard_bce));
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("total loss composes its weighted terms exactly") {
    LossWeights w{1.0, 2.0, 3.0};
    PoolAdapter pool;
    auto sr = torch::rand({1, 3, 8, 8}), hr = torch::rand({1, 3, 8, 8});
    auto logits = torch::randn({1, 1, 2, 2});
    auto out = generator_total_loss(sr, hr, logits, w, &pool);
    CHECK(num(out.total) == num(out.pixel * 1.0 + out.perceptual * 2.0 + out.adversarial * 3.0));
    CHECK(num(out.pixel) == num(pixel_loss(sr, hr)));
    CHECK(num(out.adversarial) == num(adversarial_loss_g(logits, GanFormulation::standard_bce)));
}

TEST_CASE("zero weights skip missing inputs") {
    LossWeights w{1.0, 0.0, 0.0};
    auto sr = torch::rand({1, 3, 4, 4}), hr = torch::rand({1, 3, 4, 4});
    auto out = generator_total_loss(sr, hr, torch::Tensor(), w, nullptr);
    CHECK(num(out.total) == num(pixel_loss(sr, hr)));
    CHECK(num(out.adversarial) == 0.0);
}

TEST_CASE("negative weights are rejected") {
    LossWeights w{1.0, -1.0, 0.0};
    CHECK_THROWS(w.validate());
}

TEST_CASE("non-finite logits raise") {
    auto bad = torch::tensor({0.0, std::numeric_limits<double>::quiet_NaN()});
    auto ok = torch::zeros({2});
    CHECK_THROWS_AS(discriminator_loss(bad, ok, GanFormulation::standard_bce), NumericalError);
    CHECK_THROWS_AS(discriminator_loss(ok, bad * 0 + INFINITY, GanFormulation::standard_bce), NumericalError);
    CHECK_THROWS_AS(adversarial_loss_g(bad, GanFormulation::literal_paper), NumericalError);
}

TEST_CASE("literal formulation") {
    CHECK(parse_gan_formulation("literal_paper") == GanFormulation::literal_paper);
    CHECK(parse_gan_formulation(to_string(GanFormulation::standard_bce)) == GanFormulation::standard_bce);
    CHECK_THROWS_AS(parse_gan_formulation("wgan"), ConfigError);
    auto z = torch::zeros({3});
    CHECK(num(discriminator_loss(z, z, GanFormulation::literal_paper)) == doctest::Approx(-ln2 + 0.5));
    CHECK(num(adversarial_loss_g(z, GanFormulation::literal_paper, z)) == doctest::Approx(-ln2 + 0.5));
    CHECK(num(adversarial_loss_g(z, GanFormulation::literal_paper)) == doctest::Approx(0.5));
    auto real = torch::zeros({3}).requires_grad_(true);
    adversarial_loss_g(torch::zeros({3}, torch::requires_grad()), GanFormulation::literal_paper, real).backward();
    CHECK_FALSE(real.grad().defined());
}

TEST_CASE("analytic gradients match finite differences") {
    auto opts = torch::TensorOptions().dtype(torch::kDouble);
    auto other = torch::randn({6}, opts);
    auto x = torch::randn({6}, opts);
    auto hr = torch::rand({1, 3, 4, 4}, opts);
    auto sr = torch::rand({1, 3, 4, 4}, opts);
    PoolAdapter pool;
    std::vector<std::function<torch::Tensor(const torch::Tensor&)>> fns{
        [&](const torch::Tensor& t) { return discriminator_loss(t, other, GanFormulation::standard_bce); },
        [&](const torch::Tensor& t) { return discriminator_loss(other, t, GanFormulation::standard_bce); },
        [&](const torch::Tensor& t) { return adversarial_loss_g(t, GanFormulation::standard_bce); },
        [&](const torch::Tensor& t) { return discriminator_loss(t, other, GanFormulation::literal_paper); },
        [&](const torch::Tensor& t) { return adversarial_loss_g(t, GanFormulation::literal_paper); },
    };
    for (auto& f : fns) CHECK((analytic_grad(f, x) - numeric_grad(f, x.clone())).abs().max().item<double>() < 1e-4);
    auto total = [&](const torch::Tensor& t) {
        return generator_total_loss(t, hr, torch::Tensor(), LossWeights{1.0, 0.5, 0.0}, &pool).total;
    };
    CHECK((analytic_grad(total, sr) - numeric_grad(total, sr.clone())).abs().max().item<double>() < 1e-4);
}

}
