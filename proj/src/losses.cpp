#include "sedsr/losses.hpp"

#include <algorithm>

#include "sedsr/checkpoint.hpp"

namespace sedsr {
namespace F = torch::nn::functional;
namespace nn = torch::nn;

void LossWeights::validate() const {
    if (lambda_pixel < 0 || lambda_perceptual < 0 || lambda_adversarial < 0)
        throw InvalidSpecError("loss weights must be non-negative");
}

GanFormulation parse_gan_formulation(const std::string& s) {
    if (s == "standard_bce") return GanFormulation::standard_bce;
    if (s == "literal_paper") return GanFormulation::literal_paper;
    throw ConfigError("loss.gan_mode must be standard_bce or literal_paper (got `" + s + "`)");
}

std::string to_string(GanFormulation f) {
    return f == GanFormulation::standard_bce ? "standard_bce" : "literal_paper";
}

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (!a.defined() || !b.defined() || a.sizes() != b.sizes())
        throw ContractError(std::string(what) + ": shape mismatch " +
                            (a.defined() ? detail::shape_str(a) : "<none>") + " vs " +
                            (b.defined() ? detail::shape_str(b) : "<none>"));
}

void require_finite(const torch::Tensor& t, const char* what) {
    if (!t.defined()) throw ContractError(std::string(what) + ": logits missing");
    if (!torch::isfinite(t.detach()).all().item<bool>())
        throw NumericalError(std::string(what) + ": non-finite logits");
}

} // namespace

torch::Tensor pixel_loss(const ImageTensor& sr, const ImageTensor& hr) {
    require_same_shape(sr, hr, "pixel_loss");
    return (sr - hr).abs().mean();
}

ExtractorFeatureAdapter::ExtractorFeatureAdapter(std::shared_ptr<const SemanticExtractor> extractor, int depth)
    : extractor_(std::move(extractor)), depth_(depth) {
    if (!extractor_) throw ConfigError("perceptual adapter needs an extractor");
    if (depth < 1 || depth > kNumStages) throw InvalidSpecError("perceptual tap depth must be in 1..4");
}

std::vector<torch::Tensor> ExtractorFeatureAdapter::taps(const torch::Tensor& image) const {
    return extractor_->taps(image, depth_);
}

std::string ExtractorFeatureAdapter::name() const {
    return "extractor:" + extractor_->source_id() + ":" + std::to_string(depth_);
}

VggFeatureAdapter::VggFeatureAdapter(const std::filesystem::path& weights_path, std::vector<int> tap_indices,
                                     uint64_t seed)
    : tap_indices_(std::move(tap_indices)) {
    // VGG-19 configuration; -1 marks max pooling.
    const std::vector<int> cfg{64, 64, -1, 128, 128, -1, 256, 256, 256, 256, -1,
                               512, 512, 512, 512, -1, 512, 512, 512, 512, -1};
    int64_t in = 3;
    for (int c : cfg) {
        if (c < 0) {
            features_->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2)));
        } else {
            features_->push_back(nn::Conv2d(nn::Conv2dOptions(in, c, 3).padding(1)));
            features_->push_back(nn::Functional([](torch::Tensor x) { return torch::relu(x); }));
            in = c;
        }
    }
    for (int idx : tap_indices_)
        if (idx < 0 || idx >= static_cast<int>(features_->size()))
            throw ConfigError("VGG tap index out of range: " + std::to_string(idx));
    if (weights_path.empty()) {
        SeededWeightProvider(seed).load(*features_);
    } else {
        load_module_weights(*features_, weights_path, WeightRole::perceptual);
    }
    for (auto& p : features_->parameters()) p.set_requires_grad(false);
    features_->eval();
}

std::vector<torch::Tensor> VggFeatureAdapter::taps(const torch::Tensor& image) const {
    const auto norm = default_normalization(BackboneKind::classification_rn50);
    auto mean = torch::tensor(std::vector<double>(norm.mean.begin(), norm.mean.end()), image.options()).view({1, 3, 1, 1});
    auto stdv = torch::tensor(std::vector<double>(norm.std.begin(), norm.std.end()), image.options()).view({1, 3, 1, 1});
    auto h = (image - mean) / stdv;
    const int last = *std::max_element(tap_indices_.begin(), tap_indices_.end());
    std::vector<torch::Tensor> out;
    int i = 0;
    for (auto& layer : *features_) {
        if (i > last) break;
        h = layer.forward(h);
        if (std::find(tap_indices_.begin(), tap_indices_.end(), i) != tap_indices_.end()) out.push_back(h);
        ++i;
    }
    return out;
}

torch::Tensor perceptual_loss(const ImageTensor& sr, const ImageTensor& hr, const FeatureAdapter* adapter) {
    if (!adapter) throw ConfigError("perceptual loss requested without a feature adapter");
    require_same_shape(sr, hr, "perceptual_loss");
    auto sr_taps = adapter->taps(sr);
    std::vector<torch::Tensor> hr_taps;
    {
        torch::NoGradGuard no_grad;
        hr_taps = adapter->taps(hr.detach());
    }
    if (sr_taps.empty() || sr_taps.size() != hr_taps.size())
        throw ContractError("perceptual adapter returned inconsistent taps");
    auto total = torch::zeros({}, sr.options());
    for (std::size_t i = 0; i < sr_taps.size(); ++i) total = total + (sr_taps[i] - hr_taps[i]).abs().mean();
    return total;
}

torch::Tensor discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                                 GanFormulation formulation) {
    require_finite(real_logits, "discriminator_loss(real)");
    require_finite(fake_logits, "discriminator_loss(fake)");
    if (formulation == GanFormulation::standard_bce) {
        return F::binary_cross_entropy_with_logits(real_logits, torch::ones_like(real_logits)) +
               F::binary_cross_entropy_with_logits(fake_logits, torch::zeros_like(fake_logits));
    }
    // log(1 - sigmoid(x)) = -softplus(x)
    return (-F::softplus(real_logits)).mean() + torch::sigmoid(fake_logits).mean();
}

torch::Tensor adversarial_loss_g(const torch::Tensor& fake_logits, GanFormulation formulation,
                                 const torch::Tensor& real_logits) {
    require_finite(fake_logits, "adversarial_loss_g(fake)");
    if (formulation == GanFormulation::standard_bce)
        return F::binary_cross_entropy_with_logits(fake_logits, torch::ones_like(fake_logits));
    auto loss = (1.0 - torch::sigmoid(fake_logits)).mean();
    if (real_logits.defined()) {
        require_finite(real_logits, "adversarial_loss_g(real)");
        // log(sigmoid(x)) = -softplus(-x)
        loss = loss + (-F::softplus(-real_logits.detach())).mean();
    }
    return loss;
}

torch::Tensor combine_generator_terms(const torch::Tensor& pixel, const torch::Tensor& perceptual,
                                      const torch::Tensor& adversarial, const LossWeights& weights) {
    return pixel * weights.lambda_pixel + perceptual * weights.lambda_perceptual +
           adversarial * weights.lambda_adversarial;
}

GeneratorLoss generator_total_loss(const ImageTensor& sr, const ImageTensor& hr, const torch::Tensor& fake_logits,
                                   const LossWeights& weights, const FeatureAdapter* adapter,
                                   GanFormulation formulation, const torch::Tensor& real_logits) {
    weights.validate();
    GeneratorLoss out;
    out.pixel = pixel_loss(sr, hr);
    const auto zero = torch::zeros({}, sr.options());
    if (weights.lambda_perceptual > 0 || adapter)
        out.perceptual = perceptual_loss(sr, hr, adapter);
    else
        out.perceptual = zero;
    if (weights.lambda_adversarial > 0 || fake_logits.defined())
        out.adversarial = adversarial_loss_g(fake_logits, formulation, real_logits);
    else
        out.adversarial = zero;
    out.total = combine_generator_terms(out.pixel, out.perceptual, out.adversarial, weights);
    return out;
}

} // namespace sedsr
