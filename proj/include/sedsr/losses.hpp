#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sedsr/extractor.hpp"
#include "sedsr/types.hpp"

namespace sedsr {

struct LossWeights {
    double lambda_pixel = 1.0;
    double lambda_perceptual = 1.0;
    double lambda_adversarial = 5e-3;

    void validate() const;
};

/// How the adversarial pair is computed from raw logits.
///   standard_bce  - BCE-with-logits: D pushes real->1, fake->0; G uses the
///                   non-saturating form fake->1.
///   literal_paper - the objectives exactly as printed with D = sigmoid(logits):
///                   L_D   = E log(1 - D(real)) + E D(fake)
///                   L_adv = E log D(real) + E (1 - D(fake))
enum class GanFormulation { standard_bce, literal_paper };

GanFormulation parse_gan_formulation(const std::string& s);
std::string to_string(GanFormulation f);

/// Mean absolute error.
torch::Tensor pixel_loss(const ImageTensor& sr, const ImageTensor& hr);

/// A frozen network exposing feature taps for the perceptual loss.
class FeatureAdapter {
public:
    virtual ~FeatureAdapter() = default;
    virtual std::vector<torch::Tensor> taps(const torch::Tensor& image) const = 0;
    virtual std::string name() const = 0;
};

/// One tap: the image itself. Makes the perceptual loss equal the pixel loss.
class IdentityFeatureAdapter final : public FeatureAdapter {
public:
    std::vector<torch::Tensor> taps(const torch::Tensor& image) const override { return {image}; }
    std::string name() const override { return "identity"; }
};

/// Stage outputs 1..depth of a frozen extractor backbone.
class ExtractorFeatureAdapter final : public FeatureAdapter {
public:
    ExtractorFeatureAdapter(std::shared_ptr<const SemanticExtractor> extractor, int depth);
    std::vector<torch::Tensor> taps(const torch::Tensor& image) const override;
    std::string name() const override;

private:
    std::shared_ptr<const SemanticExtractor> extractor_;
    int depth_;
};

/// VGG-19 convolutional trunk (torchvision `features.*` naming) with ImageNet
/// normalization. Taps are pre-activation conv outputs at the given feature indices;
/// the default is conv5_4.
class VggFeatureAdapter final : public FeatureAdapter {
public:
    VggFeatureAdapter(const std::filesystem::path& weights_path, std::vector<int> tap_indices = {34},
                      uint64_t seed = 0);
    std::vector<torch::Tensor> taps(const torch::Tensor& image) const override;
    std::string name() const override { return "vgg19"; }

    torch::nn::Sequential& features() { return features_; }

private:
    mutable torch::nn::Sequential features_;
    std::vector<int> tap_indices_;
};

/// Sum over taps of the mean L1 distance between tap activations. Target taps are
/// computed without gradient. Throws ConfigError when `adapter` is null.
torch::Tensor perceptual_loss(const ImageTensor& sr, const ImageTensor& hr, const FeatureAdapter* adapter);

/// Discriminator objective on raw logits. Throws NumericalError on non-finite logits.
torch::Tensor discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                                 GanFormulation formulation);

/// Generator adversarial term on raw fake logits. The literal formulation also reads
/// the real logits when given (that term carries no generator gradient).
torch::Tensor adversarial_loss_g(const torch::Tensor& fake_logits, GanFormulation formulation,
                                 const torch::Tensor& real_logits = {});

struct GeneratorLoss {
    torch::Tensor total;
    torch::Tensor pixel;
    torch::Tensor perceptual;
    torch::Tensor adversarial;
};

/// L_G = lambda_pixel * L_s + lambda_p * L_p + lambda_a * L_adv.
/// Terms whose weight is zero are still reported but skip their network passes when the
/// corresponding input is missing (no adapter / undefined logits).
GeneratorLoss generator_total_loss(const ImageTensor& sr, const ImageTensor& hr,
                                   const torch::Tensor& fake_logits, const LossWeights& weights,
                                   const FeatureAdapter* adapter,
                                   GanFormulation formulation = GanFormulation::standard_bce,
                                   const torch::Tensor& real_logits = {});

/// Combines precomputed terms exactly as L_G does.
torch::Tensor combine_generator_terms(const torch::Tensor& pixel, const torch::Tensor& perceptual,
                                      const torch::Tensor& adversarial, const LossWeights& weights);

} // namespace sedsr
