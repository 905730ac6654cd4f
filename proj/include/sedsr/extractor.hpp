#pragma once

#include <array>
#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sedsr/types.hpp"

namespace sedsr {

enum class BackboneKind { vision_language_rn50, classification_rn50, toy };

/// Config spelling: clip_rn50 | resnet50 | toy.
BackboneKind parse_backbone_kind(const std::string& s);
std::string to_config_string(BackboneKind kind);

struct Normalization {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> std{1.0, 1.0, 1.0};
};

/// Per-channel constants published with each backbone's pretraining recipe.
Normalization default_normalization(BackboneKind kind);

/// Number of residual stages ("layers") in the RN50 family.
inline constexpr int kNumStages = 4;
/// Input sides must be multiples of this for every stage to tile exactly.
inline constexpr int64_t kExtractorAlignment = 32;

/// Output channels of stage `layer` (1-based): 256, 512, 1024, 2048.
int64_t stage_channels(int layer);
/// Total spatial stride of stage `layer`: 4, 8, 16, 32.
int64_t stage_stride(int layer);

struct ExtractorSpec {
    BackboneKind backbone_kind = BackboneKind::toy;
    int layer_index = 3;
    Normalization normalization{};

    /// Extractor parameters never train. There is no way to unfreeze one.
    static constexpr bool frozen = true;

    static ExtractorSpec make(BackboneKind kind, int layer_index = 3);
    /// Throws InvalidSpecError when layer_index is outside 1..4.
    void validate() const;
};

/// (x - mean) / std per channel.
torch::Tensor preprocess_for_pvm(const ImageTensor& image, const ExtractorSpec& spec);

/// Largest centered crop whose sides are multiples of `multiple`.
ImageTensor center_crop_to_multiple(const ImageTensor& image, int64_t multiple = kExtractorAlignment);

// ---------------------------------------------------------------------------
// Backbones
// ---------------------------------------------------------------------------

/// A network exposing the outputs of its four residual stages.
struct BackboneImpl : torch::nn::Module {
    /// Runs the network up to and including stage `up_to` and returns every stage
    /// output on the way (index 0 is stage 1).
    virtual std::vector<torch::Tensor> stages(const torch::Tensor& x, int up_to) = 0;
};

/// Small conv stack with the RN50 stride and width schedule: a 4x4/s4 stem to 256
/// channels, then one 2x2/s2 conv per stage doubling the width.
struct ToyBackboneImpl : BackboneImpl {
    ToyBackboneImpl();
    std::vector<torch::Tensor> stages(const torch::Tensor& x, int up_to) override;

    torch::nn::Conv2d stem{nullptr};
    std::vector<torch::nn::Conv2d> downs;
};

/// torchvision-style ResNet-50 trunk (stride on the 3x3 conv). Parameter names match
/// torchvision's state dict so exported weights load unchanged.
struct ResNet50BackboneImpl : BackboneImpl {
    ResNet50BackboneImpl();
    std::vector<torch::Tensor> stages(const torch::Tensor& x, int up_to) override;

    torch::nn::Conv2d conv1{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr};
    std::array<torch::nn::Sequential, 4> layers;
};

/// The modified ResNet-50 of the CLIP vision tower: three-conv stem, average-pool
/// downsampling inside bottlenecks. Attention pooling is omitted since only the
/// spatial stage outputs are used. Names follow CLIP's `visual.*` state dict.
struct ClipResNet50BackboneImpl : BackboneImpl {
    ClipResNet50BackboneImpl();
    std::vector<torch::Tensor> stages(const torch::Tensor& x, int up_to) override;

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
    std::array<torch::nn::Sequential, 4> layers;
};

std::shared_ptr<BackboneImpl> make_backbone(BackboneKind kind);

// ---------------------------------------------------------------------------
// Weight providers
// ---------------------------------------------------------------------------

/// Supplies weights to a freshly constructed backbone.
class WeightProvider {
public:
    virtual ~WeightProvider() = default;
    virtual void load(torch::nn::Module& module) const = 0;
    virtual std::string describe() const = 0;
};

/// Kaiming-normal weights, zero biases, unit BN scale, drawn from a seeded generator.
class SeededWeightProvider final : public WeightProvider {
public:
    explicit SeededWeightProvider(uint64_t seed) : seed_(seed) {}
    void load(torch::nn::Module& module) const override;
    std::string describe() const override;

private:
    uint64_t seed_;
};

/// Reads a libtorch archive (written by `torch::save` or by tools/export_backbone.py).
class ArchiveWeightProvider final : public WeightProvider {
public:
    explicit ArchiveWeightProvider(std::filesystem::path path) : path_(std::move(path)) {}
    void load(torch::nn::Module& module) const override;
    std::string describe() const override;

private:
    std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Extractor
// ---------------------------------------------------------------------------

/// Frozen semantic extractor phi. Read-only after construction; `extract` may be called
/// concurrently. The call counter and last-input record exist for instrumentation.
class SemanticExtractor {
public:
    SemanticExtractor(ExtractorSpec spec, const WeightProvider& weights);

    const ExtractorSpec& spec() const { return spec_; }
    const std::string& source_id() const { return source_id_; }
    BackboneImpl& backbone() const { return *backbone_; }

    /// phi(image) at the spec's layer.
    SemanticMap extract(const ImageTensor& image) const;
    /// phi(image) with an explicit spec; the spec's backbone kind must match.
    SemanticMap extract(const ImageTensor& image, const ExtractorSpec& spec) const;

    /// Stage activations with gradient flowing to `image` (never to the weights).
    /// Used as perceptual-loss taps.
    std::vector<torch::Tensor> taps(const ImageTensor& image, int up_to) const;

    std::vector<torch::Tensor> parameters() const { return backbone_->parameters(); }

    int64_t calls() const { return calls_.load(); }
    /// The most recent tensor passed to `extract` (shallow handle).
    torch::Tensor last_input() const;

private:
    ExtractorSpec spec_;
    std::string source_id_;
    std::shared_ptr<BackboneImpl> backbone_;
    mutable std::atomic<int64_t> calls_{0};
    mutable std::mutex last_mutex_;
    mutable torch::Tensor last_input_;
};

/// A deterministic toy extractor for desk-scale runs: toy backbone, identity
/// normalization, seeded weights, zero biases.
std::shared_ptr<SemanticExtractor> make_toy_extractor(uint64_t seed, int layer_index = 3);

/// Builds the extractor described by a spec; `weights_path` empty means seeded random
/// weights (only sensible for desk-scale experiments).
std::shared_ptr<SemanticExtractor> make_extractor(const ExtractorSpec& spec,
                                                  const std::filesystem::path& weights_path,
                                                  uint64_t seed);

} // namespace sedsr
