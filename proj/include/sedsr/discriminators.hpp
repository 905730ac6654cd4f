#pragma once

#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sedsr/fusion.hpp"
#include "sedsr/spectral_norm.hpp"
#include "sedsr/types.hpp"

namespace sedsr {

enum class DiscriminatorFamily { patch_sed, unet_sed, vgg_sed, patch_vanilla, unet_vanilla, vgg_vanilla };

DiscriminatorFamily parse_discriminator_family(const std::string& s);
std::string to_string(DiscriminatorFamily family);
bool is_semantic(DiscriminatorFamily family);
Granularity granularity_of(DiscriminatorFamily family);

struct DiscriminatorSpec {
    DiscriminatorFamily family = DiscriminatorFamily::patch_sed;
    int64_t base_channels = 64;
    /// Shared fusion settings. image/out widths are set per stage; embed_dim 0 means
    /// "stage width".
    SefbOptions sefb{};
    FusionMode fusion_mode = FusionMode::sefb;
    /// U-Net families: spectral norm on every conv except the first and the last.
    bool spectral_norm = true;
    /// U-Net families: how many encoder stages carry a fusion block (0..3).
    int sefb_stages = 2;
    /// VGG families: the only accepted input side.
    int64_t image_size = 256;

    void validate() const;
};

/// Base class of all discriminators. `forward` validates the conditioning contract,
/// runs the network, and returns raw logits (no output nonlinearity).
struct DiscriminatorImpl : torch::nn::Module {
    explicit DiscriminatorImpl(DiscriminatorSpec spec);

    DiscriminatorOutput forward(const ImageTensor& image, const torch::Tensor& semantics);
    DiscriminatorOutput forward(const ImageTensor& image, const SemanticMap& semantics) {
        return forward(image, semantics.data);
    }
    /// Vanilla families only.
    DiscriminatorOutput forward(const ImageTensor& image) { return forward(image, torch::Tensor()); }

    const DiscriminatorSpec& spec() const { return spec_; }
    Granularity granularity() const { return granularity_of(spec_.family); }

    /// Activation names this network can expose to `capture`.
    virtual std::vector<std::string> tap_names() const = 0;
    /// Arms a forward hook on the named activation (ConfigError if unknown); empty disarms.
    void set_tap(const std::string& name);
    /// Activation stored by the last forward for the armed tap.
    const torch::Tensor& captured() const { return captured_; }

    /// Fusion blocks in forward order (empty for vanilla families).
    const std::vector<std::shared_ptr<FusionBlockImpl>>& fusion_blocks() const { return fusion_; }

    /// When on, every forward appends the storage address of its semantic input.
    void probe_semantics(bool on) { probe_ = on; }
    const std::vector<const void*>& semantic_inputs() const { return semantic_inputs_; }
    void clear_probe() { semantic_inputs_.clear(); }

protected:
    virtual torch::Tensor logits(const torch::Tensor& image, const torch::Tensor& semantics) = 0;
    virtual void check_input(const torch::Tensor& image) const = 0;

    void capture(const char* name, const torch::Tensor& t);
    /// Either a fusion block (sed) or a plain block of the same width (vanilla).
    torch::Tensor stage_block(std::size_t index, const torch::Tensor& h, const torch::Tensor& semantics);
    std::shared_ptr<FusionBlockImpl> add_fusion(const std::string& name, int64_t channels);

    DiscriminatorSpec spec_;
    std::vector<std::shared_ptr<FusionBlockImpl>> fusion_;
    std::vector<torch::nn::Sequential> plain_;

private:
    std::string tap_;
    torch::Tensor captured_;
    bool probe_ = false;
    std::vector<const void*> semantic_inputs_;
};

/// PatchGAN-style: stem conv, then three (stride-2 conv -> block) stages, a 3x3 head
/// conv and a 1x1 logit conv. Output B x 1 x H/8 x W/8.
struct PatchDiscriminatorImpl : DiscriminatorImpl {
    explicit PatchDiscriminatorImpl(DiscriminatorSpec spec);
    std::vector<std::string> tap_names() const override;

    torch::nn::Conv2d stem{nullptr};
    std::vector<torch::nn::Conv2d> downs;
    torch::nn::Conv2d head{nullptr};
    torch::nn::Conv2d out{nullptr};

protected:
    torch::Tensor logits(const torch::Tensor& image, const torch::Tensor& semantics) override;
    void check_input(const torch::Tensor& image) const override;
};

/// U-Net discriminator with skip connections; the first `sefb_stages` encoder stages
/// end in a block. Output B x 1 x H x W.
struct UNetDiscriminatorImpl : DiscriminatorImpl {
    explicit UNetDiscriminatorImpl(DiscriminatorSpec spec);
    std::vector<std::string> tap_names() const override;

    torch::nn::Conv2d conv0{nullptr};
    std::vector<torch::nn::AnyModule> encoder;  // conv1..conv3 (stride 2)
    std::vector<torch::nn::AnyModule> decoder;  // conv4..conv8
    torch::nn::Conv2d conv9{nullptr};

protected:
    torch::Tensor logits(const torch::Tensor& image, const torch::Tensor& semantics) override;
    void check_input(const torch::Tensor& image) const override;
};

/// VGG-style image discriminator: five (3x3 conv, 4x4/s2 conv) stages with BN, blocks
/// after the first two stages, global average pooling and a two-layer head.
/// Output B x 1.
struct VggDiscriminatorImpl : DiscriminatorImpl {
    explicit VggDiscriminatorImpl(DiscriminatorSpec spec);
    std::vector<std::string> tap_names() const override;

    struct Stage {
        torch::nn::Conv2d conv_a{nullptr};
        torch::nn::BatchNorm2d bn_a{nullptr};
        torch::nn::Conv2d conv_b{nullptr};
        torch::nn::BatchNorm2d bn_b{nullptr};
    };
    std::vector<Stage> stages;
    torch::nn::Linear fc1{nullptr};
    torch::nn::Linear fc2{nullptr};

protected:
    torch::Tensor logits(const torch::Tensor& image, const torch::Tensor& semantics) override;
    void check_input(const torch::Tensor& image) const override;
};

std::shared_ptr<DiscriminatorImpl> make_discriminator(const DiscriminatorSpec& spec);

int64_t count_parameters(const torch::nn::Module& module);

} // namespace sedsr
