#include "sedsr/discriminators.hpp"

#include <algorithm>

namespace sedsr {
namespace nn = torch::nn;
namespace F = torch::nn::functional;

std::string to_string(Granularity g) {
    switch (g) {
        case Granularity::patch: return "patch";
        case Granularity::pixel: return "pixel";
        case Granularity::image: return "image";
    }
    return "patch";
}

DiscriminatorFamily parse_discriminator_family(const std::string& s) {
    if (s == "patch_sed") return DiscriminatorFamily::patch_sed;
    if (s == "unet_sed") return DiscriminatorFamily::unet_sed;
    if (s == "vgg_sed") return DiscriminatorFamily::vgg_sed;
    if (s == "patch_vanilla") return DiscriminatorFamily::patch_vanilla;
    if (s == "unet_vanilla") return DiscriminatorFamily::unet_vanilla;
    if (s == "vgg_vanilla") return DiscriminatorFamily::vgg_vanilla;
    throw ConfigError("disc.family must be one of patch_sed, unet_sed, vgg_sed, patch_vanilla, "
                      "unet_vanilla, vgg_vanilla (got `" + s + "`)");
}

std::string to_string(DiscriminatorFamily family) {
    switch (family) {
        case DiscriminatorFamily::patch_sed: return "patch_sed";
        case DiscriminatorFamily::unet_sed: return "unet_sed";
        case DiscriminatorFamily::vgg_sed: return "vgg_sed";
        case DiscriminatorFamily::patch_vanilla: return "patch_vanilla";
        case DiscriminatorFamily::unet_vanilla: return "unet_vanilla";
        case DiscriminatorFamily::vgg_vanilla: return "vgg_vanilla";
    }
    return "patch_sed";
}

bool is_semantic(DiscriminatorFamily family) {
    return family == DiscriminatorFamily::patch_sed || family == DiscriminatorFamily::unet_sed ||
           family == DiscriminatorFamily::vgg_sed;
}

Granularity granularity_of(DiscriminatorFamily family) {
    switch (family) {
        case DiscriminatorFamily::patch_sed:
        case DiscriminatorFamily::patch_vanilla: return Granularity::patch;
        case DiscriminatorFamily::unet_sed:
        case DiscriminatorFamily::unet_vanilla: return Granularity::pixel;
        case DiscriminatorFamily::vgg_sed:
        case DiscriminatorFamily::vgg_vanilla: return Granularity::image;
    }
    return Granularity::patch;
}

void DiscriminatorSpec::validate() const {
    if (base_channels <= 0) throw InvalidSpecError("disc.base_channels must be positive");
    if (sefb_stages < 0 || sefb_stages > 3) throw InvalidSpecError("disc.sefb_stages must be in 0..3");
    if (image_size <= 0 || image_size % 32 != 0)
        throw InvalidSpecError("disc.image_size must be a positive multiple of 32");
    if (is_semantic(family) && sefb.semantic_channels <= 0)
        throw InvalidSpecError("semantic discriminator needs the semantic channel count");
}

int64_t count_parameters(const torch::nn::Module& module) {
    int64_t n = 0;
    for (const auto& p : module.parameters()) n += p.numel();
    return n;
}

namespace {

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad, bool bias = true) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).bias(bias));
}

/// Conv that is spectrally normalized when requested.
nn::AnyModule maybe_sn(bool sn, int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad,
                       bool bias = true) {
    auto opts = nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).bias(bias);
    if (sn) return nn::AnyModule(SNConv2d(opts));
    return nn::AnyModule(nn::Conv2d(opts));
}

} // namespace

// ---------------------------------------------------------------------------
// Base
// ---------------------------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

DiscriminatorOutput DiscriminatorImpl::forward(const ImageTensor& image, const torch::Tensor& semantics) {
    detail::require_rank(image, 4, "discriminator input");
    if (image.size(1) != 3) throw ContractError("discriminator expects 3-channel images");
    if (is_semantic(spec_.family)) {
        if (!semantics.defined())
            throw ContractError(to_string(spec_.family) + " requires a semantic map");
        detail::require_rank(semantics, 4, "semantic map");
        if (semantics.size(0) != image.size(0))
            throw ContractError("semantic map batch does not match image batch");
    } else if (semantics.defined()) {
        throw ContractError(to_string(spec_.family) + " takes no semantic map");
    }
    check_input(image);
    if (probe_) semantic_inputs_.push_back(semantics.defined() ? semantics.data_ptr() : nullptr);
    captured_ = torch::Tensor();
    return DiscriminatorOutput{logits(image, semantics), granularity()};
}

void DiscriminatorImpl::set_tap(const std::string& name) {
    if (!name.empty()) {
        auto names = tap_names();
        if (std::find(names.begin(), names.end(), name) == names.end()) {
            std::string known;
            for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
            throw ConfigError("unknown tap `" + name + "` for " + to_string(spec_.family) +
                              " (available: " + known + ")");
        }
    }
    tap_ = name;
}

void DiscriminatorImpl::capture(const char* name, const torch::Tensor& t) {
    if (!tap_.empty() && tap_ == name) captured_ = t;
}

std::shared_ptr<FusionBlockImpl> DiscriminatorImpl::add_fusion(const std::string& name, int64_t channels) {
    SefbOptions o = spec_.sefb;
    o.image_channels = channels;
    o.out_channels = channels;
    o.image_conv_channels = channels;
    if (o.embed_dim <= 0) o.embed_dim = channels;
    auto block = make_fusion_block(spec_.fusion_mode, o);
    register_module(name, block);
    fusion_.push_back(block);
    return block;
}

torch::Tensor DiscriminatorImpl::stage_block(std::size_t index, const torch::Tensor& h,
                                             const torch::Tensor& semantics) {
    if (is_semantic(spec_.family)) return fusion_.at(index)->forward(h, semantics);
    return plain_.at(index)->forward(h);
}

// ---------------------------------------------------------------------------
// Patch
// ---------------------------------------------------------------------------

PatchDiscriminatorImpl::PatchDiscriminatorImpl(DiscriminatorSpec spec) : DiscriminatorImpl(std::move(spec)) {
    const int64_t c = spec_.base_channels;
    const std::array<int64_t, 4> widths{c, 2 * c, 4 * c, 4 * c};
    stem = register_module("stem", conv(3, widths[0], 3, 1, 1));
    for (int i = 0; i < 3; ++i) {
        downs.push_back(register_module("down" + std::to_string(i + 1),
                                        conv(widths[i], widths[i + 1], 4, 2, 1)));
        const auto name = "block" + std::to_string(i + 1);
        if (is_semantic(spec_.family)) {
            add_fusion(name, widths[i + 1]);
        } else {
            nn::Sequential plain(conv(widths[i + 1], widths[i + 1], 3, 1, 1, /*bias=*/false),
                                 nn::BatchNorm2d(widths[i + 1]));
            register_module(name, plain);
            plain_.emplace_back(plain);
        }
    }
    head = register_module("head", conv(widths[3], widths[3], 3, 1, 1));
    out = register_module("out", conv(widths[3], 1, 1, 1, 0));
}

std::vector<std::string> PatchDiscriminatorImpl::tap_names() const {
    if (is_semantic(spec_.family)) return {"sefb1", "sefb2", "sefb3"};
    return {"bn1", "block1", "block2", "block3"};
}

void PatchDiscriminatorImpl::check_input(const torch::Tensor& image) const {
    if (image.size(2) % 8 != 0 || image.size(3) % 8 != 0)
        throw ShapeError("patch discriminator: sides must be multiples of 8, got " + detail::shape_str(image));
}

torch::Tensor PatchDiscriminatorImpl::logits(const torch::Tensor& image, const torch::Tensor& semantics) {
    const bool sed = is_semantic(spec_.family);
    auto h = lrelu(stem(image));
    for (std::size_t i = 0; i < downs.size(); ++i) {
        h = lrelu(downs[i](h));
        h = stage_block(i, h, semantics);
        const auto idx = std::to_string(i + 1);
        capture(sed ? ("sefb" + idx).c_str() : ("block" + idx).c_str(), h);
        if (!sed && i == 0) capture("bn1", h);
        h = lrelu(h);
    }
    return out(lrelu(head(h)));
}

// ---------------------------------------------------------------------------
// U-Net
// ---------------------------------------------------------------------------

UNetDiscriminatorImpl::UNetDiscriminatorImpl(DiscriminatorSpec spec) : DiscriminatorImpl(std::move(spec)) {
    const int64_t c = spec_.base_channels;
    const bool sn = spec_.spectral_norm;
    conv0 = register_module("conv0", conv(3, c, 3, 1, 1));
    const std::array<int64_t, 4> widths{c, 2 * c, 4 * c, 8 * c};
    for (int i = 0; i < 3; ++i) {
        encoder.push_back(maybe_sn(sn, widths[i], widths[i + 1], 4, 2, 1, false));
        register_module("conv" + std::to_string(i + 1), encoder.back().ptr());
    }
    for (int i = 0; i < spec_.sefb_stages; ++i) {
        const auto name = "block" + std::to_string(i + 1);
        if (is_semantic(spec_.family)) {
            add_fusion(name, widths[i + 1]);
        } else {
            nn::Sequential plain;
            plain->push_back(maybe_sn(sn, widths[i + 1], widths[i + 1], 3, 1, 1));
            plain_.push_back(register_module(name, plain));
        }
    }
    // conv4..conv6 go back up, conv7/conv8 refine at full resolution.
    const std::array<std::pair<int64_t, int64_t>, 5> dec{{{8 * c, 4 * c}, {4 * c, 2 * c}, {2 * c, c}, {c, c}, {c, c}}};
    for (std::size_t i = 0; i < dec.size(); ++i) {
        decoder.push_back(maybe_sn(sn, dec[i].first, dec[i].second, 3, 1, 1, false));
        register_module("conv" + std::to_string(i + 4), decoder.back().ptr());
    }
    conv9 = register_module("conv9", conv(c, 1, 3, 1, 1));
}

std::vector<std::string> UNetDiscriminatorImpl::tap_names() const {
    std::vector<std::string> names;
    for (int i = 0; i < spec_.sefb_stages; ++i)
        names.push_back((is_semantic(spec_.family) ? "sefb" : "block") + std::to_string(i + 1));
    names.push_back("conv0");
    return names;
}

void UNetDiscriminatorImpl::check_input(const torch::Tensor& image) const {
    if (image.size(2) % 16 != 0 || image.size(3) % 16 != 0)
        throw ShapeError("U-Net discriminator: sides must be multiples of 16, got " + detail::shape_str(image));
}

torch::Tensor UNetDiscriminatorImpl::logits(const torch::Tensor& image, const torch::Tensor& semantics) {
    const bool sed = is_semantic(spec_.family);
    std::array<torch::Tensor, 4> skips;
    skips[0] = lrelu(conv0(image));
    capture("conv0", skips[0]);
    for (int i = 0; i < 3; ++i) {
        auto h = lrelu(encoder[i].forward(skips[i]));
        if (i < spec_.sefb_stages) {
            h = stage_block(i, h, semantics);
            capture(((sed ? "sefb" : "block") + std::to_string(i + 1)).c_str(), h);
            h = lrelu(h);
        }
        skips[i + 1] = h;
    }
    auto up = [](const torch::Tensor& t) {
        return F::interpolate(t, F::InterpolateFuncOptions()
                                     .scale_factor(std::vector<double>{2.0, 2.0})
                                     .mode(torch::kBilinear)
                                     .align_corners(false));
    };
    auto h = skips[3];
    for (int i = 0; i < 3; ++i) h = lrelu(decoder[i].forward(up(h))) + skips[2 - i];
    h = lrelu(decoder[3].forward(h));
    h = lrelu(decoder[4].forward(h));
    return conv9(h);
}

// ---------------------------------------------------------------------------
// VGG
// ---------------------------------------------------------------------------

VggDiscriminatorImpl::VggDiscriminatorImpl(DiscriminatorSpec spec) : DiscriminatorImpl(std::move(spec)) {
    const int64_t c = spec_.base_channels;
    const std::array<int64_t, 6> widths{3, c, 2 * c, 4 * c, 8 * c, 8 * c};
    for (int i = 0; i < 5; ++i) {
        Stage s;
        const auto idx = std::to_string(i);
        s.conv_a = register_module("conv" + idx + "_0", conv(widths[i], widths[i + 1], 3, 1, 1, i == 0));
        if (i > 0) s.bn_a = register_module("bn" + idx + "_0", nn::BatchNorm2d(widths[i + 1]));
        s.conv_b = register_module("conv" + idx + "_1", conv(widths[i + 1], widths[i + 1], 4, 2, 1, false));
        s.bn_b = register_module("bn" + idx + "_1", nn::BatchNorm2d(widths[i + 1]));
        stages.push_back(s);
    }
    for (int i = 0; i < 2; ++i) {
        const auto name = "block" + std::to_string(i + 1);
        if (is_semantic(spec_.family)) {
            add_fusion(name, widths[i + 1]);
        } else {
            nn::Sequential plain(conv(widths[i + 1], widths[i + 1], 3, 1, 1, false), nn::BatchNorm2d(widths[i + 1]));
            register_module(name, plain);
            plain_.emplace_back(plain);
        }
    }
    fc1 = register_module("fc1", nn::Linear(widths[5], 100));
    fc2 = register_module("fc2", nn::Linear(100, 1));
}

std::vector<std::string> VggDiscriminatorImpl::tap_names() const {
    if (is_semantic(spec_.family)) return {"bn1", "sefb1", "sefb2"};
    return {"bn1", "block1", "block2"};
}

void VggDiscriminatorImpl::check_input(const torch::Tensor& image) const {
    if (image.size(2) != spec_.image_size || image.size(3) != spec_.image_size)
        throw ShapeError("VGG discriminator expects " + std::to_string(spec_.image_size) + "x" +
                         std::to_string(spec_.image_size) + " inputs, got " + detail::shape_str(image));
}

torch::Tensor VggDiscriminatorImpl::logits(const torch::Tensor& image, const torch::Tensor& semantics) {
    const bool sed = is_semantic(spec_.family);
    auto h = image;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        auto& s = stages[i];
        h = s.conv_a(h);
        if (s.bn_a) h = s.bn_a(h);
        h = lrelu(h);
        h = s.bn_b(s.conv_b(h));
        if (i == 0) capture("bn1", h);
        h = lrelu(h);
        if (i < 2) {
            h = stage_block(i, h, semantics);
            capture(((sed ? "sefb" : "block") + std::to_string(i + 1)).c_str(), h);
            h = lrelu(h);
        }
    }
    auto pooled = h.mean({2, 3});
    return fc2(lrelu(fc1(pooled)));
}

std::shared_ptr<DiscriminatorImpl> make_discriminator(const DiscriminatorSpec& spec) {
    switch (spec.family) {
        case DiscriminatorFamily::patch_sed:
        case DiscriminatorFamily::patch_vanilla: return std::make_shared<PatchDiscriminatorImpl>(spec);
        case DiscriminatorFamily::unet_sed:
        case DiscriminatorFamily::unet_vanilla: return std::make_shared<UNetDiscriminatorImpl>(spec);
        case DiscriminatorFamily::vgg_sed:
        case DiscriminatorFamily::vgg_vanilla: return std::make_shared<VggDiscriminatorImpl>(spec);
    }
    throw InvalidSpecError("unknown discriminator family");
}

} // namespace sedsr
