#include "sedsr/fusion.hpp"

#include "sedsr/attention.hpp"

namespace sedsr {
namespace nn = torch::nn;

FusionMode parse_fusion_mode(const std::string& s) {
    if (s == "sefb") return FusionMode::sefb;
    if (s == "concat") return FusionMode::concat;
    if (s == "channel_attention") return FusionMode::channel_attention;
    if (s == "spatial_attention") return FusionMode::spatial_attention;
    throw ConfigError("sefb.fusion_mode must be one of sefb, concat, channel_attention, "
                      "spatial_attention (got `" + s + "`)");
}

std::string to_string(FusionMode mode) {
    switch (mode) {
        case FusionMode::sefb: return "sefb";
        case FusionMode::concat: return "concat";
        case FusionMode::channel_attention: return "channel_attention";
        case FusionMode::spatial_attention: return "spatial_attention";
    }
    return "sefb";
}

namespace {

void check_inputs(const SefbOptions& o, const torch::Tensor& f, const torch::Tensor& s) {
    detail::require_rank(f, 4, "fusion features");
    detail::require_rank(s, 4, "fusion semantics");
    if (f.size(1) != o.image_channels) throw ContractError("fusion: feature channel mismatch");
    if (s.size(1) != o.semantic_channels) throw ContractError("fusion: semantic channel mismatch");
    if (f.size(0) != s.size(0)) throw ContractError("fusion: batch sizes differ");
}

} // namespace

ConcatFusionImpl::ConcatFusionImpl(const SefbOptions& options) : options_(options.resolved()) {
    fuse = register_module(
        "fuse", nn::Conv2d(nn::Conv2dOptions(options_.image_channels + options_.semantic_channels,
                                             options_.out_channels, 1)));
}

torch::Tensor ConcatFusionImpl::forward(const torch::Tensor& f, const torch::Tensor& s) {
    check_inputs(options_, f, s);
    return fuse(torch::cat({f, align_semantics(s, f.size(2), f.size(3))}, 1));
}

ChannelAttentionFusionImpl::ChannelAttentionFusionImpl(const SefbOptions& options)
    : options_(options.resolved()) {
    const int64_t hidden = std::max<int64_t>(options_.image_channels / 4, 4);
    fc1 = register_module("fc1", nn::Linear(options_.semantic_channels, hidden));
    fc2 = register_module("fc2", nn::Linear(hidden, options_.image_channels));
    proj = register_module("proj", nn::Conv2d(nn::Conv2dOptions(options_.image_channels,
                                                                options_.out_channels, 1)));
}

torch::Tensor ChannelAttentionFusionImpl::gate(const torch::Tensor& s) {
    auto pooled = s.mean({2, 3});
    auto g = torch::sigmoid(fc2(torch::relu(fc1(pooled))));
    return g.unsqueeze(-1).unsqueeze(-1);
}

torch::Tensor ChannelAttentionFusionImpl::forward(const torch::Tensor& f, const torch::Tensor& s) {
    check_inputs(options_, f, s);
    return proj(f * gate(s));
}

SpatialAttentionFusionImpl::SpatialAttentionFusionImpl(const SefbOptions& options)
    : options_(options.resolved()) {
    gate_conv = register_module("gate_conv", nn::Conv2d(nn::Conv2dOptions(options_.semantic_channels, 1, 1)));
    out = register_module("out", nn::Conv2d(nn::Conv2dOptions(options_.image_channels,
                                                              options_.out_channels, 3).padding(1)));
}

torch::Tensor SpatialAttentionFusionImpl::gate(const torch::Tensor& s, int64_t h, int64_t w) {
    return torch::sigmoid(gate_conv(align_semantics(s, h, w)));
}

torch::Tensor SpatialAttentionFusionImpl::gated(const torch::Tensor& f, const torch::Tensor& s) {
    check_inputs(options_, f, s);
    return f * gate(s, f.size(2), f.size(3));
}

torch::Tensor SpatialAttentionFusionImpl::forward(const torch::Tensor& f, const torch::Tensor& s) {
    return out(gated(f, s));
}

std::shared_ptr<FusionBlockImpl> make_fusion_block(FusionMode mode, const SefbOptions& options) {
    switch (mode) {
        case FusionMode::sefb: return std::make_shared<SefbImpl>(options);
        case FusionMode::concat: return std::make_shared<ConcatFusionImpl>(options);
        case FusionMode::channel_attention: return std::make_shared<ChannelAttentionFusionImpl>(options);
        case FusionMode::spatial_attention: return std::make_shared<SpatialAttentionFusionImpl>(options);
    }
    throw ConfigError("unknown fusion mode");
}

torch::Tensor fuse_variant(FusionBlockImpl& block, const FeatureMap& f, const SemanticMap& s) {
    return block.forward(f, s.data);
}

} // namespace sedsr
