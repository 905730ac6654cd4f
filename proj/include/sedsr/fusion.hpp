#pragma once

#include <memory>
#include <string>

#include "sedsr/sefb.hpp"

namespace sedsr {

enum class FusionMode { sefb, concat, channel_attention, spatial_attention };

/// Config spelling: sefb | concat | channel_attention | spatial_attention.
FusionMode parse_fusion_mode(const std::string& s);
std::string to_string(FusionMode mode);

/// Align semantics, concatenate with the features along channels, 1x1 conv.
struct ConcatFusionImpl : FusionBlockImpl {
    explicit ConcatFusionImpl(const SefbOptions& options);
    torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& semantics) override;
    int64_t out_channels() const override { return options_.out_channels; }
    std::string kind() const override { return "concat"; }

    torch::nn::Conv2d fuse{nullptr};

private:
    SefbOptions options_;
};

/// Squeeze-excite gate from globally pooled semantics:
///     gate = sigmoid(fc2(relu(fc1(mean_hw(S)))))  (B x C_f)
///     out  = Conv1x1(f * gate)
struct ChannelAttentionFusionImpl : FusionBlockImpl {
    explicit ChannelAttentionFusionImpl(const SefbOptions& options);
    torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& semantics) override;
    int64_t out_channels() const override { return options_.out_channels; }
    std::string kind() const override { return "channel_attention"; }

    /// B x C_f x 1 x 1
    torch::Tensor gate(const torch::Tensor& semantics);

    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
    torch::nn::Conv2d proj{nullptr};

private:
    SefbOptions options_;
};

/// Per-pixel gate from aligned semantics:
///     gate = sigmoid(Conv1x1(align(S)))  (B x 1 x H x W, in [0, 1])
///     out  = Conv3x3(f * gate)
struct SpatialAttentionFusionImpl : FusionBlockImpl {
    explicit SpatialAttentionFusionImpl(const SefbOptions& options);
    torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& semantics) override;
    int64_t out_channels() const override { return options_.out_channels; }
    std::string kind() const override { return "spatial_attention"; }

    torch::Tensor gate(const torch::Tensor& semantics, int64_t h, int64_t w);
    /// f * gate, the input of the output conv.
    torch::Tensor gated(const torch::Tensor& features, const torch::Tensor& semantics);

    torch::nn::Conv2d gate_conv{nullptr};
    torch::nn::Conv2d out{nullptr};

private:
    SefbOptions options_;
};

/// Builds the block for `mode`. All modes honour the same options and shape contract.
std::shared_ptr<FusionBlockImpl> make_fusion_block(FusionMode mode, const SefbOptions& options);

/// Mode-dispatched fusion on a semantic map.
torch::Tensor fuse_variant(FusionBlockImpl& block, const FeatureMap& f, const SemanticMap& s);

} // namespace sedsr
