#pragma once

#include <optional>
#include <string>

#include <torch/torch.h>

#include "sedsr/types.hpp"

namespace sedsr {

/// Widths of a fusion block. Zero-valued optional widths resolve to the image width.
struct SefbOptions {
    int64_t image_channels = 64;     // C_f
    int64_t semantic_channels = 1024;  // C_s
    int64_t embed_dim = 0;           // d; 0 -> image_channels
    int64_t num_heads = 4;
    int64_t groupnorm_groups = 8;    // clamped to a divisor of C_s
    int64_t out_channels = 0;        // C_out; 0 -> image_channels
    int64_t image_conv_channels = 0; // width of the 3x3 image branch; 0 -> out_channels

    /// Fills defaulted widths and checks divisibility. Throws InvalidSpecError.
    SefbOptions resolved() const;
    /// Group count actually used for the semantic GroupNorm.
    int64_t effective_groups() const;
};

/// Common interface of the semantic fusion blocks (SeFB and the ablation variants).
/// `semantics` is the raw B x C_s x Hs x Ws map; blocks align it to the feature grid.
struct FusionBlockImpl : torch::nn::Module {
    virtual torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& semantics) = 0;
    virtual int64_t out_channels() const = 0;
    virtual std::string kind() const = 0;
};

/// Semantic-aware fusion block.
///
/// The semantics, aligned to the feature grid, go through
///     GroupNorm -> tokens -> LayerNorm -> self-attention -> LayerNorm
/// and a linear projection to become the query; the image features give keys and
/// values through 1x1 convs. The cross-attention result f' is passed through
/// LayerNorm and GELU, concatenated with a 3x3 conv of the features, and fused by
/// a 1x1 conv:
///     out = Conv1x1(Concat(GELU(LN(f')), Conv3x3(f)))
/// Output spatial size always equals the feature size.
struct SefbImpl : FusionBlockImpl {
    explicit SefbImpl(const SefbOptions& options);

    torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& semantics) override;
    int64_t out_channels() const override { return options_.out_channels; }
    std::string kind() const override { return "sefb"; }

    /// Semantic query path on an already-aligned map: LN(SA(LN(GN(S)))), B x N x d,
    /// before the cross-attention query projection.
    torch::Tensor build_query(const torch::Tensor& aligned_semantics);
    /// The self-attention sub-module on B x N x C_s tokens.
    torch::Tensor self_attention(const torch::Tensor& tokens);

    const SefbOptions& options() const { return options_; }

    /// When enabled, `forward` keeps the projected cross-attention query of its last call.
    void record_query(bool on) { record_query_ = on; }
    const torch::Tensor& last_query() const { return last_query_; }

    torch::nn::GroupNorm sem_norm{nullptr};
    torch::nn::LayerNorm sem_ln{nullptr};
    torch::nn::Linear sa_qkv{nullptr};
    torch::nn::Linear sa_out{nullptr};
    torch::nn::LayerNorm query_ln{nullptr};
    torch::nn::Linear q_proj{nullptr};
    torch::nn::Conv2d k_proj{nullptr};
    torch::nn::Conv2d v_proj{nullptr};
    torch::nn::LayerNorm out_ln{nullptr};
    torch::nn::Conv2d image_conv{nullptr};
    torch::nn::Conv2d fuse_conv{nullptr};

private:
    SefbOptions options_;
    bool record_query_ = false;
    torch::Tensor last_query_;
};
TORCH_MODULE(Sefb);

/// Exact (erf-based) GELU.
torch::Tensor gelu_exact(const torch::Tensor& x);

} // namespace sedsr
