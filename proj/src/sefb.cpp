#include "sedsr/sefb.hpp"

#include "sedsr/attention.hpp"

namespace sedsr {
namespace nn = torch::nn;

torch::Tensor gelu_exact(const torch::Tensor& x) { return torch::gelu(x, "none"); }

int64_t SefbOptions::effective_groups() const {
    int64_t g = std::min(groupnorm_groups, semantic_channels);
    while (g > 1 && semantic_channels % g != 0) --g;
    return std::max<int64_t>(g, 1);
}

SefbOptions SefbOptions::resolved() const {
    SefbOptions o = *this;
    if (o.image_channels <= 0 || o.semantic_channels <= 0)
        throw InvalidSpecError("sefb: channel counts must be positive");
    if (o.embed_dim <= 0) o.embed_dim = o.image_channels;
    if (o.out_channels <= 0) o.out_channels = o.image_channels;
    if (o.image_conv_channels <= 0) o.image_conv_channels = o.out_channels;
    if (o.num_heads <= 0) throw InvalidSpecError("sefb: heads must be positive");
    if (o.embed_dim % o.num_heads != 0)
        throw InvalidSpecError("sefb: embed_dim " + std::to_string(o.embed_dim) +
                               " is not divisible by heads " + std::to_string(o.num_heads));
    if (o.groupnorm_groups <= 0) throw InvalidSpecError("sefb: groupnorm_groups must be positive");
    o.groupnorm_groups = o.effective_groups();
    return o;
}

SefbImpl::SefbImpl(const SefbOptions& options) : options_(options.resolved()) {
    const auto& o = options_;
    const int64_t d = o.embed_dim;
    sem_norm = register_module("sem_norm", nn::GroupNorm(nn::GroupNormOptions(o.groupnorm_groups, o.semantic_channels)));
    sem_ln = register_module("sem_ln", nn::LayerNorm(nn::LayerNormOptions({o.semantic_channels})));
    sa_qkv = register_module("sa_qkv", nn::Linear(o.semantic_channels, 3 * d));
    sa_out = register_module("sa_out", nn::Linear(d, d));
    query_ln = register_module("query_ln", nn::LayerNorm(nn::LayerNormOptions({d})));
    q_proj = register_module("q_proj", nn::Linear(d, d));
    k_proj = register_module("k_proj", nn::Conv2d(nn::Conv2dOptions(o.image_channels, d, 1)));
    v_proj = register_module("v_proj", nn::Conv2d(nn::Conv2dOptions(o.image_channels, d, 1)));
    out_ln = register_module("out_ln", nn::LayerNorm(nn::LayerNormOptions({d})));
    image_conv = register_module(
        "image_conv", nn::Conv2d(nn::Conv2dOptions(o.image_channels, o.image_conv_channels, 3).padding(1)));
    fuse_conv = register_module(
        "fuse_conv", nn::Conv2d(nn::Conv2dOptions(d + o.image_conv_channels, o.out_channels, 1)));
}

torch::Tensor SefbImpl::self_attention(const torch::Tensor& tokens) {
    auto qkv = sa_qkv(tokens).chunk(3, -1);
    return sa_out(multi_head_attention(qkv[0], qkv[1], qkv[2], options_.num_heads));
}

torch::Tensor SefbImpl::build_query(const torch::Tensor& aligned_semantics) {
    detail::require_rank(aligned_semantics, 4, "sefb semantics");
    if (aligned_semantics.size(1) != options_.semantic_channels)
        throw ContractError("sefb: semantic map has " + std::to_string(aligned_semantics.size(1)) +
                            " channels, block expects " + std::to_string(options_.semantic_channels));
    auto tokens = tokenize(sem_norm(aligned_semantics));
    return query_ln(self_attention(sem_ln(tokens)));
}

torch::Tensor SefbImpl::forward(const torch::Tensor& features, const torch::Tensor& semantics) {
    detail::require_rank(features, 4, "sefb features");
    if (features.size(1) != options_.image_channels)
        throw ContractError("sefb: feature map has " + std::to_string(features.size(1)) +
                            " channels, block expects " + std::to_string(options_.image_channels));
    detail::require_rank(semantics, 4, "sefb semantics");
    if (semantics.size(0) != features.size(0))
        throw ContractError("sefb: semantic and feature batch sizes differ");
    const int64_t h = features.size(2), w = features.size(3);

    auto q = q_proj(build_query(align_semantics(semantics, h, w)));
    if (record_query_) last_query_ = q.detach().clone();
    auto k = tokenize(k_proj(features));
    auto v = tokenize(v_proj(features));
    auto warped = multi_head_attention(q, k, v, options_.num_heads);
    auto sem_branch = untokenize(gelu_exact(out_ln(warped)), h, w);
    return fuse_conv(torch::cat({sem_branch, image_conv(features)}, 1));
}

} // namespace sedsr
