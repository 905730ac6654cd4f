#pragma once

#include <torch/torch.h>

#include "sedsr/types.hpp"

namespace sedsr {

/// Multi-head scaled dot-product attention.
///
/// q is B x Nq x d, k and v are B x Nkv x d. Each of the `num_heads` heads works on a
/// contiguous d/num_heads slice of the embedding; per head the output row is
/// softmax(q k^T / sqrt(d_k)) v, and head outputs are concatenated back to d.
/// Queries are processed in chunks so the Nq x Nkv score matrix never has to be
/// materialized in full for large maps. Low-precision inputs are computed in float32.
torch::Tensor multi_head_attention(const torch::Tensor& q, const torch::Tensor& k,
                                   const torch::Tensor& v, int64_t num_heads);

/// The softmax weights, B x heads x Nq x Nkv. Intended for inspection on small inputs.
torch::Tensor attention_weights(const torch::Tensor& q, const torch::Tensor& k, int64_t num_heads);

/// B x C x H x W -> B x (H*W) x C.
torch::Tensor tokenize(const torch::Tensor& map);
/// B x (H*W) x C -> B x C x H x W.
torch::Tensor untokenize(const torch::Tensor& tokens, int64_t h, int64_t w);

/// Bilinear resampling (half-pixel centers, i.e. align_corners = false) to h x w.
/// Returns the input untouched when the size already matches.
torch::Tensor align_semantics(const torch::Tensor& map, int64_t h, int64_t w);
SemanticMap align_semantics(const SemanticMap& map, int64_t h, int64_t w);

} // namespace sedsr
