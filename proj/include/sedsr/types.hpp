#pragma once

#include <string>

#include <torch/torch.h>

#include "sedsr/errors.hpp"

namespace sedsr {

/// Batched RGB images, B x 3 x H x W, values nominally in [0, 1].
using ImageTensor = torch::Tensor;

/// Intermediate activations, B x C x H x W.
using FeatureMap = torch::Tensor;

/// Pixel-wise semantic features of a reference image, taken from one stage of a
/// frozen backbone. `data` is B x C x H/(4*2^(layer-1)) x W/(4*2^(layer-1)).
struct SemanticMap {
    torch::Tensor data;
    int layer_index = 3;
    std::string source_id;

    int64_t batch() const { return data.size(0); }
    int64_t channels() const { return data.size(1); }
    int64_t height() const { return data.size(2); }
    int64_t width() const { return data.size(3); }
};

enum class Granularity { patch, pixel, image };

std::string to_string(Granularity g);

/// Raw (pre-sigmoid) discriminator logits.
///   patch: B x 1 x H/8 x W/8
///   pixel: B x 1 x H x W
///   image: B x 1
struct DiscriminatorOutput {
    torch::Tensor logits;
    Granularity granularity = Granularity::patch;
};

namespace detail {

inline void require_rank(const torch::Tensor& t, int64_t rank, const char* what) {
    if (!t.defined() || t.dim() != rank)
        throw ContractError(std::string(what) + ": expected a rank-" + std::to_string(rank) +
                            " tensor");
}

inline std::string shape_str(const torch::Tensor& t) {
    std::string s = "(";
    for (int64_t i = 0; i < t.dim(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.size(i));
    }
    return s + ")";
}

} // namespace detail
} // namespace sedsr
