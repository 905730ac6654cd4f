#pragma once

#include <torch/torch.h>

namespace sedsr {

/// Conv2d whose weight is divided by an estimate of its largest singular value
/// (the weight viewed as out x in*kh*kw). The estimate is refreshed by power
/// iteration on every training-mode forward; eval-mode forwards reuse it.
struct SNConv2dImpl : torch::nn::Module {
    explicit SNConv2dImpl(const torch::nn::Conv2dOptions& options, int power_iterations = 1);

    torch::Tensor forward(const torch::Tensor& x);

    /// Runs `n` power-iteration steps, updating the u/v estimates.
    void power_iterate(int n);
    /// weight_orig / sigma with the current estimates (differentiable in weight_orig).
    torch::Tensor normalized_weight() const;
    /// Current estimate of the top singular value of weight_orig.
    torch::Tensor sigma() const;

    torch::Tensor weight_orig;
    torch::Tensor bias;
    torch::Tensor u;
    torch::Tensor v;

private:
    torch::nn::Conv2dOptions options_;
    int power_iterations_;
};
TORCH_MODULE(SNConv2d);

} // namespace sedsr
