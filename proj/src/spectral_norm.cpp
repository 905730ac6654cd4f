#include "sedsr/spectral_norm.hpp"

#include <cmath>

namespace sedsr {
namespace F = torch::nn::functional;

namespace {
constexpr double kEps = 1e-12;
constexpr int kMaxWarmup = 1000;
}

SNConv2dImpl::SNConv2dImpl(const torch::nn::Conv2dOptions& options, int power_iterations)
    : options_(options), power_iterations_(power_iterations) {
    // Borrow Conv2d's default initialization.
    torch::nn::Conv2d proto(options);
    weight_orig = register_parameter("weight_orig", proto->weight.detach().clone());
    if (options.bias()) bias = register_parameter("bias", proto->bias.detach().clone());
    const int64_t rows = weight_orig.size(0);
    const int64_t cols = weight_orig.numel() / rows;
    u = register_buffer("u", F::normalize(torch::randn({rows}), F::NormalizeFuncOptions().dim(0).eps(kEps)));
    v = register_buffer("v", F::normalize(torch::randn({cols}), F::NormalizeFuncOptions().dim(0).eps(kEps)));
    // Warm up until the estimate settles so the first forwards are already normalized.
    double prev = 0.0;
    for (int i = 0; i < kMaxWarmup; ++i) {
        power_iterate(1);
        const double cur = sigma().item<double>();
        if (i >= 15 && std::abs(cur - prev) <= 1e-7 * cur) break;
        prev = cur;
    }
}

void SNConv2dImpl::power_iterate(int n) {
    torch::NoGradGuard no_grad;
    auto w = weight_orig.reshape({weight_orig.size(0), -1});
    for (int i = 0; i < n; ++i) {
        v.copy_(F::normalize(torch::mv(w.t(), u), F::NormalizeFuncOptions().dim(0).eps(kEps)));
        u.copy_(F::normalize(torch::mv(w, v), F::NormalizeFuncOptions().dim(0).eps(kEps)));
    }
}

torch::Tensor SNConv2dImpl::sigma() const {
    auto w = weight_orig.reshape({weight_orig.size(0), -1});
    return torch::dot(u, torch::mv(w, v)).clamp_min(kEps);
}

torch::Tensor SNConv2dImpl::normalized_weight() const { return weight_orig / sigma(); }

torch::Tensor SNConv2dImpl::forward(const torch::Tensor& x) {
    if (is_training()) power_iterate(power_iterations_);
    return F::conv2d(x, normalized_weight(),
                     F::Conv2dFuncOptions()
                         .bias(bias)
                         .stride(options_.stride())
                         .padding(std::get<torch::ExpandingArray<2>>(options_.padding())));
}

} // namespace sedsr
