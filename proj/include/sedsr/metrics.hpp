#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace sedsr {

/// How images are compared. The default is the classical SR convention: luma of the
/// BT.601 studio-swing conversion, `crop` pixels removed from every border.
struct MetricConvention {
    bool y_channel = true;
    int crop = 4;
    double psnr_cap = 100.0;

    std::string describe() const;
};

/// Converts 3 x H x W RGB in [0, 1] to 1 x H x W luma in [16/255, 235/255].
torch::Tensor rgb_to_y(const torch::Tensor& rgb);

/// PSNR in dB for one image pair (C x H x W or 1 x C x H x W), peak 1.
double psnr(const torch::Tensor& a, const torch::Tensor& b, const MetricConvention& conv = {});

/// Mean SSIM over the valid region, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1. Multi-channel inputs (when y_channel is off) average
/// the per-channel values.
double ssim(const torch::Tensor& a, const torch::Tensor& b, const MetricConvention& conv = {});

/// Converted and cropped planes in double, as compared by psnr/ssim.
std::vector<torch::Tensor> metric_planes(const torch::Tensor& image, const MetricConvention& conv);

} // namespace sedsr
