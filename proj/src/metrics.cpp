#include "sedsr/metrics.hpp"

#include <cmath>
#include <sstream>

#include "sedsr/types.hpp"

namespace sedsr {

std::string MetricConvention::describe() const {
    std::ostringstream os;
    os << (y_channel ? "Y (BT.601)" : "RGB") << ", crop " << crop << " px per border, psnr cap " << psnr_cap
       << " dB";
    return os.str();
}

torch::Tensor rgb_to_y(const torch::Tensor& rgb) {
    if (rgb.dim() != 3 || rgb.size(0) != 3) throw ContractError("rgb_to_y: expected 3 x H x W");
    auto x = rgb.to(torch::kDouble);
    return (16.0 + 65.481 * x[0] + 128.553 * x[1] + 24.966 * x[2]).unsqueeze(0) / 255.0;
}

namespace {

torch::Tensor squeeze_batch(const torch::Tensor& t, const char* what) {
    if (t.dim() == 4) {
        if (t.size(0) != 1) throw ContractError(std::string(what) + ": one image at a time");
        return t[0];
    }
    if (t.dim() != 3) throw ContractError(std::string(what) + ": expected C x H x W");
    return t;
}

void check_pair(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes())
        throw ContractError(std::string(what) + ": shape mismatch " + detail::shape_str(a) + " vs " +
                            detail::shape_str(b));
}

// Normalized 1-D Gaussian, 11 taps, sigma 1.5.
std::vector<double> gaussian_window() {
    std::vector<double> g(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5;
        g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
}

// Valid-region separable filtering of an H x W double plane.
std::vector<double> filter_valid(const std::vector<double>& p, int64_t h, int64_t w, const std::vector<double>& g) {
    const int64_t k = static_cast<int64_t>(g.size());
    const int64_t ow = w - k + 1, oh = h - k + 1;
    std::vector<double> rows(h * ow), out(oh * ow);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int64_t i = 0; i < k; ++i) s += g[i] * p[y * w + x + i];
            rows[y * ow + x] = s;
        }
    for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int64_t i = 0; i < k; ++i) s += g[i] * rows[(y + i) * ow + x];
            out[y * ow + x] = s;
        }
    return out;
}

double ssim_plane(const torch::Tensor& a, const torch::Tensor& b) {
    const int64_t h = a.size(0), w = a.size(1);
    if (h < 11 || w < 11) throw ShapeError("ssim: planes must be at least 11x11 after cropping");
    auto ac = a.contiguous(), bc = b.contiguous();
    const double* pa = ac.data_ptr<double>();
    const double* pb = bc.data_ptr<double>();
    const auto n = static_cast<std::size_t>(h * w);
    std::vector<double> x(pa, pa + n), y(pb, pb + n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto g = gaussian_window();
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g), sxy = filter_valid(xy, h, w, g);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cxy = sxy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

} // namespace

std::vector<torch::Tensor> metric_planes(const torch::Tensor& image, const MetricConvention& conv) {
    auto img = squeeze_batch(image, "metric").to(torch::kDouble);
    if (conv.y_channel) img = rgb_to_y(img);
    const int64_t c = conv.crop;
    if (c > 0) {
        if (img.size(1) <= 2 * c || img.size(2) <= 2 * c) throw ShapeError("metric: image smaller than the border crop");
        img = img.narrow(1, c, img.size(1) - 2 * c).narrow(2, c, img.size(2) - 2 * c);
    }
    std::vector<torch::Tensor> planes;
    for (int64_t i = 0; i < img.size(0); ++i) planes.push_back(img[i].contiguous());
    return planes;
}

double psnr(const torch::Tensor& a, const torch::Tensor& b, const MetricConvention& conv) {
    check_pair(a, b, "psnr");
    const auto pa = metric_planes(a, conv), pb = metric_planes(b, conv);
    double sq = 0.0;
    int64_t count = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        sq += (pa[i] - pb[i]).pow(2).sum().item<double>();
        count += pa[i].numel();
    }
    const double mse = sq / static_cast<double>(count);
    if (mse == 0.0) return conv.psnr_cap;
    return std::min(conv.psnr_cap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const torch::Tensor& a, const torch::Tensor& b, const MetricConvention& conv) {
    check_pair(a, b, "ssim");
    const auto pa = metric_planes(a, conv), pb = metric_planes(b, conv);
    double total = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) total += ssim_plane(pa[i], pb[i]);
    return total / static_cast<double>(pa.size());
}

} // namespace sedsr
