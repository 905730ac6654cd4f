#include "sedsr/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <thread>

#include "sedsr/image_io.hpp"

namespace sedsr {

// ---------------------------------------------------------------------------
// Bicubic
// ---------------------------------------------------------------------------

double cubic_kernel(double x) {
    const double a = -0.5;
    const double ax = std::abs(x);
    if (ax <= 1.0) return (a + 2.0) * ax * ax * ax - (a + 3.0) * ax * ax + 1.0;
    if (ax < 2.0) return a * ax * ax * ax - 5.0 * a * ax * ax + 8.0 * a * ax - 4.0 * a;
    return 0.0;
}

torch::Tensor bicubic_weight_matrix(int64_t in_size, int scale) {
    const int64_t out_size = in_size / scale;
    auto m = torch::zeros({out_size, in_size}, torch::kDouble);
    auto acc = m.accessor<double, 2>();
    const double support = 2.0 * scale;
    for (int64_t j = 0; j < out_size; ++j) {
        const double u = (static_cast<double>(j) + 0.5) * scale - 0.5;
        const auto first = static_cast<int64_t>(std::floor(u - support));
        const auto last = static_cast<int64_t>(std::ceil(u + support));
        std::vector<std::pair<int64_t, double>> taps;
        double sum = 0.0;
        for (int64_t i = first; i <= last; ++i) {
            const double w = cubic_kernel((static_cast<double>(i) - u) / scale);
            if (w == 0.0) continue;
            taps.emplace_back(std::clamp<int64_t>(i, 0, in_size - 1), w);
            sum += w;
        }
        for (auto [i, w] : taps) acc[j][i] += w / sum;
    }
    return m;
}

ImageTensor bicubic_downsample(const ImageTensor& hr, int scale) {
    if (scale < 1) throw ContractError("bicubic_downsample: scale must be >= 1");
    if (hr.dim() != 3 && hr.dim() != 4) throw ContractError("bicubic_downsample: expected C x H x W or B x C x H x W");
    const int64_t h = hr.size(-2), w = hr.size(-1);
    if (h % scale != 0 || w % scale != 0)
        throw ShapeError("bicubic_downsample: sides " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by " + std::to_string(scale));
    const auto dtype = hr.scalar_type();
    auto wh = bicubic_weight_matrix(h, scale);
    auto ww = bicubic_weight_matrix(w, scale);
    auto x = hr.to(torch::kDouble);
    auto out = torch::matmul(torch::matmul(wh, x), ww.t());
    return out.to(dtype);
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

void DatasetSpec::validate() const {
    if (patch_size <= 0 || patch_size % 32 != 0)
        throw InvalidSpecError("data.patch_size must be a positive multiple of 32");
    if (root.empty()) {
        if (n_images <= 0) throw InvalidSpecError("data.n_images must be positive");
        if (hr_size < patch_size || hr_size % kScale != 0)
            throw InvalidSpecError("data.hr_size must be >= patch_size and divisible by 4");
    }
}

PairedDataset::PairedDataset(const PairedDataset& other)
    : hr_(other.hr_), lr_(other.lr_), ids_(other.ids_), warned_(other.skipped()) {}

std::set<std::string> PairedDataset::skipped() const {
    std::lock_guard lock(warn_mutex_);
    return warned_;
}

PairedDataset PairedDataset::from_directory(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    const auto hr_dir = root / "hr";
    const auto lr_dir = root / "lr_x4";
    if (!fs::is_directory(hr_dir)) throw IoError("dataset root lacks an hr/ directory: " + root.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(hr_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no PNG files under " + hr_dir.string());

    PairedDataset ds;
    for (const auto& f : files) {
        auto hr = read_png(f);
        // Crop to a multiple of 4 so LR/HR stay aligned.
        hr = hr.narrow(1, 0, hr.size(1) / kScale * kScale).narrow(2, 0, hr.size(2) / kScale * kScale).contiguous();
        torch::Tensor lr;
        const auto paired = lr_dir / f.filename();
        if (fs::exists(paired)) {
            lr = read_png(paired);
            if (lr.size(1) != hr.size(1) / kScale || lr.size(2) != hr.size(2) / kScale)
                throw ShapeError("LR file " + paired.string() + " is not 1/4 of its HR counterpart");
        } else {
            lr = quantize_8bit(bicubic_downsample(hr));
        }
        ds.hr_.push_back(hr);
        ds.lr_.push_back(lr.contiguous());
        ds.ids_.push_back(f.stem().string());
    }
    return ds;
}

namespace {

using Plane = std::vector<double>;

std::array<double, 3> random_color(RandomStream& rng) {
    return {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
}

std::array<Plane, 3> checkerboard(RandomStream& rng, int64_t n) {
    const int64_t pitch = rng.between(2, 16);
    const auto a = random_color(rng), b = random_color(rng);
    std::array<Plane, 3> img;
    for (int c = 0; c < 3; ++c) {
        img[c].resize(n * n);
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x) img[c][y * n + x] = ((x / pitch + y / pitch) % 2) ? a[c] : b[c];
    }
    return img;
}

std::array<Plane, 3> gradient(RandomStream& rng, int64_t n) {
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    const double dx = std::cos(angle), dy = std::sin(angle);
    const auto a = random_color(rng), b = random_color(rng);
    std::array<Plane, 3> img;
    const double half = 0.5 * (n - 1);
    const double span = std::max(1.0, half * (std::abs(dx) + std::abs(dy)));
    for (int c = 0; c < 3; ++c) {
        img[c].resize(n * n);
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x) {
                const double t = 0.5 + 0.5 * ((x - half) * dx + (y - half) * dy) / span;
                img[c][y * n + x] = a[c] + (b[c] - a[c]) * t;
            }
    }
    return img;
}

void box_blur(Plane& p, int64_t n, int64_t radius) {
    Plane tmp(p.size());
    for (int pass = 0; pass < 2; ++pass) {
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x) {
                double s = 0.0;
                for (int64_t k = -radius; k <= radius; ++k) {
                    const int64_t xx = std::clamp<int64_t>(pass == 0 ? x + k : x, 0, n - 1);
                    const int64_t yy = std::clamp<int64_t>(pass == 0 ? y : y + k, 0, n - 1);
                    s += p[yy * n + xx];
                }
                tmp[y * n + x] = s / static_cast<double>(2 * radius + 1);
            }
        p.swap(tmp);
    }
}

std::array<Plane, 3> smooth_noise(RandomStream& rng, int64_t n) {
    const int64_t radius = rng.between(1, 4);
    std::array<Plane, 3> img;
    for (int c = 0; c < 3; ++c) {
        img[c].resize(n * n);
        for (auto& v : img[c]) v = rng.uniform();
        box_blur(img[c], n, radius);
        const auto [lo, hi] = std::minmax_element(img[c].begin(), img[c].end());
        const double mn = *lo, range = std::max(*hi - *lo, 1e-12);
        for (auto& v : img[c]) v = 0.1 + 0.8 * (v - mn) / range;
    }
    return img;
}

std::array<Plane, 3> composite(RandomStream& rng, int64_t n) {
    auto base = gradient(rng, n);
    auto board = checkerboard(rng, n);
    auto noise = smooth_noise(rng, n);
    // Disc of checkerboard over the gradient, modulated by the noise.
    const double cx = rng.uniform(0.25, 0.75) * n, cy = rng.uniform(0.25, 0.75) * n;
    const double r = rng.uniform(0.15, 0.35) * n;
    for (int c = 0; c < 3; ++c)
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x) {
                const auto i = y * n + x;
                const bool inside = (x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r;
                const double v = inside ? board[c][i] : base[c][i];
                base[c][i] = std::clamp(0.75 * v + 0.25 * noise[c][i], 0.0, 1.0);
            }
    return base;
}

} // namespace

PairedDataset PairedDataset::synthetic(uint64_t seed, int64_t n_images, int64_t hr_size) {
    if (n_images <= 0 || hr_size <= 0 || hr_size % kScale != 0)
        throw InvalidSpecError("synthetic dataset needs n > 0 and a side divisible by 4");
    PairedDataset ds;
    static const char* kinds[] = {"checker", "gradient", "noise", "composite"};
    for (int64_t i = 0; i < n_images; ++i) {
        RandomStream rng(seed, {0x5157, static_cast<uint64_t>(i)});
        const int kind = static_cast<int>(i % 4);
        std::array<Plane, 3> img;
        switch (kind) {
            case 0: img = checkerboard(rng, hr_size); break;
            case 1: img = gradient(rng, hr_size); break;
            case 2: img = smooth_noise(rng, hr_size); break;
            default: img = composite(rng, hr_size); break;
        }
        auto t = torch::empty({3, hr_size, hr_size}, torch::kDouble);
        auto acc = t.accessor<double, 3>();
        for (int c = 0; c < 3; ++c)
            for (int64_t y = 0; y < hr_size; ++y)
                for (int64_t x = 0; x < hr_size; ++x) acc[c][y][x] = img[c][y * hr_size + x];
        auto hr = quantize_8bit(t).to(torch::kFloat).contiguous();
        ds.hr_.push_back(hr);
        ds.lr_.push_back(quantize_8bit(bicubic_downsample(hr)).contiguous());
        ds.ids_.push_back("synth" + std::to_string(seed) + "_" + std::to_string(i) + "_" + kinds[kind]);
    }
    return ds;
}

PairedDataset PairedDataset::from_spec(const DatasetSpec& spec) {
    spec.validate();
    if (spec.root.empty()) return synthetic(spec.synthetic_seed, spec.n_images, spec.hr_size);
    return from_directory(spec.root);
}

ImageTensor augment(const ImageTensor& chw, bool hflip, bool vflip, bool rot90) {
    auto out = chw;
    if (hflip) out = out.flip({2});
    if (vflip) out = out.flip({1});
    if (rot90) out = out.transpose(1, 2);
    return out.contiguous();
}

SamplePair PairedDataset::sample_patch_pair(RandomStream& rng, int64_t patch_size, bool do_augment) const {
    if (patch_size % kScale != 0) throw ShapeError("patch size must be divisible by 4");
    if (hr_.empty()) throw ContractError("empty dataset");
    bool any_fits = false;
    for (const auto& h : hr_) any_fits |= (h.size(1) >= patch_size && h.size(2) >= patch_size);
    if (!any_fits)
        throw ShapeError("no image is at least " + std::to_string(patch_size) + " pixels per side");

    while (true) {
        const auto idx = static_cast<int64_t>(rng.below(hr_.size()));
        const auto& hr = hr_[idx];
        if (hr.size(1) < patch_size || hr.size(2) < patch_size) {
            std::lock_guard lock(warn_mutex_);
            if (warned_.insert(ids_[idx]).second)
                std::cerr << "warning: skipping " << ids_[idx] << " (" << hr.size(1) << "x" << hr.size(2)
                          << ") smaller than patch " << patch_size << "\n";
            continue;
        }
        const int64_t lp = patch_size / kScale;
        const int64_t top = rng.between(0, (hr.size(1) - patch_size) / kScale);
        const int64_t left = rng.between(0, (hr.size(2) - patch_size) / kScale);
        auto hr_crop = hr.narrow(1, top * kScale, patch_size).narrow(2, left * kScale, patch_size);
        auto lr_crop = lr_[idx].narrow(1, top, lp).narrow(2, left, lp);
        bool hf = false, vf = false, rot = false;
        if (do_augment) {
            hf = rng.coin();
            vf = rng.coin();
            rot = rng.coin();
        }
        return SamplePair{augment(lr_crop, hf, vf, rot), augment(hr_crop, hf, vf, rot), ids_[idx]};
    }
}

// ---------------------------------------------------------------------------
// Loader
// ---------------------------------------------------------------------------

BatchLoader::BatchLoader(const PairedDataset& dataset, uint64_t seed, int64_t batch_size, int64_t patch_size,
                         bool augment, int workers)
    : dataset_(dataset), seed_(seed), batch_size_(batch_size), patch_size_(patch_size), augment_(augment),
      workers_(std::max(1, workers)) {
    if (batch_size <= 0) throw InvalidSpecError("batch size must be positive");
}

Batch BatchLoader::batch(int64_t step) const {
    std::vector<SamplePair> pairs(batch_size_);
    auto work = [&](int w) {
        for (int64_t j = w; j < batch_size_; j += workers_) {
            RandomStream rng(seed_, {0xDA7A, static_cast<uint64_t>(step), static_cast<uint64_t>(j)});
            pairs[j] = dataset_.sample_patch_pair(rng, patch_size_, augment_);
        }
    };
    if (workers_ == 1) {
        work(0);
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < workers_; ++w) threads.emplace_back(work, w);
        for (auto& t : threads) t.join();
    }
    Batch b;
    std::vector<torch::Tensor> lrs, hrs;
    for (auto& p : pairs) {
        lrs.push_back(p.lr);
        hrs.push_back(p.hr);
        b.ids.push_back(p.source_id);
    }
    b.lr = torch::stack(lrs);
    b.hr = torch::stack(hrs);
    return b;
}

} // namespace sedsr
