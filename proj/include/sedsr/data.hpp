#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sedsr/rng.hpp"
#include "sedsr/types.hpp"

namespace sedsr {

inline constexpr int kScale = 4;

/// Antialiased cubic-convolution downsampling.
///
/// Separable; each output sample at input coordinate u = (j + 0.5) * scale - 0.5 takes
/// the taps i with |i - u| < 2 * scale, weighted by k((i - u) / scale) where k is the
/// Keys cubic with a = -0.5, normalized to sum to one. Taps outside the image replicate
/// the edge. Accepts C x H x W or B x C x H x W; sides must be divisible by `scale`.
ImageTensor bicubic_downsample(const ImageTensor& hr, int scale = kScale);

/// Keys cubic convolution kernel, a = -0.5.
double cubic_kernel(double x);

/// The (out x in) resampling matrix used along one axis, edge replication folded in.
torch::Tensor bicubic_weight_matrix(int64_t in_size, int scale);

struct SamplePair {
    ImageTensor lr;  // 3 x P/4 x P/4
    ImageTensor hr;  // 3 x P x P
    std::string source_id;
};

struct DatasetSpec {
    std::filesystem::path root;     // empty -> synthetic
    uint64_t synthetic_seed = 7;
    int64_t n_images = 8;
    int64_t hr_size = 256;          // synthetic image side
    int64_t patch_size = 256;
    bool augment = true;            // h-flip, v-flip, rot90

    void validate() const;
};

/// HR images (and their x4 LR counterparts) held in memory. Read-only after
/// construction apart from the once-per-image "too small" warning bookkeeping.
class PairedDataset {
public:
    /// `<root>/hr/*.png`; LR from `<root>/lr_x4/<same name>` when present, otherwise
    /// synthesized with bicubic_downsample.
    static PairedDataset from_directory(const std::filesystem::path& root);
    /// Procedural corpus: checkerboards, gradients, smoothed noise and composites,
    /// quantized to 8 bits. Deterministic per seed.
    static PairedDataset synthetic(uint64_t seed, int64_t n_images, int64_t hr_size);
    static PairedDataset from_spec(const DatasetSpec& spec);

    PairedDataset(const PairedDataset& other);
    PairedDataset& operator=(const PairedDataset&) = delete;
    PairedDataset(PairedDataset&&) = default;

    int64_t size() const { return static_cast<int64_t>(hr_.size()); }
    const ImageTensor& hr(int64_t i) const { return hr_.at(i); }
    const ImageTensor& lr(int64_t i) const { return lr_.at(i); }
    const std::string& id(int64_t i) const { return ids_.at(i); }

    /// Random aligned crop of one image: HR crop at a multiple-of-4 offset, LR crop at
    /// the same offset / 4, then the same flips/rotation applied to both. Images smaller
    /// than the patch are skipped with a one-time warning.
    SamplePair sample_patch_pair(RandomStream& rng, int64_t patch_size, bool augment) const;

    /// Ids of images that have been skipped as too small so far.
    std::set<std::string> skipped() const;

private:
    PairedDataset() = default;
    std::vector<ImageTensor> hr_;
    std::vector<ImageTensor> lr_;
    std::vector<std::string> ids_;
    mutable std::mutex warn_mutex_;
    mutable std::set<std::string> warned_;
};

/// Applies the augmentation encoded by three flags: h-flip, v-flip, transpose-rotate.
ImageTensor augment(const ImageTensor& chw, bool hflip, bool vflip, bool rot90);

struct Batch {
    ImageTensor lr;  // B x 3 x P/4 x P/4
    ImageTensor hr;  // B x 3 x P x P
    std::vector<std::string> ids;
};

/// Produces the batch for a given step. Sample j of step s draws from its own stream
/// derived from (seed, s, j), so the sequence does not depend on how many worker
/// threads assemble it.
class BatchLoader {
public:
    BatchLoader(const PairedDataset& dataset, uint64_t seed, int64_t batch_size, int64_t patch_size,
                bool augment, int workers = 1);

    Batch batch(int64_t step) const;

private:
    const PairedDataset& dataset_;
    uint64_t seed_;
    int64_t batch_size_;
    int64_t patch_size_;
    bool augment_;
    int workers_;
};

} // namespace sedsr
