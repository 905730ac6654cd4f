#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sedsr/extractor.hpp"
#include "sedsr/sefb.hpp"
#include "sedsr/types.hpp"

namespace sedsr {

enum class UpsampleMode { nearest, pixel_shuffle };

UpsampleMode parse_upsample_mode(const std::string& s);
std::string to_string(UpsampleMode mode);

struct GeneratorSpec {
    int num_rrdb_blocks = 23;
    int64_t feature_channels = 64;
    int64_t growth_channels = 32;
    double residual_scale = 0.2;
    int scale_factor = 4;
    UpsampleMode upsample = UpsampleMode::nearest;
    /// 1-based RRDB indices followed by a semantic fusion block (Se-RRDB). Empty for RRDB.
    std::set<int> sefb_block_indices;
    /// Fusion settings for Se-RRDB blocks; image/out widths follow feature_channels.
    SefbOptions sefb{};

    static GeneratorSpec standard() { return {}; }
    static GeneratorSpec tiny();
    static GeneratorSpec appendix();
    /// appendix() with fusion after the 5th and 11th block.
    static GeneratorSpec appendix_semantic(int64_t semantic_channels);

    void validate() const;
    /// One-line text form stored in checkpoints; `parse` reverses it.
    std::string serialize() const;
    static GeneratorSpec parse(const std::string& text);
};

/// Residual dense block: five 3x3 convs with dense connections, output scaled and added
/// to the input.
struct ResidualDenseBlockImpl : torch::nn::Module {
    ResidualDenseBlockImpl(int64_t channels, int64_t growth, double residual_scale);
    torch::Tensor forward(const torch::Tensor& x);

    std::vector<torch::nn::Conv2d> convs;
    double residual_scale;
};
TORCH_MODULE(ResidualDenseBlock);

/// Three residual dense blocks wrapped in one more scaled residual.
struct RRDBImpl : torch::nn::Module {
    RRDBImpl(int64_t channels, int64_t growth, double residual_scale);
    torch::Tensor forward(const torch::Tensor& x);

    ResidualDenseBlock rdb1{nullptr}, rdb2{nullptr}, rdb3{nullptr};
    double residual_scale;
};
TORCH_MODULE(RRDB);

/// RRDB super-resolution network (x4). With `sefb_block_indices` set it becomes the
/// semantic-aware variant, which needs an extractor to read semantics off the LR input.
struct GeneratorImpl : torch::nn::Module {
    explicit GeneratorImpl(GeneratorSpec spec, std::shared_ptr<const SemanticExtractor> extractor = nullptr);

    /// Training forward, unclamped. Output B x 3 x 4H x 4W.
    torch::Tensor forward(const ImageTensor& lr);
    /// Inference: eval mode, no autograd, clamped to [0, 1].
    torch::Tensor infer(const ImageTensor& lr);

    const GeneratorSpec& spec() const { return spec_; }
    bool semantic() const { return !spec_.sefb_block_indices.empty(); }

    torch::nn::Conv2d conv_first{nullptr};
    std::vector<RRDB> body;
    std::vector<std::pair<int, Sefb>> fusion;  // (1-based block index, block)
    torch::nn::Conv2d conv_body{nullptr};
    torch::nn::Conv2d upconv1{nullptr}, upconv2{nullptr};
    torch::nn::Conv2d conv_hr{nullptr};
    torch::nn::Conv2d conv_last{nullptr};

private:
    GeneratorSpec spec_;
    std::shared_ptr<const SemanticExtractor> extractor_;
};
TORCH_MODULE(Generator);

/// Parameter count of the generator a spec describes.
int64_t count_parameters(const GeneratorSpec& spec);

} // namespace sedsr
