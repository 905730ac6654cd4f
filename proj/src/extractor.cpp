#include "sedsr/extractor.hpp"

#include <cmath>

#include "sedsr/checkpoint.hpp"

namespace sedsr {
namespace F = torch::nn::functional;
namespace nn = torch::nn;

BackboneKind parse_backbone_kind(const std::string& s) {
    if (s == "clip_rn50") return BackboneKind::vision_language_rn50;
    if (s == "resnet50") return BackboneKind::classification_rn50;
    if (s == "toy") return BackboneKind::toy;
    throw ConfigError("extractor.kind must be one of clip_rn50, resnet50, toy (got `" + s + "`)");
}

std::string to_config_string(BackboneKind kind) {
    switch (kind) {
        case BackboneKind::vision_language_rn50: return "clip_rn50";
        case BackboneKind::classification_rn50: return "resnet50";
        case BackboneKind::toy: return "toy";
    }
    return "toy";
}

Normalization default_normalization(BackboneKind kind) {
    switch (kind) {
        case BackboneKind::vision_language_rn50:
            return {{0.48145466, 0.4578275, 0.40821073}, {0.26862954, 0.26130258, 0.27577711}};
        case BackboneKind::classification_rn50:
            return {{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
        case BackboneKind::toy:
            return {};
    }
    return {};
}

int64_t stage_channels(int layer) {
    if (layer < 1 || layer > kNumStages)
        throw InvalidSpecError("extractor layer must be in 1..4, got " + std::to_string(layer));
    return int64_t{256} << (layer - 1);
}

int64_t stage_stride(int layer) {
    if (layer < 1 || layer > kNumStages)
        throw InvalidSpecError("extractor layer must be in 1..4, got " + std::to_string(layer));
    return int64_t{4} << (layer - 1);
}

ExtractorSpec ExtractorSpec::make(BackboneKind kind, int layer_index) {
    ExtractorSpec s;
    s.backbone_kind = kind;
    s.layer_index = layer_index;
    s.normalization = default_normalization(kind);
    s.validate();
    return s;
}

void ExtractorSpec::validate() const {
    if (layer_index < 1 || layer_index > kNumStages)
        throw InvalidSpecError("extractor layer must be in 1..4, got " + std::to_string(layer_index));
    for (double s : normalization.std)
        if (!(s > 0.0)) throw InvalidSpecError("normalization std must be positive");
}

torch::Tensor preprocess_for_pvm(const ImageTensor& image, const ExtractorSpec& spec) {
    detail::require_rank(image, 4, "preprocess_for_pvm");
    if (image.size(1) != 3) throw ContractError("preprocess_for_pvm: expected 3 channels");
    const auto opts = image.options();
    auto mean = torch::tensor(std::vector<double>(spec.normalization.mean.begin(),
                                                  spec.normalization.mean.end()),
                              opts).view({1, 3, 1, 1});
    auto stdv = torch::tensor(std::vector<double>(spec.normalization.std.begin(),
                                                  spec.normalization.std.end()),
                              opts).view({1, 3, 1, 1});
    return (image - mean) / stdv;
}

ImageTensor center_crop_to_multiple(const ImageTensor& image, int64_t multiple) {
    detail::require_rank(image, 4, "center_crop_to_multiple");
    const int64_t h = image.size(2), w = image.size(3);
    const int64_t ch = (h / multiple) * multiple, cw = (w / multiple) * multiple;
    if (ch == 0 || cw == 0)
        throw ShapeError("image " + detail::shape_str(image) + " is smaller than " +
                         std::to_string(multiple));
    const int64_t top = (h - ch) / 2, left = (w - cw) / 2;
    return image.narrow(2, top, ch).narrow(3, left, cw);
}

// ---------------------------------------------------------------------------
// Toy backbone
// ---------------------------------------------------------------------------

ToyBackboneImpl::ToyBackboneImpl() {
    stem = register_module("stem", nn::Conv2d(nn::Conv2dOptions(3, stage_channels(1), 4).stride(4)));
    for (int l = 2; l <= kNumStages; ++l) {
        downs.push_back(register_module(
            "down" + std::to_string(l),
            nn::Conv2d(nn::Conv2dOptions(stage_channels(l - 1), stage_channels(l), 2).stride(2))));
    }
}

std::vector<torch::Tensor> ToyBackboneImpl::stages(const torch::Tensor& x, int up_to) {
    std::vector<torch::Tensor> out;
    auto h = torch::relu(stem(x));
    out.push_back(h);
    for (int l = 2; l <= up_to; ++l) {
        h = torch::relu(downs[l - 2](h));
        out.push_back(h);
    }
    return out;
}

// ---------------------------------------------------------------------------
// RN50 family
// ---------------------------------------------------------------------------

namespace {

nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1, int64_t pad = 0) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).bias(false));
}

/// Bottleneck block, expansion 4. `antialias` selects the CLIP variant, which keeps
/// every conv at stride 1 and downsamples with average pooling.
struct BottleneckImpl : nn::Module {
    BottleneckImpl(int64_t inplanes, int64_t planes, int64_t stride, bool antialias)
        : stride_(stride), antialias_(antialias) {
        conv1 = register_module("conv1", conv(inplanes, planes, 1));
        bn1 = register_module("bn1", nn::BatchNorm2d(planes));
        conv2 = register_module("conv2", conv(planes, planes, 3, antialias ? 1 : stride, 1));
        bn2 = register_module("bn2", nn::BatchNorm2d(planes));
        conv3 = register_module("conv3", conv(planes, planes * 4, 1));
        bn3 = register_module("bn3", nn::BatchNorm2d(planes * 4));
        if (stride != 1 || inplanes != planes * 4) {
            nn::Sequential ds;
            if (antialias) {
                ds->push_back("-1", nn::AvgPool2d(nn::AvgPool2dOptions(stride)));
                ds->push_back("0", conv(inplanes, planes * 4, 1));
            } else {
                ds->push_back("0", conv(inplanes, planes * 4, 1, stride));
            }
            ds->push_back("1", nn::BatchNorm2d(planes * 4));
            downsample = register_module("downsample", ds);
        }
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto h = torch::relu(bn1(conv1(x)));
        h = torch::relu(bn2(conv2(h)));
        if (antialias_ && stride_ > 1) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(stride_));
        h = bn3(conv3(h));
        auto identity = downsample ? downsample->forward(x) : x;
        return torch::relu(h + identity);
    }

    int64_t stride_;
    bool antialias_;
    nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
    nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
    nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

std::array<nn::Sequential, 4> make_rn50_layers(nn::Module& owner, bool antialias) {
    constexpr std::array<int, 4> blocks{3, 4, 6, 3};
    std::array<nn::Sequential, 4> layers;
    int64_t inplanes = 64;
    for (int i = 0; i < 4; ++i) {
        const int64_t planes = int64_t{64} << i;
        const int64_t stride = i == 0 ? 1 : 2;
        nn::Sequential seq;
        seq->push_back(Bottleneck(inplanes, planes, stride, antialias));
        inplanes = planes * 4;
        for (int b = 1; b < blocks[i]; ++b) seq->push_back(Bottleneck(inplanes, planes, 1, antialias));
        layers[i] = owner.register_module("layer" + std::to_string(i + 1), seq);
    }
    return layers;
}

} // namespace

ResNet50BackboneImpl::ResNet50BackboneImpl() {
    conv1 = register_module("conv1", conv(3, 64, 7, 2, 3));
    bn1 = register_module("bn1", nn::BatchNorm2d(64));
    layers = make_rn50_layers(*this, /*antialias=*/false);
}

std::vector<torch::Tensor> ResNet50BackboneImpl::stages(const torch::Tensor& x, int up_to) {
    auto h = torch::relu(bn1(conv1(x)));
    h = F::max_pool2d(h, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
    std::vector<torch::Tensor> out;
    for (int l = 0; l < up_to; ++l) {
        h = layers[l]->forward(h);
        out.push_back(h);
    }
    return out;
}

ClipResNet50BackboneImpl::ClipResNet50BackboneImpl() {
    conv1 = register_module("conv1", conv(3, 32, 3, 2, 1));
    bn1 = register_module("bn1", nn::BatchNorm2d(32));
    conv2 = register_module("conv2", conv(32, 32, 3, 1, 1));
    bn2 = register_module("bn2", nn::BatchNorm2d(32));
    conv3 = register_module("conv3", conv(32, 64, 3, 1, 1));
    bn3 = register_module("bn3", nn::BatchNorm2d(64));
    layers = make_rn50_layers(*this, /*antialias=*/true);
}

std::vector<torch::Tensor> ClipResNet50BackboneImpl::stages(const torch::Tensor& x, int up_to) {
    auto h = torch::relu(bn1(conv1(x)));
    h = torch::relu(bn2(conv2(h)));
    h = torch::relu(bn3(conv3(h)));
    h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
    std::vector<torch::Tensor> out;
    for (int l = 0; l < up_to; ++l) {
        h = layers[l]->forward(h);
        out.push_back(h);
    }
    return out;
}

std::shared_ptr<BackboneImpl> make_backbone(BackboneKind kind) {
    switch (kind) {
        case BackboneKind::vision_language_rn50: return std::make_shared<ClipResNet50BackboneImpl>();
        case BackboneKind::classification_rn50: return std::make_shared<ResNet50BackboneImpl>();
        case BackboneKind::toy: return std::make_shared<ToyBackboneImpl>();
    }
    throw InvalidSpecError("unknown backbone kind");
}

// ---------------------------------------------------------------------------
// Weight providers
// ---------------------------------------------------------------------------

void SeededWeightProvider::load(torch::nn::Module& module) const {
    torch::NoGradGuard no_grad;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed_);
    for (auto& item : module.named_parameters()) {
        auto& p = item.value();
        const auto& name = item.key();
        const bool is_bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
        if (is_bias) {
            p.zero_();
        } else if (p.dim() >= 2) {
            const double fan_in = static_cast<double>(p.numel() / p.size(0));
            p.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
        } else {
            p.fill_(1.0);
        }
    }
}

std::string SeededWeightProvider::describe() const { return "seeded:" + std::to_string(seed_); }

void ArchiveWeightProvider::load(torch::nn::Module& module) const {
    load_module_weights(module, path_, WeightRole::extractor);
}

std::string ArchiveWeightProvider::describe() const { return "archive:" + path_.string(); }

// ---------------------------------------------------------------------------
// Extractor
// ---------------------------------------------------------------------------

SemanticExtractor::SemanticExtractor(ExtractorSpec spec, const WeightProvider& weights)
    : spec_(std::move(spec)), backbone_(make_backbone(spec_.backbone_kind)) {
    spec_.validate();
    weights.load(*backbone_);
    for (auto& p : backbone_->parameters()) p.set_requires_grad(false);
    backbone_->eval();
    source_id_ = to_config_string(spec_.backbone_kind) + "@" + weights.describe();
}

SemanticMap SemanticExtractor::extract(const ImageTensor& image) const { return extract(image, spec_); }

SemanticMap SemanticExtractor::extract(const ImageTensor& image, const ExtractorSpec& spec) const {
    spec.validate();
    if (spec.backbone_kind != spec_.backbone_kind)
        throw InvalidSpecError("spec backbone kind does not match the loaded extractor");
    detail::require_rank(image, 4, "extract_semantics");
    if (image.size(2) % kExtractorAlignment != 0 || image.size(3) % kExtractorAlignment != 0)
        throw ShapeError("extract_semantics: image sides must be multiples of 32, got " +
                         detail::shape_str(image));
    {
        std::lock_guard lock(last_mutex_);
        last_input_ = image;
    }
    calls_.fetch_add(1);
    torch::NoGradGuard no_grad;
    auto x = preprocess_for_pvm(image.detach(), spec);
    auto feats = backbone_->stages(x, spec.layer_index);
    return SemanticMap{feats.back().detach(), spec.layer_index, source_id_};
}

std::vector<torch::Tensor> SemanticExtractor::taps(const ImageTensor& image, int up_to) const {
    if (up_to < 1 || up_to > kNumStages) throw InvalidSpecError("tap depth must be in 1..4");
    return backbone_->stages(preprocess_for_pvm(image, spec_), up_to);
}

torch::Tensor SemanticExtractor::last_input() const {
    std::lock_guard lock(last_mutex_);
    return last_input_;
}

std::shared_ptr<SemanticExtractor> make_toy_extractor(uint64_t seed, int layer_index) {
    return std::make_shared<SemanticExtractor>(ExtractorSpec::make(BackboneKind::toy, layer_index),
                                               SeededWeightProvider(seed));
}

std::shared_ptr<SemanticExtractor> make_extractor(const ExtractorSpec& spec,
                                                  const std::filesystem::path& weights_path,
                                                  uint64_t seed) {
    if (weights_path.empty()) return std::make_shared<SemanticExtractor>(spec, SeededWeightProvider(seed));
    return std::make_shared<SemanticExtractor>(spec, ArchiveWeightProvider(weights_path));
}

} // namespace sedsr
