#include "sedsr/generators.hpp"

#include <cmath>
#include <sstream>

#include "sedsr/discriminators.hpp"

namespace sedsr {
namespace nn = torch::nn;
namespace F = torch::nn::functional;

UpsampleMode parse_upsample_mode(const std::string& s) {
    if (s == "nearest") return UpsampleMode::nearest;
    if (s == "pixel_shuffle") return UpsampleMode::pixel_shuffle;
    throw ConfigError("gen.upsample must be nearest or pixel_shuffle (got `" + s + "`)");
}

std::string to_string(UpsampleMode mode) {
    return mode == UpsampleMode::nearest ? "nearest" : "pixel_shuffle";
}

GeneratorSpec GeneratorSpec::tiny() {
    GeneratorSpec s;
    s.num_rrdb_blocks = 4;
    return s;
}

GeneratorSpec GeneratorSpec::appendix() {
    GeneratorSpec s;
    s.num_rrdb_blocks = 11;
    return s;
}

GeneratorSpec GeneratorSpec::appendix_semantic(int64_t semantic_channels) {
    GeneratorSpec s = appendix();
    s.sefb_block_indices = {5, 11};
    s.sefb.semantic_channels = semantic_channels;
    return s;
}

void GeneratorSpec::validate() const {
    if (scale_factor != 4) throw InvalidSpecError("gen: only x4 is supported");
    if (num_rrdb_blocks < 0) throw InvalidSpecError("gen.blocks must be >= 0");
    if (feature_channels <= 0 || growth_channels <= 0) throw InvalidSpecError("gen: widths must be positive");
    for (int i : sefb_block_indices) {
        if (i < 1 || i > num_rrdb_blocks)
            throw InvalidSpecError("gen.sefb_blocks index " + std::to_string(i) + " outside 1.." +
                                   std::to_string(num_rrdb_blocks));
    }
}

std::string GeneratorSpec::serialize() const {
    std::ostringstream out;
    out.precision(17);
    out << "blocks=" << num_rrdb_blocks << ";feature_channels=" << feature_channels
        << ";growth_channels=" << growth_channels << ";residual_scale=" << residual_scale
        << ";scale=" << scale_factor << ";upsample=" << to_string(upsample) << ";sefb_blocks=";
    bool first = true;
    for (int i : sefb_block_indices) {
        out << (first ? "" : ",") << i;
        first = false;
    }
    out << ";sefb_semantic_channels=" << sefb.semantic_channels << ";sefb_embed_dim=" << sefb.embed_dim
        << ";sefb_heads=" << sefb.num_heads << ";sefb_groups=" << sefb.groupnorm_groups;
    return out.str();
}

GeneratorSpec GeneratorSpec::parse(const std::string& text) {
    GeneratorSpec s;
    std::stringstream ss(text);
    std::string item;
    try {
        while (std::getline(ss, item, ';')) {
            auto eq = item.find('=');
            if (eq == std::string::npos) continue;
            auto key = item.substr(0, eq), value = item.substr(eq + 1);
            if (key == "blocks") s.num_rrdb_blocks = std::stoi(value);
            else if (key == "feature_channels") s.feature_channels = std::stoll(value);
            else if (key == "growth_channels") s.growth_channels = std::stoll(value);
            else if (key == "residual_scale") s.residual_scale = std::stod(value);
            else if (key == "scale") s.scale_factor = std::stoi(value);
            else if (key == "upsample") s.upsample = parse_upsample_mode(value);
            else if (key == "sefb_blocks") {
                std::stringstream ls(value);
                std::string idx;
                while (std::getline(ls, idx, ','))
                    if (!idx.empty()) s.sefb_block_indices.insert(std::stoi(idx));
            } else if (key == "sefb_semantic_channels") s.sefb.semantic_channels = std::stoll(value);
            else if (key == "sefb_embed_dim") s.sefb.embed_dim = std::stoll(value);
            else if (key == "sefb_heads") s.sefb.num_heads = std::stoll(value);
            else if (key == "sefb_groups") s.sefb.groupnorm_groups = std::stoll(value);
        }
    } catch (const std::logic_error&) {
        throw ConfigError("malformed generator spec `" + text + "`");
    }
    s.validate();
    return s;
}

namespace {

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

nn::Conv2d conv3x3(int64_t in, int64_t out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)); }

} // namespace

ResidualDenseBlockImpl::ResidualDenseBlockImpl(int64_t channels, int64_t growth, double scale)
    : residual_scale(scale) {
    torch::NoGradGuard no_grad;
    for (int i = 0; i < 5; ++i) {
        const int64_t out = i == 4 ? channels : growth;
        auto c = register_module("conv" + std::to_string(i + 1), conv3x3(channels + i * growth, out));
        // Small residual-branch init keeps the deep trunk close to identity at start.
        nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanIn);
        c->weight.mul_(0.1);
        c->bias.zero_();
        convs.push_back(c);
    }
}

torch::Tensor ResidualDenseBlockImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> feats{x};
    for (int i = 0; i < 4; ++i) feats.push_back(lrelu(convs[i](torch::cat(feats, 1))));
    return convs[4](torch::cat(feats, 1)) * residual_scale + x;
}

RRDBImpl::RRDBImpl(int64_t channels, int64_t growth, double scale) : residual_scale(scale) {
    rdb1 = register_module("rdb1", ResidualDenseBlock(channels, growth, scale));
    rdb2 = register_module("rdb2", ResidualDenseBlock(channels, growth, scale));
    rdb3 = register_module("rdb3", ResidualDenseBlock(channels, growth, scale));
}

torch::Tensor RRDBImpl::forward(const torch::Tensor& x) { return rdb3(rdb2(rdb1(x))) * residual_scale + x; }

GeneratorImpl::GeneratorImpl(GeneratorSpec spec, std::shared_ptr<const SemanticExtractor> extractor)
    : spec_(std::move(spec)), extractor_(std::move(extractor)) {
    spec_.validate();
    const int64_t nf = spec_.feature_channels;
    conv_first = register_module("conv_first", conv3x3(3, nf));
    for (int i = 0; i < spec_.num_rrdb_blocks; ++i)
        body.push_back(register_module("body" + std::to_string(i), RRDB(nf, spec_.growth_channels, spec_.residual_scale)));
    conv_body = register_module("conv_body", conv3x3(nf, nf));
    const int64_t up_out = spec_.upsample == UpsampleMode::pixel_shuffle ? 4 * nf : nf;
    upconv1 = register_module("upconv1", conv3x3(nf, up_out));
    upconv2 = register_module("upconv2", conv3x3(nf, up_out));
    conv_hr = register_module("conv_hr", conv3x3(nf, nf));
    conv_last = register_module("conv_last", conv3x3(nf, 3));
    // Fusion blocks are created last so the plain layers draw the same initial weights
    // whether or not the semantic variant is requested.
    for (int idx : spec_.sefb_block_indices) {
        SefbOptions o = spec_.sefb;
        o.image_channels = nf;
        o.out_channels = nf;
        o.image_conv_channels = nf;
        fusion.emplace_back(idx, register_module("fusion" + std::to_string(idx), Sefb(o)));
    }
}

torch::Tensor GeneratorImpl::forward(const ImageTensor& lr) {
    detail::require_rank(lr, 4, "generator input");
    if (lr.size(1) != 3) throw ContractError("generator expects 3-channel images");
    torch::Tensor semantics;
    if (semantic()) {
        if (!extractor_) throw ContractError("semantic generator has no extractor attached");
        semantics = extractor_->extract(lr).data;
    }
    auto fea = conv_first(lr);
    auto h = fea;
    auto next_fusion = fusion.begin();
    for (int i = 0; i < spec_.num_rrdb_blocks; ++i) {
        h = body[i](h);
        if (next_fusion != fusion.end() && next_fusion->first == i + 1) {
            h = h + next_fusion->second(h, semantics) * spec_.residual_scale;
            ++next_fusion;
        }
    }
    fea = fea + conv_body(h);
    auto up = [&](nn::Conv2d& c, const torch::Tensor& t) {
        if (spec_.upsample == UpsampleMode::pixel_shuffle) return lrelu(F::pixel_shuffle(c(t), 2));
        return lrelu(c(F::interpolate(t, F::InterpolateFuncOptions()
                                             .scale_factor(std::vector<double>{2.0, 2.0})
                                             .mode(torch::kNearest))));
    };
    fea = up(upconv1, fea);
    fea = up(upconv2, fea);
    return conv_last(lrelu(conv_hr(fea)));
}

torch::Tensor GeneratorImpl::infer(const ImageTensor& lr) {
    torch::NoGradGuard no_grad;
    const bool was_training = is_training();
    eval();
    auto out = forward(lr).clamp(0.0, 1.0);
    train(was_training);
    return out;
}

int64_t count_parameters(const GeneratorSpec& spec) {
    GeneratorImpl g(spec);
    return count_parameters(static_cast<const torch::nn::Module&>(g));
}

} // namespace sedsr
