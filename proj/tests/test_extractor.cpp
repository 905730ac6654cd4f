#include <doctest.h>

#include <torch/torch.h>

#include "sedsr/checkpoint.hpp"
#include "sedsr/extractor.hpp"
#include "sedsr/rng.hpp"

using namespace sedsr;

TEST_SUITE("extractor") {

TEST_CASE("toy extractor stage shape law over random sizes") {
    RandomStream rng(21);
    for (int layer = 1; layer <= 4; ++layer) {
        auto ex = make_toy_extractor(0, layer);
        for (int trial = 0; trial < 3; ++trial) {
            const int64_t h = 32 * rng.between(1, 4), w = 32 * rng.between(1, 4);
            auto s = ex->extract(torch::rand({2, 3, h, w}));
            CHECK(s.data.size(0) == 2);
            CHECK(s.channels() == stage_channels(layer));
            CHECK(s.height() == h / (4 << (layer - 1)));
            CHECK(s.width() == w / (4 << (layer - 1)));
            CHECK(s.layer_index == layer);
            CHECK(torch::isfinite(s.data).all().item<bool>());
        }
    }
}

TEST_CASE("toy extractor layer 3 on 64x64") {
    auto s = make_toy_extractor(0)->extract(torch::rand({1, 3, 64, 64}));
    CHECK(s.data.sizes() == torch::IntArrayRef{1, 1024, 4, 4});
}

TEST_CASE("stage widths and strides of the RN50 family") {
    CHECK(stage_channels(1) == 256);
    CHECK(stage_channels(2) == 512);
    CHECK(stage_channels(3) == 1024);
    CHECK(stage_channels(4) == 2048);
    CHECK(stage_stride(1) == 4);
    CHECK(stage_stride(4) == 32);
    for (auto kind : {BackboneKind::classification_rn50, BackboneKind::vision_language_rn50}) {
        auto ex = std::make_shared<SemanticExtractor>(ExtractorSpec::make(kind, 4), SeededWeightProvider(1));
        auto taps = ex->taps(torch::rand({1, 3, 64, 64}), 4);
        REQUIRE(taps.size() == 4);
        for (int l = 1; l <= 4; ++l) {
            CHECK(taps[l - 1].size(1) == stage_channels(l));
            CHECK(taps[l - 1].size(2) == 64 / stage_stride(l));
        }
    }
}

TEST_CASE("RN50 layer 3 on a 256x256 batch of two") {
    auto ex = std::make_shared<SemanticExtractor>(ExtractorSpec::make(BackboneKind::classification_rn50, 3),
                                                  SeededWeightProvider(2));
    auto s = ex->extract(torch::rand({2, 3, 256, 256}));
    CHECK(s.data.sizes() == torch::IntArrayRef{2, 1024, 16, 16});
}

TEST_CASE("invalid layer and shape errors") {
    CHECK_THROWS_AS(ExtractorSpec::make(BackboneKind::toy, 5).validate(), InvalidSpecError);
    CHECK_THROWS_AS(ExtractorSpec::make(BackboneKind::toy, 0).validate(), InvalidSpecError);
    auto ex = make_toy_extractor(0);
    CHECK_THROWS_AS(ex->extract(torch::rand({1, 3, 48, 64})), ShapeError);
    auto bad = ex->spec();
    bad.layer_index = 5;
    CHECK_THROWS_AS(ex->extract(torch::rand({1, 3, 256, 256}), bad), InvalidSpecError);
}

TEST_CASE("determinism and seeded weights") {
    auto a = make_toy_extractor(0), b = make_toy_extractor(0), c = make_toy_extractor(1);
    CHECK(states_equal(snapshot_state(a->backbone()), snapshot_state(b->backbone())));
    CHECK_FALSE(states_equal(snapshot_state(a->backbone()), snapshot_state(c->backbone())));
    auto img = torch::rand({1, 3, 64, 64});
    CHECK(torch::equal(a->extract(img).data, a->extract(img).data));
    CHECK(torch::equal(a->extract(img).data, b->extract(img).data));
}

TEST_CASE("zero image through the zero-bias toy stack is all zero") {
    auto s = make_toy_extractor(0)->extract(torch::zeros({1, 3, 64, 64}));
    CHECK(s.data.abs().max().item<double>() == 0.0);
}

TEST_CASE("extractor is frozen and returns detached maps") {
    auto ex = make_toy_extractor(0);
    for (const auto& p : ex->parameters()) CHECK_FALSE(p.requires_grad());
    auto img = torch::rand({1, 3, 32, 32}, torch::requires_grad());
    auto s = ex->extract(img);
    CHECK_FALSE(s.data.requires_grad());
    CHECK(ex->calls() == 1);
    CHECK(ex->last_input().data_ptr() == img.data_ptr());
}

TEST_CASE("preprocess_for_pvm") {
    auto spec = ExtractorSpec::make(BackboneKind::vision_language_rn50);
    auto img = torch::empty({1, 3, 4, 4});
    for (int c = 0; c < 3; ++c) img.select(1, c).fill_(spec.normalization.mean[c]);
    CHECK(preprocess_for_pvm(img, spec).abs().max().item<double>() < 1e-6);

    auto toy = ExtractorSpec::make(BackboneKind::toy);
    auto x = torch::rand({1, 3, 4, 4});
    CHECK(torch::allclose(preprocess_for_pvm(x, toy), x));

    ExtractorSpec custom = toy;
    custom.normalization.mean = {0.5, 0.5, 0.5};
    custom.normalization.std = {0.25, 0.25, 0.25};
    auto y = preprocess_for_pvm(torch::ones({1, 3, 4, 4}), custom);
    CHECK(torch::allclose(y, torch::full_like(y, 2.0)));
}

TEST_CASE("published normalization constants") {
    auto clip = default_normalization(BackboneKind::vision_language_rn50);
    CHECK(clip.mean[0] == doctest::Approx(0.48145466));
    CHECK(clip.std[2] == doctest::Approx(0.27577711));
    auto imnet = default_normalization(BackboneKind::classification_rn50);
    CHECK(imnet.mean[1] == doctest::Approx(0.456));
    CHECK(imnet.std[0] == doctest::Approx(0.229));
}

TEST_CASE("center crop to multiples of 32") {
    auto x = torch::rand({1, 3, 70, 100});
    auto y = center_crop_to_multiple(x);
    CHECK(y.size(2) == 64);
    CHECK(y.size(3) == 96);
    CHECK(torch::equal(y, x.narrow(2, 3, 64).narrow(3, 2, 96)));
}

TEST_CASE("archive weight provider round trip") {
    auto a = make_toy_extractor(3);
    const auto path = std::filesystem::temp_directory_path() / "sedsr_toy_weights.pt";
    save_module_weights(a->backbone(), path);
    clear_weight_access_log();
    auto b = make_extractor(ExtractorSpec::make(BackboneKind::toy), path, 99);
    CHECK(states_equal(snapshot_state(a->backbone()), snapshot_state(b->backbone())));
    auto log = weight_access_log();
    REQUIRE(log.size() == 1);
    CHECK(log[0].role == WeightRole::extractor);
    std::filesystem::remove(path);
}

}
