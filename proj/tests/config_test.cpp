#include <gtest/gtest.h>

#include "magnet/config.hpp"

namespace magnet {
namespace {

template <typename E>
E parse_error(const std::string& text) {
    try {
        parse_config_text(text);
    } catch (const E& e) {
        return e;
    }
    ADD_FAILURE() << "no " << typeid(E).name() << " for: " << text;
    return E(std::string("none"), "none");
}

TEST(Config, MinimalIsSingleLevelBaseline) {
    const auto cfg = parse_config_text(R"({"image": [64, 96]})");
    EXPECT_EQ(cfg.pipeline.plan.level_count(), 1);
    EXPECT_EQ(cfg.pipeline.plan.processing, (Extent{64, 96}));
    EXPECT_EQ(cfg.pipeline.k, std::size_t{1} << 16);
    EXPECT_EQ(cfg.pipeline.strategy, ScoreStrategy{});
    EXPECT_EQ(cfg.backend.kind, "constant");
    EXPECT_EQ(cfg.combiner.kind, "mean");
    EXPECT_EQ(cfg.classes, 2);
}

TEST(Config, CityscapesShapedPlan) {
    const auto cfg = parse_config_text(R"({
        "image": {"height": 1024, "width": 2048},
        "processing": [128, 256],
        "scales": [[1024, 2048], [512, 1024], [256, 512], [128, 256]]
    })");
    std::vector<std::size_t> counts;
    for (int s = 1; s <= 4; ++s) counts.push_back(windows_for_scale(cfg.pipeline.plan, s).size());
    EXPECT_EQ(counts, (std::vector<std::size_t>{1, 4, 16, 64}));
}

TEST(Config, ValidationErrorsNameTheInvariant) {
    EXPECT_EQ(parse_error<ValidationError>(R"({"image": [64, 64], "processing": [16, 16], "scales": [[64, 64], [32, 32]]})")
                  .invariant,
              "EndpointsMismatch");
    EXPECT_EQ(parse_error<ValidationError>(R"({"image": [64, 64], "scales": [[64, 64], [16, 16], [32, 32]]})").invariant,
              "NonMonotonicScales");
    EXPECT_EQ(parse_error<ValidationError>(R"({"image": [60, 60], "scales": [[60, 60], [25, 25]]})").invariant,
              "IndivisibleGrid");
    EXPECT_EQ(parse_error<ValidationError>(R"({"image": [8, 8], "backend": {"kind": "oracle"}})").invariant,
              "SeedRequired");
    EXPECT_EQ(parse_error<ValidationError>(R"({"image": [8, 8], "strategy": {"kind": "linear"}})").invariant,
              "ScoreStrategy");
    EXPECT_EQ(parse_error<ValidationError>(R"({"image": [8, 8], "strategy": {"median_kernel": 4}})").invariant,
              "ScoreStrategy");
    EXPECT_EQ(parse_error<ValidationError>(R"({"image": [8, 8], "scales": [[8, 8], [4, 4]], "fast": {"scale_subset": [2]}})")
                  .invariant,
              "FastSubset");
}

TEST(Config, ParseErrorsCarryLineOrField) {
    const auto syntax = parse_error<ParseError>("{\n  \"image\": [8, 8],\n  \"k\": ,\n}");
    EXPECT_EQ(syntax.line, 3);
    const auto unknown = parse_error<ParseError>(R"({"image": [8, 8], "strategy": {"knd": "product"}})");
    EXPECT_EQ(unknown.field, "strategy.knd");
    EXPECT_EQ(parse_error<ParseError>(R"({"image": [8, 8], "k": "many"})").field, "k");
    EXPECT_EQ(parse_error<ParseError>(R"({"scales": [[8, 8]]})").field, "image");
    EXPECT_EQ(parse_error<ParseError>(R"({"image": [8, 8], "combiner": "learned"})").field, "combiner.kind");
}

TEST(Config, RoundTrip) {
    const std::vector<std::string> texts = {
        R"({"image": [64, 64]})",
        R"({"image": [60, 60], "processing": [16, 16], "scales": [[64, 64], [32, 32], [16, 16]], "grid_mode": "pad",
            "classes": 5, "k": 100, "strategy": {"kind": "linear", "alpha": 0.25, "median_kernel": 5},
            "replace_source": "O", "workers": 3, "fast": {"scale_subset": [1, 3], "patches_per_scale": 2},
            "backend": {"kind": "oracle", "blur_sigma_at_coarsest": 1.5, "label_noise_rate": 0.1, "softness": 0.9,
                        "gt": "gt.png"},
            "combiner": "confidence_gate", "seed": 9})",
        R"({"image": [8, 8], "backend": {"kind": "external", "command": ["srv", "--x"], "timeout_ms": 100},
            "combiner": {"kind": "external", "command": ["c"]}, "external_mode": "per_worker"})",
    };
    for (const auto& text : texts) {
        const auto cfg = parse_config_text(text);
        const auto canonical = serialize_config(cfg);
        EXPECT_EQ(parse_config_text(canonical), cfg);
        EXPECT_EQ(serialize_config(parse_config_text(canonical)), canonical);
    }
}

TEST(Config, Digest) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_NE(sha256_hex(R"({"image": [8, 8]})"), sha256_hex(R"({"image": [8, 8] })"));
}

TEST(Config, ManifestJson) {
    RunManifest m;
    m.config_digest = "abc";
    m.seed = 5;
    m.reports.push_back({2, 4, 10, 0.5, 0.75});
    m.outputs = {"x.mgt"};
    const auto j = manifest_json(m);
    EXPECT_EQ(j["tool_version"], kToolVersion);
    EXPECT_EQ(j["reports"][0]["patches"], 4);
    EXPECT_EQ(j["reports"][0]["miou"], 0.75);
    EXPECT_EQ(j["seed"], 5);
}

TEST(Config, ModulesFromConfig) {
    const auto cfg = parse_config_text(R"({"image": [4, 4], "classes": 3, "backend": {"class": 2}, "combiner": "passthrough_o"})");
    const auto m = make_modules(cfg);
    EXPECT_EQ(m.backend->classes(), 3);
    EXPECT_EQ(m.backend->segment(Image(2, 2, 0.0f), {}), one_hot(LabelMap(2, 2, 2), 3));
    const auto oracle = parse_config_text(R"({"image": [4, 4], "backend": {"kind": "oracle"}, "seed": 1})");
    EXPECT_THROW(make_modules(oracle), ConfigError);
    const LabelMap gt(4, 4, 1);
    EXPECT_EQ(make_modules(oracle, {}, &gt).backend->classes(), 2);
}

}  // namespace
}  // namespace magnet

namespace magnet {
namespace {

TEST(Config, ShippedSamplesParse) {
    int seen = 0;
    for (const auto& e : std::filesystem::directory_iterator(MAGNET_CONFIG_DIR)) {
        if (e.path().extension() != ".json") continue;
        const auto cfg = parse_config(e.path());
        EXPECT_EQ(parse_config_text(serialize_config(cfg)), cfg) << e.path();
        ++seen;
    }
    EXPECT_GE(seen, 5);
}

}  // namespace
}  // namespace magnet
