#include <catch2/catch_amalgamated.hpp>

#include "elecrec/config.hpp"

using namespace elec;

TEST_CASE("defaults match the declared hyperparameters") {
    const TrainConfig cfg;
    REQUIRE(cfg.alpha == 0.5);
    REQUIRE(cfg.lambda == 0.5);
    REQUIRE(cfg.batch_size == 256);
    REQUIRE(cfg.max_len == 50);
    REQUIRE(cfg.patience == 40);
    REQUIRE(cfg.hidden == 64);
    REQUIRE(cfg.layers == 2);
    REQUIRE(cfg.heads == 2);
    REQUIRE(cfg.dropout == 0.2);
    REQUIRE(cfg.lr == 1e-3);
}

TEST_CASE("key=value text round trips through the serializer") {
    TrainConfig cfg;
    cfg.alpha = 0.3;
    cfg.lambda = 0.9;
    cfg.sharing_mode = Sharing::FS;
    cfg.sampler_mode = SamplerMode::Argmax;
    cfg.variant = Variant::SequentialBce;
    cfg.hidden = 32;
    cfg.seed = 777;
    cfg.data = "corpus.txt";
    cfg.out = "runs/a";
    const TrainConfig back = parse_config_text(serialize_config(cfg));
    REQUIRE(back.alpha == cfg.alpha);
    REQUIRE(back.lambda == cfg.lambda);
    REQUIRE(back.sharing_mode == cfg.sharing_mode);
    REQUIRE(back.sampler_mode == cfg.sampler_mode);
    REQUIRE(back.variant == cfg.variant);
    REQUIRE(back.hidden == cfg.hidden);
    REQUIRE(back.seed == cfg.seed);
    REQUIRE(back.data == cfg.data);
    REQUIRE(back.out == cfg.out);
}

TEST_CASE("unknown keys are rejected and every bad key is listed") {
    const std::string text = "alpha=0.5\nwidgets=3\nlambda=zebra\nbogus_key=1\n";
    try {
        parse_config_text(text);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("widgets") != std::string::npos);
        REQUIRE(msg.find("lambda") != std::string::npos);
        REQUIRE(msg.find("bogus_key") != std::string::npos);
    }
}

TEST_CASE("values are type-checked") {
    REQUIRE_THROWS_AS(parse_config_text("batch_size=many\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_text("sharing_mode=both\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_text("alpha=1.5\n"), ConfigError);   // out of range
    REQUIRE_THROWS_AS(parse_config_text("d=30\nheads=4\n"), ConfigError);
    REQUIRE_NOTHROW(parse_config_text("alpha=1.0\nlambda=0.0\n"));
}

TEST_CASE("comments and blank lines are tolerated") {
    const TrainConfig cfg = parse_config_text("# a comment\n\nalpha=0.7\n  seed=5\n");
    REQUIRE(cfg.alpha == 0.7);
    REQUIRE(cfg.seed == 5);
}

TEST_CASE("variant names map onto config fields") {
    TrainConfig cfg;
    apply_variant(cfg, "elecrec_fs");
    REQUIRE(cfg.variant == Variant::Elecrec);
    REQUIRE(cfg.sharing_mode == Sharing::FS);
    apply_variant(cfg, "generator_only");
    REQUIRE(cfg.variant == Variant::GeneratorOnly);
    REQUIRE(cfg.lambda == 0.0);
    apply_variant(cfg, "sequential_bce");
    REQUIRE(cfg.variant == Variant::SequentialBce);
    REQUIRE_THROWS_AS(apply_variant(cfg, "gan_mode"), ConfigError);
}
