#include "doctest.h"

#include <fstream>

#include "clipos/config.hpp"
#include "clipos/error.hpp"
#include "support/fixtures.hpp"

using namespace clipos;
namespace fs = std::filesystem;

namespace {

std::string config_error(const nlohmann::json& j) {
    try {
        config_from_json(j, fs::current_path()).validate();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("defaults validate") {
    CHECK_NOTHROW(RunConfig{}.validate());
    CHECK_NOTHROW(load_config({}));
}

TEST_CASE("range errors name the field") {
    const std::string msg = config_error({{"context", {{"beta_ctx", -0.1}}}});
    CHECK(msg.find("context.beta_ctx") != std::string::npos);
    CHECK(config_error({{"masking", {{"threshold", 1.5}}}}).find("masking.threshold") != std::string::npos);
    CHECK(config_error({{"data", {{"shots", 0}}}}).find("data.shots") != std::string::npos);
    CHECK(config_error({{"train", {{"learning_rate", 0.0}}}}).find("train.learning_rate") != std::string::npos);
}

TEST_CASE("unknown fields and wrong types are rejected") {
    CHECK(config_error({{"train", {{"epoch", 3}}}}).find("train.epoch") != std::string::npos);
    CHECK(config_error({{"bogus", 1}}).find("bogus") != std::string::npos);
    CHECK(config_error({{"train", {{"epochs", "ten"}}}}).find("train.epochs") != std::string::npos);
    CHECK(config_error({{"train", {{"epochs", -1}}}}).find("train.epochs") != std::string::npos);
    CHECK(config_error({{"context", {{"padding", "mirror"}}}}).find("context.padding") != std::string::npos);
}

TEST_CASE("overrides") {
    nlohmann::json j = {{"train", {{"epochs", 3}}}};
    apply_overrides(j, {"train.epochs=5", "run_id=abc", "context.beta_ctx=0.25"});
    CHECK(j["train"]["epochs"] == 5);
    CHECK(j["run_id"] == "abc");
    CHECK(j["context"]["beta_ctx"] == 0.25);
    CHECK_THROWS_AS(apply_overrides(j, {"novalue"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(j, {"train..epochs=1"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(j, {"run_id.x=1"}), ConfigError);
}

TEST_CASE("JSON round trip") {
    fixture::TempDir dir("config");
    RunConfig cfg = load_config(fs::path(CLIPOS_SOURCE_DIR) / "configs" / "toy.json",
                                {"train.seed=3", "masking.mode=topk", "masking.topk=2", "synthesis.enabled=false"});
    CHECK(cfg.train.seed == 3);
    CHECK(cfg.masking.mode == MaskingMode::topk);
    save_config(cfg, dir / "c.json");
    const RunConfig back = load_config(dir / "c.json");
    CHECK(config_to_json(back) == config_to_json(cfg));
    CHECK(back.train_config().synthesize == false);
    CHECK(back.train.learning_rate == 0.001);
}

TEST_CASE("relative paths resolve against the config file") {
    fixture::TempDir dir("config-paths");
    fs::create_directories(dir / "sub");
    std::ofstream(dir / "sub" / "c.json") << R"({"data": {"id": {"name": "x", "root": "../data/x"}}, "output_dir": "out"})";
    const RunConfig cfg = load_config(dir / "sub" / "c.json");
    CHECK(cfg.data.id.root.lexically_normal() == (dir / "data" / "x").lexically_normal());
    CHECK(cfg.output_dir.lexically_normal() == (dir / "sub" / "out").lexically_normal());
    CHECK_THROWS_AS(load_config(dir / "none.json"), ConfigError);
    std::ofstream(dir / "bad.json") << "{ nope";
    CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("shipped configs load and validate") {
    int count = 0;
    for (const auto& entry : fs::directory_iterator(fs::path(CLIPOS_SOURCE_DIR) / "configs")) {
        if (entry.path().extension() != ".json") continue;
        CAPTURE(entry.path().string());
        CHECK_NOTHROW(load_config(entry.path()));
        ++count;
    }
    CHECK(count >= 3);
}
