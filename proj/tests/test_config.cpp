#include <algorithm>

#include "doctest.h"
#include "mghand/config.hpp"
#include "mghand/error.hpp"

using namespace mghand;

namespace {

RunConfig seeded() {
    RunConfig c;
    c.seed = 1;
    return c;
}

bool has_error(const std::vector<std::string>& errors, const std::string& field) {
    return std::any_of(errors.begin(), errors.end(), [&](const auto& e) { return e.rfind(field + ":", 0) == 0; });
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("defaults carry the reference hyperparameters") {
    const RunConfig c;
    CHECK(c.sampler.num_steps == 100);
    CHECK(c.sampler.cfg_scale == 3.0);
    CHECK(c.sampler.eta == 0.0);
    CHECK(c.guidance.tau == 0.4);
    CHECK(c.guidance.window_t_high == 650);
    CHECK(c.guidance.window_t_low == 150);
    CHECK(c.guidance.guidance_start_step == 65);
    CHECK(c.train_lora.rank == 4);
    CHECK(c.train_lora.lr == 1e-4);
    CHECK(c.train_discriminator.epochs == 120);
    CHECK(c.train_discriminator.batch_size == 64);
    CHECK(c.dataset.threshold == 0.8);
    CHECK(c.T == 1000);
}

TEST_CASE("seeded defaults validate") {
    CHECK(validate_config(seeded()).empty());
    CHECK_NOTHROW(require_valid(seeded()));
}

TEST_CASE("missing seed is reported") {
    CHECK(has_error(validate_config(RunConfig{}), "seed"));
}

TEST_CASE("field-level messages for bad values") {
    auto c = seeded();
    c.guidance.tau = 1.5;
    CHECK(has_error(validate_config(c), "guidance.tau"));

    c = seeded();
    c.guidance.window_t_low = 700;
    CHECK(has_error(validate_config(c), "guidance.window_t_low"));

    c = seeded();
    c.sampler.num_steps = 0;
    CHECK(has_error(validate_config(c), "sampler.num_steps"));

    c = seeded();
    c.prompt = "a bowl of fruit";
    CHECK(has_error(validate_config(c), "prompt"));
}

TEST_CASE("every violation is reported") {
    auto c = seeded();
    c.guidance.tau = -1;
    c.sampler.num_steps = 0;
    c.train_lora.rank = 0;
    c.num_samples = 0;
    const auto errors = validate_config(c);
    CHECK(errors.size() >= 4);
    CHECK(has_error(errors, "guidance.tau"));
    CHECK(has_error(errors, "sampler.num_steps"));
    CHECK(has_error(errors, "train_lora.rank"));
    CHECK(has_error(errors, "num_samples"));
    try {
        require_valid(c);
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kConfig);
        CHECK(std::string(e.what()).find("train_lora.rank") != std::string::npos);
    }
}

TEST_CASE("serialise, parse, serialise is byte-identical") {
    auto c = seeded();
    c.guidance.w = 2.5;
    c.guidance.start_mode = StartStepMode::kFromStart;
    c.schedule = ScheduleKind::kCosine;
    c.backbone = BackboneKind::kImage;
    c.train_lora.targets = {"fc1", "out"};
    c.checkpoints.adapter = "a.json";
    const std::string first = config_to_json(c).dump(2);
    const std::string second = config_to_json(config_from_json(nlohmann::json::parse(first))).dump(2);
    CHECK(first == second);
    CHECK(config_to_json(RunConfig{}).dump() == config_to_json(config_from_json(config_to_json(RunConfig{}))).dump());
}

TEST_CASE("partial documents fill in defaults") {
    const auto c = config_from_json(nlohmann::json::parse(R"({"seed": 3, "guidance": {"w": 0.2}})"));
    CHECK(*c.seed == 3);
    CHECK(c.guidance.w == 0.2);
    CHECK(c.guidance.v == RunConfig{}.guidance.v);
    CHECK(c.sampler.num_steps == 100);
}

TEST_CASE("unknown and mistyped fields are config errors") {
    try {
        config_from_json(nlohmann::json::parse(R"({"guidance": {"weight": 1}})"));
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kConfig);
        CHECK(std::string(e.what()).find("guidance.weight") != std::string::npos);
    }
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"sampler": {"num_steps": "many"}})")), Error);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"backbone": "voxels"})")), Error);
}

TEST_CASE("merge_json overlays nested objects") {
    const auto base = config_to_json(seeded());
    const auto merged = merge_json(base, {{"guidance", {{"w", 0.0}}}, {"prompt", "five fingers"}});
    const auto c = config_from_json(merged);
    CHECK(c.guidance.w == 0.0);
    CHECK(c.guidance.tau == 0.4);
    CHECK(c.prompt == "five fingers");
    CHECK(prompt_token(c) == 3);
}

}  // TEST_SUITE
