#include <filesystem>

#include "doctest.h"
#include "mghand/backbone.hpp"
#include "mghand/error.hpp"
#include "mghand/lora.hpp"
#include "mghand/vocabulary.hpp"

using namespace mghand;

namespace {

std::unique_ptr<Denoiser> small_model(std::uint64_t seed = 3) {
    return backbone(BackboneKind::kPoints).make_denoiser(make_schedule(1000), seed);
}

// Random non-zero up factors so the adapter changes the model.
LoraAdapter active_adapter(const Denoiser& model, std::uint64_t seed) {
    auto a = init_adapter(model, 4, {}, seed);
    Rng rng(seed + 1);
    for (auto& [name, f] : a.factors) f.up = 0.1 * standard_normal(rng, f.up.size()).reshaped(f.up.rows(), f.up.cols());
    return a;
}

}  // namespace

TEST_SUITE("lora") {

TEST_CASE("a fresh adapter leaves predictions bit-identical") {
    const auto model = small_model();
    const auto a = init_adapter(*model, 4, {}, 1);
    CHECK(a.is_noop());
    CHECK(a.factors.size() == model->linear_layers().size());
    const Vec z = (Vec(2) << 0.5, -0.25).finished();
    for (int tok = 0; tok < vocab_size(); ++tok) CHECK(model->predict(z, tok, 300, &a) == model->predict(z, tok, 300));
}

TEST_CASE("scale zero is a bit-exact no-op") {
    const auto model = small_model();
    const auto a = set_scale(active_adapter(*model, 5), 0.0);
    CHECK(a.is_noop());
    const Vec z = (Vec(2) << 1.5, 0.5).finished();
    CHECK(model->predict(z, 2, 640, &a) == model->predict(z, 2, 640));
}

TEST_CASE("the merged weight is W + v * down * up") {
    const auto model = small_model();
    const auto a = set_scale(active_adapter(*model, 7), 0.7);
    auto merged = model->clone();
    for (const auto& [name, f] : a.factors) merged->params().at(name + ".weight") += 0.7 * f.down * f.up;
    Rng rng(8);
    for (int i = 0; i < 10; ++i) {
        const Vec z = standard_normal(rng, 2);
        const Vec lhs = model->predict(z, 3, 100 * (i + 1), &a);
        const Vec rhs = merged->predict(z, 3, 100 * (i + 1));
        CHECK((lhs - rhs).norm() < 1e-10);
    }
}

TEST_CASE("targets restrict the adapted layers") {
    const auto model = small_model();
    const auto a = init_adapter(*model, 2, {"fc1", "out"}, 1);
    CHECK(a.factors.size() == 2);
    CHECK(a.parameter_count() == static_cast<std::size_t>(a.factors.at("fc1").down.size() + a.factors.at("fc1").up.size() +
                                                          a.factors.at("out").down.size() + a.factors.at("out").up.size()));
    CHECK_THROWS_AS(init_adapter(*model, 4, {"nope"}, 1), Error);
    CHECK_THROWS_AS(init_adapter(*model, 0, {}, 1), Error);
}

TEST_CASE("merge_textual_eps is exact at zero") {
    const Vec base = (Vec(3) << 0.1, 0.2, 0.3).finished();
    const Vec dir = (Vec(3) << 1.0, -1.0, 0.5).finished();
    CHECK(merge_textual_eps(base, dir, 0.0) == base);
    const Vec m = merge_textual_eps(base, dir, 0.5);
    CHECK(m[1] == doctest::Approx(-0.3));
}

TEST_CASE("slider loss matches a direct evaluation") {
    const auto model = small_model();
    const auto a = active_adapter(*model, 9);
    Rng rng(10);
    SliderBatch batch;
    batch.z_t = standard_normal(rng, 6).reshaped(3, 2);
    batch.t = {100, 400, 700};
    batch.neutral = {1, 1, 1};
    batch.positive = {2, 3, 5};
    batch.negative = {6, 7, 9};
    double expect = 0.0;
    for (int r = 0; r < 3; ++r) {
        const Vec z = batch.z_t.row(r).transpose();
        const Vec target = model->predict(z, 1, batch.t[r]) +
                           2.0 * (model->predict(z, batch.positive[r], batch.t[r]) -
                                  model->predict(z, batch.negative[r], batch.t[r]));
        expect += (model->predict(z, 1, batch.t[r], &a) - target).squaredNorm();
    }
    CHECK(slider_loss(*model, a, batch, 2.0) == doctest::Approx(expect / 3).epsilon(1e-12));
}

TEST_CASE("slider training lowers its loss and leaves the base untouched") {
    const auto model = small_model();
    const std::string before = model->checksum();
    const auto init = init_adapter(*model, 4, {}, 2);
    SliderConfig cfg;
    cfg.steps = 300;
    cfg.lr = 1e-3;
    cfg.seed = 4;
    cfg.anchor_count = 8;
    cfg.anchor_steps = 5;
    const auto r = train_slider(*model, init, default_prompt_triples(), cfg);
    REQUIRE(r.losses.size() == 300);
    double head = 0, tail = 0;
    for (int i = 0; i < 50; ++i) {
        head += r.losses[i];
        tail += r.losses[r.losses.size() - 1 - i];
    }
    CHECK(tail < head);
    CHECK(model->checksum() == before);
    CHECK_FALSE(r.adapter.is_noop());
    CHECK(r.adapter.base_checksum == before);

    auto other = small_model(99);
    CHECK_THROWS_AS(train_slider(*other, init, default_prompt_triples(), cfg), Error);
}

TEST_CASE("prompt triples validate and round-trip") {
    const auto triples = default_prompt_triples();
    CHECK(triples.size() == 5);
    for (const auto& t : triples) {
        CHECK(t.neutral == kNeutralToken);
        for (int p : t.positives) CHECK(token(p).role == TokenRole::kPositive);
        for (int n : t.negatives) CHECK(token(n).role == TokenRole::kNegative);
    }
    const auto back = triples_from_json(triples_to_json(triples));
    REQUIRE(back.size() == triples.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].positives == triples[i].positives);
        CHECK(back[i].negatives == triples[i].negatives);
    }
    CHECK_THROWS_AS(validate_triples({}), Error);
    CHECK_THROWS_AS(validate_triples({{1, {}, {6}}}), Error);
    CHECK_THROWS_AS(validate_triples({{1, {2}, {42}}}), Error);
}

TEST_CASE("adapter checkpoints round-trip") {
    const auto model = small_model();
    const auto a = set_scale(active_adapter(*model, 11), 0.25);
    const auto dir = std::filesystem::temp_directory_path() / "mghand_unit";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "adapter.json").string();
    save_adapter(a, path);
    const auto back = load_adapter(path);
    CHECK(back == a);
    CHECK(back.scale == 0.25);
    CHECK(back.base_checksum == model->checksum());
}

}  // TEST_SUITE
