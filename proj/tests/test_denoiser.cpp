#include <filesystem>

#include "doctest.h"
#include "mghand/backbone.hpp"
#include "mghand/denoiser.hpp"
#include "mghand/error.hpp"
#include "mghand/io.hpp"
#include "mghand/vocabulary.hpp"

using namespace mghand;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "mghand_unit";
    fs::create_directories(dir);
    return (dir / name).string();
}

}  // namespace

TEST_SUITE("denoiser") {

TEST_CASE("predict is deterministic and batch-consistent") {
    const auto sched = make_schedule(1000);
    for (auto kind : {BackboneKind::kPoints, BackboneKind::kImage}) {
        const auto& bb = backbone(kind);
        const auto model = bb.make_denoiser(sched, 3);
        Rng rng(4);
        const int n = bb.latent_shape().size();
        Mat z(3, n);
        for (int r = 0; r < 3; ++r) z.row(r) = standard_normal(rng, n).transpose();
        const int toks[] = {0, 1, 2};
        const int ts[] = {1000, 500, 10};
        const Mat batch = model->predict(z, toks, ts);
        for (int r = 0; r < 3; ++r) {
            const Vec single = model->predict(Vec(z.row(r).transpose()), toks[r], ts[r]);
            CHECK((single - batch.row(r).transpose()).norm() < 1e-12);
        }
        CHECK(model->predict(z, toks, ts) == batch);
    }
}

TEST_CASE("cfg_eps combines the null and prompt predictions") {
    const auto sched = make_schedule(1000);
    const auto model = backbone(BackboneKind::kPoints).make_denoiser(sched, 5);
    const Vec z = (Vec(2) << 0.3, -1.2).finished();
    const Vec u = model->predict(z, kNullToken, 400);
    const Vec c = model->predict(z, 3, 400);
    const Vec g = cfg_eps(*model, z, 3, 400, 3.0);
    CHECK((g - (u + 3.0 * (c - u))).norm() < 1e-12);
}

TEST_CASE("training lowers the noise-prediction loss") {
    const auto& bb = backbone(BackboneKind::kPoints);
    const auto data = make_synthetic_dataset(bb, 2000, 1);
    CHECK(data.samples.rows() == 2000);
    DenoiserTrainConfig cfg;
    cfg.epochs = 8;
    cfg.seed = 2;
    const auto result = train_toy_denoiser(bb.make_denoiser(make_schedule(1000), 2), data, cfg);
    REQUIRE(result.epoch_losses.size() == 8);
    CHECK(result.epoch_losses.back() < 0.8 * result.epoch_losses.front());
}

TEST_CASE("checkpoint round-trip preserves parameters and predictions") {
    const auto sched = make_schedule(1000);
    for (auto kind : {BackboneKind::kPoints, BackboneKind::kImage}) {
        const auto model = backbone(kind).make_denoiser(sched, 9);
        const auto path = temp_path("den_" + to_string(kind) + ".json");
        save_denoiser(*model, path);
        const auto back = load_denoiser(path);
        CHECK(back->checksum() == model->checksum());
        CHECK(back->params() == model->params());
        CHECK(back->kind() == model->kind());
        CHECK(back->schedule().alpha_bar == model->schedule().alpha_bar);
    }
    CHECK_THROWS_AS(load_denoiser(temp_path("missing.json")), Error);
}

TEST_CASE("base sampling is reproducible per seed") {
    const auto model = backbone(BackboneKind::kPoints).make_denoiser(make_schedule(1000), 1);
    SamplerConfig sc;
    sc.num_steps = 20;
    sc.seed = 42;
    const Vec a = sample_base(*model, kNeutralToken, sc);
    const Vec b = sample_base(*model, kNeutralToken, sc);
    CHECK(a == b);
    sc.seed = 43;
    CHECK(sample_base(*model, kNeutralToken, sc) != a);
}

TEST_CASE("synthetic data follows the prompt roles") {
    const auto& bb = backbone(BackboneKind::kPoints);
    Rng rng(7);
    int pos_a = 0, neg_a = 0;
    const int pos = tokens_with_role(TokenRole::kPositive).front();
    const int neg = tokens_with_role(TokenRole::kNegative).front();
    for (int i = 0; i < 400; ++i) {
        pos_a += bb.in_target_mode(bb.sample_data(pos, rng));
        neg_a += bb.in_target_mode(bb.sample_data(neg, rng));
    }
    CHECK(pos_a > 390);
    CHECK(neg_a < 10);
}

}  // TEST_SUITE

TEST_SUITE("io") {

TEST_CASE("tensor files are exact") {
    Rng rng(1);
    const Image img({1, 4, 4}, standard_normal(rng, 16));
    const auto path = temp_path("t.tensor.json");
    io::write_tensor(path, img);
    const Image back = io::read_tensor(path);
    CHECK(back.shape == img.shape);
    CHECK(back.data == img.data);
    CHECK(io::read_sample(path).data == img.data);
}

TEST_CASE("png round-trip is within one grey level") {
    Rng rng(2);
    Vec d = standard_normal(rng, 64).cwiseMax(-1.0).cwiseMin(1.0);
    const Image img({1, 8, 8}, d);
    const auto path = temp_path("t.png");
    io::write_png(path, img);
    const Image back = io::read_png(path);
    CHECK(back.shape == img.shape);
    CHECK((back.data - img.data).cwiseAbs().maxCoeff() <= 1.0 / 255.0 + 1e-12);
}

TEST_CASE("mask png round-trip is exact") {
    Rng rng(3);
    BinaryGrid g(7, 5);
    for (auto& c : g.cells) c = rng() % 2;
    const auto path = temp_path("m.png");
    io::write_mask_png(path, g);
    CHECK(io::read_mask_png(path) == g);
}

TEST_CASE("json writes are stable") {
    const nlohmann::json j = {{"b", 1}, {"a", {1.5, 2.0}}};
    const auto p = temp_path("j.json");
    io::write_json(p, j);
    const auto first = io::read_text(p);
    io::write_json(p, io::read_json(p));
    CHECK(io::read_text(p) == first);
    CHECK_THROWS_AS(io::read_text(temp_path("nope.json")), Error);
}

}  // TEST_SUITE

TEST_SUITE("vocabulary") {

TEST_CASE("matching prefers the longest phrase") {
    CHECK(match_token("Hands") == kNeutralToken);
    for (const auto& t : vocabulary()) {
        if (t.role == TokenRole::kNull) continue;
        CHECK(match_token("a photo of " + t.phrase + ", studio light") == t.id);
        CHECK(token_id(t.phrase) == t.id);
    }
    CHECK_FALSE(match_token("a bowl of fruit").has_value());
    CHECK_THROWS_AS(token_id("not a phrase"), Error);
}

}  // TEST_SUITE
