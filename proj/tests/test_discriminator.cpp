#include <filesystem>

#include "doctest.h"
#include "mghand/backbone.hpp"
#include "mghand/discriminator.hpp"
#include "mghand/error.hpp"
#include "mghand/vocabulary.hpp"

using namespace mghand;

namespace {

DiscriminatorDataset point_modes(int n, std::uint64_t seed) {
    DiscriminatorDataset d;
    d.pixels.resize(2 * n, 2);
    Rng rng(seed);
    for (int i = 0; i < 2 * n; ++i) {
        const bool real = i < n;
        const Vec x = (real ? point_mode_a() : point_mode_b()) + kPointModeStd * standard_normal(rng, 2);
        d.pixels.row(i) = x.transpose();
        d.tokens.push_back(kNeutralToken);
        d.labels.push_back(real ? 1 : 0);
    }
    return d;
}

}  // namespace

TEST_SUITE("discriminator") {

TEST_CASE("score shape and determinism") {
    for (auto kind : {BackboneKind::kPoints, BackboneKind::kImage}) {
        const Discriminator d(kind, DiscriminatorLoss::kLeastSquares, 1);
        const Shape s = d.input_shape();
        Rng rng(2);
        const Image img(s, standard_normal(rng, s.size()));
        const Vec a = d.score(img, 1);
        CHECK(a.size() == kScoreDim);
        CHECK(d.score(img, 1) == a);
        Mat batch(1, s.size());
        batch.row(0) = img.data.transpose();
        const int tok[] = {1};
        CHECK((d.score(batch, tok).row(0).transpose() - a).norm() < 1e-12);
    }
}

TEST_CASE("sigmoid variant stays in the unit interval") {
    const Discriminator d(BackboneKind::kPoints, DiscriminatorLoss::kSigmoidMse, 3);
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        const Vec s = d.score(Image({2, 1, 1}, 10.0 * standard_normal(rng, 2)), 1);
        CHECK(s.minCoeff() >= 0.0);
        CHECK(s.maxCoeff() <= 1.0);
    }
}

TEST_CASE("training separates two point modes") {
    const auto train = point_modes(300, 1);
    const auto held = point_modes(300, 2);
    DiscriminatorTrainConfig cfg;
    cfg.epochs = 30;
    cfg.seed = 5;
    const auto r = train_discriminator(BackboneKind::kPoints, train, cfg);
    CHECK(r.epoch_losses.size() == 30);
    CHECK(r.epoch_losses.back() < r.epoch_losses.front());
    CHECK(discriminator_accuracy(r.model, held) > 0.95);
}

TEST_CASE("single-class data is rejected") {
    auto d = point_modes(10, 1);
    std::fill(d.labels.begin(), d.labels.end(), 1);
    CHECK_THROWS_AS(train_discriminator(BackboneKind::kPoints, d, {}), Error);
}

TEST_CASE("augmentation keeps the sample shape") {
    Rng rng(6);
    const Vec p = point_mode_a();
    CHECK(augment_sample(BackboneKind::kPoints, p, rng).size() == 2);
    const Vec img = Vec::Constant(32 * 32, -1.0);
    const Vec out = augment_sample(BackboneKind::kImage, img, rng);
    CHECK(out.size() == img.size());
    CHECK(out.allFinite());
}

TEST_CASE("checkpoint round-trip and tamper detection") {
    const Discriminator d(BackboneKind::kImage, DiscriminatorLoss::kSigmoidMse, 7);
    const auto dir = std::filesystem::temp_directory_path() / "mghand_unit";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "disc.json").string();
    save_discriminator(d, path);
    const auto back = load_discriminator(path);
    CHECK(back.checksum() == d.checksum());
    CHECK(back.loss() == DiscriminatorLoss::kSigmoidMse);
    CHECK(back.backbone_kind() == BackboneKind::kImage);

    auto j = discriminator_to_json(d);
    j["checksum"] = "0000000000000000";
    CHECK_THROWS_AS(discriminator_from_json(j), Error);
}

TEST_CASE("loss names parse") {
    CHECK(parse_discriminator_loss("least-squares") == DiscriminatorLoss::kLeastSquares);
    CHECK(parse_discriminator_loss("sigmoid-mse") == DiscriminatorLoss::kSigmoidMse);
    CHECK_THROWS_AS(parse_discriminator_loss("hinge"), Error);
}

}  // TEST_SUITE
