#include <random>

#include "doctest.h"
#include "mghand/backbone.hpp"
#include "mghand/error.hpp"
#include "mghand/mask.hpp"

using namespace mghand;

namespace {

BinaryGrid random_grid(Rng& rng, int h, int w, double p) {
    std::bernoulli_distribution on(p);
    BinaryGrid g(h, w);
    for (auto& c : g.cells) c = on(rng) ? 1 : 0;
    return g;
}

Detection det(BinaryGrid region, double score) { return {std::move(region), score}; }

}  // namespace

TEST_SUITE("mask") {

TEST_CASE("a fresh mask is empty") {
    const auto m = init_mask(8, 6);
    CHECK(m.area() == 0);
    CHECK(m.grid.height == 8);
    CHECK(m.grid.width == 6);
    CHECK_THROWS_AS(init_mask(0, 4), Error);
}

TEST_CASE("update takes the cellwise max of accepted detections") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m0 = CumulativeMask{random_grid(rng, 5, 7, 0.3), {}};
        const auto d = random_grid(rng, 5, 7, 0.4);
        const auto m1 = update_mask(m0, det(d, 0.9), 0.4);
        for (std::size_t i = 0; i < d.cells.size(); ++i) {
            CHECK(m1.grid.cells[i] == std::max(m0.grid.cells[i], d.cells[i]));
        }
    }
}

TEST_CASE("threshold uses >= at tau exactly") {
    BinaryGrid d(3, 3);
    d.at(1, 1) = 1;
    const auto m = init_mask(3, 3);
    CHECK(update_mask(m, det(d, 0.4), 0.4).area() == 1);
    CHECK(update_mask(m, det(d, std::nextafter(0.4, 0.0)), 0.4).area() == 0);
    CHECK(update_mask(m, det(d, 0.39), 0.4).area() == 0);
    CHECK(update_mask(m, det(d, 1.0), 1.0).area() == 1);
    CHECK(update_mask(m, det(d, 0.0), 0.0).area() == 1);
}

TEST_CASE("update is idempotent and leaves its input untouched") {
    Rng rng(2);
    const auto d = random_grid(rng, 6, 6, 0.5);
    const auto m0 = init_mask(6, 6);
    const auto once = update_mask(m0, det(d, 0.8), 0.4);
    const auto twice = update_mask(once, det(d, 0.8), 0.4);
    CHECK(once.grid == twice.grid);
    CHECK(m0.area() == 0);
}

TEST_CASE("history records the area after each call") {
    BinaryGrid a(2, 2), b(2, 2);
    a.at(0, 0) = 1;
    b.at(1, 1) = 1;
    const Detection ds[] = {det(a, 0.9), det(b, 0.1), det(b, 0.5)};
    const auto m = update_mask(init_mask(2, 2), ds, 0.4);
    CHECK(m.area() == 2);
    CHECK(m.history == std::vector<std::size_t>{2});
    const auto stepwise = update_mask(update_mask(init_mask(2, 2), ds[0], 0.4), ds[1], 0.4);
    CHECK(stepwise.history == std::vector<std::size_t>{1, 1});
}

TEST_CASE("shape mismatches and bad scores are rejected") {
    const auto m = init_mask(4, 4);
    CHECK_THROWS_AS(update_mask(m, det(BinaryGrid(3, 4), 0.9), 0.4), Error);
    CHECK_THROWS_AS(update_mask(m, det(BinaryGrid(4, 4), 1.5), 0.4), Error);
    CHECK_THROWS_AS(update_mask(m, det(BinaryGrid(4, 4), 0.5), -0.1), Error);
    BinaryGrid bad(4, 4);
    bad.cells[3] = 2;
    CHECK_THROWS_AS(update_mask(m, det(bad, 0.5), 0.4), Error);
    CHECK_THROWS_AS(update_mask(m, det(BinaryGrid(4, 4), std::nan("")), 0.4), Error);
}

TEST_CASE("downsample equals a block-wise any") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto g = random_grid(rng, 32, 32, 0.02);
        const auto d = downsample_mask(g, 16, 16);
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                const bool any = g.at(2 * y, 2 * x) || g.at(2 * y + 1, 2 * x) || g.at(2 * y, 2 * x + 1) ||
                                 g.at(2 * y + 1, 2 * x + 1);
                CHECK(d.at(y, x) == (any ? 1 : 0));
            }
        }
        const auto d4 = downsample_mask(g, 8, 8);
        CHECK(d4 == downsample_mask(d, 8, 8));
    }
    CHECK(downsample_mask(BinaryGrid(8, 8, 1), 8, 8) == BinaryGrid(8, 8, 1));
    CHECK_THROWS_AS(downsample_mask(BinaryGrid(10, 10), 11, 3), Error);
    CHECK_THROWS_AS(downsample_mask(BinaryGrid(10, 10), 0, 3), Error);
}

TEST_CASE("a single pixel lands in exactly its block") {
    for (int y = 0; y < 32; y += 5) {
        for (int x = 0; x < 32; x += 3) {
            BinaryGrid g(32, 32);
            g.at(y, x) = 1;
            const auto d = downsample_mask(g, 16, 16);
            CHECK(d.area() == 1);
            CHECK(d.at(y / 2, x / 2) == 1);
            const auto d8 = downsample_mask(g, 8, 8);
            CHECK(d8.area() == 1);
            CHECK(d8.at(y / 4, x / 4) == 1);
        }
    }
}

TEST_CASE("downsampling preserves the update order") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const CumulativeMask m{random_grid(rng, 16, 16, 0.1), {}};
        const auto next = update_mask(m, det(random_grid(rng, 16, 16, 0.1), 0.6), 0.4);
        CHECK(downsample_mask(next.grid, 8, 8).covers(downsample_mask(m.grid, 8, 8)));
    }
}

TEST_CASE("dilation grows by the 4-neighbourhood") {
    BinaryGrid g(5, 5);
    g.at(2, 2) = 1;
    const auto d1 = dilate(g, 1);
    CHECK(d1.area() == 5);
    CHECK(d1.at(1, 2) == 1);
    CHECK(d1.at(1, 1) == 0);
    CHECK(dilate(g, 2).area() == 13);
    CHECK(dilate(g, 0) == g);
    CHECK(dilate(g, 1).covers(g));
}

TEST_CASE("blob detector finds the largest bright region") {
    Image img = Image::zeros({1, 8, 8});
    img.data.setConstant(-1.0);
    for (int y = 1; y < 4; ++y)
        for (int x = 1; x < 4; ++x) img.at(0, y, x) = 1.0;
    img.at(0, 6, 6) = 1.0;
    const Detection d = synthetic_detect(img);
    CHECK(d.region.area() == 9);
    CHECK(d.score == doctest::Approx(1.0));
    CHECK(d.region.at(2, 2) == 1);
    CHECK(d.region.at(6, 6) == 0);

    const SyntheticBlobDetector detector(0.5, 1);
    CHECK(detector.detect_all(img).size() == 2);
    CHECK(SyntheticBlobDetector(0.5, 4).detect_all(img).size() == 1);

    Image dark = Image::zeros({1, 8, 8});
    dark.data.setConstant(-1.0);
    const Detection none = synthetic_detect(dark);
    CHECK(none.region.area() == 0);
    CHECK(none.score == 0.0);
}

TEST_CASE("point detector scores by distance to the target mode") {
    const PointModeDetector d(point_mode_a(), 1.0, 1.5);
    const Detection at_mode = d.detect(Image({2, 1, 1}, point_mode_a()));
    CHECK(at_mode.score == doctest::Approx(1.0));
    CHECK(at_mode.region.area() == 1);
    Vec off = point_mode_a();
    off[0] += 1.0;
    CHECK(d.detect(Image({2, 1, 1}, off)).score == doctest::Approx(std::exp(-0.5)));
    const Detection far = d.detect(Image({2, 1, 1}, point_mode_b()));
    CHECK(far.region.area() == 0);
    CHECK(far.score == 0.0);
}

}  // TEST_SUITE
