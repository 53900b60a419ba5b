#include "doctest.h"
#include "mghand/backbone.hpp"
#include "mghand/error.hpp"
#include "mghand/guidance.hpp"
#include "mghand/vocabulary.hpp"

using namespace mghand;

namespace {

struct World {
    const Backbone* bb;
    std::unique_ptr<Denoiser> model;
    Discriminator disc;
    LoraAdapter adapter;

    explicit World(BackboneKind kind)
        : bb(&backbone(kind)),
          model(bb->make_denoiser(make_schedule(1000), 1)),
          disc(kind, DiscriminatorLoss::kLeastSquares, 2),
          adapter(init_adapter(*model, 4, {}, 3)) {
        Rng rng(4);
        for (auto& [name, f] : adapter.factors) {
            f.up = 0.05 * standard_normal(rng, f.up.size()).reshaped(f.up.rows(), f.up.cols());
        }
    }

    GuidanceModels models() const { return {model.get(), bb, &disc, &adapter, nullptr}; }
};

double fd_rel_error(const GuidanceModels& m, const Vec& z, int t, const GuidanceConfig& cfg, const BinaryGrid& gate,
                    const std::vector<int>& coords) {
    const auto obj = guidance_objective(m, z, kNeutralToken, t, 3.0, cfg, gate);
    const double h = 1e-5;
    Vec fd(coords.size()), an(coords.size());
    for (std::size_t k = 0; k < coords.size(); ++k) {
        Vec zp = z, zm = z;
        zp[coords[k]] += h;
        zm[coords[k]] -= h;
        fd[k] = (guidance_objective(m, zp, kNeutralToken, t, 3.0, cfg, gate).loss -
                 guidance_objective(m, zm, kNeutralToken, t, 3.0, cfg, gate).loss) /
                (2 * h);
        an[k] = obj.grad[coords[k]];
    }
    return (fd - an).norm() / std::max({fd.norm(), an.norm(), 1e-12});
}

}  // namespace

TEST_SUITE("guidance") {

TEST_CASE("window bounds are inclusive") {
    const GuidanceConfig cfg;
    CHECK(in_window(650, cfg));
    CHECK(in_window(150, cfg));
    CHECK_FALSE(in_window(651, cfg));
    CHECK_FALSE(in_window(149, cfg));
}

TEST_CASE("start step gates by position") {
    GuidanceConfig cfg;
    const auto ts = ddim_timesteps(1000, 100);
    int active = 0;
    for (int i = 0; i < 100; ++i) {
        const bool a = guidance_active(i, ts[i], 100, cfg);
        active += a;
        if (a) CHECK(in_window(ts[i], cfg));
        if (100 - i > 65) CHECK_FALSE(a);
    }
    CHECK(active == 51);

    cfg.start_mode = StartStepMode::kFromStart;
    CHECK_FALSE(guidance_active(64, 360, 100, cfg));
    CHECK(guidance_active(65, 350, 100, cfg));
    CHECK_FALSE(guidance_active(90, 100, 100, cfg));
}

TEST_CASE("validation names the offending field") {
    GuidanceConfig cfg;
    CHECK(validate_guidance(cfg, 1000).empty());
    cfg.tau = 1.5;
    cfg.window_t_low = 700;
    cfg.w = -1;
    const auto e = validate_guidance(cfg, 1000);
    CHECK(e.size() == 3);
    cfg = {};
    cfg.window_t_high = 2000;
    CHECK(validate_guidance(cfg, 1000).size() == 1);
}

TEST_CASE("guidance config round-trips") {
    GuidanceConfig cfg;
    cfg.w = 0.25;
    cfg.merge = TextualMerge::kLiteral;
    cfg.start_mode = StartStepMode::kFromStart;
    const auto back = guidance_from_json(guidance_to_json(cfg));
    CHECK(guidance_to_json(back) == guidance_to_json(cfg));
}

TEST_CASE("apply_mask zeroes every channel outside the mask") {
    const Shape s{3, 2, 2};
    const Vec g = Vec::LinSpaced(12, 1, 12);
    BinaryGrid m(2, 2);
    m.at(0, 1) = 1;
    const Vec out = apply_mask(g, m, s);
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 4; ++i) CHECK(out[c * 4 + i] == (i == 1 ? g[c * 4 + i] : 0.0));
    }
    CHECK_THROWS_AS(apply_mask(g, BinaryGrid(3, 2), s), Error);
}

TEST_CASE("visual term is exact at w = 0 and fails loudly on non-finite gradients") {
    const Shape s{2, 1, 1};
    const BinaryGrid on(1, 1, 1);
    const Vec eps = (Vec(2) << 0.3, -0.1).finished();
    GuidanceObjective obj{0.5, (Vec(2) << 1.0, 2.0).finished()};
    CHECK(visual_guidance_eps(eps, obj, on, s, 0.0, 3) == eps);
    const Vec g = visual_guidance_eps(eps, obj, on, s, 2.0, 3);
    CHECK(g[1] == doctest::Approx(3.9));
    obj.grad[0] = std::nan("");
    try {
        visual_guidance_eps(eps, obj, on, s, 2.0, 17);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kGuidanceDiverged);
        CHECK(std::string(e.what()).find("17") != std::string::npos);
    }
}

TEST_CASE("textual merge adds the masked adapter residual") {
    const World w(BackboneKind::kImage);
    GuidanceConfig cfg;
    cfg.v = 0.5;
    BinaryGrid gate(16, 16);
    for (int y = 4; y < 8; ++y)
        for (int x = 2; x < 10; ++x) gate.at(y, x) = 1;
    Rng rng(5);
    const Vec z = standard_normal(rng, 256);
    const Vec got = textual_eps(w.models(), z, kNeutralToken, 400, 3.0, cfg, gate);
    const Vec base = cfg_eps(*w.model, z, kNeutralToken, 400, 3.0);
    const Vec resid = w.model->predict(z, kNeutralToken, 400, &w.adapter) - w.model->predict(z, kNeutralToken, 400);
    for (int i = 0; i < 256; ++i) {
        const double expect = base[i] + (gate.cells[i] ? 0.5 * resid[i] : 0.0);
        CHECK(got[i] == doctest::Approx(expect).epsilon(1e-12));
        if (!gate.cells[i]) CHECK(got[i] == base[i]);
    }
    cfg.v = 0.0;
    CHECK(textual_eps(w.models(), z, kNeutralToken, 400, 3.0, cfg, gate) == base);
}

TEST_CASE("guidance gradient matches finite differences on points") {
    const World w(BackboneKind::kPoints);
    const GuidanceConfig cfg;
    const BinaryGrid on(1, 1, 1);
    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
        const int t = 150 + static_cast<int>(rng() % 501);
        const Vec z = standard_normal(rng, 2);
        CHECK(fd_rel_error(w.models(), z, t, cfg, on, {0, 1}) < 1e-5);
    }
}

TEST_CASE("guidance gradient matches finite differences on images") {
    const World w(BackboneKind::kImage);
    const GuidanceConfig cfg;
    BinaryGrid gate(16, 16, 1);
    Rng rng(7);
    for (int i = 0; i < 3; ++i) {
        const Vec z = standard_normal(rng, 256);
        std::vector<int> coords;
        for (int k = 0; k < 12; ++k) coords.push_back(static_cast<int>(rng() % 256));
        CHECK(fd_rel_error(w.models(), z, 300 + 100 * i, cfg, gate, coords) < 1e-5);
    }
}

TEST_CASE("neutral settings reproduce base sampling bit for bit") {
    for (auto kind : {BackboneKind::kPoints, BackboneKind::kImage}) {
        const World w(kind);
        GuidanceConfig cfg;
        cfg.w = 0.0;
        cfg.v = 0.0;
        SamplerConfig sc;
        sc.num_steps = kind == BackboneKind::kImage ? 20 : 100;
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            sc.seed = seed;
            const auto g = sample_guided(w.models(), kNeutralToken, cfg, sc);
            CHECK(g.latent == sample_base(*w.model, kNeutralToken, sc));
        }
    }
}

TEST_CASE("the trace respects the window and the mask") {
    const World w(BackboneKind::kImage);
    GuidanceConfig cfg;
    cfg.w = 5.0;
    cfg.v = 0.5;
    cfg.tau = 0.0;
    SamplerConfig sc;
    sc.num_steps = 25;
    sc.seed = 9;
    const auto g = sample_guided(w.models(), kNeutralToken, cfg, sc);
    REQUIRE(g.trace.size() == 25);
    std::size_t last_area = 0;
    for (const auto& r : g.trace) {
        if (!in_window(r.t, cfg)) {
            CHECK(r.grad_norm == 0.0);
            CHECK(r.textual_norm == 0.0);
            CHECK_FALSE(r.active);
        }
        CHECK(r.outside_mask_max_abs == 0.0);
        CHECK(r.mask_area >= last_area);
        last_area = r.mask_area;
    }
}

TEST_CASE("visual guidance needs a discriminator") {
    World w(BackboneKind::kPoints);
    auto m = w.models();
    m.discriminator = nullptr;
    GuidanceConfig cfg;
    SamplerConfig sc;
    CHECK_THROWS_AS(sample_guided(m, kNeutralToken, cfg, sc), Error);
}

}  // TEST_SUITE
