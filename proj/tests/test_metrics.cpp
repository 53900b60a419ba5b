#include <filesystem>

#include "doctest.h"
#include "mghand/backbone.hpp"
#include "mghand/error.hpp"
#include "mghand/metrics.hpp"
#include "mghand/vocabulary.hpp"

using namespace mghand;

namespace {

FeatureSet gaussian(Rng& rng, int n, int d, double shift = 0.0, double scale = 1.0) {
    FeatureSet f;
    f.features = scale * standard_normal(rng, n * d).reshaped(n, d);
    f.features.array() += shift;
    return f;
}

// Brute-force unbiased MMD^2 with the cubic polynomial kernel.
double mmd_oracle(const Mat& x, const Mat& y) {
    const double d = static_cast<double>(x.cols());
    auto k = [d](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) { return std::pow(a.dot(b) / d + 1.0, 3); };
    const auto m = x.rows();
    double xx = 0, yy = 0, xy = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            if (i != j) {
                xx += k(x.row(i), x.row(j));
                yy += k(y.row(i), y.row(j));
            }
            xy += k(x.row(i), y.row(j));
        }
    }
    const double md = static_cast<double>(m);
    return xx / (md * (md - 1)) + yy / (md * (md - 1)) - 2 * xy / (md * md);
}

class FixedDetector : public RegionDetector {
public:
    explicit FixedDetector(double score) : score_(score) {}
    std::string name() const override { return "fixed"; }
    Detection detect(const Image& image) const override {
        Detection d;
        d.region = BinaryGrid(image.shape.height, image.shape.width, score_ > 0 ? 1 : 0);
        d.score = score_;
        return d;
    }

private:
    double score_;
};

std::vector<Image> blank_images(int n) { return std::vector<Image>(static_cast<std::size_t>(n), Image::zeros({1, 4, 4})); }

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("fid of a set with itself is zero") {
    Rng rng(1);
    const auto a = gaussian(rng, 500, 6);
    CHECK(std::abs(compute_fid(a, a)) < 1e-6);
}

TEST_CASE("fid matches the closed form in one dimension") {
    Rng rng(2);
    const auto a = gaussian(rng, 400, 1, 0.5, 1.3);
    const auto b = gaussian(rng, 300, 1, -0.2, 0.7);
    auto stats = [](const Mat& x) {
        const double mu = x.mean();
        const double var = (x.array() - mu).square().sum() / static_cast<double>(x.rows() - 1);
        return std::pair{mu, var};
    };
    const auto [ma, va] = stats(a.features);
    const auto [mb, vb] = stats(b.features);
    const double expect = (ma - mb) * (ma - mb) + va + vb - 2 * std::sqrt(va * vb);
    CHECK(compute_fid(a, b) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("fid matches the closed form for diagonal covariances") {
    Rng rng(3);
    FeatureSet a = gaussian(rng, 2000, 3), b = gaussian(rng, 2000, 3);
    a.features.col(1) *= 2.0;
    b.features.col(2) *= 0.5;
    b.features.col(0).array() += 1.0;
    const double got = compute_fid(a, b);
    // population oracle: shift 1 plus (2-1)^2 plus (0.5-1)^2
    CHECK(got == doctest::Approx(1.0 + 1.0 + 0.25).epsilon(0.1));
}

TEST_CASE("fid input checks") {
    Rng rng(4);
    CHECK_THROWS_AS(compute_fid(gaussian(rng, 10, 3), gaussian(rng, 10, 4)), Error);
    CHECK_THROWS_AS(compute_fid(gaussian(rng, 1, 3), gaussian(rng, 10, 3)), Error);
    auto bad = gaussian(rng, 10, 3);
    bad.features(0, 0) = std::nan("");
    CHECK_THROWS_AS(compute_fid(bad, bad), Error);
}

TEST_CASE("kid with one full subset equals brute-force MMD") {
    Rng rng(5);
    const auto a = gaussian(rng, 30, 4);
    const auto b = gaussian(rng, 30, 4, 0.3);
    const auto r = compute_kid(a, b, 30, 1, 7);
    CHECK(r.mean == doctest::Approx(mmd_oracle(a.features, b.features)).epsilon(1e-10));
    CHECK(r.subsets == 1);
    CHECK(r.seed == 7);
}

TEST_CASE("kid is reproducible per seed and grows with shift") {
    Rng rng(6);
    const auto a = gaussian(rng, 300, 4);
    const auto b = gaussian(rng, 300, 4);
    const auto c = gaussian(rng, 300, 4, 1.0);
    const auto r1 = compute_kid(a, b, 50, 20, 3);
    CHECK(r1.mean == compute_kid(a, b, 50, 20, 3).mean);
    CHECK(std::abs(r1.mean) < 3 * r1.std_error + 1e-12);
    CHECK(compute_kid(a, c, 50, 20, 3).mean > r1.mean + 3 * r1.std_error);
    CHECK_THROWS_AS(compute_kid(a, b, 500, 5, 1), Error);
    CHECK_THROWS_AS(compute_kid(a, b, 1, 5, 1), Error);
}

TEST_CASE("hand probability saturates on fixed detectors") {
    const auto imgs = blank_images(10);
    CHECK(hand_probability(imgs, FixedDetector(1.0)) == 1.0);
    CHECK(hand_probability(imgs, FixedDetector(0.0)) == 0.0);
    CHECK(hand_probability(imgs, FixedDetector(0.4), 0.4) == 1.0);
    CHECK(hand_probability(imgs, FixedDetector(0.39), 0.4) == 0.0);
}

TEST_CASE("hand confidence excludes undetected images by default") {
    const auto imgs = blank_images(4);
    CHECK(*hand_confidence(imgs, FixedDetector(0.7)) == doctest::Approx(0.7));
    CHECK_FALSE(hand_confidence(imgs, FixedDetector(0.0)).has_value());
    CHECK(*hand_confidence(imgs, FixedDetector(0.0), true) == 0.0);

    Image bright = Image::zeros({1, 8, 8});
    bright.data.setConstant(-1.0);
    for (int y = 2; y < 5; ++y)
        for (int x = 2; x < 5; ++x) bright.at(0, y, x) = 1.0;
    Image dark = Image::zeros({1, 8, 8});
    dark.data.setConstant(-1.0);
    const std::vector<Image> mixed = {bright, dark};
    const SyntheticBlobDetector blob;
    CHECK(*hand_confidence(mixed, blob) == doctest::Approx(1.0));
    CHECK(*hand_confidence(mixed, blob, true) == doctest::Approx(0.5));
}

TEST_CASE("similarity prefers matching prompts") {
    const auto& bb = backbone(BackboneKind::kPoints);
    const auto emb = ToyJointEmbedder::fit(bb, 200, 1);
    const int pos = tokens_with_role(TokenRole::kPositive).front();
    const int neg = tokens_with_role(TokenRole::kNegative).front();
    const std::vector<Image> a = {Image({2, 1, 1}, point_mode_a())};
    const std::vector<int> p = {pos}, n = {neg};
    const double match = text_image_similarity(a, p, emb);
    CHECK(match > text_image_similarity(a, n, emb));
    CHECK(match <= 100.0);
    CHECK_THROWS_AS(text_image_similarity(a, std::vector<int>{pos, neg}, emb), Error);
}

TEST_CASE("reports round-trip and tables sort by fid") {
    MetricsReport r;
    r.fid = 1.5;
    r.kid = 0.01;
    r.hand_probability = 0.9;
    r.metadata = {{"model", "x"}};
    const auto dir = std::filesystem::temp_directory_path() / "mghand_unit";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "report.json").string();
    write_report(r, path);
    CHECK(read_report(path) == r);
    CHECK(report_to_json(r)["hand_confidence"].is_null());

    MetricsReport better = r, none;
    better.fid = 0.5;
    const std::string table = render_table({{"worse", r}, {"none", none}, {"better", better}});
    const auto pb = table.find("| better"), pw = table.find("| worse"), pn = table.find("| none");
    CHECK(pb < pw);
    CHECK(pw < pn);
    CHECK(table.find("n/a") != std::string::npos);
    CHECK(table.find("1.5000") != std::string::npos);
}

}  // TEST_SUITE
