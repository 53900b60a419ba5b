#include "mghand/backbone.hpp"

#include <cmath>

#include "mghand/error.hpp"
#include "mghand/vocabulary.hpp"

namespace mghand {

std::string to_string(BackboneKind kind) { return kind == BackboneKind::kPoints ? "points" : "image"; }

BackboneKind parse_backbone(const std::string& name) {
    if (name == "points" || name == "point") return BackboneKind::kPoints;
    if (name == "image") return BackboneKind::kImage;
    fail(ErrorCode::kInvalidArgument, "unknown backbone '" + name + "' (expected points or image)");
}

namespace {

bool pick_mode_a(int token, Rng& rng) {
    const TokenRole role = mghand::token(token).role;
    if (role == TokenRole::kPositive) return true;
    if (role == TokenRole::kNegative) return false;
    return std::bernoulli_distribution(0.5)(rng);
}

class PointBackbone final : public Backbone {
public:
    BackboneKind kind() const override { return BackboneKind::kPoints; }
    Shape latent_shape() const override { return {2, 1, 1}; }
    Shape pixel_shape() const override { return {2, 1, 1}; }
    bool spatial() const override { return false; }

    Image decode(const Vec& latent) const override { return Image(pixel_shape(), latent); }
    ad::Var decode(const ad::Var& latents) const override { return latents; }

    Vec sample_data(int token, Rng& rng) const override {
        const Vec& mu = pick_mode_a(token, rng) ? point_mode_a() : point_mode_b();
        return mu + kPointModeStd * standard_normal(rng, 2);
    }

    Vec features(const Image& pixels) const override { return pixels.data; }

    bool in_target_mode(const Vec& latent) const override {
        return (latent - point_mode_a()).squaredNorm() < (latent - point_mode_b()).squaredNorm();
    }

    std::unique_ptr<Denoiser> make_denoiser(const NoiseSchedule& schedule, std::uint64_t seed) const override {
        return std::make_unique<PointDenoiser>(schedule, 64, seed);
    }

    std::unique_ptr<RegionDetector> make_detector() const override {
        return std::make_unique<PointModeDetector>(point_mode_a(), 1.0, 1.5);
    }
};

// Separable Gaussian blur of a square indicator.
Vec blurred_square(int size, int y0, int x0, int side, double sigma) {
    Vec row = Vec::Zero(size), col = Vec::Zero(size);
    for (int i = 0; i < size; ++i) {
        double ry = 0.0, rx = 0.0;
        for (int k = 0; k < side; ++k) {
            ry += std::exp(-std::pow(i - (y0 + k), 2) / (2 * sigma * sigma));
            rx += std::exp(-std::pow(i - (x0 + k), 2) / (2 * sigma * sigma));
        }
        row[i] = ry;
        col[i] = rx;
    }
    const double norm = std::sqrt(2.0 * 3.141592653589793) * sigma;
    Vec out(size * size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) out[y * size + x] = (row[y] / norm) * (col[x] / norm);
    }
    return out;
}

class ImageBackbone final : public Backbone {
public:
    BackboneKind kind() const override { return BackboneKind::kImage; }
    Shape latent_shape() const override { return {1, kImageLatentSize, kImageLatentSize}; }
    Shape pixel_shape() const override { return {1, kImagePixelSize, kImagePixelSize}; }
    bool spatial() const override { return true; }

    Image decode(const Vec& latent) const override {
        require(latent.size() == latent_shape().size(), "image decode: latent size mismatch");
        Image out = Image::zeros(pixel_shape());
        for (int y = 0; y < kImagePixelSize; ++y) {
            for (int x = 0; x < kImagePixelSize; ++x) out.at(0, y, x) = latent[(y / 2) * kImageLatentSize + x / 2];
        }
        return out;
    }

    ad::Var decode(const ad::Var& latents) const override {
        return ad::upsample_nearest2x(latents, ad::Geometry{1, kImageLatentSize, kImageLatentSize});
    }

    Vec sample_data(int token, Rng& rng) const override {
        const bool crisp = pick_mode_a(token, rng);
        const int n = kImageLatentSize;
        const int side = std::uniform_int_distribution<int>(4, 6)(rng);
        const int y0 = std::uniform_int_distribution<int>(1, n - side - 1)(rng);
        const int x0 = std::uniform_int_distribution<int>(1, n - side - 1)(rng);
        Vec img = Vec::Constant(n * n, -1.0);
        if (crisp) {
            for (int y = y0; y < y0 + side; ++y) {
                for (int x = x0; x < x0 + side; ++x) img[y * n + x] = 1.0;
            }
        } else {
            img += 1.2 * blurred_square(n, y0, x0, side, 1.3);
        }
        img += 0.05 * standard_normal(rng, n * n);
        return img;
    }

    Vec features(const Image& pixels) const override {
        const int h = pixels.shape.height, w = pixels.shape.width;
        require(h % 4 == 0 && w % 4 == 0, "image features need dimensions divisible by 4");
        Vec f = Vec::Zero(21);
        const int bh = h / 4, bw = w / 4;
        double sum = 0.0, sum2 = 0.0, mx = 0.0, bright = 0.0, grad = 0.0;
        auto norm = [&](int y, int x) { return std::clamp((pixels.at(0, y, x) + 1.0) / 2.0, 0.0, 1.0); };
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double v = norm(y, x);
                f[(y / bh) * 4 + x / bw] += v / (bh * bw);
                sum += v;
                sum2 += v * v;
                mx = std::max(mx, v);
                bright += v > 0.5 ? 1.0 : 0.0;
                if (x + 1 < w) grad += std::abs(norm(y, x + 1) - v);
                if (y + 1 < h) grad += std::abs(norm(y + 1, x) - v);
            }
        }
        const double n = static_cast<double>(h * w);
        const double mean = sum / n;
        f[16] = mean;
        f[17] = std::sqrt(std::max(0.0, sum2 / n - mean * mean));
        f[18] = mx;
        f[19] = bright / n;
        f[20] = grad / n;
        return f;
    }

    bool in_target_mode(const Vec& latent) const override { return latent.maxCoeff() > 0.6; }

    std::unique_ptr<Denoiser> make_denoiser(const NoiseSchedule& schedule, std::uint64_t seed) const override {
        return std::make_unique<ConvDenoiser>(schedule, latent_shape(), 16, 32, seed);
    }

    std::unique_ptr<RegionDetector> make_detector() const override {
        return std::make_unique<SyntheticBlobDetector>(kDefaultIntensityThreshold, 4);
    }
};

}  // namespace

const Backbone& backbone(BackboneKind kind) {
    static const PointBackbone points;
    static const ImageBackbone image;
    return kind == BackboneKind::kPoints ? static_cast<const Backbone&>(points) : static_cast<const Backbone&>(image);
}

LatentDataset make_synthetic_dataset(const Backbone& bb, int n, std::uint64_t seed) {
    require(n >= 1, "synthetic dataset needs at least one sample");
    Rng rng(seed);
    const auto positives = tokens_with_role(TokenRole::kPositive);
    const auto negatives = tokens_with_role(TokenRole::kNegative);
    LatentDataset d;
    d.shape = bb.latent_shape();
    d.samples.resize(n, d.shape.size());
    d.tokens.resize(static_cast<std::size_t>(n));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        const double r = u(rng);
        int tok = kNeutralToken;
        if (r >= 0.4 && r < 0.7) {
            tok = positives[std::uniform_int_distribution<std::size_t>(0, positives.size() - 1)(rng)];
        } else if (r >= 0.7) {
            tok = negatives[std::uniform_int_distribution<std::size_t>(0, negatives.size() - 1)(rng)];
        }
        d.tokens[static_cast<std::size_t>(i)] = tok;
        d.samples.row(i) = bb.sample_data(tok, rng).transpose();
    }
    return d;
}

}  // namespace mghand
